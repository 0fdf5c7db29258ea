import io

import numpy as np
import pytest

from nbody_wkam.geometry import center_of_mass, diagonal_lift, mass_norm, translate
from nbody_wkam.dynamics import CollisionError, grad_potential, potential
from nbody_wkam.curves import (
    Curve,
    action,
    action_gradient,
    com_decomposition,
    curve_from_csv,
    curve_to_csv,
    euler_lagrange_residual,
    resample,
)
from conftest import pair_config


def circular_arc(sys, d, t_end, n):
    m = sys.masses[0]
    om = np.sqrt(2.0 * m / d ** 3)
    ts = np.linspace(0.0, t_end, n + 1)
    nodes = np.array([
        [[d / 2 * np.cos(om * t), d / 2 * np.sin(om * t)],
         [-d / 2 * np.cos(om * t), -d / 2 * np.sin(om * t)]]
        for t in ts
    ])
    return Curve(nodes, ts[1] - ts[0]), om


def smooth_random_curve(rng, sys, n=24, T=1.5, amp=0.6):
    # low-frequency wiggle around a separated base configuration
    base = pair_config(sys, 1.6, 0.4)
    ts = np.linspace(0.0, 1.0, n + 1)
    nodes = np.tile(base, (n + 1, 1, 1))
    for b in range(2):
        for c in range(2):
            a1, a2 = rng.normal(scale=amp, size=2)
            nodes[:, b, c] += a1 * np.sin(np.pi * ts) + a2 * np.sin(2 * np.pi * ts)
    return Curve(nodes, T / n)


class TestCurveBasics:
    def test_validation(self, sys2):
        with pytest.raises(ValueError):
            Curve(np.zeros((1, 2, 2)), 0.1)
        with pytest.raises(ValueError):
            Curve(np.zeros((3, 2, 2)), -0.1)

    def test_duration(self, sys2):
        c = Curve(np.zeros((5, 2, 2)), 0.25)
        assert c.n_segments == 4
        assert c.duration == 1.0


class TestAction:
    def test_stationary_curve(self, sys2):
        x = pair_config(sys2, 2.0)
        nodes = np.tile(x, (11, 1, 1))
        c = Curve(nodes, 0.3)
        a = action(c, sys2)
        assert a.kinetic == 0.0
        assert a.potential == pytest.approx(c.duration * potential(x, sys2), rel=1e-14)

    def test_diagonal_drift(self, sys2):
        x = pair_config(sys2, 2.0)
        v = np.array([0.3, -0.2])
        T, n = 2.0, 16
        ts = np.linspace(0, T, n + 1)
        nodes = np.array([x + diagonal_lift(t * v, sys2) for t in ts])
        a = action(Curve(nodes, T / n), sys2)
        M = sys2.total_mass
        assert a.kinetic == pytest.approx(0.5 * T * M * float(v @ v), rel=1e-12)
        assert a.potential == pytest.approx(T * potential(x, sys2), rel=1e-12)

    def test_collision_node_infinite(self, sys2):
        nodes = np.zeros((3, 2, 2))
        nodes[0] = pair_config(sys2, 1.0)
        nodes[2] = pair_config(sys2, 1.0, 1.0)
        assert action(Curve(nodes, 0.5), sys2).total == np.inf

    def test_midpoint_finite_at_collision_endpoint(self, sys2):
        nodes = np.stack([np.zeros((2, 2)), pair_config(sys2, 1.0)])
        c = Curve(nodes, 0.5)
        assert action(c, sys2).total == np.inf
        assert np.isfinite(action(c, sys2, quadrature="midpoint").total)

    def test_refinement_convergence_order(self, sys2):
        # Richardson against a dense-grid reference on a smooth arc
        ref, _ = circular_arc(sys2, 1.0, 1.0, 4096)
        a_ref = action(ref, sys2).total
        errs = []
        for n in (32, 64, 128):
            c, _ = circular_arc(sys2, 1.0, 1.0, n)
            errs.append(abs(action(c, sys2).total - a_ref))
        order1 = np.log2(errs[0] / errs[1])
        order2 = np.log2(errs[1] / errs[2])
        assert 1.7 <= order1 <= 2.3
        assert 1.7 <= order2 <= 2.3

    def test_kinetic_lower_bound(self, sys2):
        rng = np.random.default_rng(8)
        for _ in range(20):
            c = smooth_random_curve(rng, sys2)
            a = action(c, sys2)
            d = mass_norm(c.end() - c.start(), sys2)
            assert a.kinetic >= d ** 2 / (2.0 * c.duration) - 1e-12
            assert a.total > 0.0

    def test_translation_invariance(self, sys2):
        rng = np.random.default_rng(9)
        c = smooth_random_curve(rng, sys2)
        r = np.array([1.1, -0.7])
        a0 = action(c, sys2).total
        a1 = action(c.translated(r, sys2), sys2).total
        assert abs(a1 - a0) <= 1e-12 * max(a0, 1.0)


class TestActionGradient:
    def test_matches_finite_differences(self, sys2):
        rng = np.random.default_rng(10)
        for _ in range(20):
            c = smooth_random_curve(rng, sys2)
            g = action_gradient(c, sys2)
            j = int(rng.integers(1, c.n_segments))
            b = int(rng.integers(0, 2))
            k = int(rng.integers(0, 2))
            h = 1e-6
            up = c.nodes.copy()
            up[j, b, k] += h
            dn = c.nodes.copy()
            dn[j, b, k] -= h
            fd = (action(Curve(up, c.dt), sys2).total -
                  action(Curve(dn, c.dt), sys2).total) / (2 * h)
            assert g[j - 1, b, k] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_midpoint_rule_gradient(self, sys2):
        rng = np.random.default_rng(11)
        c = smooth_random_curve(rng, sys2)
        g = action_gradient(c, sys2, quadrature="midpoint")
        j, b, k = 3, 0, 1
        h = 1e-6
        up = c.nodes.copy()
        up[j, b, k] += h
        dn = c.nodes.copy()
        dn[j, b, k] -= h
        fd = (action(Curve(up, c.dt), sys2, "midpoint").total -
              action(Curve(dn, c.dt), sys2, "midpoint").total) / (2 * h)
        assert g[j - 1, b, k] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_vanishes_on_discrete_motion(self, sys2):
        # the discrete stationarity residual shrinks at the quadrature order
        vals = []
        for n in (64, 128):
            c, _ = circular_arc(sys2, 1.0, 0.8, n)
            g = action_gradient(c, sys2)
            vals.append(np.max(np.abs(g)) / c.dt)  # per unit time
        assert vals[1] <= vals[0] / 3.0
        assert vals[1] <= 1e-2

    def test_translation_equivariance(self, sys2):
        rng = np.random.default_rng(12)
        c = smooth_random_curve(rng, sys2)
        g0 = action_gradient(c, sys2)
        g1 = action_gradient(c.translated(np.array([0.4, 0.9]), sys2), sys2)
        assert np.max(np.abs(g1 - g0)) <= 1e-10

    def test_collision_sample_raises(self, sys2):
        nodes = np.stack([pair_config(sys2, 1.0), np.zeros((2, 2)),
                          pair_config(sys2, 1.0, 2.0)])
        with pytest.raises(CollisionError):
            action_gradient(Curve(nodes, 0.5), sys2)


class TestComDecomposition:
    def test_centered_curve(self, sys2):
        rng = np.random.default_rng(13)
        c = smooth_random_curve(rng, sys2)
        centered = c.nodes - np.array([
            diagonal_lift(center_of_mass(x, sys2), sys2) for x in c.nodes])
        cc = Curve(centered, c.dt)
        ca, drift, gap = com_decomposition(cc, sys2)
        assert drift == 0.0
        assert gap <= 1e-12

    def test_pure_drift_of_static_shape(self, sys2):
        x = pair_config(sys2, 2.0)
        v = np.array([0.4, 0.1])
        T, n = 2.0, 20
        ts = np.linspace(0, T, n + 1)
        nodes = np.array([x + diagonal_lift(t * v, sys2) for t in ts])
        ca, drift, gap = com_decomposition(Curve(nodes, T / n), sys2)
        M = sys2.total_mass
        assert ca == pytest.approx(T * potential(x, sys2), rel=1e-12)
        assert drift == pytest.approx(0.5 * T * M * float(v @ v), rel=1e-12)
        assert gap <= 1e-12

    def test_two_body_motion_with_momentum(self, sys2):
        from nbody_wkam.dynamics import integrate_motion
        x = pair_config(sys2, 1.0)
        om = np.sqrt(2.0)
        v = np.array([[0.0, om / 2], [0.0, -om / 2]]) + np.array([0.25, -0.15])
        traj = integrate_motion(x, v, 1.0, 1e-3, sys2)
        c = Curve(traj.positions, 1e-3)
        _, _, gap = com_decomposition(c, sys2)
        assert gap <= 1e-12

    def test_nonlinear_drift_rejected(self, sys2):
        x = pair_config(sys2, 2.0)
        ts = np.linspace(0, 1, 11)
        nodes = np.array([x + diagonal_lift(np.array([t ** 2, 0.0]), sys2)
                          for t in ts])
        with pytest.raises(ValueError):
            com_decomposition(Curve(nodes, 0.1), sys2)


class TestResample:
    def test_identity(self, sys2):
        rng = np.random.default_rng(14)
        c = smooth_random_curve(rng, sys2, n=16)
        r = resample(c, 16)
        assert np.allclose(r.nodes, c.nodes)
        assert r.dt == pytest.approx(c.dt)

    def test_endpoints_exact(self, sys2):
        rng = np.random.default_rng(15)
        c = smooth_random_curve(rng, sys2, n=16)
        r = resample(c, 37)
        assert np.array_equal(r.start(), c.start())
        assert np.array_equal(r.end(), c.end())
        assert r.duration == pytest.approx(c.duration)

    def test_refinement_nearly_monotone(self, sys2):
        # linear refinement of a smooth arc moves the action by at most
        # the quadrature order
        gaps = []
        for n in (32, 64):
            c, _ = circular_arc(sys2, 1.0, 0.8, n)
            a1 = action(c, sys2).total
            a2 = action(resample(c, 2 * n), sys2).total
            assert a2 <= a1 + c.dt ** 2 * a1
            gaps.append(abs(a2 - a1))
        assert gaps[1] <= gaps[0] / 3.0


class TestEulerLagrangeResidual:
    def test_circular_orbit_second_order(self, sys2):
        res = []
        for n in (100, 200):
            c, om = circular_arc(sys2, 1.0, 1.0, n)
            res.append(euler_lagrange_residual(c, sys2))
        assert res[0] <= 2.0 * (om ** 4 / 4) * (1.0 / 100) ** 2
        assert res[1] <= res[0] / 3.0

    def test_static_shape_is_not_a_motion(self, sys2):
        x = pair_config(sys2, 1.5)
        nodes = np.tile(x, (9, 1, 1))
        c = Curve(nodes, 0.2)
        expected = mass_norm(grad_potential(x, sys2), sys2)
        assert euler_lagrange_residual(c, sys2) == pytest.approx(expected, rel=1e-12)

    def test_translation_invariant(self, sys2):
        rng = np.random.default_rng(16)
        c = smooth_random_curve(rng, sys2)
        r0 = euler_lagrange_residual(c, sys2)
        r1 = euler_lagrange_residual(c.translated(np.array([2.0, -1.0]), sys2), sys2)
        assert r1 == pytest.approx(r0, rel=1e-9)


class TestCsv:
    def test_roundtrip_exact(self, sys2):
        rng = np.random.default_rng(17)
        c = smooth_random_curve(rng, sys2, n=8)
        buf = io.StringIO()
        curve_to_csv(c, buf)
        text = buf.getvalue()
        header = text.splitlines()[0]
        assert header == "t, body0_x0, body0_x1, body1_x0, body1_x1"
        c2 = curve_from_csv(io.StringIO(text), sys2)
        assert np.array_equal(c2.nodes, c.nodes)  # 17 significant digits
        assert c2.dt == pytest.approx(c.dt, rel=1e-15)

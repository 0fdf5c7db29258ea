import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nbody_wkam.geometry import (
    MassSystem,
    center_of_mass,
    diagonal_lift,
    dual_norm,
    mass_dot,
    mass_norm,
    max_norm,
    min_separation,
    pairing,
    problem_from_dict,
    problem_to_dict,
    split,
    translate,
)
from nbody_wkam.dynamics import legendre, legendre_inv


def finite_floats(lo=-10.0, hi=10.0):
    return st.floats(min_value=lo, max_value=hi, allow_nan=False, allow_infinity=False)


@st.composite
def system_and_configs(draw, n_configs=1):
    n = draw(st.integers(min_value=2, max_value=4))
    k = draw(st.integers(min_value=1, max_value=3))
    masses = np.array([draw(st.floats(min_value=0.1, max_value=10.0)) for _ in range(n)])
    sys = MassSystem(masses, dim=k)
    configs = [
        np.array([[draw(finite_floats()) for _ in range(k)] for _ in range(n)])
        for _ in range(n_configs)
    ]
    return sys, configs


class TestMassSystem:
    def test_rejects_bad_masses(self):
        with pytest.raises(ValueError):
            MassSystem(np.array([1.0]))
        with pytest.raises(ValueError):
            MassSystem(np.array([1.0, -2.0]))
        with pytest.raises(ValueError):
            MassSystem(np.array([1.0, np.inf]))

    def test_rejects_bad_exponent(self):
        for alpha in (-2.0, 0.0, 0.5, -3.0):
            with pytest.raises(ValueError):
                MassSystem(np.array([1.0, 1.0]), alpha=alpha)

    def test_total_mass(self):
        sys = MassSystem(np.array([1.0, 2.0, 3.0]))
        assert sys.total_mass == 6.0


class TestInnerProduct:
    def test_single_term(self):
        sys = MassSystem(np.array([2.0, 3.0]), dim=2)
        x = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert mass_dot(x, x, sys) == 2.0

    def test_norm_example(self):
        sys = MassSystem(np.array([1.0, 1.0]), dim=2)
        x = np.array([[3.0, 0.0], [0.0, 4.0]])
        assert mass_norm(x, sys) == 5.0

    def test_dual_norm_example(self):
        sys = MassSystem(np.array([4.0, 1.0]), dim=1)
        p = np.array([[2.0], [0.0]])
        assert dual_norm(p, sys) == 1.0

    def test_shape_mismatch(self):
        sys = MassSystem(np.array([1.0, 1.0]), dim=2)
        with pytest.raises(ValueError):
            mass_dot(np.zeros((3, 2)), np.zeros((3, 2)), sys)

    @settings(max_examples=50, deadline=None)
    @given(system_and_configs(n_configs=2))
    def test_symmetric_positive(self, sc):
        sys, (x, y) = sc
        assert mass_dot(x, y, sys) == pytest.approx(mass_dot(y, x, sys), abs=1e-12)
        if np.any(x != 0.0):
            assert mass_dot(x, x, sys) > 0.0

    @settings(max_examples=50, deadline=None)
    @given(system_and_configs(n_configs=1), st.lists(finite_floats(), min_size=3, max_size=3))
    def test_diagonal_pairing(self, sc, rvals):
        # x . delta(r) = M <G(x), r>
        sys, (x,) = sc
        r = np.array(rvals[: sys.dim])
        lhs = mass_dot(x, diagonal_lift(r, sys), sys)
        rhs = sys.total_mass * float(center_of_mass(x, sys) @ r)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestMaxNorm:
    def test_example(self):
        x = np.array([[1.0, 0.0], [0.0, -3.0]])
        assert max_norm(x) == 3.0

    def test_diagonal(self):
        sys = MassSystem(np.array([1.0, 2.0]), dim=2)
        r = np.array([0.3, -0.4])
        assert max_norm(diagonal_lift(r, sys)) == pytest.approx(0.5)


class TestCenterOfMass:
    def test_weighted_average(self):
        sys = MassSystem(np.array([1.0, 3.0]), dim=2)
        x = np.array([[0.0, 0.0], [4.0, 0.0]])
        assert center_of_mass(x, sys) == pytest.approx([3.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(system_and_configs())
    def test_lift_section(self, sc):
        sys, (x,) = sc
        r = x[0]  # arbitrary ambient vector
        assert center_of_mass(diagonal_lift(r, sys), sys) == pytest.approx(r, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(system_and_configs(), st.lists(finite_floats(), min_size=3, max_size=3))
    def test_translation_linearity(self, sc, rvals):
        sys, (x,) = sc
        r = np.array(rvals[: sys.dim])
        lhs = center_of_mass(translate(x, r), sys)
        assert lhs == pytest.approx(center_of_mass(x, sys) + r, abs=1e-10)


class TestSplit:
    @settings(max_examples=60, deadline=None)
    @given(system_and_configs())
    def test_exact_reconstruction(self, sc):
        sys, (x,) = sc
        centered, com = split(x, sys)
        rebuilt = centered + diagonal_lift(com, sys)
        scale = max(1.0, float(np.max(np.abs(x))))
        assert np.max(np.abs(rebuilt - x)) <= 1e-14 * scale
        assert center_of_mass(centered, sys) == pytest.approx(np.zeros(sys.dim), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(system_and_configs())
    def test_pythagoras(self, sc):
        sys, (x,) = sc
        centered, com = split(x, sys)
        lhs = mass_norm(x, sys) ** 2
        rhs = mass_norm(centered, sys) ** 2 + sys.total_mass * float(com @ com)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(system_and_configs(), st.lists(finite_floats(), min_size=3, max_size=3))
    def test_centered_orthogonal_to_diagonal(self, sc, rvals):
        sys, (x,) = sc
        r = np.array(rvals[: sys.dim])
        centered, _ = split(x, sys)
        val = mass_dot(centered, diagonal_lift(r, sys), sys)
        scale = 1.0 + mass_norm(x, sys) * float(np.linalg.norm(r))
        assert abs(val) <= 1e-12 * scale

    def test_diagonal_input(self):
        sys = MassSystem(np.array([1.0, 2.0]), dim=2)
        r = np.array([1.5, -2.0])
        centered, com = split(diagonal_lift(r, sys), sys)
        assert np.allclose(centered, 0.0)
        assert com == pytest.approx(r)


class TestTranslateAndSeparation:
    def test_translate_roundtrip(self):
        sys = MassSystem(np.array([1.0, 1.0]), dim=2)
        x = np.array([[0.1, 0.2], [0.3, -0.4]])
        r = np.array([1.0, -2.0])
        assert np.allclose(translate(translate(x, r), -r), x)

    def test_min_separation_examples(self):
        assert min_separation(np.array([[0.0, 0.0], [0.0, 0.0]])) == 0.0
        x = np.array([[0.0, 0.0], [3.0, 4.0], [10.0, 0.0]])
        assert min_separation(x) == 5.0

    @settings(max_examples=30, deadline=None)
    @given(system_and_configs(), st.lists(finite_floats(), min_size=3, max_size=3))
    def test_separation_translation_invariant(self, sc, rvals):
        sys, (x,) = sc
        r = np.array(rvals[: sys.dim])
        assert min_separation(translate(x, r)) == pytest.approx(
            min_separation(x), rel=1e-12, abs=1e-12)

    def test_separation_rotation_invariant(self):
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        x = np.array([[0.3, 1.0], [-0.5, 0.2], [1.1, -0.4]])
        assert min_separation(x @ R.T) == pytest.approx(min_separation(x))


class TestLegendreCompatibility:
    @settings(max_examples=50, deadline=None)
    @given(system_and_configs(n_configs=2))
    def test_dual_norm_of_legendre(self, sc):
        sys, (v, _) = sc
        assert dual_norm(legendre(v, sys), sys) == pytest.approx(
            mass_norm(v, sys), rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(system_and_configs(n_configs=2))
    def test_pairing_is_mass_dot(self, sc):
        sys, (v, w) = sc
        assert pairing(legendre(v, sys), w) == pytest.approx(
            mass_dot(v, w, sys), rel=1e-10, abs=1e-10)

    def test_roundtrip(self):
        sys = MassSystem(np.array([2.0, 3.0]), dim=2)
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        p = legendre(v, sys)
        assert np.allclose(p, [[2.0, 0.0], [0.0, 3.0]])
        assert np.max(np.abs(legendre_inv(p, sys) - v)) <= 1e-14


class TestProblemFiles:
    def test_roundtrip(self):
        sys = MassSystem(np.array([1.0, 2.0]), dim=2, alpha=-1.5)
        x = np.array([[0.1, 0.2], [-0.3, 0.4]])
        data = problem_to_dict(sys, x)
        assert set(data) == {"masses", "dim", "alpha", "positions"}
        sys2, x2 = problem_from_dict(data)
        assert sys2.fingerprint() == sys.fingerprint()
        assert np.allclose(x2, x)

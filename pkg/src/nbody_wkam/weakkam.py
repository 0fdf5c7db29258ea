"""Dominated functions, the Lax-Oleinik operator and solution candidates.

Candidate solutions of the critical Hamilton-Jacobi equation are carried
either as closed-form callables or as SampledField objects: values on a
finite set of configurations plus an interpolation rule.  Grid fields
interpolate on the affine hull of their sample points in mass-weighted
coordinates, so evaluation quotients out the diagonal (simultaneous
translation) directions whenever the grid is centered; anything living
off the hull, like the linear term of a supercritical lift, must be
carried outside the field.

The fixed-point iteration of the Lax-Oleinik operator reports its
convergence history honestly: the operator's fixed points exist, but
nothing guarantees the iteration converges from an arbitrary dominated
seed, so divergence is an outcome, not an error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.spatial import cKDTree

from .geometry import (
    MassSystem,
    as_config,
    center_of_mass,
    diagonal_lift,
    mass_norm,
    max_norm,
    min_separation,
    split,
)
from .dynamics import (
    hamiltonian,
    kepler_solution_constant,
    legendre_inv,
    potential,
)
from .curves import Curve, action
from .minimize import FreeTimeSolver

__all__ = [
    "SampledField",
    "pair_polar_grid",
    "pair_config",
    "kepler_field",
    "busemann_closed_form",
    "DominationReport",
    "domination_check",
    "lax_oleinik",
    "FixedPointResult",
    "fixed_point_iterate",
    "BusemannResult",
    "busemann",
    "LiftedField",
    "supercritical_lift",
    "CalibrationReport",
    "calibrated_curve",
    "InvarianceReport",
    "translation_invariance_check",
    "LemmaProbe",
    "lemma_inequality_probe",
]

INTERPOLATIONS = ("nearest", "inverse-distance", "simplex-linear")


class _Chart:
    """Orthonormal coordinates on the affine hull of a point cloud, in the
    mass inner product.  Queries are orthogonally projected onto the hull."""

    def __init__(self, points: np.ndarray, sys: MassSystem | None):
        P = points.shape[0]
        flat = points.reshape(P, -1)
        if sys is not None:
            w = np.repeat(np.sqrt(sys.masses), points.shape[2])
        else:
            w = np.ones(flat.shape[1])
        self.weights = w
        scaled = flat * w[None, :]
        self.origin = scaled.mean(axis=0)
        centered = scaled - self.origin
        if P == 1:
            self.basis = np.zeros((0, flat.shape[1]))
        else:
            _, s, vt = np.linalg.svd(centered, full_matrices=False)
            rank = int(np.sum(s > 1e-9 * max(s[0], 1e-300)))
            self.basis = vt[:rank]
        self.coords = centered @ self.basis.T

    def project(self, X: np.ndarray) -> np.ndarray:
        flat = X.reshape(X.shape[0], -1) * self.weights[None, :]
        return (flat - self.origin) @ self.basis.T


@dataclass
class SampledField:
    """Scalar function sampled on configurations, with an interpolation rule.

    Evaluation at a sample point returns the stored value exactly;
    elsewhere the rule tag decides (nearest, inverse-distance weights, or
    barycentric interpolation on a triangulation of the chart).
    Off-hull queries are projected, so centered grids evaluate any
    translate of a configuration to the same value.
    """

    points: np.ndarray
    values: np.ndarray
    interpolation: str = "simplex-linear"
    sys: MassSystem | None = None
    grid: dict | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.points.ndim != 3:
            raise ValueError("points must be a (P, N, k) array")
        if self.values.shape != (self.points.shape[0],):
            raise ValueError("need exactly one value per sample point")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation rule {self.interpolation!r}")
        self._chart = None
        self._tree = None
        self._interp = None
        self._exact = None

    # lazy helpers -----------------------------------------------------
    def _ensure_chart(self):
        if self._chart is None:
            self._chart = _Chart(self.points, self.sys)
            self._tree = cKDTree(self._chart.coords) if self.points.shape[0] else None
            self._exact = {
                np.round(c, 9).tobytes(): i
                for i, c in enumerate(self._chart.coords)
            }
        return self._chart

    def _ensure_interp(self):
        chart = self._ensure_chart()
        if self._interp is None:
            coords = chart.coords
            if coords.shape[1] == 0:
                self._interp = lambda q: np.full(q.shape[0], self.values[0])
            elif coords.shape[1] == 1:
                order = np.argsort(coords[:, 0])
                xs, vs = coords[order, 0], self.values[order]
                self._interp = lambda q, xs=xs, vs=vs: np.interp(
                    q[:, 0], xs, vs, left=np.nan, right=np.nan)
            else:
                lin = LinearNDInterpolator(coords, self.values)
                self._interp = lambda q, lin=lin: lin(q)
        return self._interp

    # evaluation ---------------------------------------------------------
    def eval_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        chart = self._ensure_chart()
        q = chart.project(X)
        out = np.empty(X.shape[0])
        exact_mask = np.zeros(X.shape[0], dtype=bool)
        for r, qr in enumerate(q):
            idx = self._exact.get(np.round(qr, 9).tobytes())
            if idx is not None:
                out[r] = self.values[idx]
                exact_mask[r] = True
        rest = ~exact_mask
        if np.any(rest):
            if self.interpolation == "nearest":
                _, nn = self._tree.query(q[rest])
                out[rest] = self.values[nn]
            elif self.interpolation == "inverse-distance":
                d = np.linalg.norm(
                    chart.coords[None, :, :] - q[rest][:, None, :], axis=2)
                w = 1.0 / np.maximum(d, 1e-300) ** 2
                out[rest] = (w @ self.values) / w.sum(axis=1)
            else:
                vals = self._ensure_interp()(q[rest])
                out[rest] = vals
        return out

    def eval(self, x) -> float:
        return float(self.eval_many(np.asarray(x, float)[None])[0])

    __call__ = eval

    def shifted(self, delta: float) -> "SampledField":
        return SampledField(self.points, self.values + delta,
                            self.interpolation, self.sys, self.grid)

    def oscillation(self) -> float:
        return float(self.values.max() - self.values.min())

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "grid": self.grid,
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "interpolation": self.interpolation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, sys: MassSystem | None = None) -> "SampledField":
        return cls(np.asarray(data["points"], float),
                   np.asarray(data["values"], float),
                   data.get("interpolation", "simplex-linear"),
                   sys, data.get("grid"))


# --- grids and closed forms -------------------------------------------------

def pair_config(sys: MassSystem, s: float, theta: float = 0.0,
                com=None) -> np.ndarray:
    """Planar two-body configuration with separation s at angle theta,
    centered unless a center of mass is supplied."""
    if sys.n_bodies != 2 or sys.dim < 2:
        raise ValueError("pair_config needs a planar two-body system")
    q = np.zeros(sys.dim)
    q[0], q[1] = s * math.cos(theta), s * math.sin(theta)
    m1, m2 = sys.masses
    M = sys.total_mass
    x = np.stack([m2 / M * q, -m1 / M * q])
    if com is not None:
        x = x + np.asarray(com, float)[None, :]
    return x


def pair_polar_grid(sys: MassSystem, radii, n_angles: int = 16) -> SampledField | np.ndarray:
    """Centered two-body configurations on a polar grid of separation
    vectors: every radius at n_angles evenly spaced directions."""
    radii = np.asarray(radii, dtype=float)
    angles = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    pts = np.array([pair_config(sys, s, th) for s in radii for th in angles])
    return pts


def separation_polar(x: np.ndarray):
    q = x[0] - x[1]
    return float(np.linalg.norm(q)), float(math.atan2(q[1], q[0]))


def kepler_field(sys: MassSystem, sign: float = 1.0):
    """Closed-form two-body solution  u(x) = sign * c * |r1 - r2|^(1/2)."""
    if sys.n_bodies != 2:
        raise ValueError("the closed form is a two-body object")
    c = kepler_solution_constant(*sys.masses)

    def u(x) -> float:
        x = np.asarray(x, dtype=float)
        return float(sign * c * math.sqrt(np.linalg.norm(x[0] - x[1])))

    u.constant = sign * c
    return u


def busemann_closed_form(sys: MassSystem, ray_angle: float = 0.0):
    """Directional horofunction of the two-body problem.

    u(x) = -c sqrt(s) |cos((theta - ray_angle)/2)| in separation polar
    coordinates; the kink opposite the ray direction is genuine (the
    function is a viscosity solution, locally Lipschitz only).  This is
    the pointwise limit of phi(z_n, .) - phi(z_n, x0) along homothetic
    rays z_n expanding in the given direction, rotation-noninvariant as
    a fixed-direction limit must be.
    """
    if sys.n_bodies != 2 or sys.dim < 2:
        raise ValueError("the closed form is a planar two-body object")
    c = kepler_solution_constant(*sys.masses)

    def u(x) -> float:
        s, th = separation_polar(np.asarray(x, dtype=float))
        return float(-c * math.sqrt(s) * abs(math.cos((th - ray_angle) / 2.0)))

    u.constant = c
    u.ray_angle = ray_angle
    return u


def _field_value(u, x) -> float:
    if isinstance(u, SampledField):
        return u.eval(x)
    return float(u(x))


# --- dominated functions ------------------------------------------------------

@dataclass
class DominationReport:
    max_violation: float
    violating_pair: int | None
    n_pairs: int
    n_skipped: int


def domination_check(u, pairs, solver: FreeTimeSolver, nodes=None) -> DominationReport:
    """max over pairs of u(y) - u(x) - phi(x, y); dominated means <= tol.

    Pairs whose potential computation comes back unreliable are skipped
    and counted rather than poisoning the maximum.
    """
    worst = -np.inf
    worst_idx = None
    skipped = 0
    pairs = list(pairs)
    for idx, (x, y) in enumerate(pairs):
        pv = solver.phi(x, y, nodes=nodes)
        if not pv.reliable:
            skipped += 1
            continue
        v = _field_value(u, y) - _field_value(u, x) - pv.value
        if v > worst:
            worst, worst_idx = v, idx
    if not np.isfinite(worst):
        raise ValueError("no reliable pair to check domination on")
    return DominationReport(float(worst), worst_idx, len(pairs), skipped)


def lax_oleinik(u: SampledField, t: float, solver: FreeTimeSolver,
                nodes=None) -> SampledField:
    """One semigroup step on the grid: value at x is the min over grid
    points y of u(y) + phi(y, x, t).  Grid columns whose fixed-time
    solve failed are excluded from the min."""
    if t <= 0.0:
        raise ValueError("t must be positive")
    C = solver.fixed_time_matrix(u.points, t, n=nodes)
    stacked = u.values[:, None] + C
    if np.all(np.isnan(stacked)):
        raise ValueError("every grid optimization failed")
    with np.errstate(all="ignore"):
        new_vals = np.nanmin(stacked, axis=0)
    if np.any(np.isnan(new_vals)):
        raise ValueError("some grid points have no reliable candidate value")
    return SampledField(u.points, new_vals, u.interpolation, u.sys, u.grid)


@dataclass
class FixedPointResult:
    field: SampledField
    history: list
    converged: bool
    diverged: bool
    iterations: int


def fixed_point_iterate(
    u0: SampledField,
    t: float,
    solver: FreeTimeSolver,
    max_iter: int = 50,
    tol: float = 1e-6,
    base_index: int = 0,
    nodes=None,
    domination_pairs=None,
    domination_tol: float = 1e-2,
) -> FixedPointResult:
    """Iterate the renormalized semigroup step until the sup-change stalls.

    The seed must be dominated (checked first on the supplied pair
    sample).  Each sweep subtracts the value at a base grid point, which
    pins the additive constant that weak KAM solutions are defined up
    to.  Sup-changes growing tenfold over ten sweeps abort the run with
    the history intact.
    """
    if domination_pairs is not None:
        rep = domination_check(u0, domination_pairs, solver, nodes=nodes)
        if rep.max_violation > domination_tol:
            raise ValueError(
                f"seed is not dominated: violation {rep.max_violation:.3e} "
                f"> {domination_tol:.3e}")
    u = u0.shifted(-u0.values[base_index])
    history = []
    for it in range(1, max_iter + 1):
        nxt = lax_oleinik(u, t, solver, nodes=nodes)
        nxt = nxt.shifted(-nxt.values[base_index])
        change = float(np.max(np.abs(nxt.values - u.values)))
        history.append(change)
        u = nxt
        if change <= tol:
            return FixedPointResult(u, history, True, False, it)
        if len(history) >= 11 and history[-1] > 10.0 * history[-11]:
            return FixedPointResult(u, history, False, True, it)
    return FixedPointResult(u, history, False, False, max_iter)


# --- Busemann construction ---------------------------------------------------

@dataclass
class BusemannResult:
    fields: list
    tails: list
    skipped: int

    @property
    def field(self) -> SampledField:
        return self.fields[-1]

    def extrapolated(self, ratio: float | None = None) -> SampledField:
        """Geometric limit estimate from the last two iterates.

        The iterates converge like C / sqrt(|z_n|), so the error
        contracts by (scale ratio)^(-1/2) per ray step; pass that
        ``ratio`` when the ray geometry is known, otherwise it is
        estimated from the observed Cauchy tails.
        """
        if len(self.fields) < 2:
            return self.fields[-1]
        if ratio is None:
            if len(self.tails) >= 2 and self.tails[-2] > 0:
                ratio = self.tails[-1] / self.tails[-2]
            else:
                ratio = 0.5
        ratio = min(max(ratio, 0.05), 0.95)
        last, prev = self.fields[-1], self.fields[-2]
        gain = ratio / (1.0 - ratio)
        vals = last.values + gain * (last.values - prev.values)
        return SampledField(last.points, vals, last.interpolation,
                            last.sys, last.grid)


def busemann(ray, x0, grid_points, solver: FreeTimeSolver,
             nodes=None, interpolation: str = "simplex-linear") -> BusemannResult:
    """Horofunction iterates u_n = phi(z_n, .) - phi(z_n, x0) on a grid.

    ``nodes`` may be a single node count or one per ray element (far ray
    points need finer grids for the same accuracy).  Ray elements whose
    base potential fails are dropped and counted.
    """
    grid_points = np.asarray(grid_points, dtype=float)
    ray = list(ray)
    if np.isscalar(nodes) or nodes is None:
        nodes = [nodes] * len(ray)
    fields, tails, skipped = [], [], 0
    prev_vals = None
    for z, n_z in zip(ray, nodes):
        base = solver.phi(z, x0, nodes=n_z)
        if not base.reliable:
            skipped += 1
            continue
        hint = base.t_star
        vals = np.empty(grid_points.shape[0])
        ok = True
        for g, xg in enumerate(grid_points):
            pv = solver.phi(z, xg, nodes=n_z, scan_hint=hint)
            if not pv.reliable:
                ok = False
                break
            hint = pv.t_star
            vals[g] = pv.value - base.value
        if not ok:
            skipped += 1
            continue
        fld = SampledField(grid_points, vals, interpolation, solver.sys)
        if prev_vals is not None:
            tails.append(float(np.max(np.abs(vals - prev_vals))))
        fields.append(fld)
        prev_vals = vals
    if not fields:
        raise ValueError("every ray element failed")
    return BusemannResult(fields, tails, skipped)


# --- supercritical lift -------------------------------------------------------

class LiftedField:
    """u0 + <G(x), r>: adds the diagonal-direction linear term that a
    centered-grid field cannot carry.  When u0 solves the critical
    equation the lift solves the level |r|^2 / (2 M): the linear part
    has squared dual norm |r|^2 / M and is dual-orthogonal to any
    translation-invariant differential."""

    def __init__(self, base, shift, sys: MassSystem):
        self.base = base
        self.shift = np.asarray(shift, dtype=float)
        if self.shift.shape != (sys.dim,):
            raise ValueError("shift vector must live in the ambient space")
        self.sys = sys

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        lin = float(center_of_mass(x, self.sys) @ self.shift)
        return _field_value(self.base, x) + lin

    @property
    def predicted_level(self) -> float:
        r2 = float(self.shift @ self.shift)
        return 0.5 * r2 / self.sys.total_mass

    def candidate_levels(self) -> dict:
        r2 = float(self.shift @ self.shift)
        M = self.sys.total_mass
        return {
            "half_r2": 0.5 * r2,
            "half_M_r2": 0.5 * M * r2,
            "half_r2_over_M": 0.5 * r2 / M,
        }


def supercritical_lift(u0, r, sys: MassSystem) -> LiftedField:
    return LiftedField(u0, r, sys)


# --- calibrated curves ---------------------------------------------------------

class GradientInstability(RuntimeError):
    pass


def _fd_gradient(u, x: np.ndarray, h: float, check: bool = False) -> np.ndarray:
    """Central-difference differential of u at x (covector, (N, k)).

    With ``check`` the step is halved and a >10% disagreement raises;
    dominated functions are Lipschitz but kinked off the calibrated set,
    so instability detection is part of the contract."""

    def central(step):
        g = np.empty_like(x)
        for b in range(x.shape[0]):
            for c in range(x.shape[1]):
                xp = x.copy()
                xm = x.copy()
                xp[b, c] += step
                xm[b, c] -= step
                g[b, c] = (_field_value(u, xp) - _field_value(u, xm)) / (2 * step)
        return g

    g = central(h)
    if check:
        g2 = central(0.5 * h)
        num = float(np.max(np.abs(g - g2)))
        den = float(np.max(np.abs(g2))) + 1e-300
        if num > 0.1 * den:
            raise GradientInstability(
                f"finite-difference gradient unstable: {num / den:.2%} disagreement")
    return g


@dataclass
class CalibrationReport:
    curve: Curve | None
    defect: float
    com_drift: float
    energy_residual: float
    completed: bool
    t_reached: float


def calibrated_curve(u, x, horizon: float, step: float, sys: MassSystem,
                     fd_step: float | None = None) -> CalibrationReport:
    """Integrate the characteristic flow  dx/dt = L^{-1}(d_x u)  from x.

    Along a curve calibrated for u the value gain equals the action and
    the Hamiltonian vanishes at the differential; the report measures
    both defects plus the center-of-mass drift.  Gradient instability
    aborts with a partial report at the time reached.
    """
    x = as_config(x, sys)
    if min_separation(x) <= 0.0:
        raise ValueError("starting configuration must be collision-free")
    if horizon < 0.0 or step <= 0.0:
        raise ValueError("need horizon >= 0 and step > 0")
    n_steps = int(round(horizon / step))
    if n_steps == 0:
        return CalibrationReport(None, 0.0, 0.0, 0.0, True, 0.0)

    if fd_step is None:
        fd_step = 1e-6 * max(max_norm(x), 1.0)

    def velocity(xc, check=False):
        p = _fd_gradient(u, xc, fd_step, check=check)
        return p, legendre_inv(p, sys)

    nodes = np.empty((n_steps + 1,) + x.shape)
    nodes[0] = x
    h_res = 0.0
    drift = 0.0
    g0 = center_of_mass(x, sys)
    xc = x.copy()
    completed = True
    reached = 0.0
    for s in range(1, n_steps + 1):
        try:
            check = (s == 1) or (s % 50 == 0)
            p, v1 = velocity(xc, check=check)
            h_res = max(h_res, abs(hamiltonian(xc, p, sys)))
            _, v2 = velocity(xc + 0.5 * step * v1)
            _, v3 = velocity(xc + 0.5 * step * v2)
            _, v4 = velocity(xc + step * v3)
        except GradientInstability:
            completed = False
            nodes = nodes[:s]
            break
        xc = xc + step / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        nodes[s] = xc
        reached = s * step
        drift = max(drift, float(np.linalg.norm(center_of_mass(xc, sys) - g0)))
    if nodes.shape[0] < 2:
        return CalibrationReport(None, 0.0, drift, h_res, completed, reached)
    curve = Curve(nodes, step)
    gain = _field_value(u, curve.end()) - _field_value(u, curve.start())
    defect = abs(gain - action(curve, sys).total)
    return CalibrationReport(curve, float(defect), float(drift),
                             float(h_res), completed, reached)


# --- invariance checks -----------------------------------------------------------

@dataclass
class InvarianceReport:
    max_deviation: float
    normalized: float
    oscillation: float
    n_skipped: int


def translation_invariance_check(u, vectors, points, sys: MassSystem) -> InvarianceReport:
    """max |u(x + delta(r)) - u(x)| over test points and shift vectors,
    also normalized by the oscillation of u on the test set.  Points the
    field cannot evaluate (NaN) are skipped and counted."""
    base = []
    worst = 0.0
    skipped = 0
    for x in points:
        ux = _field_value(u, x)
        if not np.isfinite(ux):
            skipped += 1
            continue
        base.append(ux)
        for r in vectors:
            shifted = np.asarray(x, float) + diagonal_lift(np.asarray(r, float), sys)
            us = _field_value(u, shifted)
            if not np.isfinite(us):
                skipped += 1
                continue
            worst = max(worst, abs(us - ux))
    if not base:
        raise ValueError("no evaluable test point")
    osc = max(max(base) - min(base), 1e-300)
    return InvarianceReport(float(worst), float(worst / osc), float(osc), skipped)


@dataclass
class LemmaProbe:
    rows: list
    crossing: float | None


def lemma_inequality_probe(x0, v, t_values, eta_hat: float,
                           sys: MassSystem) -> LemmaProbe:
    """Compare the drift cost T M |v|^2 / 2 against the square-root bound
    sqrt(T) eta |v|^(1/2) over a list of durations.

    The left side is the action surcharge of rigidly drifting at
    velocity v; the right side bounds the potential between the drift
    endpoints.  For v != 0 the left side always overtakes at
    T = 4 eta^2 / (M^2 |v|^3): a ray drifting forever at nonzero
    velocity cannot keep minimizing, so free-time rays have fixed
    center of mass.
    """
    v = np.asarray(v, dtype=float)
    vn = float(np.linalg.norm(v))
    M = sys.total_mass
    rows = []
    for T in t_values:
        lhs = 0.5 * T * M * vn ** 2
        rhs = math.sqrt(T) * eta_hat * math.sqrt(vn)
        rows.append({"T": float(T), "lhs": lhs, "rhs": rhs,
                     "lhs_exceeds": bool(lhs > rhs)})
    crossing = None if vn == 0.0 else 4.0 * eta_hat ** 2 / (M ** 2 * vn ** 3)
    return LemmaProbe(rows, crossing)

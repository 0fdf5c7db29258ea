"""Fixed-time and free-time action minimization.

phi(x, y, T) is approximated by minimizing the discrete action over the
interior nodes of a uniform-grid curve (limited-memory quasi-Newton
descent under a strict monotone-decrease line search).  The free-time
potential phi(x, y) = inf_T phi(x, y, T) is located by a coarse
logarithmic scan in T followed by golden-section refinement; the scan
guards against spurious local minima, and both bracket ends are pushed
out until the action provably (small T: kinetic bound) or empirically
(large T) exceeds the incumbent by an order of magnitude.

Every computed value is an upper bound on the true potential that
converges as the node count grows; no lower bounds are claimed.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    MassSystem,
    as_config,
    mass_norm,
    max_norm,
    min_separation,
)
from .dynamics import potential_many, energy
from .curves import Curve, action, action_gradient, resample

__all__ = [
    "MinimizeOptions",
    "MinimizeResult",
    "PotentialValue",
    "PhiCache",
    "minimize_fixed_time",
    "free_time_potential",
    "FreeTimeSolver",
    "HolderEstimate",
    "holder_estimate",
    "lipschitz_estimate",
    "marchal_check",
    "energy_at_optimum",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MinimizeOptions:
    """Solver knobs.  ``tol`` is a relative gradient tolerance: descent stops
    once the interior gradient norm (per sqrt-node) drops below
    tol * value / separation, which keeps the criterion invariant under
    spatial rescaling of the problem."""

    nodes: int = 64
    tol: float = 1e-3
    max_iter: int = 800
    memory: int = 10
    t_scan: int = 24
    t_rel_tol: float = 3e-4
    seed: int = 0
    quadrature: str = "trapezoid"
    sep_floor_rel: float = 1e-6
    max_scan_expand: int = 4


@dataclass
class MinimizeResult:
    curve: Curve
    value: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class PotentialValue:
    value: float
    t_star: float
    curve: Curve | None
    bracket: tuple
    reliable: bool = True
    n_evaluations: int = 0


# --- descent core ----------------------------------------------------------

def _lbfgs(fg, z0, gtol_fn, max_iter, memory):
    """Two-loop L-BFGS with Armijo backtracking; the objective may return
    +inf (gradient None), which the line search simply rejects."""
    z = np.asarray(z0, dtype=float).copy()
    f, g = fg(z)
    if not np.isfinite(f):
        raise ValueError("descent must start from a finite-action curve")
    svecs, yvecs, rhos = [], [], []
    n_iter = 0
    while n_iter < max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol_fn(f):
            return z, f, gnorm, n_iter, True
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(svecs), reversed(yvecs), reversed(rhos)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if yvecs:
            y_last = yvecs[-1]
            gamma = float(svecs[-1] @ y_last) / max(float(y_last @ y_last), 1e-300)
            q *= gamma
        for (s, y, rho), a in zip(zip(svecs, yvecs, rhos), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        d = -q
        gd = float(g @ d)
        if gd >= 0.0:
            d = -g
            gd = -float(g @ g)
        # backtracking line search (monotone decrease enforced)
        t = 1.0
        accepted = False
        for _ in range(60):
            zt = z + t * d
            ft, gt = fg(zt)
            if np.isfinite(ft) and ft <= f + 1e-4 * t * gd:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return z, f, gnorm, n_iter, False
        s_vec = zt - z
        y_vec = gt - g
        z, f, g = zt, ft, gt
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
            svecs.append(s_vec)
            yvecs.append(y_vec)
            rhos.append(1.0 / sy)
            if len(svecs) > memory:
                svecs.pop(0)
                yvecs.pop(0)
                rhos.pop(0)
        n_iter += 1
    gnorm = float(np.linalg.norm(g))
    return z, f, gnorm, n_iter, gnorm <= gtol_fn(f)


def _straight_init(x, y, n, sys, opts) -> np.ndarray:
    """Straight-segment initial nodes with a deterministic transverse nudge
    applied to bodies that pass too close to each other."""
    lam = np.linspace(0.0, 1.0, n + 1)[:, None, None]
    nodes = (1.0 - lam) * x[None] + lam * y[None]
    scale = max(max_norm(x), max_norm(y), max_norm(y - x), 1e-12)
    floor = 1e-6 * scale
    i_idx, j_idx = sys.pair_index
    d = np.linalg.norm(nodes[:, i_idx, :] - nodes[:, j_idx, :], axis=2)
    bad_nodes, bad_pairs = np.where(d < floor)
    if bad_nodes.size:
        rng = np.random.default_rng(opts.seed + 0x5EED)
        bump = 1e-3 * scale
        for node, pair in zip(bad_nodes, bad_pairs):
            if node == 0 or node == n:
                continue  # endpoints are data, never moved
            b1, b2 = i_idx[pair], j_idx[pair]
            direction = rng.normal(size=sys.dim)
            sep = nodes[node, b1] - nodes[node, b2]
            ns = np.linalg.norm(sep)
            if ns > 0:  # push transversally to the near-collision axis
                axis = sep / ns
                direction -= (direction @ axis) * axis
            nd = np.linalg.norm(direction)
            if nd == 0.0:
                direction = np.zeros(sys.dim)
                direction[0] = 1.0
                nd = 1.0
            nodes[node, b1] += bump * direction / nd
            nodes[node, b2] -= bump * direction / nd
    return nodes


def _make_objective(x, y, T, n, sys, quadrature):
    dt = T / n
    shape = (n - 1, sys.n_bodies, sys.dim)
    nodes = np.empty((n + 1, sys.n_bodies, sys.dim))
    nodes[0], nodes[-1] = x, y

    def fg(z):
        nodes[1:-1] = z.reshape(shape)
        curve = Curve.__new__(Curve)
        curve.nodes, curve.dt, curve.t0 = nodes, dt, 0.0
        a = action(curve, sys, quadrature)
        if not np.isfinite(a.total):
            return np.inf, None
        g = action_gradient(curve, sys, quadrature)
        return a.total, g.ravel()

    return fg


def minimize_fixed_time(
    x,
    y,
    T: float,
    sys: MassSystem,
    opts: MinimizeOptions = MinimizeOptions(),
    n: int | None = None,
    init_curve: Curve | None = None,
    quadrature: str | None = None,
) -> MinimizeResult:
    """Minimize the discrete action over curves from x to y in time T.

    Endpoints are fixed; only interior nodes move.  Iterates decrease
    monotonically; a result that hits the iteration cap is returned with
    ``converged=False`` rather than raised.
    """
    x = as_config(x, sys)
    y = as_config(y, sys)
    if not (T > 0.0):
        raise ValueError("T must be positive")
    n = int(n or opts.nodes)
    if n < 2:
        raise ValueError("need at least two segments")
    quadrature = quadrature or opts.quadrature

    if init_curve is not None and init_curve.n_segments == n:
        nodes0 = init_curve.nodes.copy()
        nodes0[0], nodes0[-1] = x, y
    elif init_curve is not None:
        nodes0 = resample(init_curve, n).nodes
        nodes0[0], nodes0[-1] = x, y
    else:
        nodes0 = _straight_init(x, y, n, sys, opts)

    fg = _make_objective(x, y, T, n, sys, quadrature)
    z0 = nodes0[1:-1].ravel()
    f0, g0 = fg(z0)
    if not np.isfinite(f0):
        nodes0 = _straight_init(x, y, n, sys, opts)
        z0 = nodes0[1:-1].ravel()
        f0, g0 = fg(z0)
        if not np.isfinite(f0):
            raise ValueError("could not build a finite-action initial curve")

    d_sep = mass_norm(y - x, sys)
    d_ref = max(d_sep, 1e-9 * (1.0 + max_norm(x)))
    root_n = math.sqrt(n - 1)

    def gtol(f_now):
        return opts.tol * max(f_now, 1e-300) / d_ref * root_n

    z, f, gnorm, iters, ok = _lbfgs(fg, z0, gtol, opts.max_iter, opts.memory)
    nodes = np.empty((n + 1, sys.n_bodies, sys.dim))
    nodes[0], nodes[-1] = x, y
    nodes[1:-1] = z.reshape(n - 1, sys.n_bodies, sys.dim)
    curve = Curve(nodes, T / n)
    value = action(curve, sys, quadrature).total
    return MinimizeResult(curve=curve, value=value, grad_norm=gnorm,
                          iterations=iters, converged=ok)


# --- free-time search -------------------------------------------------------

def free_time_potential(
    x,
    y,
    sys: MassSystem,
    opts: MinimizeOptions = MinimizeOptions(),
    nodes: int | None = None,
    scan_hint: float | None = None,
    quadrature: str | None = None,
) -> PotentialValue:
    """inf over T > 0 of the fixed-time minimum, with the minimizing curve.

    For x == y the infimum (zero) is not attained; the value 0 is
    returned by definition with no curve.  ``scan_hint`` narrows the
    initial scan to a window around a previously known optimal time; the
    edge guards below re-expand it if the hint proves wrong.
    """
    x = as_config(x, sys)
    y = as_config(y, sys)
    if np.array_equal(x, y):
        return PotentialValue(0.0, 0.0, None, (0.0, 0.0), True, 0)

    n = int(nodes or opts.nodes)
    quadrature = quadrature or opts.quadrature
    d = mass_norm(y - x, sys)

    init_nodes = _straight_init(x, y, n, sys, opts)
    u_init = potential_many(init_nodes, sys)
    u_max = float(np.max(u_init[np.isfinite(u_init)]))
    v_scale = math.sqrt(2.0 * u_max)
    if scan_hint is not None and scan_hint > 0.0:
        t_lo, t_hi = scan_hint / 3.0, scan_hint * 3.0
        n_scan = max(6, opts.t_scan // 4)
    else:
        t_lo, t_hi = 1e-3 * d / v_scale, 1e3 * d / v_scale
        n_scan = opts.t_scan

    evaluations: dict[float, MinimizeResult] = {}
    best = {"T": None, "res": None}

    def solve(T, init):
        res = minimize_fixed_time(x, y, T, sys, opts, n=n, init_curve=init,
                                  quadrature=quadrature)
        evaluations[T] = res
        if best["res"] is None or res.value < best["res"].value:
            best["T"], best["res"] = T, res
        return res

    ts = list(np.geomspace(t_lo, t_hi, n_scan))
    prev_curve = None
    for T in ts:
        prev_curve = solve(T, prev_curve).curve

    # bracket guards: push the edges out until both sides visibly dominate
    for _ in range(opts.max_scan_expand):
        ts_sorted = sorted(evaluations)
        b = best["T"]
        left_ok = (b > ts_sorted[0]) or (d * d / (2.0 * ts_sorted[0])
                                         >= 10.0 * best["res"].value)
        if not left_ok:
            t_new = ts_sorted[0] / 10.0
            solve(t_new, evaluations[ts_sorted[0]].curve)
            continue
        right_ok = (b < ts_sorted[-1]) or (
            evaluations[ts_sorted[-1]].value >= 10.0 * best["res"].value)
        if not right_ok:
            t_new = ts_sorted[-1] * 10.0
            solve(t_new, evaluations[ts_sorted[-1]].curve)
            continue
        break

    ts_sorted = sorted(evaluations)
    bi = ts_sorted.index(best["T"])
    lo = ts_sorted[max(bi - 1, 0)]
    hi = ts_sorted[min(bi + 1, len(ts_sorted) - 1)]
    interior = 0 < bi < len(ts_sorted) - 1

    # golden-section refinement on log T, warm-started from the incumbent
    a, b_ = math.log(lo), math.log(hi)
    h = b_ - a
    c = b_ - _INVPHI * h
    d_pt = a + _INVPHI * h
    fc = solve(math.exp(c), best["res"].curve).value
    fd = solve(math.exp(d_pt), best["res"].curve).value
    while h > opts.t_rel_tol:
        if fc < fd:
            b_, d_pt, fd = d_pt, c, fc
            h = b_ - a
            c = b_ - _INVPHI * h
            fc = solve(math.exp(c), best["res"].curve).value
        else:
            a, c, fc = c, d_pt, fd
            h = b_ - a
            d_pt = a + _INVPHI * h
            fd = solve(math.exp(d_pt), best["res"].curve).value

    res = best["res"]
    reliable = bool(res.converged and interior)
    return PotentialValue(
        value=res.value,
        t_star=best["T"],
        curve=res.curve,
        bracket=(lo, hi),
        reliable=reliable,
        n_evaluations=len(evaluations),
    )


# --- persistent cache -------------------------------------------------------

def _endpoint_key(x, y, sys, n, tol, quadrature) -> str:
    h = hashlib.sha1()
    # adding 0.0 collapses signed zeros so -0.0 and 0.0 share a key
    h.update(np.ascontiguousarray(np.round(x, 9) + 0.0).tobytes())
    h.update(np.ascontiguousarray(np.round(y, 9) + 0.0).tobytes())
    h.update(sys.fingerprint().encode())
    h.update(f"n{n}tol{tol:.6g}q{quadrature}".encode())
    return h.hexdigest()


class PhiCache:
    """Keyed store of free-time potential summaries.

    Hits reproduce the stored value bit-exactly.  Merging two caches
    keeps the smaller value per key (both are valid upper bounds);
    last-writer-wins would discard information.
    """

    def __init__(self, path: str | None = None):
        self.path = path
        self.entries: dict[str, dict] = {}
        self._new_keys: set[str] = set()
        if path and os.path.exists(path):
            self.load(path)

    def load(self, path) -> None:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self.merge_record(rec)

    def merge_record(self, rec: dict) -> None:
        key = rec["key"]
        old = self.entries.get(key)
        if old is None or rec["value"] < old["value"]:
            self.entries[key] = rec

    def get(self, key: str):
        return self.entries.get(key)

    def put(self, key: str, value: float, t_star: float, n: int, tol: float) -> None:
        rec = {"key": key, "value": value, "t_star": t_star, "n": n, "tol": tol}
        old = self.entries.get(key)
        if old is None or rec["value"] < old["value"]:
            self.entries[key] = rec
            self._new_keys.add(key)

    def flush(self, path: str | None = None) -> None:
        path = path or self.path
        if not path:
            return
        if os.path.exists(path):
            # append only the records this process added or improved
            with open(path, "a") as fh:
                for key in sorted(self._new_keys):
                    fh.write(json.dumps(self.entries[key], sort_keys=True) + "\n")
        else:
            with open(path, "w") as fh:
                for key in sorted(self.entries):
                    fh.write(json.dumps(self.entries[key], sort_keys=True) + "\n")
        self._new_keys.clear()


class FreeTimeSolver:
    """Convenience wrapper tying a system, options and a cache together."""

    def __init__(self, sys: MassSystem, opts: MinimizeOptions = MinimizeOptions(),
                 cache: PhiCache | None = None):
        self.sys = sys
        self.opts = opts
        self.cache = cache if cache is not None else PhiCache()
        self._matrix_cache: dict = {}

    def with_options(self, **kwargs) -> "FreeTimeSolver":
        return FreeTimeSolver(self.sys, replace(self.opts, **kwargs), self.cache)

    def fixed(self, x, y, T, n=None, init_curve=None, quadrature=None) -> MinimizeResult:
        return minimize_fixed_time(x, y, T, self.sys, self.opts, n=n,
                                   init_curve=init_curve, quadrature=quadrature)

    def phi(self, x, y, nodes=None, scan_hint=None, quadrature=None,
            use_cache=True) -> PotentialValue:
        x = as_config(x, self.sys)
        y = as_config(y, self.sys)
        n = int(nodes or self.opts.nodes)
        quad = quadrature or self.opts.quadrature
        key = _endpoint_key(x, y, self.sys, n, self.opts.tol, quad)
        hit = self.cache.get(key) if use_cache else None
        if hit is not None:
            return PotentialValue(hit["value"], hit["t_star"], None,
                                  (hit["t_star"], hit["t_star"]), True, 0)
        pv = free_time_potential(x, y, self.sys, self.opts, nodes=n,
                                 scan_hint=scan_hint, quadrature=quad)
        if pv.reliable:
            self.cache.put(key, pv.value, pv.t_star, n, self.opts.tol)
        return pv

    def phi_value(self, x, y, **kw) -> float:
        return self.phi(x, y, **kw).value

    def ensure_curve(self, pv: PotentialValue, x, y, nodes=None,
                     quadrature=None) -> PotentialValue:
        """Re-solve the fixed-time problem at t_star when a cached hit
        carries no curve (deterministic, so reruns agree)."""
        if pv.curve is not None or pv.t_star == 0.0:
            return pv
        res = self.fixed(x, y, pv.t_star, n=nodes, quadrature=quadrature)
        return replace(pv, curve=res.curve)

    def fixed_time_matrix(self, points: np.ndarray, t: float,
                          n: int | None = None) -> np.ndarray:
        """phi(p_i, p_j, t) over all grid pairs; reversal symmetry halves
        the work since reversed curves carry the same discrete action."""
        points = np.asarray(points, dtype=float)
        key = (hashlib.sha1(points.tobytes()).hexdigest(), float(t),
               int(n or self.opts.nodes))
        if key in self._matrix_cache:
            return self._matrix_cache[key]
        P = points.shape[0]
        out = np.full((P, P), np.nan)
        for i in range(P):
            init = None
            for j in range(i, P):
                res = self.fixed(points[i], points[j], t, n=n, init_curve=init)
                init = res.curve
                if res.converged:
                    out[i, j] = out[j, i] = res.value
        self._matrix_cache[key] = out
        return out

    def phi_pairs(self, pairs, nodes=None, quadrature=None) -> np.ndarray:
        return np.array([self.phi(x, y, nodes=nodes, quadrature=quadrature).value
                         for x, y in pairs])


# --- derived estimates -------------------------------------------------------

@dataclass
class HolderEstimate:
    eta_hat: float
    exponent_fit: float
    n_pairs: int
    family_size: int
    ratios: np.ndarray = field(repr=False, default=None)


def holder_estimate(pairs, solver: FreeTimeSolver, nodes=None,
                    quadrature=None) -> HolderEstimate:
    """Empirical square-root-growth constant and exponent for the potential.

    eta_hat is the max of phi / |x - y|_max^(1/2) over the pairs.  The
    exponent is a log-log slope restricted to the largest subfamily with
    a common left endpoint (a scaled-shift family when the caller
    provides one).  Requires >= 10 pairs spanning >= 3 decades.
    """
    pairs = list(pairs)
    if len(pairs) < 10:
        raise ValueError("need at least 10 sample pairs")
    dists = np.array([max_norm(np.asarray(y) - np.asarray(x)) for x, y in pairs])
    if np.min(dists) <= 0.0:
        raise ValueError("pairs must have distinct endpoints")
    if np.log10(np.max(dists) / np.min(dists)) < 3.0:
        raise ValueError("pairs must span at least three decades of separation")

    phis = solver.phi_pairs(pairs, nodes=nodes, quadrature=quadrature)
    ratios = phis / np.sqrt(dists)
    eta_hat = float(np.max(ratios))

    groups: dict[bytes, list[int]] = {}
    for idx, (x, _) in enumerate(pairs):
        key = np.round(np.asarray(x, float), 12).tobytes()
        groups.setdefault(key, []).append(idx)
    fam = max(groups.values(), key=len)
    if len(fam) < 3:
        raise ValueError("no common-left-endpoint family to fit")
    ld = np.log(dists[fam])
    lp = np.log(phis[fam])
    slope = float(np.polyfit(ld, lp, 1)[0])
    return HolderEstimate(eta_hat=eta_hat, exponent_fit=slope,
                          n_pairs=len(pairs), family_size=len(fam),
                          ratios=ratios)


def lipschitz_estimate(samples, solver: FreeTimeSolver, floor: float,
                       nodes=None) -> float:
    """max phi(x, y) / |x - y|_max over pairs from a compact sample set.

    Samples closer to collision than ``floor`` are rejected outright;
    the estimate is only meaningful on a separation-bounded set.
    """
    kept = [s for s in samples if min_separation(s) >= floor]
    if len(kept) < 2:
        raise ValueError("need at least two samples above the separation floor")
    worst = 0.0
    for a in range(len(kept)):
        for b in range(a + 1, len(kept)):
            d = max_norm(kept[b] - kept[a])
            if d == 0.0:
                continue
            v = solver.phi_value(kept[a], kept[b], nodes=nodes)
            worst = max(worst, v / d)
    return worst


def marchal_check(result) -> float:
    """Smallest pairwise separation over the strictly interior nodes."""
    curve = result.curve
    interior = curve.nodes[1:-1]
    if interior.shape[0] == 0:
        return np.inf
    return float(min(min_separation(xj) for xj in interior))


def energy_at_optimum(pv: PotentialValue, sys: MassSystem) -> float:
    """Discrete energy at the midpoint of a free-time minimizing curve.

    At the optimal transfer time the minimizing motion has zero energy
    (dphi/dT = -E vanishes), so this is a solver diagnostic that tends
    to 0 as tolerances tighten.  Results whose optimal time sits at the
    scan bracket edge are rejected as unreliable.
    """
    if pv.curve is None:
        raise ValueError("potential value carries no curve")
    lo, hi = pv.bracket
    if not (lo < pv.t_star < hi):
        raise ValueError("optimal time at bracket edge: diagnostic unreliable")
    nodes = pv.curve.nodes
    j = nodes.shape[0] // 2
    v = (nodes[j + 1] - nodes[j - 1]) / (2.0 * pv.curve.dt)
    return energy(nodes[j], v, sys)

"""Discretized curves and the Lagrangian action on them.

A Curve is a uniform time grid carrying one configuration per node; the
implied path is the piecewise-linear interpolant.  The kinetic term of
the action is exact for that interpolant; the potential term uses a
fixed per-segment quadrature: trapezoid on the nodes by default, or the
midpoint rule (which never samples the endpoints, so curves pinned at a
collision keep a finite action).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .geometry import (
    MassSystem,
    center_of_mass,
    diagonal_lift,
    mass_norm,
)
from .dynamics import (
    CollisionError,
    grad_potential,
    potential_many,
    raw_potential_gradient_many,
)

__all__ = [
    "Curve",
    "ActionBreakdown",
    "action",
    "action_gradient",
    "com_decomposition",
    "resample",
    "euler_lagrange_residual",
    "curve_to_csv",
    "curve_from_csv",
]

QUADRATURES = ("trapezoid", "midpoint")


@dataclass
class Curve:
    """Uniform-grid discrete path: nodes[j] is the configuration at t0 + j*dt."""

    nodes: np.ndarray  # (n+1, N, k)
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 3 or nodes.shape[0] < 2:
            raise ValueError("a curve needs at least two (N, k) nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("curve nodes must be finite")
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        self.nodes = nodes
        self.dt = float(self.dt)
        self.t0 = float(self.t0)

    @property
    def n_segments(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.n_segments * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nodes.shape[0])

    def start(self) -> np.ndarray:
        return self.nodes[0]

    def end(self) -> np.ndarray:
        return self.nodes[-1]

    def translated(self, r, sys: MassSystem) -> "Curve":
        return Curve(self.nodes + diagonal_lift(r, sys)[None], self.dt, self.t0)


@dataclass
class ActionBreakdown:
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def _potential_samples(nodes: np.ndarray, dt: float, sys: MassSystem,
                       quadrature: str):
    """Quadrature sample points and weights for the potential term."""
    if quadrature == "trapezoid":
        w = np.full(nodes.shape[0], dt)
        w[0] = w[-1] = 0.5 * dt
        return nodes, w
    if quadrature == "midpoint":
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        return mids, np.full(mids.shape[0], dt)
    raise ValueError(f"unknown quadrature {quadrature!r}")


def action(curve: Curve, sys: MassSystem, quadrature: str = "trapezoid") -> ActionBreakdown:
    nodes = curve.nodes
    diffs = nodes[1:] - nodes[:-1]
    kin = 0.5 / curve.dt * float(np.einsum("j,sjk,sjk->", sys.masses, diffs, diffs))
    samples, w = _potential_samples(nodes, curve.dt, sys, quadrature)
    u = potential_many(samples, sys)
    pot = float(np.dot(w, u)) if np.all(np.isfinite(u)) else np.inf
    return ActionBreakdown(kinetic=kin, potential=pot)


def action_gradient(curve: Curve, sys: MassSystem,
                    quadrature: str = "trapezoid") -> np.ndarray:
    """Gradient of the total action with respect to the interior nodes.

    Plain partial derivatives (endpoints held fixed), shape (n-1, N, k).
    """
    nodes = curve.nodes
    dt = curve.dt
    if nodes.shape[0] < 3:
        return np.zeros((0,) + nodes.shape[1:])
    kin = (2.0 * nodes[1:-1] - nodes[:-2] - nodes[2:]) * sys.masses[None, :, None] / dt
    samples, _ = _potential_samples(nodes, dt, sys, quadrature)
    try:
        gu = raw_potential_gradient_many(samples, sys)
    except CollisionError:
        bad = np.where(~np.isfinite(potential_many(samples, sys)))[0]
        raise CollisionError(
            f"collision at quadrature sample(s) {bad.tolist()} of the curve")
    if quadrature == "trapezoid":
        pot = dt * gu[1:-1]
    else:
        pot = 0.5 * dt * (gu[:-1] + gu[1:])
    return kin + pot


def com_decomposition(curve: Curve, sys: MassSystem, tol: float = 1e-8,
                      quadrature: str = "trapezoid"):
    """Split the action into internal motion plus rigid-drift term.

    For a curve whose center of mass moves linearly, the action equals
    the action of the centered internal curve plus T*M*|v|^2/2.  Returns
    (centered_action, drift_term, identity_gap).  The linear-drift
    precondition is checked and violating curves are rejected.
    """
    nodes = curve.nodes
    g = np.array([center_of_mass(x, sys) for x in nodes])
    t = curve.times - curve.t0
    T = curve.duration
    v = (g[-1] - g[0]) / T
    g_lin = g[0][None, :] + np.outer(t, v)
    scale = max(float(np.max(np.linalg.norm(g, axis=1))), 1.0)
    if np.max(np.linalg.norm(g - g_lin, axis=1)) > tol * scale:
        raise ValueError("center of mass of the curve does not drift linearly")

    drift = diagonal_lift(g[0], sys)[None] + \
        t[:, None, None] * diagonal_lift(v, sys)[None]
    centered = Curve(nodes - drift, curve.dt, curve.t0)
    a_centered = action(centered, sys, quadrature).total
    drift_term = 0.5 * T * sys.total_mass * float(v @ v)
    a_full = action(curve, sys, quadrature).total
    gap = abs(a_full - a_centered - drift_term)
    return a_centered, drift_term, gap


def resample(curve: Curve, n_new: int) -> Curve:
    """Piecewise-linear resampling onto n_new segments (endpoints kept)."""
    if n_new < 1:
        raise ValueError("need at least one segment")
    old_t = np.linspace(0.0, 1.0, curve.n_segments + 1)
    new_t = np.linspace(0.0, 1.0, n_new + 1)
    flat = curve.nodes.reshape(curve.nodes.shape[0], -1)
    out = np.empty((n_new + 1, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.interp(new_t, old_t, flat[:, c])
    out[0], out[-1] = flat[0], flat[-1]
    nodes = out.reshape((n_new + 1,) + curve.nodes.shape[1:])
    return Curve(nodes, curve.duration / n_new, curve.t0)


def euler_lagrange_residual(curve: Curve, sys: MassSystem) -> float:
    """Max mass-norm defect of the discrete equation of motion at interior nodes."""
    nodes = curve.nodes
    if nodes.shape[0] < 3:
        return 0.0
    acc = (nodes[2:] - 2.0 * nodes[1:-1] + nodes[:-2]) / curve.dt ** 2
    worst = 0.0
    for j in range(acc.shape[0]):
        r = acc[j] - grad_potential(nodes[j + 1], sys)
        worst = max(worst, mass_norm(r, sys))
    return worst


# --- CSV serialization ----------------------------------------------------

def curve_to_csv(curve: Curve, path_or_buf) -> None:
    """Write `t, body0_x0, ..., body{N-1}_x{k-1}` rows at 17 significant digits."""
    n_nodes, n_bodies, k = curve.nodes.shape
    header = "t, " + ", ".join(
        f"body{b}_x{c}" for b in range(n_bodies) for c in range(k))
    times = curve.times
    flat = curve.nodes.reshape(n_nodes, -1)

    def write(fh):
        fh.write(header + "\n")
        for t, row in zip(times, flat):
            cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
            fh.write(", ".join(cells) + "\n")

    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "w") as fh:
            write(fh)
    else:
        write(path_or_buf)


def curve_from_csv(path_or_buf, sys: MassSystem) -> Curve:
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf) as fh:
            text = fh.read()
    else:
        text = path_or_buf.read()
    rows = [line for line in io.StringIO(text) if line.strip()]
    data = np.array([[float(c) for c in line.split(",")] for line in rows[1:]])
    times, flat = data[:, 0], data[:, 1:]
    if flat.shape[1] != sys.n_bodies * sys.dim:
        raise ValueError("column count does not match the mass system")
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    nodes = flat.reshape(times.size, sys.n_bodies, sys.dim)
    return Curve(nodes, dt, t0=float(times[0]))

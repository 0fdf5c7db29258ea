"""Potential, Lagrangian/Hamiltonian pair, Legendre transform and motions.

The potential U(x) = sum_{i<j} m_i m_j |r_i - r_j|^alpha takes values in
(0, +inf]; collisions map to +inf and the infinity is propagated through
L and H rather than raised.  Gradients are taken with respect to the mass
inner product, so the equations of motion read  d^2x/dt^2 = grad U.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    MassSystem,
    as_config,
    center_of_mass,
    mass_norm,
    dual_norm,
    max_norm,
    min_separation,
)

__all__ = [
    "CollisionError",
    "potential",
    "potential_many",
    "grad_potential",
    "raw_potential_gradient",
    "raw_potential_gradient_many",
    "lagrangian",
    "hamiltonian",
    "legendre",
    "legendre_inv",
    "energy",
    "Trajectory",
    "integrate_motion",
    "kepler_solution_constant",
]


class CollisionError(ValueError):
    """Raised when an operation needs a collision-free configuration."""


def _pair_distances_many(points: np.ndarray, sys: MassSystem) -> np.ndarray:
    i, j = sys.pair_index
    return np.linalg.norm(points[:, i, :] - points[:, j, :], axis=2)


def potential_many(points: np.ndarray, sys: MassSystem) -> np.ndarray:
    """U evaluated on a (m, N, k) batch; collisions give +inf entries."""
    d = _pair_distances_many(points, sys)
    collided = np.any(d == 0.0, axis=1)
    safe = np.where(d > 0.0, d, 1.0)
    vals = (sys.pair_mass_product * safe ** sys.alpha).sum(axis=1)
    vals[collided] = np.inf
    return vals


def potential(x: np.ndarray, sys: MassSystem) -> float:
    x = as_config(x, sys)
    return float(potential_many(x[None], sys)[0])


def raw_potential_gradient_many(points: np.ndarray, sys: MassSystem) -> np.ndarray:
    """dU/dx (plain partial derivatives) on a (m, N, k) batch."""
    i, j = sys.pair_index
    diff = points[:, i, :] - points[:, j, :]
    d = np.linalg.norm(diff, axis=2)
    if np.any(d == 0.0):
        raise CollisionError("potential gradient requested at a collision")
    coef = sys.alpha * sys.pair_mass_product * d ** (sys.alpha - 2.0)
    contrib = coef[:, :, None] * diff
    # signed incidence sums the pair contributions onto each body
    return np.einsum("pb,mpk->mbk", sys.pair_incidence, contrib)


def raw_potential_gradient(x: np.ndarray, sys: MassSystem) -> np.ndarray:
    x = as_config(x, sys)
    return raw_potential_gradient_many(x[None], sys)[0]


def grad_potential(x: np.ndarray, sys: MassSystem) -> np.ndarray:
    """Mass-metric gradient: component i is (1/m_i) dU/dr_i."""
    return raw_potential_gradient(x, sys) / sys.masses[:, None]


def lagrangian(x: np.ndarray, v: np.ndarray, sys: MassSystem) -> float:
    return 0.5 * mass_norm(v, sys) ** 2 + potential(x, sys)


def hamiltonian(x: np.ndarray, p: np.ndarray, sys: MassSystem) -> float:
    return 0.5 * dual_norm(p, sys) ** 2 - potential(x, sys)


def legendre(v: np.ndarray, sys: MassSystem) -> np.ndarray:
    """Fiber Legendre transform v -> p with p_i = m_i v_i."""
    v = as_config(v, sys)
    return sys.masses[:, None] * v


def legendre_inv(p: np.ndarray, sys: MassSystem) -> np.ndarray:
    p = as_config(p, sys)
    return p / sys.masses[:, None]


def energy(x: np.ndarray, v: np.ndarray, sys: MassSystem) -> float:
    u = potential(x, sys)
    if not np.isfinite(u):
        raise CollisionError("energy undefined at a collision")
    return 0.5 * mass_norm(v, sys) ** 2 - u


@dataclass
class Trajectory:
    """Output of integrate_motion: uniformly sampled positions and velocities."""

    times: np.ndarray       # (S,)
    positions: np.ndarray   # (S, N, k)
    velocities: np.ndarray  # (S, N, k)
    aborted: bool = False
    t_reached: float = 0.0


def integrate_motion(
    x0: np.ndarray,
    v0: np.ndarray,
    horizon: float,
    step: float,
    sys: MassSystem,
    sep_floor: float | None = None,
) -> Trajectory:
    """Velocity-Verlet integration of d^2x/dt^2 = grad U.

    The scheme is symmetric and time-reversible.  Integration aborts
    cleanly (flagged, with the time reached) if the smallest pairwise
    separation drops below ``sep_floor``; the default floor is
    1e-8 times the initial configuration scale.
    """
    x = as_config(x0, sys).copy()
    v = as_config(v0, sys).copy()
    if step <= 0.0:
        raise ValueError("step must be positive")
    if min_separation(x) <= 0.0:
        raise CollisionError("cannot integrate from a collision")
    if sep_floor is None:
        scale = max(max_norm(x0), min_separation(x0))
        sep_floor = 1e-8 * max(scale, 1e-30)

    n_steps = int(round(horizon / step))
    times = np.empty(n_steps + 1)
    xs = np.empty((n_steps + 1,) + x.shape)
    vs = np.empty_like(xs)
    times[0], xs[0], vs[0] = 0.0, x, v

    a = grad_potential(x, sys)
    for s in range(1, n_steps + 1):
        v_half = v + 0.5 * step * a
        x = x + step * v_half
        if min_separation(x) < sep_floor:
            t_hit = (s - 1) * step
            return Trajectory(times[:s], xs[:s], vs[:s], aborted=True,
                              t_reached=t_hit)
        a = grad_potential(x, sys)
        v = v_half + 0.5 * step * a
        times[s], xs[s], vs[s] = s * step, x, v

    return Trajectory(times, xs, vs, aborted=False, t_reached=n_steps * step)


def kepler_solution_constant(m1: float, m2: float) -> float:
    """Coefficient c making c * |r1 - r2|^(1/2) a zero-level solution.

    Substituting u = c s^(1/2) into the stationary Hamilton-Jacobi
    equation for the two-body problem (gravitational exponent) forces
    c^2 = 8 m1^2 m2^2 / (m1 + m2).  The unit-coefficient square root is
    a solution only for masses with c(m1, m2) = 1.
    """
    if m1 <= 0 or m2 <= 0:
        raise ValueError("masses must be positive")
    return float(np.sqrt(8.0 * m1 ** 2 * m2 ** 2 / (m1 + m2)))

"""Mass-metric geometry of the N-body configuration space.

A configuration of N bodies in R^k is an (N, k) float array.  All the
norms and splittings the dynamics cares about derive from the mass inner
product  x . y = sum_i m_i <r_i, s_i>,  under which the configuration
space splits orthogonally into centered configurations (zero center of
mass) and the diagonal {(r, ..., r)} of simultaneous translations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "MassSystem",
    "as_config",
    "mass_dot",
    "mass_norm",
    "dual_norm",
    "pairing",
    "max_norm",
    "center_of_mass",
    "diagonal_lift",
    "split",
    "translate",
    "min_separation",
    "random_configuration",
    "problem_to_dict",
    "problem_from_dict",
    "load_problem",
    "save_problem",
]


@dataclass(frozen=True, eq=False)
class MassSystem:
    """Masses, ambient dimension and potential homogeneity of a system.

    ``alpha`` is the exponent of the pair potential m_i m_j |r_i - r_j|^alpha
    and must lie strictly inside (-2, 0); the gravitational case is -1.
    Ambient dimension k = 1 is accepted here, but every theorem-level check
    downstream assumes k >= 2 (collision avoidance of minimizers needs it).
    """

    masses: np.ndarray
    dim: int = 2
    alpha: float = -1.0

    def __post_init__(self):
        m = np.array(self.masses, dtype=float)
        if m.ndim != 1 or m.size < 2:
            raise ValueError("a mass system needs at least two bodies")
        if not np.all(np.isfinite(m)) or np.any(m <= 0.0):
            raise ValueError("masses must be finite and strictly positive")
        if int(self.dim) < 1:
            raise ValueError("ambient dimension must be a positive integer")
        if not (-2.0 < float(self.alpha) < 0.0):
            raise ValueError("potential exponent must lie in (-2, 0)")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n_bodies(self) -> int:
        return self.masses.size

    @cached_property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @cached_property
    def pair_index(self):
        """Index arrays (i, j) over the pairs i < j."""
        return np.triu_indices(self.n_bodies, k=1)

    @cached_property
    def pair_mass_product(self) -> np.ndarray:
        i, j = self.pair_index
        return self.masses[i] * self.masses[j]

    @cached_property
    def pair_incidence(self) -> np.ndarray:
        """(P, N) signed incidence: +1 at i, -1 at j for each pair (i, j)."""
        i, j = self.pair_index
        inc = np.zeros((i.size, self.n_bodies))
        inc[np.arange(i.size), i] = 1.0
        inc[np.arange(j.size), j] = -1.0
        return inc

    def fingerprint(self) -> str:
        m = np.round(self.masses, 12)
        return f"N{self.n_bodies}k{self.dim}a{self.alpha:.12g}m{m.tolist()}"

    def zero_configuration(self) -> np.ndarray:
        return np.zeros((self.n_bodies, self.dim))


def as_config(x, sys: MassSystem | None = None) -> np.ndarray:
    """Validate and return x as an (N, k) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"configuration must be a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("configuration entries must be finite")
    if sys is not None and arr.shape != (sys.n_bodies, sys.dim):
        raise ValueError(
            f"configuration shape {arr.shape} does not match system "
            f"({sys.n_bodies}, {sys.dim})"
        )
    return arr


def mass_dot(x: np.ndarray, y: np.ndarray, sys: MassSystem) -> float:
    x = as_config(x, sys)
    y = as_config(y, sys)
    return float(np.einsum("i,ij,ij->", sys.masses, x, y))


def mass_norm(x: np.ndarray, sys: MassSystem) -> float:
    return float(np.sqrt(max(mass_dot(x, x, sys), 0.0)))


def dual_norm(p: np.ndarray, sys: MassSystem) -> float:
    """Operator norm of a covector (stored configuration-shaped)."""
    p = as_config(p, sys)
    return float(np.sqrt(np.einsum("i,ij,ij->", 1.0 / sys.masses, p, p)))


def pairing(p: np.ndarray, v: np.ndarray) -> float:
    """Duality pairing p(v) = sum_i <p_i, v_i> (no mass weights)."""
    return float(np.einsum("ij,ij->", np.asarray(p, float), np.asarray(v, float)))


def max_norm(x: np.ndarray) -> float:
    """max_i |r_i| with the Euclidean norm per body."""
    arr = np.asarray(x, dtype=float)
    return float(np.max(np.linalg.norm(arr, axis=1)))


def center_of_mass(x: np.ndarray, sys: MassSystem) -> np.ndarray:
    x = as_config(x, sys)
    return (sys.masses @ x) / sys.total_mass


def diagonal_lift(r, sys: MassSystem) -> np.ndarray:
    """Place every body at r: the diagonal embedding of E into E^N."""
    r = np.asarray(r, dtype=float)
    if r.shape != (sys.dim,):
        raise ValueError(f"translation vector must have shape ({sys.dim},)")
    return np.tile(r, (sys.n_bodies, 1))


def split(x: np.ndarray, sys: MassSystem):
    """Orthogonal splitting x = centered + diagonal_lift(com)."""
    x = as_config(x, sys)
    com = center_of_mass(x, sys)
    return x - com[None, :], com


def translate(x: np.ndarray, r) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    return x + r[None, :]


def min_separation(x: np.ndarray) -> float:
    """Smallest pairwise body distance; positive iff collision-free."""
    arr = np.asarray(x, dtype=float)
    i, j = np.triu_indices(arr.shape[0], k=1)
    return float(np.min(np.linalg.norm(arr[i] - arr[j], axis=1)))


def random_configuration(
    rng: np.random.Generator,
    sys: MassSystem,
    box: float = 1.0,
    min_sep: float = 0.0,
    centered: bool = False,
    max_tries: int = 1000,
) -> np.ndarray:
    """Uniform configuration in [-box, box]^k, rejection-sampled for separation."""
    for _ in range(max_tries):
        x = rng.uniform(-box, box, size=(sys.n_bodies, sys.dim))
        if min_separation(x) > min_sep:
            if centered:
                x, _ = split(x, sys)
            return x
    raise RuntimeError("could not sample a sufficiently separated configuration")


# --- problem file (JSON) -------------------------------------------------

def problem_to_dict(sys: MassSystem, positions: np.ndarray) -> dict:
    positions = as_config(positions, sys)
    return {
        "masses": [float(m) for m in sys.masses],
        "dim": sys.dim,
        "alpha": sys.alpha,
        "positions": [[float(c) for c in row] for row in positions],
    }


def problem_from_dict(data: dict):
    sys = MassSystem(np.asarray(data["masses"], dtype=float),
                     int(data["dim"]), float(data["alpha"]))
    positions = as_config(np.asarray(data["positions"], dtype=float), sys)
    return sys, positions


def load_problem(path):
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


def save_problem(path, sys: MassSystem, positions: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(sys, positions), fh, indent=2, sort_keys=True)
        fh.write("\n")

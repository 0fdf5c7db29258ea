import numpy as np
import pytest

from nbody_wkam.geometry import MassSystem
from nbody_wkam.minimize import FreeTimeSolver, MinimizeOptions


@pytest.fixture(scope="session")
def sys2():
    """Equal unit masses in the plane: the workhorse system."""
    return MassSystem(np.array([1.0, 1.0]), dim=2)


@pytest.fixture(scope="session")
def sys2u():
    """Unequal masses (total mass 3) for anything mass-weighted."""
    return MassSystem(np.array([1.0, 2.0]), dim=2)


@pytest.fixture(scope="session")
def sys3():
    return MassSystem(np.array([1.0, 2.0, 3.0]), dim=2)


@pytest.fixture(scope="session")
def solver(sys2):
    """Shared solver with a session-wide in-memory cache."""
    return FreeTimeSolver(sys2, MinimizeOptions(nodes=96, tol=1e-3))


@pytest.fixture(scope="session")
def solver_fast(sys2):
    return FreeTimeSolver(sys2, MinimizeOptions(nodes=48, tol=1e-3))


def pair_config(sys, s, theta=0.0, com=None):
    q = s * np.array([np.cos(theta), np.sin(theta)])
    m1, m2 = sys.masses
    M = sys.total_mass
    x = np.stack([m2 / M * q, -m1 / M * q])
    if com is not None:
        x = x + np.asarray(com, float)[None, :]
    return x


def phi_pair_formula(x, y, sys):
    """Independent closed form for the two-body free-time potential.

    The zero-energy path problem is a conformal length (Maupertuis);
    substituting the complex square root flattens that metric, so the
    potential is a straight-line distance in the squared-coordinate
    plane, minimized over the two branch choices.
    """
    m1, m2 = sys.masses
    M = m1 + m2
    mu = m1 * m2 / M
    k = m1 * m2
    q1 = x[0] - x[1]
    q2 = y[0] - y[1]
    r1, r2 = np.linalg.norm(q1), np.linalg.norm(q2)
    dth = np.arctan2(q2[1], q2[0]) - np.arctan2(q1[1], q1[0])
    c = abs(np.cos(dth / 2.0))
    return 2.0 * np.sqrt(2.0 * mu * k) * np.sqrt(max(r1 + r2 - 2.0 * np.sqrt(r1 * r2) * c, 0.0))

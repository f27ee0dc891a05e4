import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from mpiwave.initial_data import GaussianPacket, InitialDatum
from mpiwave.trajectories import CircularTrajectory, StaticTrajectory, TrajectorySet


def cquad(f, a, b, **kwargs):
    """Complex adaptive quadrature via separate real and imaginary parts."""
    kwargs.setdefault("limit", 2000)
    re = quad(lambda x: f(x).real, a, b, **kwargs)[0]
    im = quad(lambda x: f(x).imag, a, b, **kwargs)[0]
    return complex(re, im)


# Principal-branch constants, written out independently of the package.
SQRT_I = complex(math.sqrt(0.5), math.sqrt(0.5))
SQRT_MINUS_I = SQRT_I.conjugate()
F_INF = 0.5 * math.sqrt(math.pi) * SQRT_I


def static_closed_form_D(d: float, lag: float) -> complex:
    """Frozen-distance closed form of the cross kernel for a static pair.

    Derived by the exact substitution v = sqrt(z^2 - z0^2) applied to the
    defining sigma-integral; serves as an independent oracle.
    """
    pf = (math.sqrt(2.0) * SQRT_MINUS_I / math.pi) * (4.0 * math.pi) ** -1.5 \
        * SQRT_MINUS_I ** 3
    return pf * (4.0 * F_INF / d) / math.sqrt(lag) * np.exp(1j * d * d / (4.0 * lag))


@pytest.fixture(autouse=True)
def _quiet_clearance_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*clearance.*")
        yield


@pytest.fixture(scope="session")
def single_static():
    """One static center with a clearance-8 packet (weakly coupled)."""
    tset = TrajectorySet([StaticTrajectory([0.0, 0.0, 0.0])])
    f = InitialDatum([GaussianPacket([4.0, 0.0, 0.0], 0.5)])
    return tset, f


@pytest.fixture(scope="session")
def standard_circular():
    """The strongly coupled orbit configuration used by the acceptance runs."""
    tset = TrajectorySet([CircularTrajectory([0.0, 0.0, 0.0], 1.0, 1.0)])
    f = InitialDatum([GaussianPacket(
        [3.4019680201073386, 0.3307680203164617, 0.0], 0.4,
        [-8.043989800471913, -0.6044329672675282, 0.0])])
    return tset, f

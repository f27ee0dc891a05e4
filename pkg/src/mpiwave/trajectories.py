"""Interaction-center trajectories and the admissible-set certificate.

A trajectory supplies position and analytic derivatives (no numerical
differentiation) for all kernel code.  Supported kinds: static, uniform,
circular, polynomial and clamped cubic spline.  A ``TrajectorySet``
bundles n curves with a declared minimum pairwise separation and can
certify that separation by sampling plus a Lipschitz bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SeparationError, TrajectoryDomainError

__all__ = [
    "Trajectory",
    "StaticTrajectory",
    "UniformTrajectory",
    "CircularTrajectory",
    "PolynomialTrajectory",
    "SplineTrajectory",
    "TrajectorySet",
    "SeparationCertificate",
    "make_trajectory",
]


def _vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    return arr


class Trajectory:
    """Common interface: position/velocity/acceleration/jerk over time.

    Evaluation broadcasts over array-valued ``t`` (output shape
    ``t.shape + (3,)``).  ``time_shift_invariant`` marks kinds whose
    self-pair geometry |y(t)-y(tau)|, (y(t)-y(tau)).v(tau) and |v| depend
    on t - tau only; the solver caches kernels by time lag for those.
    """

    kind: str = "abstract"
    time_shift_invariant: bool = False

    def position(self, t):
        raise NotImplementedError

    def velocity(self, t):
        raise NotImplementedError

    def acceleration(self, t):
        raise NotImplementedError

    def jerk(self, t):
        raise NotImplementedError

    def _const(self, t, value: np.ndarray) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        return np.broadcast_to(value, t_arr.shape + (3,)).copy()


@dataclass(frozen=True)
class StaticTrajectory(Trajectory):
    point: np.ndarray

    kind = "static"
    time_shift_invariant = True

    def __post_init__(self):
        object.__setattr__(self, "point", _vec3(self.point))

    def position(self, t):
        return self._const(t, self.point)

    def velocity(self, t):
        return self._const(t, np.zeros(3))

    acceleration = velocity
    jerk = velocity


@dataclass(frozen=True)
class UniformTrajectory(Trajectory):
    origin: np.ndarray
    velocity_vector: np.ndarray

    kind = "uniform"
    time_shift_invariant = True

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "velocity_vector", _vec3(self.velocity_vector))

    def position(self, t):
        t_arr = np.asarray(t, dtype=float)
        return self.origin + t_arr[..., None] * self.velocity_vector

    def velocity(self, t):
        return self._const(t, self.velocity_vector)

    def acceleration(self, t):
        return self._const(t, np.zeros(3))

    jerk = acceleration


@dataclass(frozen=True)
class CircularTrajectory(Trajectory):
    center: np.ndarray
    radius: float
    omega: float
    phase: float = 0.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    kind = "circular"
    time_shift_invariant = True

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "normal", _vec3(self.normal))
        if self.radius <= 0:
            raise ValueError("circular trajectory needs radius > 0")
        n = self.normal / np.linalg.norm(self.normal)
        seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = seed - np.dot(seed, n) * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        object.__setattr__(self, "_e1", e1)
        object.__setattr__(self, "_e2", e2)

    def _angles(self, t):
        t_arr = np.asarray(t, dtype=float)
        return self.omega * t_arr + self.phase

    def position(self, t):
        th = self._angles(t)
        return self.center + self.radius * (
            np.cos(th)[..., None] * self._e1 + np.sin(th)[..., None] * self._e2
        )

    def velocity(self, t):
        th = self._angles(t)
        rw = self.radius * self.omega
        return rw * (-np.sin(th)[..., None] * self._e1 + np.cos(th)[..., None] * self._e2)

    def acceleration(self, t):
        th = self._angles(t)
        rw2 = self.radius * self.omega ** 2
        return -rw2 * (np.cos(th)[..., None] * self._e1 + np.sin(th)[..., None] * self._e2)

    def jerk(self, t):
        th = self._angles(t)
        rw3 = self.radius * self.omega ** 3
        return rw3 * (np.sin(th)[..., None] * self._e1 - np.cos(th)[..., None] * self._e2)


@dataclass(frozen=True)
class PolynomialTrajectory(Trajectory):
    coefficients: np.ndarray  # (degree+1, 3), y(t) = sum_k c_k t^k

    kind = "polynomial"
    time_shift_invariant = False

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError("polynomial coefficients must have shape (degree+1, 3)")
        object.__setattr__(self, "coefficients", arr)

    def _eval(self, t, order: int):
        t_arr = np.asarray(t, dtype=float)
        out = np.zeros(t_arr.shape + (3,))
        for k in range(order, self.coefficients.shape[0]):
            fac = math.perm(k, order)
            out += fac * (t_arr[..., None] ** (k - order)) * self.coefficients[k]
        return out

    def position(self, t):
        return self._eval(t, 0)

    def velocity(self, t):
        return self._eval(t, 1)

    def acceleration(self, t):
        return self._eval(t, 2)

    def jerk(self, t):
        return self._eval(t, 3)


class SplineTrajectory(Trajectory):
    """Clamped cubic interpolation of user samples.

    Only C^2: accepted, but flagged in the separation certificate.
    Evaluation outside the sample range raises ``TrajectoryDomainError``.
    """

    kind = "spline"
    time_shift_invariant = False

    def __init__(self, times, points, start_velocity=(0.0, 0.0, 0.0), end_velocity=(0.0, 0.0, 0.0)):
        from scipy.interpolate import CubicSpline

        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("spline needs at least two sample times")
        if points.shape != (times.size, 3):
            raise ValueError("spline points must have shape (len(times), 3)")
        self.times = times
        self.points = points
        self._spline = CubicSpline(
            times, points, axis=0,
            bc_type=((1, _vec3(start_velocity)), (1, _vec3(end_velocity))),
        )

    def _check_domain(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.times[0]) or np.any(t_arr > self.times[-1]):
            raise TrajectoryDomainError(
                f"spline evaluated outside [{self.times[0]}, {self.times[-1]}]"
            )
        return t_arr

    def position(self, t):
        return self._spline(self._check_domain(t))

    def velocity(self, t):
        return self._spline(self._check_domain(t), 1)

    def acceleration(self, t):
        return self._spline(self._check_domain(t), 2)

    def jerk(self, t):
        return self._spline(self._check_domain(t), 3)


_KIND_MAP = {
    "static": (StaticTrajectory, ("point",)),
    "uniform": (UniformTrajectory, ("origin", "velocity_vector")),
    "circular": (CircularTrajectory, ("center", "radius", "omega", "phase", "normal")),
    "polynomial": (PolynomialTrajectory, ("coefficients",)),
    "spline": (SplineTrajectory, ("times", "points", "start_velocity", "end_velocity")),
}


def make_trajectory(kind: str, **params) -> Trajectory:
    """Build a trajectory from its kind name and kind-specific parameters."""
    if kind not in _KIND_MAP:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {sorted(_KIND_MAP)}")
    cls, allowed = _KIND_MAP[kind]
    unknown = set(params) - set(allowed)
    if unknown:
        raise ValueError(f"unknown parameters for kind {kind!r}: {sorted(unknown)}")
    return cls(**params)


@dataclass(frozen=True)
class SeparationCertificate:
    """Sampled bounds for a trajectory set over a run interval."""

    min_separation: float
    max_speed: float
    max_acceleration: float
    n_samples: int
    interval: tuple[float, float]
    c3_warning: bool  # spline curves are only C^2


class TrajectorySet:
    """Ordered collection of n curves with a declared separation constant."""

    def __init__(self, curves, separation: float = 0.0):
        self.curves = tuple(curves)
        if len(self.curves) >= 2 and not separation > 0:
            raise ValueError("a set with n >= 2 curves needs separation > 0")
        self.separation = float(separation)

    @property
    def n(self) -> int:
        return len(self.curves)

    def _check_index(self, j: int) -> Trajectory:
        if not 0 <= j < self.n:
            raise IndexError(f"curve index {j} out of range for n={self.n}")
        return self.curves[j]

    def position(self, j: int, t):
        return self._check_index(j).position(t)

    def velocity(self, j: int, t):
        return self._check_index(j).velocity(t)

    def acceleration(self, j: int, t):
        return self._check_index(j).acceleration(t)

    def validate(self, interval: tuple[float, float], n_samples: int = 256) -> SeparationCertificate:
        """Certify min pairwise separation and kinematic bounds by sampling.

        Raises ``SeparationError`` (with the offending pair and time) when a
        sampled pairwise distance falls below the declared separation.
        """
        if n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        lo, hi = float(interval[0]), float(interval[1])
        if not hi > lo:
            raise ValueError("interval must have positive length")
        ts = np.linspace(lo, hi, n_samples)
        if self.n == 0:
            return SeparationCertificate(math.inf, 0.0, 0.0, n_samples, (lo, hi), False)
        pos = np.stack([c.position(ts) for c in self.curves])      # (n, m, 3)
        vel = np.stack([c.velocity(ts) for c in self.curves])
        acc = np.stack([c.acceleration(ts) for c in self.curves])
        max_speed = float(np.max(np.linalg.norm(vel, axis=-1)))
        max_acc = float(np.max(np.linalg.norm(acc, axis=-1)))
        min_sep = math.inf
        for j in range(self.n):
            for l in range(j + 1, self.n):
                dist = np.linalg.norm(pos[j] - pos[l], axis=-1)
                k = int(np.argmin(dist))
                if dist[k] < min_sep:
                    min_sep = float(dist[k])
                if dist[k] < self.separation:
                    raise SeparationError((j, l), float(ts[k]), float(dist[k]), self.separation)
        c3_warning = any(c.kind == "spline" for c in self.curves)
        return SeparationCertificate(min_sep, max_speed, max_acc, n_samples, (lo, hi), c3_warning)

"""Exception types shared across the package."""

from __future__ import annotations


class MpiwaveError(Exception):
    """Base class for package errors."""


class ManifestError(MpiwaveError):
    """Invalid or inconsistent run manifest."""


class TrajectoryDomainError(MpiwaveError, ValueError):
    """Trajectory evaluated outside its supported time range."""


class SeparationError(MpiwaveError):
    """Minimum pairwise separation of the trajectory set violated."""

    def __init__(self, pair: tuple[int, int], time: float, distance: float, required: float):
        self.pair = pair
        self.time = time
        self.distance = distance
        self.required = required
        super().__init__(
            f"separation violated for curves {pair} at t={time:.6g}: "
            f"|y_{pair[0]} - y_{pair[1]}| = {distance:.6g} < {required:.6g}"
        )


class NumericalError(MpiwaveError):
    """Numerical failure inside a solve (singular step system, bad grid)."""

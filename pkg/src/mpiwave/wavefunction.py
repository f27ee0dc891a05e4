"""Momentum-space reconstruction of the wavefunction from charges.

The field is sampled on a cubic k-grid as

    psi(k, t) = exp(-i k^2 (t-s)) f~(k)
                + i (2 pi)^(-3/2) sum_j int_s^t exp(-i k^2 (t-tau))
                  exp(-i k . y_j(tau)) q_j(tau) dtau,

the tau-integral by composite trapezoid on the charge grid (the
integrand is smooth; the only price of oscillation is resolution already
paid by the solver grid).  Backward solutions reconstruct the mirrored
representation with conjugate phases.  Norms and inner products are
Parseval sums over the grid.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .initial_data import InitialDatum
from .volterra import ChargeSolution

__all__ = [
    "KGrid",
    "WaveField",
    "psi_fourier",
    "reconstruct",
    "field_from_datum",
    "inner_product",
    "to_position_space",
    "write_field",
    "read_field",
    "NORM_GATE_TOL",
]

NORM_GATE_TOL = 1e-4


@dataclass(frozen=True)
class KGrid:
    """Cubic grid covering [-K, K)^3 with M points per axis (M even)."""

    extent: float
    points: int

    def __post_init__(self):
        if self.points < 8 or self.points % 2:
            raise ValueError("KGrid needs an even point count >= 8")
        if not self.extent > 0:
            raise ValueError("KGrid extent must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.points

    def axis(self) -> np.ndarray:
        return -self.extent + self.spacing * np.arange(self.points)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3


@dataclass
class WaveField:
    """Complex samples on a cubic grid at one time, plus norm diagnostics.

    ``samples[i, j, k]`` corresponds to (axis[i], axis[j], axis[k]); the
    ``space`` tag distinguishes momentum- from position-space fields.
    """

    grid: KGrid
    time: float
    samples: np.ndarray
    space: str = "momentum"
    metadata: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.samples) ** 2)) * self.grid.cell_volume)


def _charge_phase_sum(sol: ChargeSolution, tset, k2, k_dot, t: float):
    """i (2 pi)^(-3/2) sum_j int_s^t exp(-+i k^2 (t-tau) - i k.y_j) q_j dtau.

    ``k2`` and ``k_dot(point)`` supply |k|^2 and k . y on the sample set.
    Trapezoid over the charge nodes up to t; the running exp(+-i k^2 h)
    multiply realizes the phase table reuse across tau.
    """
    grid = sol.grid
    h = grid.h
    m = int(round((t - grid.s) / h))
    if abs(grid.s + m * h - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= m <= grid.n_steps:
        raise ValueError("reconstruction time must be a charge-grid node")
    backward = sol.direction == "backward"
    acc = np.zeros(np.shape(k2), dtype=complex)
    nodes = grid.nodes()
    lo, hi = (m, grid.n_steps) if backward else (0, m)
    if hi > lo and tset.n:
        # both directions share phase(tau) = exp(i k^2 (tau - t))
        phase = np.exp(1j * k2 * (nodes[lo] - t))
        step = np.exp(1j * k2 * h)
        for idx in range(lo, hi + 1):
            wt = 0.5 * h if idx in (lo, hi) else h
            tau = nodes[idx]
            for j in range(tset.n):
                if sol.q[j, idx] != 0.0:
                    acc += (wt * sol.q[j, idx]) * phase * np.exp(-1j * k_dot(tset.position(j, tau)))
            phase = phase * step
    coef = 1j * (2.0 * math.pi) ** -1.5
    if backward:
        coef = -coef
    return coef * acc


def psi_fourier(f: InitialDatum, sol: ChargeSolution, tset, k, t: float) -> complex:
    """Field value at a single k; the free term is the exact transform."""
    k_arr = np.asarray(k, dtype=float).reshape(3)
    k2 = float(k_arr @ k_arr)
    backward = sol.direction == "backward"
    base = sol.grid.t_max if backward else sol.grid.s
    free = np.exp(-1j * k2 * (t - base)) * f.fourier_transform(k_arr)
    charge = _charge_phase_sum(sol, tset, k2, lambda y: float(k_arr @ y), t)
    return complex(free + charge)


def reconstruct(f: InitialDatum, sol: ChargeSolution, tset, kgrid: KGrid, t: float) -> WaveField:
    """Sample the field on the full k-grid at a charge-grid time.

    The metadata records the closed-form norm of the data and flags the
    field "under_resolved" when the t = s (or t = t_max, backward) gate
    misses it by more than ``NORM_GATE_TOL`` relative.
    """
    ax = kgrid.axis()
    kx = ax[:, None, None]
    ky = ax[None, :, None]
    kz = ax[None, None, :]
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    backward = sol.direction == "backward"
    base = sol.grid.t_max if backward else sol.grid.s
    kvecs = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    f_hat = f.fourier_transform(kvecs)
    free = np.exp(-1j * k2 * (t - base)) * f_hat
    charge = _charge_phase_sum(
        sol, tset, k2, lambda y: kx * y[0] + ky * y[1] + kz * y[2], t)
    fld = WaveField(kgrid, t, free + charge)
    data_norm = f.norm()
    gate = math.sqrt(float(np.sum(np.abs(f_hat) ** 2)) * kgrid.cell_volume)
    fld.metadata = {
        "data_norm": data_norm,
        "grid_norm_of_data": gate,
        "under_resolved": bool(abs(gate - data_norm) > NORM_GATE_TOL * data_norm),
        "direction": sol.direction,
    }
    return fld


def field_from_datum(f: InitialDatum, kgrid: KGrid, t: float) -> WaveField:
    """Exact transform of a Gaussian datum sampled on the grid at time t."""
    ax = kgrid.axis()
    kvecs = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    return WaveField(kgrid, t, f.fourier_transform(kvecs))


def inner_product(a: WaveField, b: WaveField) -> complex:
    """Parseval inner product <a, b>; grids, times and spaces must match."""
    if a.grid != b.grid or a.space != b.space:
        raise ValueError("inner_product requires identical grids")
    if abs(a.time - b.time) > 1e-12 * max(1.0, abs(a.time)):
        raise ValueError("inner_product requires equal times")
    return complex(np.sum(np.conj(a.samples) * b.samples) * a.grid.cell_volume)


def to_position_space(fld: WaveField) -> WaveField:
    """Discrete transform psi(x) = (2 pi)^(-3/2) sum psi(k) e^{ik.x} dk^3.

    The dual grid has spacing pi/K and the same point count; the
    transform is norm-preserving to rounding.
    """
    if fld.space != "momentum":
        raise ValueError("to_position_space expects a momentum-space field")
    g = fld.grid
    M = g.points
    par = (-1.0) ** np.arange(M)
    checker = par[:, None, None] * par[None, :, None] * par[None, None, :]
    core = np.fft.ifftn(fld.samples * checker) * M ** 3
    x_ax = (np.arange(M) - M // 2) * (math.pi / g.extent)
    phase = np.exp(-1j * g.extent * x_ax)
    outer = phase[:, None, None] * phase[None, :, None] * phase[None, None, :]
    samples = (2.0 * math.pi) ** -1.5 * g.cell_volume * outer * core
    out = WaveField(KGrid(extent=-x_ax[0], points=M), fld.time, samples, space="position")
    out.metadata = dict(fld.metadata)
    return out


def from_position_space(fld: WaveField) -> WaveField:
    """Inverse of ``to_position_space`` (round-trips to rounding)."""
    if fld.space != "position":
        raise ValueError("from_position_space expects a position-space field")
    M = fld.grid.points
    k_extent = math.pi * M / (2.0 * fld.grid.extent)
    par = (-1.0) ** np.arange(M)
    checker = par[:, None, None] * par[None, :, None] * par[None, None, :]
    phase = np.exp(1j * k_extent * fld.grid.axis())
    outer = phase[:, None, None] * phase[None, :, None] * phase[None, None, :]
    core = np.fft.fftn(fld.samples * outer)
    samples = (2.0 * math.pi) ** -1.5 * fld.grid.spacing ** 3 * checker * core
    out = WaveField(KGrid(extent=k_extent, points=M), fld.time, samples, space="momentum")
    out.metadata = dict(fld.metadata)
    return out


# --- binary field format ------------------------------------------------------
#
# magic "MPIW1", little-endian u32 M, f64 K, f64 time, then M^3 (Re, Im)
# f64 pairs in row-major order with k_x fastest; JSON sidecar alongside.

_MAGIC = b"MPIW1"


def write_field(fld: WaveField, path) -> None:
    path = str(path)
    g = fld.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", g.points))
        fh.write(struct.pack("<d", g.extent))
        fh.write(struct.pack("<d", fld.time))
        # samples are indexed [ix, iy, iz]; k_x fastest means transposing
        flat = np.ascontiguousarray(fld.samples.transpose(2, 1, 0))
        inter = np.empty(flat.size * 2, dtype="<f8")
        inter[0::2] = flat.real.ravel()
        inter[1::2] = flat.imag.ravel()
        fh.write(inter.tobytes())
    sidecar = {
        "format": "MPIW1",
        "points": g.points,
        "extent": g.extent,
        "time": fld.time,
        "space": fld.space,
        "norm": fld.norm,
        "metadata": {k: v for k, v in fld.metadata.items()
                     if isinstance(v, (int, float, str, bool, type(None)))},
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_field(path) -> WaveField:
    with open(str(path), "rb") as fh:
        if fh.read(5) != _MAGIC:
            raise ValueError("not an MPIW1 field file")
        m = struct.unpack("<I", fh.read(4))[0]
        extent = struct.unpack("<d", fh.read(8))[0]
        time = struct.unpack("<d", fh.read(8))[0]
        inter = np.frombuffer(fh.read(m ** 3 * 16), dtype="<f8")
    flat = inter[0::2] + 1j * inter[1::2]
    samples = flat.reshape(m, m, m).transpose(2, 1, 0).copy()
    return WaveField(KGrid(extent=extent, points=m), time, samples)

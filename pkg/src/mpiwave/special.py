"""Complex Fresnel integrals, branch conventions and the elementary kernel functions.

Everything downstream (composite kernels, the charge solver, the
reconstruction) is built on the functions in this module.  The branch
choices for sqrt(-i) and for the (4*pi*i*t)**(3/2) factor of the free
propagator live here and nowhere else; a test hook allows flipping them
to verify that the rest of the pipeline is sensitive to the convention.

All Fresnel-type evaluations are vectorized over numpy arrays and keep
roughly 1e-13 absolute accuracy across the whole nonnegative axis.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "BranchConvention",
    "branch",
    "flipped_branch",
    "fresnel_F",
    "fresnel_moment2",
    "fresnel_f_infinity",
    "oscillatory_tail_j",
    "propagator_U0",
    "w_jl",
    "kernel_B",
    "kernel_A",
    "dB_dtau_diag",
]


class BranchConvention:
    """Branch choices for the square roots of -i and of the propagator phase.

    The principal convention takes sqrt(-i) = exp(-i*pi/4) and reads
    (4*pi*i*t)**(3/2) as (4*pi*|t|)**(3/2) * exp(i*3*pi/4*sign(t)).
    ``flipped`` selects the complex-conjugate convention; it exists only
    as a negative control for the verification suite.
    """

    def __init__(self, flipped: bool = False):
        self.flipped = flipped

    @property
    def sqrt_minus_i(self) -> complex:
        z = complex(math.sqrt(0.5), -math.sqrt(0.5))
        return z.conjugate() if self.flipped else z

    @property
    def sqrt_i(self) -> complex:
        return self.sqrt_minus_i.conjugate()

    @property
    def sqrt_minus_2i(self) -> complex:
        return math.sqrt(2.0) * self.sqrt_minus_i

    def propagator_phase(self, t: float) -> complex:
        """Phase of 1/(4*pi*i*t)**(3/2), modulus excluded."""
        cube = self.sqrt_minus_i ** 3
        return cube if t > 0 else cube.conjugate()

    def free_phase(self, t):
        """Phase of a free-evolution application relative to the principal one.

        1 under the principal convention.  Flipped, every application of
        the propagator acquires the ratio of the flipped to the principal
        (4 pi i t)^(-3/2) branch: -i forward, +i backward.  Array-aware.
        """
        if not self.flipped:
            return 1.0
        t_arr = np.asarray(t, dtype=float)
        out = np.where(t_arr >= 0, -1j, 1j)
        return out if out.ndim else complex(out)


_branch = BranchConvention()


def branch() -> BranchConvention:
    return _branch


@contextmanager
def flipped_branch():
    """Test hook: temporarily flip the sqrt(-i) branch (not thread safe)."""
    global _branch
    saved = _branch
    _branch = BranchConvention(flipped=not saved.flipped)
    try:
        yield _branch
    finally:
        _branch = saved


def fresnel_f_infinity() -> complex:
    """F(inf) = integral of exp(i z^2) over [0, inf) = (sqrt(pi)/2) e^{i pi/4}."""
    return 0.5 * math.sqrt(math.pi) * complex(math.sqrt(0.5), math.sqrt(0.5))


# --- F(w) = int_0^w exp(i z^2) dz ------------------------------------------
#
# Three regimes: Maclaurin series for w <= 1.5, Taylor steps from tabulated
# anchors on (1.5, 8), and the integration-by-parts asymptotic expansion of
# the tail F(inf) - F(w) beyond.  Regime boundaries chosen so every branch
# stays below ~1e-13 absolute error in double precision.

_SERIES_CUT = 1.5
_ASYMPT_CUT = 8.0
_ANCHOR_STEP = 0.25
_TAYLOR_TERMS = 22
_SERIES_TERMS = 26


def _series_F(w: np.ndarray) -> np.ndarray:
    # F(w) = sum_n i^n w^(2n+1) / (n! (2n+1))
    w2 = w * w
    acc = np.zeros(w.shape, dtype=complex)
    term = np.array(w, dtype=complex)
    fac = 1.0
    for n in range(_SERIES_TERMS):
        acc = acc + term / (fac * (2 * n + 1))
        term = term * (1j * w2)
        fac *= n + 1
    return acc


def _gauss_legendre_panel(f, a: float, b: float, order: int = 32) -> complex:
    x, wts = np.polynomial.legendre.leggauss(order)
    z = 0.5 * (b - a) * x + 0.5 * (b + a)
    return 0.5 * (b - a) * np.sum(wts * f(z))


def _build_anchor_tables():
    anchors = np.arange(_SERIES_CUT, _ASYMPT_CUT + 0.5 * _ANCHOR_STEP, _ANCHOR_STEP)
    values = np.empty(anchors.size, dtype=complex)
    values[0] = _series_F(np.array([_SERIES_CUT]))[0]
    for i in range(1, anchors.size):
        seg = _gauss_legendre_panel(lambda z: np.exp(1j * z * z), anchors[i - 1], anchors[i])
        values[i] = values[i - 1] + seg
    # Taylor coefficients of F around each anchor: E_{n+1} = 2i (a E_n + n E_{n-1})
    coeffs = np.empty((anchors.size, _TAYLOR_TERMS), dtype=complex)
    for i, a in enumerate(anchors):
        e_prev = 0.0 + 0.0j
        e_cur = np.exp(1j * a * a)
        fac = 1.0
        for n in range(_TAYLOR_TERMS):
            fac *= n + 1  # (n+1)!
            coeffs[i, n] = e_cur / fac
            e_next = 2j * (a * e_cur + n * e_prev)
            e_prev, e_cur = e_cur, e_next
    return anchors, values, coeffs


_ANCHORS, _ANCHOR_F, _ANCHOR_COEFFS = _build_anchor_tables()


def _anchored_F(w: np.ndarray) -> np.ndarray:
    idx = np.clip(np.rint((w - _SERIES_CUT) / _ANCHOR_STEP).astype(int), 0, _ANCHORS.size - 1)
    delta = w - _ANCHORS[idx]
    coeffs = _ANCHOR_COEFFS[idx]
    horner = np.zeros(w.shape, dtype=complex)
    for n in range(_TAYLOR_TERMS - 1, -1, -1):
        horner = horner * delta + coeffs[:, n]
    return _ANCHOR_F[idx] + delta * horner


def _asymptotic_tail_j0(v: np.ndarray, terms: int = 14) -> np.ndarray:
    # J_0(v) = int_v^inf e^{i z^2} dz = e^{i v^2} (i/(2v)) sum_k prod_{j<=k} (-i(2j-1)/(2 v^2))
    inv2v2 = 1.0 / (2.0 * v * v)
    acc = np.ones(v.shape, dtype=complex)
    term = np.ones(v.shape, dtype=complex)
    for k in range(1, terms):
        term = term * (-1j * (2 * k - 1)) * inv2v2
        acc = acc + term
    return np.exp(1j * v * v) * (0.5j / v) * acc


def fresnel_F(w):
    """F(w) = int_0^w exp(i z^2) dz for real w >= 0 (scalar or array)."""
    w_arr = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w_arr)) or np.any(w_arr < 0):
        raise ValueError("fresnel_F requires finite nonnegative w")
    scalar = w_arr.ndim == 0
    w_flat = np.atleast_1d(w_arr).ravel()
    out = np.empty(w_flat.shape, dtype=complex)
    small = w_flat <= _SERIES_CUT
    large = w_flat >= _ASYMPT_CUT
    mid = ~small & ~large
    if small.any():
        out[small] = _series_F(w_flat[small])
    if mid.any():
        out[mid] = _anchored_F(w_flat[mid])
    if large.any():
        out[large] = fresnel_f_infinity() - _asymptotic_tail_j0(w_flat[large])
    out = out.reshape(w_arr.shape) if not scalar else out[0]
    return out


_MOMENT_SERIES_CUT = 0.1


def fresnel_moment2(w):
    """int_0^w z^2 exp(i z^2) dz, via the identity (w e^{iw^2} - F(w)) / (2i).

    Small arguments switch to the Maclaurin series to dodge the cancellation
    between the two O(w) terms of the identity.
    """
    w_arr = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w_arr)) or np.any(w_arr < 0):
        raise ValueError("fresnel_moment2 requires finite nonnegative w")
    scalar = w_arr.ndim == 0
    w_flat = np.atleast_1d(w_arr).ravel()
    out = np.empty(w_flat.shape, dtype=complex)
    small = w_flat < _MOMENT_SERIES_CUT
    if small.any():
        ws = w_flat[small]
        w2 = ws * ws
        acc = np.zeros(ws.shape, dtype=complex)
        term = ws.astype(complex) * w2  # w^3
        fac = 1.0
        for n in range(12):
            acc = acc + term / (fac * (2 * n + 3))
            term = term * (1j * w2)
            fac *= n + 1
        out[small] = acc
    if (~small).any():
        wl = w_flat[~small]
        out[~small] = (wl * np.exp(1j * wl * wl) - fresnel_F(wl)) / 2j
    out = out.reshape(w_arr.shape) if not scalar else out[0]
    return out


def oscillatory_tail_j(p: int, v: float) -> complex:
    """J_p(v) = int_v^inf z^(-p) exp(i z^2) dz for even p >= 0, v > 0.

    For v >= 6 the integration-by-parts asymptotic series is summed with
    term-growth truncation; below, J_0 comes exactly from fresnel_F and
    the recursion J_{p+2} = (2/(i(p+1))) [ (i/2) v^{-(p+1)} e^{iv^2} - J_p ]
    steps downward (stable for the shallow depths used here).
    """
    if v <= 0:
        raise ValueError("oscillatory_tail_j requires v > 0")
    if v >= 6.0:
        phase = np.exp(1j * v * v)
        term = 0.5j * v ** (-(p + 1)) * phase
        acc = 0.0 + 0.0j
        q = p
        for _ in range(60):
            acc += term
            nxt = term * (-1j) * (q + 1) / (2.0 * v * v)
            if abs(nxt) >= abs(term):
                break
            term = nxt
            q += 2
            if abs(term) < 1e-18 * max(abs(acc), 1e-300):
                acc += term
                break
        return acc
    val = fresnel_f_infinity() - complex(fresnel_F(v))
    phase = np.exp(1j * v * v)
    q = 0
    while q < p:
        val = (0.5j * v ** (-(q + 1)) * phase - val) * (2.0 / (1j * (q + 1)))
        q += 2
    return val


# --- elementary kernel ingredients -----------------------------------------
#
# B(w) = F(w)/w, its derivative B'(w) = (e^{iw^2} - B)/w, the shape factor
# S_A(w) = w^-3 int_0^w z^2 e^{iz^2} dz, and B(w)-1.  Each has a removable
# singularity at w=0; below ``series_threshold`` the Maclaurin forms are used
# (cancellation in the direct quotients sets in around that scale).


def _series_masked(w, threshold, series_coeff, direct):
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.empty(w_arr.shape, dtype=complex)
    small = w_arr < threshold
    if small.any():
        ws2 = w_arr[small] ** 2
        acc = np.zeros(ws2.shape, dtype=complex)
        term = np.ones(ws2.shape, dtype=complex)
        for n, c in enumerate(series_coeff):
            acc = acc + c * term
            term = term * (1j * ws2)
        out[small] = acc
    if (~small).any():
        out[~small] = direct(w_arr[~small])
    return out


def b_of(w, threshold: float = 1e-3):
    """B(w) = F(w)/w with B(0) = 1."""
    coeff = [1.0 / (math.factorial(n) * (2 * n + 1)) for n in range(6)]
    return _series_masked(w, threshold, coeff, lambda x: fresnel_F(x) / x)


def bm1_of(w, threshold: float = 1e-3):
    """B(w) - 1, stable through w -> 0 (leading term i w^2 / 3)."""
    def direct(x):
        return fresnel_F(x) / x - 1.0
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.empty(w_arr.shape, dtype=complex)
    small = w_arr < threshold
    if small.any():
        ws2 = w_arr[small] ** 2
        acc = np.zeros(ws2.shape, dtype=complex)
        term = 1j * ws2
        fac = 1.0
        for n in range(1, 7):
            fac *= n
            acc = acc + term / (fac * (2 * n + 1))
            term = term * (1j * ws2)
        out[small] = acc
    if (~small).any():
        out[~small] = direct(w_arr[~small])
    return out


def bprime_of(w, threshold: float = 1e-3):
    """B'(w) = (e^{i w^2} - B(w)) / w, stable through w -> 0."""
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.empty(w_arr.shape, dtype=complex)
    small = w_arr < threshold
    if small.any():
        ws = w_arr[small]
        ws2 = ws * ws
        acc = np.zeros(ws.shape, dtype=complex)
        term = 1j * ws.astype(complex)
        fac = 1.0
        for n in range(1, 7):
            fac *= n
            acc = acc + term * (2 * n) / (fac * (2 * n + 1))
            term = term * (1j * ws2)
        out[small] = acc
    if (~small).any():
        wl = w_arr[~small]
        out[~small] = (np.exp(1j * wl * wl) - fresnel_F(wl) / wl) / wl
    return out


def moment_shape_of(w, threshold: float = 1e-3):
    """S_A(w) = w^-3 int_0^w z^2 e^{iz^2} dz, with S_A(0) = 1/3."""
    coeff = [1.0 / (math.factorial(n) * (2 * n + 3)) for n in range(6)]
    return _series_masked(w, threshold, coeff, lambda x: fresnel_moment2(x) / x ** 3)


# --- free propagator and set-facing kernel functions ------------------------


def propagator_U0(t: float, x):
    """Free propagator kernel U0(t; x) = exp(i|x|^2/(4t)) / (4 pi i t)^(3/2).

    ``x`` is a point or an array of points with trailing dimension 3; the
    modulus is (4 pi |t|)^(-3/2) independent of x, the phase of the
    t-power follows the active branch convention.
    """
    if t == 0:
        raise ValueError("propagator_U0 undefined at t = 0")
    x_arr = np.asarray(x, dtype=float)
    r2 = np.sum(x_arr * x_arr, axis=-1)
    amp = (4.0 * math.pi * abs(t)) ** -1.5 * branch().propagator_phase(t)
    return amp * np.exp(1j * r2 / (4.0 * t))


def w_jl(tset, j: int, l: int, t: float, tau: float) -> float:
    """Similarity variable w = |y_j(t) - y_l(tau)| / (2 sqrt(t - tau))."""
    if not t > tau:
        raise ValueError("w_jl requires t > tau")
    d = tset.position(j, t) - tset.position(l, tau)
    return float(np.linalg.norm(d) / (2.0 * math.sqrt(t - tau)))


def kernel_B(tset, j: int, l: int, t: float, tau: float, threshold: float = 1e-3) -> complex:
    """B_jl(t, tau) = F(w)/w, continuous through w -> 0 with limit 1."""
    w = w_jl(tset, j, l, t, tau)
    return complex(b_of(w, threshold)[0])


def kernel_A(tset, j: int, l: int, t: float, tau: float, threshold: float = 1e-3) -> complex:
    """A_jl(t, tau): velocity-projection prefactor times the moment shape."""
    if not t > tau:
        raise ValueError("kernel_A requires t > tau")
    d = tset.position(j, t) - tset.position(l, tau)
    pref = float(np.dot(d, tset.velocity(l, tau))) / (2.0 * (t - tau))
    w = np.linalg.norm(d) / (2.0 * math.sqrt(t - tau))
    return pref * complex(moment_shape_of(w, threshold)[0])


def dB_dtau_diag(tset, j: int, sigma: float, tau: float, threshold: float = 1e-3) -> complex:
    """d B_jj / d tau (sigma, tau), via the chain rule; 0 for static curves."""
    if not sigma > tau:
        raise ValueError("dB_dtau_diag requires sigma > tau")
    dy = tset.position(j, sigma) - tset.position(j, tau)
    d = float(np.linalg.norm(dy))
    if d == 0.0:
        return 0.0 + 0.0j
    eps = sigma - tau
    sq = math.sqrt(eps)
    w = d / (2.0 * sq)
    dw_dtau = -float(np.dot(dy, tset.velocity(j, tau))) / d / (2.0 * sq) + d / (4.0 * eps * sq)
    return complex(bprime_of(w, threshold)[0]) * dw_dtau

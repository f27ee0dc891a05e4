"""Composite Volterra kernels: self-interaction C and cross-center D.

C_j(t, tau) is an inner integral over sigma of a bounded bracket against
the weight [(t-sigma)(sigma-tau)]^(-1/2); the substitution
sigma = tau + (t-tau) sin^2(theta) removes both endpoint singularities
exactly, so plain Gauss-Legendre in theta converges spectrally.

D_jl(t, tau) integrates the free propagator against (t-sigma)^(-1/2).
Its sigma -> tau endpoint oscillates like exp(i d^2 / (4(sigma-tau)))
with an amplitude ~ (sigma-tau)^(-3/2); in the variable
v = sqrt(z(sigma)^2 - z(end)^2), with z = |y_j(sigma)-y_l(tau)| /
(2 sqrt(sigma-tau)), the integral becomes int_0^inf G(v) exp(i v^2) dv
with G smooth and G(inf) finite.  Filon panels integrate
exp(i v^2) {1, v, v^2} exactly through the Fresnel primitives, and the
infinite tail is summed by the integration-by-parts asymptotic series
of F with numerically fitted 1/(v^2 + kappa) corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SeparationError
from .special import (
    branch,
    bm1_of,
    bprime_of,
    fresnel_F,
    fresnel_f_infinity,
    fresnel_moment2,
    moment_shape_of,
    oscillatory_tail_j,
)

__all__ = ["KernelOptions", "abel_coefficient", "kernel_C", "kernel_D", "kernel_C_diag"]


@dataclass(frozen=True)
class KernelOptions:
    inner_nodes: int = 32
    filon_panels: int = 24
    diag_series_threshold: float = 1e-3

    def __post_init__(self):
        if self.inner_nodes < 4:
            raise ValueError("inner_nodes must be >= 4")
        if self.filon_panels < 4:
            raise ValueError("filon_panels must be >= 4")
        if not 0 < self.diag_series_threshold < 0.3:
            raise ValueError("diag_series_threshold out of range")


DEFAULT_OPTIONS = KernelOptions()


def abel_coefficient(alpha: float) -> complex:
    """alpha * 4 sqrt(pi) / sqrt(-i) under the active branch convention."""
    return alpha * 4.0 * math.sqrt(math.pi) * branch().sqrt_i


# --- self-interaction kernel C ----------------------------------------------


def bracket_self(traj, sigma, tau, threshold: float = 1e-3, eps=None):
    """i A_jj + dB_jj/dtau + (B_jj - 1)/(2 (sigma - tau)), vectorized.

    ``sigma`` and ``tau`` broadcast together; sigma > tau required.  All
    three terms have finite sigma -> tau limits (sum i|v|^2/8); series
    forms below ``threshold`` in w keep the evaluation stable.  ``eps``
    may carry sigma - tau computed without cancellation.
    """
    sigma = np.asarray(sigma, dtype=float)
    tau = np.asarray(tau, dtype=float)
    dy = traj.position(sigma) - traj.position(tau)
    vel = traj.velocity(tau)
    d2 = np.sum(dy * dy, axis=-1)
    eps = sigma - tau if eps is None else np.asarray(eps, dtype=float)
    w = np.sqrt(d2 / (4.0 * eps))
    dyv = np.sum(dy * vel, axis=-1)

    a_term = 1j * (dyv / (2.0 * eps)) * moment_shape_of(w, threshold)
    b_term = bm1_of(w, threshold) / (2.0 * eps)

    d = np.sqrt(d2)
    sq = np.sqrt(eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        dw_dtau = -dyv / (2.0 * d * sq) + d / (4.0 * eps * sq)
        db_term = bprime_of(w, threshold) * dw_dtau
    db_term = np.where(d == 0.0, 0.0 + 0.0j, db_term)
    return a_term + db_term + b_term


def kernel_C_pairs(traj, ts, taus, opts: KernelOptions = DEFAULT_OPTIONS):
    """C_j(t, tau) for paired arrays of times, broadcast elementwise."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    ts, taus = np.broadcast_arrays(ts, taus)
    x, wq = np.polynomial.legendre.leggauss(opts.inner_nodes)
    theta = 0.25 * math.pi * (x + 1.0)
    s2 = np.sin(theta) ** 2
    eps = (ts - taus)[..., None] * s2
    sigma = taus[..., None] + eps
    br = bracket_self(traj, sigma, taus[..., None], opts.diag_series_threshold, eps=eps)
    # the sin^2 substitution turns the sigma-integral into
    # -(2/pi) int_0^{pi/2} bracket dtheta; map [-1,1] -> [0, pi/2]
    return -(2.0 / math.pi) * (0.25 * math.pi) * (br @ wq)


def kernel_C(tset, j: int, t: float, tau: float, opts: KernelOptions = DEFAULT_OPTIONS) -> complex:
    """Self-interaction kernel C_j(t, tau), t > tau."""
    if not t > tau:
        raise ValueError("kernel_C requires t > tau")
    tset._check_index(j)
    return complex(kernel_C_pairs(tset.curves[j], [t], [tau], opts)[0])


def kernel_C_diag(traj, t: float) -> complex:
    """Limit C_j(t, t): bracket tends to i|v|^2/8, the weight has mass pi."""
    v = traj.velocity(t)
    return -1j * float(np.dot(v, v)) / 8.0


# --- cross kernel D ----------------------------------------------------------


def _d_prefactor() -> complex:
    """(sqrt(-2i)/pi) times the phase/modulus constant of (4 pi i)^(3/2)."""
    b = branch()
    return (b.sqrt_minus_2i / math.pi) * (4.0 * math.pi) ** -1.5 * b.propagator_phase(1.0)


def _u_of_delta(traj_j, y_ref, tau: float, delta):
    """u = |y_j(tau + delta) - y_ref|^2 / (4 delta) and the position offset."""
    dy = traj_j.position(tau + delta) - y_ref
    d2 = np.sum(dy * dy, axis=-1)
    return d2 / (4.0 * delta), dy, d2


def _invert_u(traj_j, y_ref, tau: float, delta_hi: float, targets, d_floor: float):
    """Solve u(delta) = target on (0, delta_hi] where u is strictly decreasing.

    Bisection brackets the root (robust against the 1/delta blow-up near
    the lower end), then a few Newton steps polish it to full precision.
    """
    targets = np.asarray(targets, dtype=float)
    if traj_j.kind == "static":
        d2 = float(np.sum((traj_j.position(tau) - y_ref) ** 2))
        return d2 / (4.0 * targets)
    delta_floor = d_floor ** 2 / (32.0 * np.max(targets))
    lo = np.full(targets.shape, min(delta_floor, 0.5 * delta_hi))
    hi = np.full(targets.shape, delta_hi)
    for _ in range(22):
        mid = 0.5 * (lo + hi)
        u_mid = _u_of_delta(traj_j, y_ref, tau, mid)[0]
        above = u_mid > targets
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    delta = 0.5 * (lo + hi)
    for _ in range(4):
        u_val, dy, d2 = _u_of_delta(traj_j, y_ref, tau, delta)
        vel = traj_j.velocity(tau + delta)
        uprime = (2.0 * np.sum(dy * vel, axis=-1) * delta - d2) / (4.0 * delta * delta)
        step = (u_val - targets) / uprime
        delta = np.clip(delta - step, lo, hi)
    return delta


def _g_hat(traj_j, y_ref, tau: float, t_target: float, delta):
    """(t-sigma)^(-1/2) delta^(-3/2) / |u'(sigma)| at sigma = tau + delta."""
    u, dy, d2 = _u_of_delta(traj_j, y_ref, tau, delta)
    vel = traj_j.velocity(tau + delta)
    dyv = np.sum(dy * vel, axis=-1)
    uprime = (2.0 * dyv * delta - d2) / (4.0 * delta * delta)
    rem = t_target - (tau + delta)
    return rem ** -0.5 * delta ** -1.5 / np.abs(uprime)


def _panel_quadratic(v_edges, g_edges, g_mids):
    """Monomial coefficients of the per-panel quadratic through three nodes."""
    p, q = v_edges[:-1], v_edges[1:]
    m = 0.5 * (p + q)
    ell = q - p
    g_lo, g_hi = g_edges[:-1], g_edges[1:]
    gamma = 2.0 * (g_lo + g_hi - 2.0 * g_mids) / ell ** 2
    beta = (g_hi - g_lo) / ell
    a = g_mids - beta * m + gamma * m * m
    bb = beta - 2.0 * gamma * m
    return a, bb, gamma


def _filon_panels(v_edges, g_edges, g_mids):
    """Sum of int p(v) exp(i v^2) dv with p the per-panel quadratic in v."""
    a, bb, gamma = _panel_quadratic(v_edges, g_edges, g_mids)
    F_e = fresnel_F(v_edges)
    M_e = fresnel_moment2(v_edges)
    E_e = np.exp(1j * v_edges ** 2)
    i0 = F_e[1:] - F_e[:-1]
    i1 = (E_e[1:] - E_e[:-1]) / 2j
    i2 = M_e[1:] - M_e[:-1]
    return np.sum(a * i0 + bb * i1 + gamma * i2)


def _filon_panels_odd(v_edges, q_edges, q_mids):
    """Sum of int p(v) * v * exp(i v^2) dv with p the per-panel quadratic.

    Used when the integrand is v times a smooth even function; the cubic
    moment has the elementary antiderivative (1 - i v^2) e^{i v^2} / 2.
    """
    a, bb, gamma = _panel_quadratic(v_edges, q_edges, q_mids)
    u_e = v_edges ** 2
    M_e = fresnel_moment2(v_edges)
    E_e = np.exp(1j * u_e)
    C_e = 0.5 * (1.0 - 1j * u_e) * E_e
    i1 = (E_e[1:] - E_e[:-1]) / 2j
    i2 = M_e[1:] - M_e[:-1]
    i3 = C_e[1:] - C_e[:-1]
    return np.sum(a * i1 + bb * i2 + gamma * i3)


def _k_tail(m_pow: int, V: float, kappa: float) -> complex:
    """int_V^inf exp(i v^2) / (v^2 + kappa)^m dv, via the binomial J-series."""
    if kappa == 0.0:
        return oscillatory_tail_j(2 * m_pow, V)
    acc = 0.0 + 0.0j
    coef = 1.0
    for r in range(80):
        term = coef * kappa ** r * oscillatory_tail_j(2 * m_pow + 2 * r, V)
        acc += term
        if abs(term) < 1e-16 * max(abs(acc), 1e-300):
            break
        coef *= -(m_pow + r) / (r + 1.0)
    return acc


_PANEL_GRADING = 1.5


def _d_piece_filon(traj_j, y_ref, tau, sigma_hi, t_target, endpoint, opts, d0, d_floor):
    """int_tau^{sigma_hi} (t-s)^(-1/2) (s-tau)^(-3/2) exp(i u(s)) ds, u monotone.

    Filon panels are graded toward v = 0 (where the smooth factor curves)
    and the quadratic-interpolation error, clean fourth order in the panel
    count, is removed by one Richardson step over a panel-halving pair.
    """
    delta_hi = sigma_hi - tau
    u_lo = _u_of_delta(traj_j, y_ref, tau, delta_hi)[0]
    t_total = t_target - tau
    kappa = max(0.0, u_lo - d0 ** 2 / (4.0 * t_total))
    v_cut = max(10.0, 2.0 * math.sqrt(kappa) + 6.0)

    _, dy_hi, d2_hi = _u_of_delta(traj_j, y_ref, tau, delta_hi)
    vel_hi = traj_j.velocity(sigma_hi)
    uprime_hi = (2.0 * np.sum(dy_hi * vel_hi) * delta_hi - d2_hi) / (4.0 * delta_hi ** 2)
    if endpoint:
        # limit of 2 v G at v = 0: the (t-sigma)^(-1/2) endpoint supplies 1/v
        g0 = 2.0 * delta_hi ** -1.5 / math.sqrt(abs(uprime_hi))
    else:
        # limit of 2 G (smooth factor per unit v) at v = 0
        g0 = 2.0 * (t_target - sigma_hi) ** -0.5 * delta_hi ** -1.5 / abs(uprime_hi)

    def g_hat_at(v_pos):
        deltas = _invert_u(traj_j, y_ref, tau, delta_hi, u_lo + v_pos ** 2, d_floor)
        return 2.0 * v_pos * _g_hat(traj_j, y_ref, tau, t_target, deltas)

    v_sw = min(3.0, 0.5 * v_cut)

    def panel_sum(n_pan):
        if endpoint:
            # smooth even integrand: graded panels, quadratic Filon throughout
            edges = v_cut * (np.arange(n_pan + 1) / n_pan) ** _PANEL_GRADING
            mids = 0.5 * (edges[:-1] + edges[1:])
            g_all = g_hat_at(np.concatenate([edges[1:], mids]))
            g_edges = np.concatenate([[g0], g_all[:n_pan]])
            return _filon_panels(edges, g_edges, g_all[n_pan:])
        # odd integrand v * q(v^2): interpolate q near zero, the full
        # integrand beyond v_sw where q ~ c/v would interpolate poorly
        n1 = max(n_pan // 2, 2)
        n2 = max(n_pan - n1, 2)
        e1 = v_sw * (np.arange(n1 + 1) / n1) ** _PANEL_GRADING
        m1 = 0.5 * (e1[:-1] + e1[1:])
        v1 = np.concatenate([e1[1:], m1])
        q1 = g_hat_at(v1) / v1
        total = _filon_panels_odd(e1, np.concatenate([[g0], q1[:n1]]), q1[n1:])
        e2 = v_sw + (v_cut - v_sw) * (np.arange(n2 + 1) / n2)
        m2 = 0.5 * (e2[:-1] + e2[1:])
        g2 = g_hat_at(np.concatenate([e2, m2]))
        total += _filon_panels(e2, g2[:n2 + 1], g2[n2 + 1:])
        return total

    coarse = panel_sum(2 * opts.filon_panels)
    fine = panel_sum(4 * opts.filon_panels)
    panels = (16.0 * fine - coarse) / 15.0

    fit_nodes = np.array([v_cut * 1.1, v_cut * 1.25])
    g_fit = g_hat_at(fit_nodes)
    c0 = 4.0 / (d0 * math.sqrt(t_total))
    w_fit = fit_nodes ** 2 + kappa
    a1, a2 = (g_fit - c0) * w_fit
    c2 = (a1 - a2) / (1.0 / w_fit[0] - 1.0 / w_fit[1])
    c1 = a1 - c2 / w_fit[0]
    tail = (
        c0 * oscillatory_tail_j(0, v_cut)
        + c1 * _k_tail(1, v_cut, kappa)
        + c2 * _k_tail(2, v_cut, kappa)
    )
    return np.exp(1j * u_lo) * (panels + tail)


def _d_piece_gl(traj_j, y_ref, tau, sigma_a, t_target, opts):
    """Regular remainder int_{sigma_a}^{t} via xi = sqrt(t - sigma)."""
    x, wq = np.polynomial.legendre.leggauss(max(48, 2 * opts.inner_nodes))
    xi_max = math.sqrt(t_target - sigma_a)
    xi = 0.5 * xi_max * (x + 1.0)
    delta = (t_target - tau) - xi ** 2
    u = _u_of_delta(traj_j, y_ref, tau, delta)[0]
    vals = 2.0 * delta ** -1.5 * np.exp(1j * u)
    return 0.5 * xi_max * np.sum(wq * vals)


def _pair_scan(traj_j, y_ref, tau: float, t: float):
    sig = np.linspace(tau, t, 33)
    dy = traj_j.position(sig) - y_ref
    dvals = np.linalg.norm(dy, axis=-1)
    speeds = np.linalg.norm(traj_j.velocity(sig), axis=-1)
    k = int(np.argmin(dvals))
    return float(dvals[k]), float(sig[k]), float(np.max(speeds))


def kernel_D(tset, j: int, l: int, t: float, tau: float,
             opts: KernelOptions = DEFAULT_OPTIONS) -> complex:
    """Cross kernel D_jl(t, tau) for j != l, t > tau."""
    if j == l:
        raise ValueError("kernel_D is defined for j != l only")
    if not t > tau:
        raise ValueError("kernel_D requires t > tau")
    tset._check_index(j)
    tset._check_index(l)
    traj_j = tset.curves[j]
    y_ref = tset.position(l, tau)
    d_min, t_min, v_max = _pair_scan(traj_j, y_ref, tau, t)
    required = tset.separation if tset.separation > 0 else 0.0
    if d_min < required * (1.0 - 1e-12) or d_min <= 0.0:
        raise SeparationError((j, l), t_min, d_min, required)
    d0 = float(np.linalg.norm(traj_j.position(tau) - y_ref))
    T = t - tau
    if 2.0 * v_max * T < 0.9 * d_min:
        raw = _d_piece_filon(traj_j, y_ref, tau, t, t, True, opts, d0, d_min)
    else:
        split = tau + d_min / (4.0 * v_max)
        raw = _d_piece_filon(traj_j, y_ref, tau, split, t, False, opts, d0, d_min) \
            + _d_piece_gl(traj_j, y_ref, tau, split, t, opts)
    return complex(_d_prefactor() * raw)


# --- frozen-distance column weights for the near-diagonal D panels -----------
#
# For lag Delta = t - tau below the oscillation-resolved scale the solver
# integrates hat functions against the frozen-distance closed form
# D(t, tau) ~ pf * (4 F_inf / d) Delta^(-1/2) exp(i d^2/(4 Delta)); the
# two primitive integrals over a lag panel reduce to the J-series.


def frozen_lag_moments(d: float, delta1: float, delta2: float) -> tuple[complex, complex]:
    """int_{delta1}^{delta2} {1, Delta} Delta^(-1/2) exp(i d^2/(4 Delta)) dDelta."""
    z1 = d / (2.0 * math.sqrt(delta2))
    j2_hi = oscillatory_tail_j(2, z1)
    j4_hi = oscillatory_tail_j(4, z1)
    if delta1 > 0.0:
        z2 = d / (2.0 * math.sqrt(delta1))
        j2_lo = oscillatory_tail_j(2, z2)
        j4_lo = oscillatory_tail_j(4, z2)
    else:
        j2_lo = j4_lo = 0.0
    p0 = d * (j2_hi - j2_lo)
    p1 = (d ** 3 / 4.0) * (j4_hi - j4_lo)
    return p0, p1


def frozen_column_weight(d: float, delta1: float, delta2: float,
                         alpha: float, beta: float) -> complex:
    """Weight of a linear-in-lag hat alpha + beta*Delta against frozen D."""
    p0, p1 = frozen_lag_moments(d, delta1, delta2)
    coeff = _d_prefactor() * 4.0 * fresnel_f_infinity() / d
    return coeff * (alpha * p0 + beta * p1)


def oscillation_resolved_lag(d: float, h: float) -> int:
    """Smallest panel count K with phase change per lag panel below ~0.5 rad."""
    return int(math.ceil(d / math.sqrt(2.0 * h))) + 1

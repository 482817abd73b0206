"""Concave quadratic lower bounds for the short-packet rates.

Given an expansion point (the previous iterate), each user's rate is
bounded below by a touching concave quadratic in whichever variable block
is being optimized: the beams (channel rows fixed) or the stacked surface
coefficients (beams fixed). Both cases share one assembly routine driven
by affine "amplitude maps" (i, j) -> h_{lk,i} . x_{ij} expressed as an
affine function of the active variables.

Bounds are exact at the expansion point and gradient-matching there; all
forms are returned in bits (natural-log internals scaled by log2(e)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forms import QuadraticForm
from .metrics import LOG2E

__all__ = [
    "SurrogateCoefficients",
    "ZeroSinrExpansion",
    "expansion_coefficients",
    "beam_block",
    "beam_amplitude_map",
    "rate_surrogate_in_beams",
    "rate_surrogate_in_theta",
    "shannon_surrogate",
    "neg_penalty_surrogate",
    "ineq_sqrt_upper",
    "ineq_ratio_lower",
    "ineq_log_lower",
]


class ZeroSinrExpansion(ValueError):
    """Raised when a surrogate is requested at a zero-SINR expansion point."""


@dataclass
class SurrogateCoefficients:
    """Per-user expansion-point scalars shared by all surrogate builders.

    amp[l,k,i,j] is the received amplitude of beam (i,j) at user (l,k) at
    the expansion point; denom_int/denom_tot are noise-plus-interference
    and noise-plus-total received power there. b >= 0 and zeta in (0, 1]
    by construction.
    """

    amp: np.ndarray
    denom_int: np.ndarray
    denom_tot: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    zeta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    mask: np.ndarray
    sigma2: float
    q_inv: float
    n_t: float


def expansion_coefficients(amp, sigma2, fbl, mask=None):
    """Build the expansion cache from received amplitudes amp[l,k,i,j].

    ``mask[l,k,i,j]`` marks which beams coexist with user (l,k); pairs
    outside the mask are ignored entirely (time-switching sub-slots).
    """
    amp = np.asarray(amp, dtype=complex)
    L, K = amp.shape[:2]
    if mask is None:
        mask = np.ones((L, K, L, K), dtype=bool)
    powers = np.abs(amp) ** 2
    desired = np.array([[powers[l, k, l, k] for k in range(K)] for l in range(L)])
    denom_tot = sigma2 + np.sum(powers * mask, axis=(2, 3))
    denom_int = denom_tot - desired
    gamma = desired / denom_int
    if np.any(gamma <= 0.0):
        bad = np.argwhere(gamma <= 0.0)
        raise ZeroSinrExpansion(
            f"expansion point has zero SINR for users {bad.tolist()}; "
            "run the max-min SINR initializer (init_maxmin_sinr) first"
        )
    V = 2.0 * gamma / (1.0 + gamma)
    zeta = denom_int / denom_tot
    a = np.log1p(gamma) - gamma
    b = gamma.copy()
    if fbl.q_inv > 0.0:
        pen = fbl.q_inv / math.sqrt(fbl.n_t)
        a = a - pen * (np.sqrt(V) / 2.0 + 1.0 / np.sqrt(V))
        b = b + zeta * fbl.q_inv / np.sqrt(fbl.n_t * V)
    return SurrogateCoefficients(
        amp=amp,
        denom_int=denom_int,
        denom_tot=denom_tot,
        gamma=gamma,
        V=V,
        zeta=zeta,
        a=a,
        b=b,
        mask=mask,
        sigma2=sigma2,
        q_inv=fbl.q_inv,
        n_t=fbl.n_t,
    )


def beam_block(i, j):
    return f"x{i}_{j}"


def beam_amplitude_map(H):
    """Amplitude maps for the beam step: A_{lk,ij}(x) = H[l,k,i] . x_ij."""

    def amap(l, k, i, j):
        return {beam_block(i, j): H[l, k, i]}, 0.0 + 0.0j

    return amap


def _active_pairs(coeffs, l, k):
    L, K = coeffs.amp.shape[:2]
    return [(i, j) for i in range(L) for j in range(K) if coeffs.mask[l, k, i, j]]


def shannon_surrogate(coeffs, amp_map, l, k, layout):
    """Concave lower bound of the Shannon term ln(1+gamma_lk), in nats."""
    q = QuadraticForm(layout)
    q.add_const(math.log1p(coeffs.gamma[l, k]) - coeffs.gamma[l, k])
    parts, off = amp_map(l, k, l, k)
    q.add_re_inner(2.0 / coeffs.denom_int[l, k], coeffs.amp[l, k, l, k], parts, off)
    wq = coeffs.gamma[l, k] / coeffs.denom_tot[l, k]
    q.add_const(-wq * coeffs.sigma2)
    for i, j in _active_pairs(coeffs, l, k):
        parts, off = amp_map(l, k, i, j)
        q.add_sq_affine(wq, parts, off)
    return q


def neg_penalty_surrogate(coeffs, amp_map, l, k, layout):
    """Concave lower bound of minus the dispersion penalty, in nats.

    Equivalently the negated convex upper bound of
    Qinv(eps) * sqrt(V_lk / n_t) built from the sqrt and ratio inequalities.
    """
    q = QuadraticForm(layout)
    if coeffs.q_inv == 0.0:
        return q
    pen = coeffs.q_inv / math.sqrt(coeffs.n_t)
    v = coeffs.V[l, k]
    q.add_const(-pen * (math.sqrt(v) / 2.0 + 1.0 / math.sqrt(v)))
    w2 = 2.0 * coeffs.q_inv / math.sqrt(coeffs.n_t * v) / coeffs.denom_tot[l, k]
    q.add_const(w2 * coeffs.sigma2)
    for i, j in _active_pairs(coeffs, l, k):
        if i == l and j == k:
            continue
        parts, off = amp_map(l, k, i, j)
        q.add_re_inner(w2, coeffs.amp[l, k, i, j], parts, off)
    wq = coeffs.zeta[l, k] * coeffs.q_inv / math.sqrt(coeffs.n_t * v) / coeffs.denom_tot[l, k]
    q.add_const(-wq * coeffs.sigma2)
    for i, j in _active_pairs(coeffs, l, k):
        parts, off = amp_map(l, k, i, j)
        q.add_sq_affine(wq, parts, off)
    return q


def rate_surrogate(coeffs, amp_map, l, k, layout, scale=1.0):
    """Touching concave lower bound of user (l,k)'s rate, in bits.

    One-pass assembly of the combined expression (constant a, linearized
    desired signal, linearized interference share, quadratic total-power
    term weighted by b); ``scale`` additionally multiplies the whole form
    (time-sharing fractions).
    """
    q = QuadraticForm(layout)
    q.add_const(coeffs.a[l, k])
    parts, off = amp_map(l, k, l, k)
    q.add_re_inner(2.0 / coeffs.denom_int[l, k], coeffs.amp[l, k, l, k], parts, off)
    if coeffs.q_inv > 0.0:
        w2 = (
            2.0
            * coeffs.q_inv
            / math.sqrt(coeffs.n_t * coeffs.V[l, k])
            / coeffs.denom_tot[l, k]
        )
        q.add_const(w2 * coeffs.sigma2)
        for i, j in _active_pairs(coeffs, l, k):
            if i == l and j == k:
                continue
            pij, oij = amp_map(l, k, i, j)
            q.add_re_inner(w2, coeffs.amp[l, k, i, j], pij, oij)
    wq = coeffs.b[l, k] / coeffs.denom_tot[l, k]
    q.add_const(-wq * coeffs.sigma2)
    for i, j in _active_pairs(coeffs, l, k):
        pij, oij = amp_map(l, k, i, j)
        q.add_sq_affine(wq, pij, oij)
    q.scale(scale * LOG2E)
    return q


def rate_surrogate_in_beams(coeffs, H, l, k, layout, scale=1.0):
    return rate_surrogate(coeffs, beam_amplitude_map(H), l, k, layout, scale)


def rate_surrogate_in_theta(coeffs, theta_amp_map, l, k, layout, scale=1.0):
    return rate_surrogate(coeffs, theta_amp_map, l, k, layout, scale)


# ---- scalar inequality primitives ---------------------------------------------


def ineq_sqrt_upper(x, x_bar):
    """sqrt(x) <= sqrt(x_bar)/2 + x/(2 sqrt(x_bar)), tight at x = x_bar."""
    if x_bar <= 0:
        raise ValueError("expansion point x_bar must be positive")
    return math.sqrt(x_bar) / 2.0 + x / (2.0 * math.sqrt(x_bar))


def ineq_ratio_lower(x, y, x_bar, y_bar):
    """|x|^2/y >= 2 Re{conj(x_bar) x}/y_bar - |x_bar|^2 y / y_bar^2."""
    if y_bar <= 0:
        raise ValueError("expansion point y_bar must be positive")
    return 2.0 * (np.conj(x_bar) * x).real / y_bar - abs(x_bar) ** 2 * y / y_bar**2


def ineq_log_lower(x, y, x_bar, y_bar):
    """Tangent-type lower bound of ln(1 + |x|^2/y) at (x_bar, y_bar)."""
    if y_bar <= 0:
        raise ValueError("expansion point y_bar must be positive")
    g = abs(x_bar) ** 2 / y_bar
    return (
        math.log1p(g)
        - g
        + 2.0 * (np.conj(x_bar) * x).real / y_bar
        - g * (abs(x) ** 2 + y) / (abs(x_bar) ** 2 + y_bar)
    )

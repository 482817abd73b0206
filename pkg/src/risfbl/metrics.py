"""SINR, finite-blocklength rates, energy efficiency, and rate-curve analysis.

Rates are reported in bits/s/Hz: the short-packet rate of a user with SINR
gamma, packet length n_t and decoding error probability eps is

    r = log2(1 + gamma) - Qinv(eps) * sqrt(V / n_t) * log2(e)

with the interference-as-noise channel dispersion V = 2*gamma/(1+gamma)
(an upper bound on the interference-free optimum 1 - (1+gamma)^-2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channels import all_effective_channels, effective_channel

__all__ = [
    "FblParams",
    "EnergyParams",
    "RateReport",
    "FblCurveAnalysis",
    "q_inv",
    "sinr",
    "dispersion",
    "dispersion_optimal",
    "shannon_rate",
    "fbl_rate",
    "fbl_rate_nats",
    "lemma2_analysis",
    "per_user_ee",
    "gee",
    "latency_threshold",
    "rate_report",
]

LOG2E = 1.0 / math.log(2.0)

# Rational approximation of the standard normal quantile (Acklam), polished
# below by Newton steps on erfc so the result is accurate to ~1e-15 relative.
_PPF_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_PPF_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_PPF_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_PPF_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)


def _norm_ppf_seed(p):
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    if p > 1.0 - 0.02425:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    q = p - 0.5
    r = q * q
    return (
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
        * q
        / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    )


def q_inv(eps):
    """Inverse of the Gaussian Q-function, Q(x) = 0.5*erfc(x/sqrt(2)).

    Relative error below 1e-14 over (0, 1): a rational seed followed by two
    Newton corrections against the tail-stable erfc.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if eps == 0.5:
        return 0.0
    x = -_norm_ppf_seed(eps)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    inv_sqrt2pi = 1.0 / math.sqrt(2.0 * math.pi)
    for _ in range(2):
        q_val = 0.5 * math.erfc(x * inv_sqrt2)
        pdf = math.exp(-0.5 * x * x) * inv_sqrt2pi
        x += (q_val - eps) / pdf
    return x


@dataclass
class FblParams:
    """Packet length (bits) and target decoding error probability.

    ``q_inv`` is cached at construction. ``eps_c = 0.5`` (zero penalty) is
    the Shannon-rate limit used by the Shannon baselines.
    """

    n_t: float
    eps_c: float
    q_inv: float = None

    def __post_init__(self):
        if self.n_t <= 0:
            raise ValueError(f"n_t must be positive, got {self.n_t}")
        if not 0.0 < self.eps_c <= 0.5:
            raise ValueError(f"eps_c must be in (0, 0.5], got {self.eps_c}")
        if self.q_inv is None:
            self.q_inv = 0.0 if self.eps_c == 0.5 else q_inv(self.eps_c)

    @staticmethod
    def shannon():
        """Penalty-free parameters: rates equal the Shannon rate."""
        return FblParams(n_t=1.0, eps_c=0.5)

    @property
    def penalty_a(self):
        """Coefficient a of the nats-rate curve ln(1+g) - a*sqrt(g/(1+g))."""
        return self.q_inv * math.sqrt(2.0 / self.n_t)


@dataclass
class EnergyParams:
    p_c: float = 1.0
    eta: float = 1.0 / 0.35

    def __post_init__(self):
        if self.p_c <= 0 or self.eta <= 0:
            raise ValueError("p_c and eta must be positive")


def dispersion(gamma):
    """Channel dispersion achievable with interference treated as noise."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    out = 2.0 * gamma / (1.0 + gamma)
    return float(out) if out.ndim == 0 else out


def dispersion_optimal(gamma):
    """Interference-free optimal dispersion 1 - (1+gamma)^-2."""
    gamma = np.asarray(gamma, dtype=float)
    out = 1.0 - 1.0 / (1.0 + gamma) ** 2
    return float(out) if out.ndim == 0 else out


def shannon_rate(gamma):
    gamma = np.asarray(gamma, dtype=float)
    out = np.log2(1.0 + gamma)
    return float(out) if out.ndim == 0 else out


def fbl_rate_nats(gamma, fbl: FblParams):
    gamma = np.asarray(gamma, dtype=float)
    out = np.log1p(gamma) - fbl.q_inv * np.sqrt(dispersion(gamma) / fbl.n_t)
    return float(out) if out.ndim == 0 else out


def fbl_rate(gamma, fbl: FblParams):
    """Short-packet achievable rate in bits/s/Hz; may be negative for tiny SINR."""
    out = np.asarray(fbl_rate_nats(gamma, fbl)) * LOG2E
    return float(out) if out.ndim == 0 else out


@dataclass
class FblCurveAnalysis:
    """Shape of f(g) = ln(1+g) - a*sqrt(g/(1+g)): dip below zero, then growth."""

    a: float
    gamma_star: float
    gamma_zero: float
    f_min: float

    def curve(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        out = np.log1p(gamma) - self.a * np.sqrt(gamma / (1.0 + gamma))
        return float(out) if out.ndim == 0 else out


def lemma2_analysis(a):
    """Interior minimizer and positive root of ln(1+g) - a*sqrt(g/(1+g)).

    The derivative vanishes where g*(1+g) = a^2/4, giving the minimizer in
    closed form; the positive root is bracketed on (gamma_star, inf) and
    found by bisection.
    """
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")

    def f(g):
        return math.log1p(g) - a * math.sqrt(g / (1.0 + g))

    gamma_star = 0.5 * (math.sqrt(1.0 + a * a) - 1.0)
    f_min = f(gamma_star)

    hi = max(1.0, 4.0 * gamma_star)
    while f(hi) <= 0.0:
        hi *= 8.0
        if hi > 1e300:
            raise ValueError(f"failed to bracket the positive root for a={a}")
    lo = gamma_star
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    gamma_zero = 0.5 * (lo + hi)
    return FblCurveAnalysis(a=a, gamma_star=gamma_star, gamma_zero=gamma_zero, f_min=f_min)


def per_user_ee(r, x, energy: EnergyParams):
    """Rate per unit of consumed power for one user's beam x."""
    return r / (energy.p_c + energy.eta * float(np.real(np.vdot(x, x))))


def gee(rates, beams, energy: EnergyParams, power_weights=None):
    """Network-wide rate sum over network-wide power consumption.

    ``power_weights`` scales each user's transmit power (time-sharing
    fractions); default 1.
    """
    rates = np.asarray(rates, dtype=float)
    x = beams.x if hasattr(beams, "x") else np.asarray(beams)
    powers = np.sum(np.abs(x) ** 2, axis=-1)
    if power_weights is not None:
        powers = powers * np.asarray(power_weights, dtype=float)
    total_users = rates.size
    return float(np.sum(rates)) / (
        total_users * energy.p_c + energy.eta * float(np.sum(powers))
    )


def latency_threshold(n_t, t_c, w):
    """Minimum per-bandwidth rate that delivers n_t bits within t_c seconds."""
    if n_t <= 0 or t_c <= 0 or w <= 0:
        raise ValueError("n_t, t_c and w must all be positive")
    return n_t / (t_c * w)


# ---- system-level evaluation -------------------------------------------------


def interference_mask(ris, L, K):
    """mask[l,k,i,j] True when beam (i,j) interferes with user (l,k).

    All pairs interfere except under time switching, where only users of the
    same sub-slot coexist.
    """
    mask = np.ones((L, K, L, K), dtype=bool)
    if ris is not None and ris.mode == "ts":
        slots = np.array([[ris.slot_of(l, k) for k in range(K)] for l in range(L)])
        mask = slots[:, :, None, None] == slots[None, None, :, :]
    return mask


def user_time_fractions(ris, L, K):
    """Share of the slot during which each user is served (1 outside TS)."""
    frac = np.ones((L, K))
    if ris is not None and ris.mode == "ts":
        for l in range(L):
            for k in range(K):
                frac[l, k] = ris.ts_fraction if ris.slot_of(l, k) == "r" else 1.0 - ris.ts_fraction
    return frac


def beam_amplitudes(H, x):
    """amps[l,k,i,j] = H[l,k,i] . x[i,j] for all users and beams."""
    return np.einsum("lkin,ijn->lkij", H, x)


def sinr_all(H, x, noise_power, mask=None):
    """Per-user SINR array (L, K) given stacked effective channels."""
    amps = beam_amplitudes(H, x)
    powers = np.abs(amps) ** 2
    L, K = powers.shape[:2]
    if mask is None:
        mask = np.ones((L, K, L, K), dtype=bool)
    total = np.sum(powers * mask, axis=(2, 3))
    desired = np.array([[powers[l, k, l, k] for k in range(K)] for l in range(L)])
    return desired / (noise_power + total - desired)


def sinr(channels, ris, beams, l, k, noise_power=1.0):
    """SINR of user (l, k): own beam power over noise plus all other beams."""
    L, K = channels.d.shape[:2]
    x = beams.x if hasattr(beams, "x") else np.asarray(beams)
    mask = interference_mask(ris, L, K)[l, k]
    num = 0.0
    den = noise_power
    for i in range(L):
        h = effective_channel(channels, ris, l, k, i)
        for j in range(K):
            p = abs(np.dot(h, x[i, j])) ** 2
            if i == l and j == k:
                num = p
            elif mask[i, j]:
                den += p
    return num / den


@dataclass
class RateReport:
    """Per-user SINR, dispersion, rates and efficiencies for one operating point."""

    gamma: np.ndarray
    V: np.ndarray
    delta: np.ndarray
    r: np.ndarray
    C: np.ndarray
    e: np.ndarray
    gee: float

    def validate(self, tol=1e-9):
        assert np.all(self.gamma >= 0)
        assert np.all((self.V >= 0) & (self.V < 2))
        assert np.all(self.delta >= -tol)
        assert np.all(self.r <= self.C + tol)
        return True


def rate_report(channels, ris, beams, noise_power, fbl: FblParams, energy: EnergyParams):
    """Evaluate every metric of the current (beams, surface) operating point.

    Under time switching the Shannon rate, penalty and rate of a user are all
    scaled by its sub-slot fraction, and its transmit power is time-averaged
    the same way in the efficiency denominators.
    """
    L, K = channels.d.shape[:2]
    x = beams.x if hasattr(beams, "x") else np.asarray(beams)
    H = all_effective_channels(channels, ris)
    mask = interference_mask(ris, L, K)
    gamma = sinr_all(H, x, noise_power, mask)
    V = dispersion(gamma)
    frac = user_time_fractions(ris, L, K)
    C = frac * shannon_rate(gamma)
    delta = frac * fbl.q_inv * np.sqrt(V / fbl.n_t) * LOG2E
    r = C - delta
    powers = frac * np.sum(np.abs(x) ** 2, axis=-1)
    e = r / (energy.p_c + energy.eta * powers)
    gee_val = float(np.sum(r)) / (L * K * energy.p_c + energy.eta * float(np.sum(powers)))
    return RateReport(gamma=gamma, V=V, delta=delta, r=r, C=C, e=e, gee=gee_val)

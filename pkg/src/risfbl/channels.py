"""Fading realizations, surface coefficient states, and effective channels.

Array shapes (complex128 throughout):
    d[l, k, i]   -> (L, K, L, n_bs)   direct link BS i -> user (l, k)
    G[m, i]      -> (M, L, n_ris, n_bs)  BS i -> surface m
    f[l, k, m]   -> (L, K, M, n_ris)  surface m -> user (l, k)

The effective channel seen by user (l, k) from BS i is
    h = d[l,k,i] + sum_m (f[l,k,m] * theta_m) @ G[m,i]
with theta_m the active coefficient vector of surface m for that user
(reflection- or transmission-side for STAR modes, nothing if uncovered).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .topology import NetworkTopology, PhaseAmplitudeModel, PropagationParams

__all__ = [
    "ChannelSet",
    "RisState",
    "generate_channels",
    "effective_channel",
    "FEASIBILITY_TAGS",
    "MODES",
]

FEASIBILITY_TAGS = ("TU", "TI", "TC", "TSU", "TSI", "TSN")
MODES = ("regular", "es", "ms", "ts")

_STAR_TAGS = ("TSU", "TSI", "TSN")


@dataclass
class ChannelSet:
    d: np.ndarray
    G: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        for name in ("d", "G", "f"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError(f"channel array {name} has non-finite entries")

    @property
    def shape(self):
        L, K, _, n_bs = self.d.shape
        M = self.G.shape[0]
        n_ris = self.G.shape[2]
        return L, K, M, n_bs, n_ris


def _steering(n, angle):
    # half-wavelength ULA response, unit-modulus entries
    return np.exp(1j * np.pi * np.arange(n) * math.sin(angle))


def _azimuth(src, dst):
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _rician(rng, los, k_factor):
    if math.isinf(k_factor):
        return los
    scatter = _cn(rng, los.shape)
    return math.sqrt(k_factor / (1.0 + k_factor)) * los + math.sqrt(
        1.0 / (1.0 + k_factor)
    ) * scatter


def generate_channels(topology: NetworkTopology, params: PropagationParams, seed: int):
    """Draw one fading realization. Deterministic given (topology, params, seed).

    Direct links are Rayleigh scaled by the NLoS pathloss; both RIS hops are
    Rician with the configured K-factor scaled by the LoS pathloss.
    ``params.rician_k = inf`` degenerates to the deterministic pure-LoS limit.
    """
    rng = np.random.default_rng(seed)
    L, M, K = topology.L, topology.M, topology.K
    n_bs, n_ris = topology.n_bs, topology.n_ris

    d = np.zeros((L, K, L, n_bs), dtype=complex)
    for l in range(L):
        for k in range(K):
            for i in range(L):
                g = params.direct_gain(topology.bs_user_distance(i, l, k))
                d[l, k, i] = math.sqrt(g) * _cn(rng, n_bs)

    G = np.zeros((M, L, n_ris, n_bs), dtype=complex)
    for m in range(M):
        for i in range(L):
            g = params.ris_gain(topology.bs_ris_distance(i, m))
            aod = _azimuth(topology.bs_positions[i], topology.ris_positions[m])
            aoa = _azimuth(topology.ris_positions[m], topology.bs_positions[i])
            los = np.outer(_steering(n_ris, aoa), _steering(n_bs, aod))
            G[m, i] = math.sqrt(g) * _rician(rng, los, params.rician_k)

    f = np.zeros((L, K, M, n_ris), dtype=complex)
    for l in range(L):
        for k in range(K):
            for m in range(M):
                g = params.ris_gain(topology.ris_user_distance(m, l, k))
                aod = _azimuth(topology.ris_positions[m], topology.user_positions[l, k])
                los = _steering(n_ris, aod)
                f[l, k, m] = math.sqrt(g) * _rician(rng, los, params.rician_k)

    return ChannelSet(d=d, G=G, f=f)


@dataclass
class RisState:
    """Coefficients of all surfaces plus the feasibility set they live in.

    mode:
        'regular' -- reflection only, coefficients in ``theta``.
        'es'      -- energy splitting, every element reflects and transmits
                     simultaneously (``theta_r``/``theta_t``).
        'ms'      -- mode switching, each element either reflects or
                     transmits per ``ms_partition`` (True = reflect).
        'ts'      -- time switching, all elements reflect in one sub-slot
                     and transmit in the other; a user is served only in the
                     sub-slot matching its side and its rate is scaled by
                     ``ts_fraction`` (resp. 1 - ts_fraction).

    user_side[m, l, k] is 'r', 't' or 'u' (uncovered: surface m contributes
    nothing to that user).
    """

    mode: str
    set_tag: str
    user_side: np.ndarray
    theta: np.ndarray | None = None
    theta_r: np.ndarray | None = None
    theta_t: np.ndarray | None = None
    ms_partition: np.ndarray | None = None
    phase_model: PhaseAmplitudeModel | None = None
    ts_fraction: float = 0.5
    frozen: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.set_tag not in FEASIBILITY_TAGS:
            raise ValueError(f"unknown feasibility tag {self.set_tag!r}")
        if self.mode == "regular":
            if self.set_tag in _STAR_TAGS or self.theta is None:
                raise ValueError("regular mode needs theta and a non-STAR tag")
            self.theta = np.asarray(self.theta, dtype=complex)
        else:
            if self.set_tag not in _STAR_TAGS:
                raise ValueError("STAR modes need a STAR feasibility tag")
            if self.theta_r is None or self.theta_t is None:
                raise ValueError("STAR modes need theta_r and theta_t")
            self.theta_r = np.asarray(self.theta_r, dtype=complex)
            self.theta_t = np.asarray(self.theta_t, dtype=complex)
        if self.set_tag == "TC" and self.phase_model is None:
            self.phase_model = PhaseAmplitudeModel()
        if self.mode == "ms":
            if self.ms_partition is None:
                raise ValueError("mode switching needs ms_partition")
            self.ms_partition = np.asarray(self.ms_partition, dtype=bool)
        if self.mode == "ts" and not 0.0 < self.ts_fraction <= 1.0:
            raise ValueError("ts_fraction must be in (0, 1]")
        self.user_side = np.asarray(self.user_side, dtype="<U1")
        if self.mode == "ts":
            covered = self.user_side != "u"
            per_user = self.user_side.copy()
            per_user[~covered] = "r"
            if not np.all(per_user == per_user[0:1]):
                raise ValueError("time switching needs a per-user side consistent across surfaces")

    # ---- geometry of the state -------------------------------------------------

    @property
    def n_surfaces(self):
        return self.user_side.shape[0]

    def slot_of(self, l, k):
        """Sub-slot ('r'/'t') in which user (l, k) is served (TS mode)."""
        side = self.user_side[0, l, k]
        return side if side in ("r", "t") else "r"

    def coefficients_for(self, m, l, k, subslot=None):
        """Active coefficient vector of surface m toward user (l, k), or None.

        For TS mode, ``subslot`` defaults to the user's own sub-slot; a user
        on the far side of the surface in the active sub-slot gets nothing.
        """
        side = self.user_side[m, l, k]
        if side == "u":
            return None
        if self.mode == "regular":
            return self.theta[m]
        if self.mode in ("es", "ms"):
            return self.theta_r[m] if side == "r" else self.theta_t[m]
        # ts
        slot = self.slot_of(l, k) if subslot is None else subslot
        if side != slot:
            return None
        return self.theta_r[m] if slot == "r" else self.theta_t[m]

    def covered_users(self):
        """Boolean (L, K) mask of users reached by at least one surface."""
        return np.any(self.user_side != "u", axis=0)

    # ---- feasibility -----------------------------------------------------------

    def feasibility_errors(self):
        """Max violation of each defining (in)equality of the active set."""
        errs = {}
        if self.mode == "regular":
            mag = np.abs(self.theta)
            if self.set_tag == "TU":
                errs["amplitude_bound"] = float(np.max(np.maximum(mag**2 - 1.0, 0.0), initial=0.0))
            elif self.set_tag == "TI":
                errs["unit_modulus"] = float(np.max(np.abs(mag - 1.0), initial=0.0))
            elif self.set_tag == "TC":
                want = self.phase_model.amplitude(np.angle(self.theta))
                errs["phase_amplitude_law"] = float(np.max(np.abs(mag - want), initial=0.0))
        elif self.mode == "ts":
            errs["reflect_modulus"] = float(np.max(np.abs(np.abs(self.theta_r) - 1.0), initial=0.0))
            errs["transmit_modulus"] = float(np.max(np.abs(np.abs(self.theta_t) - 1.0), initial=0.0))
        else:
            power = np.abs(self.theta_r) ** 2 + np.abs(self.theta_t) ** 2
            if self.set_tag == "TSU":
                errs["sum_power_bound"] = float(np.max(np.maximum(power - 1.0, 0.0), initial=0.0))
            else:
                errs["sum_power"] = float(np.max(np.abs(power - 1.0), initial=0.0))
            if self.set_tag == "TSN":
                cross = np.real(np.conj(self.theta_r) * self.theta_t)
                errs["orthogonality"] = float(np.max(np.abs(cross), initial=0.0))
            if self.mode == "ms":
                off_r = np.abs(self.theta_r[~self.ms_partition])
                off_t = np.abs(self.theta_t[self.ms_partition])
                errs["partition_zeros"] = float(
                    max(np.max(off_r, initial=0.0), np.max(off_t, initial=0.0))
                )
        return errs

    def check_feasible(self, tol=1e-8):
        errs = self.feasibility_errors()
        bad = {k: v for k, v in errs.items() if v > tol}
        if bad:
            raise ValueError(f"surface state violates {self.set_tag}/{self.mode}: {bad}")
        return True

    def copy(self):
        return replace(
            self,
            theta=None if self.theta is None else self.theta.copy(),
            theta_r=None if self.theta_r is None else self.theta_r.copy(),
            theta_t=None if self.theta_t is None else self.theta_t.copy(),
            user_side=self.user_side.copy(),
            ms_partition=None if self.ms_partition is None else self.ms_partition.copy(),
        )

    # ---- constructors ----------------------------------------------------------

    @staticmethod
    def regular_init(M, n_ris, set_tag, user_side, phase_model=None, frozen=False):
        """Unit-phase start; for TC the amplitude follows the phase law."""
        theta = np.ones((M, n_ris), dtype=complex)
        if set_tag == "TC":
            pm = phase_model or PhaseAmplitudeModel()
            theta = theta * pm.amplitude(0.0)
        state = RisState(
            mode="regular",
            set_tag=set_tag,
            user_side=user_side,
            theta=theta,
            phase_model=phase_model,
            frozen=frozen,
        )
        return state

    @staticmethod
    def random_unit_modulus(M, n_ris, user_side, rng, frozen=True):
        """Uniform-phase, unit-amplitude coefficients (random-surface baseline)."""
        phases = rng.uniform(-np.pi, np.pi, size=(M, n_ris))
        return RisState(
            mode="regular",
            set_tag="TI",
            user_side=user_side,
            theta=np.exp(1j * phases),
            frozen=frozen,
        )

    @staticmethod
    def star_init(M, n_ris, set_tag, mode, user_side, ms_partition=None, ts_fraction=0.5):
        if mode == "ms":
            if ms_partition is None:
                raise ValueError("mode switching needs a partition")
            part = np.asarray(ms_partition, dtype=bool)
            theta_r = np.where(part, 1.0 + 0.0j, 0.0j)
            theta_t = np.where(part, 0.0j, 1.0 + 0.0j)
        elif mode == "ts":
            theta_r = np.ones((M, n_ris), dtype=complex)
            theta_t = np.ones((M, n_ris), dtype=complex)
        else:
            amp = 1.0 / math.sqrt(2.0)
            theta_r = np.full((M, n_ris), amp, dtype=complex)
            # orthogonal phases keep the TSN start feasible; harmless otherwise
            theta_t = np.full((M, n_ris), 1j * amp, dtype=complex)
        return RisState(
            mode=mode,
            set_tag=set_tag,
            user_side=user_side,
            theta_r=theta_r,
            theta_t=theta_t,
            ms_partition=ms_partition,
            ts_fraction=ts_fraction,
        )

    @staticmethod
    def random_partition(M, n_ris, rng):
        """Half/half element split used by the mode-switching scheme."""
        part = np.zeros((M, n_ris), dtype=bool)
        for m in range(M):
            idx = rng.permutation(n_ris)[: n_ris // 2]
            part[m, idx] = True
        return part


def effective_channel(channels: ChannelSet, ris: RisState, l, k, i, subslot=None):
    """Effective channel row vector (n_bs,) from BS i to user (l, k)."""
    L, K, M, n_bs, _ = channels.shape
    if not (0 <= l < L and 0 <= k < K and 0 <= i < L):
        raise IndexError(f"user or BS index out of range: l={l}, k={k}, i={i}")
    h = channels.d[l, k, i].copy()
    for m in range(M):
        coeff = ris.coefficients_for(m, l, k, subslot=subslot)
        if coeff is None:
            continue
        h += (channels.f[l, k, m] * coeff) @ channels.G[m, i]
    return h


def all_effective_channels(channels: ChannelSet, ris: RisState, subslot=None):
    """Stacked effective channels H[l, k, i] -> (L, K, L, n_bs).

    For TS mode each user's row uses its own sub-slot unless ``subslot``
    forces one.
    """
    L, K, _, n_bs, _ = channels.shape
    H = np.zeros((L, K, L, n_bs), dtype=complex)
    for l in range(L):
        for k in range(K):
            for i in range(L):
                H[l, k, i] = effective_channel(channels, ris, l, k, i, subslot=subslot)
    return H

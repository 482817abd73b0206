"""Network geometry, propagation parameters, and scenario-file loading.

Coordinates are 3-D, in meters. Powers are linear (watts) with the noise
power normalized to 1 by default, so a BS budget of ``10**(P_dB/10)``
corresponds to a transmit power of ``P_dB`` dB over the noise floor.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "NetworkTopology",
    "PropagationParams",
    "PhaseAmplitudeModel",
    "default_topology",
    "single_cell_edge_topology",
    "load_scenario_dict",
]


@dataclass
class PhaseAmplitudeModel:
    """Amplitude-vs-phase law of a lossy reflecting element.

    amplitude(phase) = theta_min + (1 - theta_min) * ((sin(phase - phi) + 1) / 2) ** alpha
    """

    theta_min: float = 0.2
    alpha: float = 1.6
    phi: float = 0.43

    def __post_init__(self):
        if not 0.0 <= self.theta_min <= 1.0:
            raise ValueError(f"theta_min must be in [0, 1], got {self.theta_min}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def amplitude(self, phase):
        """Amplitude of an element whose phase is ``phase`` (radians)."""
        s = (np.sin(phase - self.phi) + 1.0) / 2.0
        return self.theta_min + (1.0 - self.theta_min) * s**self.alpha


@dataclass
class PropagationParams:
    """Large-scale fading constants for direct and RIS-assisted links.

    Direct BS-user links are Rayleigh (NLoS); both RIS hops are Rician with
    a strong line-of-sight component. Reference gains are linear power
    gains at ``ref_distance``; the absolute values are a configuration
    choice, not a calibrated measurement, so only trends (not absolute
    rates) are reproducible.
    """

    direct_exponent: float = 3.75
    ris_exponent: float = 2.2
    direct_ref_gain_db: float = -10.0
    ris_ref_gain_db: float = -28.0
    ref_distance: float = 100.0
    rician_k: float = 10 ** 0.3  # 3 dB

    def __post_init__(self):
        if self.rician_k < 0:
            raise ValueError(f"rician_k must be >= 0, got {self.rician_k}")
        if self.ref_distance <= 0:
            raise ValueError("ref_distance must be positive")

    def direct_gain(self, dist):
        """Linear power gain of a direct link of length ``dist``."""
        return 10 ** (self.direct_ref_gain_db / 10.0) * (dist / self.ref_distance) ** (
            -self.direct_exponent
        )

    def ris_gain(self, dist):
        """Linear power gain of one RIS hop of length ``dist``."""
        return 10 ** (self.ris_ref_gain_db / 10.0) * (dist / self.ref_distance) ** (
            -self.ris_exponent
        )


@dataclass
class NetworkTopology:
    """Node counts, positions and power budgets of a multi-cell downlink.

    ``user_positions`` has shape (L, K, 3): user (l, k) is the k-th user
    served by BS l.
    """

    L: int
    M: int
    K: int
    n_bs: int
    n_ris: int
    bs_positions: np.ndarray
    ris_positions: np.ndarray
    user_positions: np.ndarray
    power_budgets: np.ndarray
    noise_power: float = 1.0

    def __post_init__(self):
        for name in ("L", "M", "K", "n_bs", "n_ris"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        self.bs_positions = np.asarray(self.bs_positions, dtype=float).reshape(self.L, 3)
        self.ris_positions = np.asarray(self.ris_positions, dtype=float).reshape(self.M, 3)
        self.user_positions = np.asarray(self.user_positions, dtype=float).reshape(
            self.L, self.K, 3
        )
        self.power_budgets = np.asarray(self.power_budgets, dtype=float).reshape(self.L)
        if np.any(self.power_budgets <= 0):
            raise ValueError("power budgets must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.M < self.L:
            warnings.warn(
                f"fewer surfaces than cells (M={self.M} < L={self.L}); "
                "the usual deployment has at least one surface per cell",
                stacklevel=2,
            )

    def bs_user_distance(self, i, l, k):
        return float(np.linalg.norm(self.bs_positions[i] - self.user_positions[l, k]))

    def bs_ris_distance(self, i, m):
        return float(np.linalg.norm(self.bs_positions[i] - self.ris_positions[m]))

    def ris_user_distance(self, m, l, k):
        return float(np.linalg.norm(self.ris_positions[m] - self.user_positions[l, k]))


def _drop_users_in_square(rng, center_x, y_lo, y_hi, half_side, k, height):
    xs = rng.uniform(center_x - half_side, center_x + half_side, size=k)
    ys = rng.uniform(y_lo, y_hi, size=k)
    return np.stack([xs, ys, np.full(k, height)], axis=1)


def default_topology(K=4, n_bs=4, n_ris=20, power=10.0, seed=0, noise_power=1.0):
    """Two-cell layout with one surface per cell.

    BSs sit at (0,0,25) and (400,0,25); surfaces at (140,0,15) and
    (260,0,15). The K users of each cell are dropped uniformly in a 20 m
    square in front of their surface, at 1.5 m height.
    """
    rng = np.random.default_rng(seed)
    bs = np.array([[0.0, 0.0, 25.0], [400.0, 0.0, 25.0]])
    ris = np.array([[140.0, 0.0, 15.0], [260.0, 0.0, 15.0]])
    users = np.stack(
        [
            _drop_users_in_square(rng, 140.0, 5.0, 25.0, 10.0, K, 1.5),
            _drop_users_in_square(rng, 260.0, 5.0, 25.0, 10.0, K, 1.5),
        ]
    )
    return NetworkTopology(
        L=2,
        M=2,
        K=K,
        n_bs=n_bs,
        n_ris=n_ris,
        bs_positions=bs,
        ris_positions=ris,
        user_positions=users,
        power_budgets=np.full(2, float(power)),
        noise_power=noise_power,
    )


def single_cell_edge_topology(K=6, n_bs=6, n_ris=60, power=10.0, seed=0, noise_power=1.0):
    """Single cell with one surface near the cell-edge users.

    The first ceil(K/2) users are dropped in front of the surface (positive
    y offset, reflection space); the rest behind it (transmission space).
    Used for the regular-vs-STAR comparisons where a regular surface covers
    only the front users.
    """
    rng = np.random.default_rng(seed)
    bs = np.array([[0.0, 0.0, 25.0]])
    ris = np.array([[200.0, 0.0, 15.0]])
    k_front = (K + 1) // 2
    front = _drop_users_in_square(rng, 200.0, 5.0, 25.0, 10.0, k_front, 1.5)
    back = _drop_users_in_square(rng, 200.0, -25.0, -5.0, 10.0, K - k_front, 1.5)
    users = np.concatenate([front, back], axis=0)[None, :, :]
    return NetworkTopology(
        L=1,
        M=1,
        K=K,
        n_bs=n_bs,
        n_ris=n_ris,
        bs_positions=bs,
        ris_positions=ris,
        user_positions=users,
        power_budgets=np.full(1, float(power)),
        noise_power=noise_power,
    )


def geometric_user_sides(topology):
    """Side of each user w.r.t. each surface, from the sign of the y offset.

    Returns an (M, L, K) array of 'r' (reflection space, y >= ris_y) or
    't' (transmission space).
    """
    sides = np.empty((topology.M, topology.L, topology.K), dtype="<U1")
    for m in range(topology.M):
        ris_y = topology.ris_positions[m, 1]
        for l in range(topology.L):
            for k in range(topology.K):
                sides[m, l, k] = "r" if topology.user_positions[l, k, 1] >= ris_y else "t"
    return sides


def load_scenario_dict(path):
    """Read a scenario file (.json or .toml) into a plain dict.

    Field names are documented in schema/scenario.schema.json.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib as toml_reader  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as toml_reader
        with open(path, "rb") as fh:
            return toml_reader.load(fh)
    raise ValueError(f"unsupported scenario file type: {path.suffix}")

"""Beamforming updates for fixed surface coefficients, all four utilities.

Each call builds the touching concave rate surrogates at the previous
beams, assembles the utility-specific convex subproblem and returns the
solution; the true utility never decreases (ascent step of the alternating
scheme). Utility kinds:

    min_rate -- maximize min_lk r_lk / w_lk (fairness rate)
    sum_rate -- maximize sum_lk w_lk r_lk
    gee      -- maximize sum r / (L K p_c + eta * sum ||x||^2), ratio solved
                by the Dinkelbach driver
    min_ee   -- maximize min_lk e_lk via the generalized Dinkelbach driver
                (weights act as per-user subproblem multipliers)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channels import all_effective_channels
from .convex import (
    INFEASIBLE,
    ConvexSubproblem,
    DinkelbachState,
    SolverOptions,
    dinkelbach,
    generalized_dinkelbach,
    solve,
)
from .forms import QuadraticForm, VariableLayout
from .metrics import (
    EnergyParams,
    FblParams,
    beam_amplitudes,
    fbl_rate,
    interference_mask,
    rate_report,
    user_time_fractions,
)
from .surrogates import beam_block, expansion_coefficients, rate_surrogate_in_beams

__all__ = [
    "UtilitySpec",
    "BeamformingSet",
    "InfeasibleThresholds",
    "utility_value",
    "update_beams",
    "UTILITY_KINDS",
]

log = logging.getLogger(__name__)

UTILITY_KINDS = ("min_rate", "sum_rate", "gee", "min_ee")
AUX = "util_aux"


class InfeasibleThresholds(RuntimeError):
    """Per-user rate thresholds cannot be met even with relaxation."""


@dataclass
class UtilitySpec:
    """Objective selector with per-user priorities and optional rate floors.

    ``rate_thresholds=None`` disables the latency constraints entirely;
    a scalar or (L, K) array enforces r_lk >= threshold via the surrogates.
    """

    kind: str
    weights: np.ndarray | None = None
    rate_thresholds: np.ndarray | float | None = None

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights <= 0):
                raise ValueError("weights must be positive")

    def weights_for(self, L, K):
        if self.weights is None:
            return np.ones((L, K))
        return np.broadcast_to(self.weights, (L, K)).astype(float)

    def thresholds_for(self, L, K):
        if self.rate_thresholds is None:
            return None
        return np.broadcast_to(np.asarray(self.rate_thresholds, dtype=float), (L, K))


def utility_value(report, utility: UtilitySpec):
    """Scalar utility of an evaluated operating point."""
    L, K = report.r.shape
    w = utility.weights_for(L, K)
    if utility.kind == "min_rate":
        return float(np.min(report.r / w))
    if utility.kind == "sum_rate":
        return float(np.sum(w * report.r))
    if utility.kind == "gee":
        return report.gee
    return float(np.min(report.e))


@dataclass
class BeamformingSet:
    x: np.ndarray  # (L, K, n_bs) complex

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=complex)

    @property
    def shape(self):
        return self.x.shape

    def bs_powers(self):
        return np.sum(np.abs(self.x) ** 2, axis=(1, 2))

    def check_power(self, budgets, ris=None, tol=1e-9):
        for l, group in power_groups(self.x.shape[0], self.x.shape[1], ris):
            p = sum(float(np.real(np.vdot(self.x[l, k], self.x[l, k]))) for k in group)
            if p > budgets[l] + tol:
                raise ValueError(f"BS {l} exceeds its power budget: {p} > {budgets[l]}")
        return True

    def copy(self):
        return BeamformingSet(self.x.copy())


def power_groups(L, K, ris=None):
    """(bs, user-index list) pairs sharing one power budget.

    Under time switching each sub-slot has its own budget at every BS; the
    users of different sub-slots never transmit together.
    """
    groups = []
    if ris is not None and ris.mode == "ts":
        for l in range(L):
            for slot in ("r", "t"):
                members = [k for k in range(K) if ris.slot_of(l, k) == slot]
                if members:
                    groups.append((l, members))
    else:
        for l in range(L):
            groups.append((l, list(range(K))))
    return groups


def _power_constraints(layout, budgets, L, K, ris):
    cons = []
    for l, group in power_groups(L, K, ris):
        q = QuadraticForm(layout, const=float(budgets[l]))
        for k in group:
            q.add_sq_norm(1.0, beam_block(l, k))
        cons.append(q)
    return cons


def update_beams(
    channels,
    ris,
    beams_prev: BeamformingSet,
    topology,
    utility: UtilitySpec,
    fbl: FblParams,
    energy: EnergyParams,
    opts: SolverOptions = None,
    info=None,
):
    """One ascent step in the beams for fixed surface coefficients."""
    opts = opts or SolverOptions()
    L, K, n_bs = beams_prev.x.shape
    sigma2 = topology.noise_power
    w = utility.weights_for(L, K)
    thresholds = utility.thresholds_for(L, K)

    H = all_effective_channels(channels, ris)
    mask = interference_mask(ris, L, K)
    frac = user_time_fractions(ris, L, K)
    amp = beam_amplitudes(H, beams_prev.x)
    coeffs = expansion_coefficients(amp, sigma2, fbl, mask)

    blocks = [(beam_block(l, k), "c", n_bs) for l in range(L) for k in range(K)]
    needs_aux = utility.kind in ("min_rate", "min_ee")
    if needs_aux:
        blocks.append((AUX, "r", 1))
    layout = VariableLayout(blocks)

    rate_forms = {
        (l, k): rate_surrogate_in_beams(coeffs, H, l, k, layout, scale=frac[l, k])
        for l in range(L)
        for k in range(K)
    }
    cons = _power_constraints(layout, topology.power_budgets, L, K, ris)
    if thresholds is not None:
        for (l, k), q in rate_forms.items():
            qt = q.copy()
            qt.add_const(-thresholds[l, k])
            cons.append(qt)

    x0 = {beam_block(l, k): beams_prev.x[l, k] for l in range(L) for k in range(K)}
    r_prev = frac * fbl_rate(coeffs.gamma, fbl)

    if utility.kind == "min_rate":
        obj = QuadraticForm(layout)
        obj.add_linear_real(AUX, [1.0])
        for (l, k), q in rate_forms.items():
            qc = q.copy()
            qc.add_linear_real(AUX, [-w[l, k]])
            cons.append(qc)
        x0[AUX] = float(np.min(r_prev / w))
        res = solve(ConvexSubproblem(layout, obj, cons), opts, x0=x0)
    elif utility.kind == "sum_rate":
        obj = QuadraticForm(layout)
        for (l, k), q in rate_forms.items():
            obj.add(q, w[l, k])
        res = solve(ConvexSubproblem(layout, obj, cons), opts, x0=x0)
    elif utility.kind == "gee":
        num = QuadraticForm(layout)
        for q in rate_forms.values():
            num.add(q)
        neg_den = QuadraticForm(layout, const=-L * K * energy.p_c)
        for l in range(L):
            for k in range(K):
                neg_den.add_sq_norm(energy.eta * frac[l, k], beam_block(l, k))
        res, _ = dinkelbach(num, neg_den, cons, layout, x0, opts)
    else:  # min_ee
        nums, dens = [], []
        for l in range(L):
            for k in range(K):
                nums.append(rate_forms[(l, k)])
                nd = QuadraticForm(layout, const=-energy.p_c)
                nd.add_sq_norm(energy.eta * frac[l, k], beam_block(l, k))
                dens.append(nd)
        x0[AUX] = 0.0
        res, _ = generalized_dinkelbach(
            nums, dens, w.ravel(), cons, layout, AUX, x0, opts
        )

    if res is None or res.status == INFEASIBLE:
        if thresholds is not None:
            raise InfeasibleThresholds(
                "rate thresholds unreachable for the current surface state"
            )
        log.warning("beam subproblem reported %s; keeping previous beams", res and res.status)
        return beams_prev

    x_new = np.stack(
        [
            np.stack([res.variables[beam_block(l, k)] for k in range(K)])
            for l in range(L)
        ]
    )
    # squeeze solver slack back onto the budget (violations are O(feas_tol))
    for l, group in power_groups(L, K, ris):
        p = sum(float(np.real(np.vdot(x_new[l, k], x_new[l, k]))) for k in group)
        if p > topology.power_budgets[l]:
            scale = np.sqrt(topology.power_budgets[l] / p)
            for k in group:
                x_new[l, k] *= scale
    candidate = BeamformingSet(x_new)
    prev_val = utility_value(
        rate_report(channels, ris, beams_prev.x, sigma2, fbl, energy), utility
    )
    cand_val = utility_value(
        rate_report(channels, ris, candidate.x, sigma2, fbl, energy), utility
    )
    if info is not None:
        info.update(
            status=res.status,
            kkt_residual=res.kkt_residual,
            objective=res.objective,
            accepted=cand_val >= prev_val,
        )
    if cand_val < prev_val:
        # numerically possible only at stationarity; the ascent guarantee
        # then means keeping the previous point
        log.debug("beam step regressed (%.3e < %.3e); keeping previous", cand_val, prev_val)
        return beams_prev
    return candidate

"""Alternating-optimization driver and the max-min SINR initializer.

One outer iteration updates the beams for fixed coefficients, then the
coefficients for fixed beams; both steps are ascent steps, so the utility
trace is non-decreasing and the loop stops on small relative improvement.

The initializer delivers a point with strictly positive SINRs (the rate
surrogates need them, and the short-packet rate approximation is only
meaningful above its zero-rate SINR): it alternates the same two blocks on
the max-min SINR problem, each block solved by the generalized Dinkelbach
driver on convex-concave linearized SINR ratios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .beam_opt import BeamformingSet, UtilitySpec, update_beams, utility_value
from .channels import all_effective_channels
from .convex import (
    DinkelbachState,
    SolverOptions,
    generalized_dinkelbach,
)
from .forms import QuadraticForm, VariableLayout
from .metrics import (
    EnergyParams,
    FblParams,
    beam_amplitudes,
    interference_mask,
    lemma2_analysis,
    rate_report,
    sinr_all,
)
from .ris_opt import (
    CcpOptions,
    _amp_map,
    _set_constraints,
    _solve_theta,
    _theta_blocks,
    _theta_start,
    project_candidate,
    update_ris,
)
from .surrogates import beam_block

__all__ = [
    "AoOptions",
    "AoState",
    "InitializationInfeasible",
    "init_maxmin_sinr",
    "optimize",
]

log = logging.getLogger(__name__)

AUX = "sinr_aux"


class InitializationInfeasible(RuntimeError):
    """Even the max-min SINR point leaves some user below the zero-rate SINR."""


@dataclass
class AoOptions:
    stop_rel: float = 1e-4
    max_iter: int = 50
    solver: SolverOptions = field(default_factory=SolverOptions)
    ccp: CcpOptions = field(default_factory=CcpOptions)
    init_rounds: int = 4
    init_stop: float = 1e-3
    init_gda_tol: float = 1e-4
    init_gda_iter: int = 8
    ee_init_from_rate: bool = True
    ee_init_max_iter: int = 15
    keep_history: bool = False


@dataclass
class AoState:
    """Result of one alternating-optimization run."""

    beams: BeamformingSet
    ris: object
    utility_trace: list
    rates_trace: list
    iterations: int
    converged: bool
    init_min_sinr: float = float("nan")
    beam_kkt: float = float("nan")
    ris_kkt: float = float("nan")
    history: list = field(default_factory=list)

    @property
    def utility(self):
        return self.utility_trace[-1]

    def trace_rows(self):
        """CSV-ready rows: header, then (iteration, utility, per-user rates)."""
        L, K = self.rates_trace[0].shape
        header = ["iteration", "utility"] + [f"rate_{l}_{k}" for l in range(L) for k in range(K)]
        rows = [header]
        for t, (u, r) in enumerate(zip(self.utility_trace, self.rates_trace)):
            rows.append([t, u] + [float(v) for v in np.asarray(r).ravel()])
        return rows


def _min_sinr(channels, ris, beams, noise_power):
    H = all_effective_channels(channels, ris)
    mask = interference_mask(ris, *channels.d.shape[:2])
    return float(np.min(sinr_all(H, beams.x, noise_power, mask)))


def _mrt_beams(channels, ris, topology):
    """Matched filters to the effective channels, equal power split per budget group."""
    from .beam_opt import power_groups

    L, K = topology.L, topology.K
    x = np.zeros((L, K, topology.n_bs), dtype=complex)
    H = all_effective_channels(channels, ris)
    for l, group in power_groups(L, K, ris):
        p_each = topology.power_budgets[l] / len(group)
        for k in group:
            h = H[l, k, l]
            x[l, k] = np.sqrt(p_each) * h.conj() / np.linalg.norm(h)
    return BeamformingSet(x)


def _maxmin_beam_step(channels, ris, beams, topology, opts):
    """GDA round on the linearized max-min SINR problem in the beams."""
    from .beam_opt import power_groups

    L, K, n_bs = beams.x.shape
    sigma2 = topology.noise_power
    H = all_effective_channels(channels, ris)
    mask = interference_mask(ris, L, K)
    amp = beam_amplitudes(H, beams.x)

    blocks = [(beam_block(l, k), "c", n_bs) for l in range(L) for k in range(K)]
    blocks.append((AUX, "r", 1))
    layout = VariableLayout(blocks)

    nums, dens = [], []
    for l in range(L):
        for k in range(K):
            num = QuadraticForm(layout, const=-abs(amp[l, k, l, k]) ** 2)
            num.add_re_inner(2.0, amp[l, k, l, k], {beam_block(l, k): H[l, k, l]})
            nums.append(num)
            den = QuadraticForm(layout, const=-sigma2)
            for i in range(L):
                for j in range(K):
                    if (i, j) == (l, k) or not mask[l, k, i, j]:
                        continue
                    den.add_sq_affine(1.0, {beam_block(i, j): H[l, k, i]})
            dens.append(den)

    cons = []
    for l, group in power_groups(L, K, ris):
        q = QuadraticForm(layout, const=float(topology.power_budgets[l]))
        for k in group:
            q.add_sq_norm(1.0, beam_block(l, k))
        cons.append(q)

    x0 = {beam_block(l, k): beams.x[l, k] for l in range(L) for k in range(K)}
    x0[AUX] = 0.0
    state = DinkelbachState(tol=opts.init_gda_tol, max_iter=opts.init_gda_iter)
    res, _ = generalized_dinkelbach(
        nums, dens, np.ones(L * K), cons, layout, AUX, x0, opts.solver, state
    )
    if res is None or res.status == "infeasible":
        return beams
    x_new = np.stack(
        [np.stack([res.variables[beam_block(l, k)] for k in range(K)]) for l in range(L)]
    )
    cand = BeamformingSet(x_new)
    if _min_sinr(channels, ris, cand, sigma2) >= _min_sinr(channels, ris, beams, sigma2):
        return cand
    return beams


def _maxmin_theta_step(channels, ris, beams, topology, opts):
    """GDA round on the linearized max-min SINR problem in the coefficients."""
    L, K = channels.d.shape[:2]
    sigma2 = topology.noise_power

    slots = [None]
    if ris.mode == "ts":
        slots = ["r", "t"]
    state_ris = ris
    for slot in slots:
        active = [
            (l, k)
            for l in range(L)
            for k in range(K)
            if np.any(state_ris.user_side[:, l, k] != "u")
            and (slot is None or state_ris.slot_of(l, k) == slot)
        ]
        if not active:
            continue
        blocks = _theta_blocks(state_ris, slot=slot) + [(AUX, "r", 1)]
        layout = VariableLayout(blocks)
        H = all_effective_channels(channels, state_ris)
        mask = interference_mask(state_ris, L, K)
        amp = beam_amplitudes(H, beams.x)
        amap = _amp_map(channels, beams, state_ris, slot=slot)

        nums, dens = [], []
        for l, k in active:
            parts, off = amap(l, k, l, k)
            num = QuadraticForm(layout, const=-abs(amp[l, k, l, k]) ** 2)
            num.add_re_inner(2.0, amp[l, k, l, k], parts, off)
            nums.append(num)
            den = QuadraticForm(layout, const=-sigma2)
            for i in range(L):
                for j in range(K):
                    if (i, j) == (l, k) or not mask[l, k, i, j]:
                        continue
                    pij, oij = amap(l, k, i, j)
                    den.add_sq_affine(1.0, pij, oij)
            dens.append(den)

        cons = _set_constraints(state_ris, layout, opts.ccp, slot=slot)
        x0 = _theta_start(state_ris, layout, slot=slot)
        x0[AUX] = 0.0
        gda = DinkelbachState(tol=opts.init_gda_tol, max_iter=opts.init_gda_iter)
        res, _ = generalized_dinkelbach(
            nums, dens, np.ones(len(active)), cons, layout, AUX, x0, opts.solver, gda
        )
        if res is None or res.status == "infeasible":
            continue
        cand = project_candidate(state_ris, res.variables, slot=slot)
        if _min_sinr(channels, cand, beams, sigma2) >= _min_sinr(channels, state_ris, beams, sigma2):
            state_ris = cand
    return state_ris


def init_maxmin_sinr(channels, topology, ris0, opts: AoOptions = None):
    """Feasible starting point by alternating max-min SINR rounds.

    Returns (beams, surface state, achieved min SINR); the caller decides
    whether the min SINR clears the zero-rate threshold of its packet
    parameters.
    """
    opts = opts or AoOptions()
    beams = _mrt_beams(channels, ris0, topology)
    ris = ris0
    cur = _min_sinr(channels, ris, beams, topology.noise_power)
    for _ in range(opts.init_rounds):
        beams = _maxmin_beam_step(channels, ris, beams, topology, opts)
        if not ris.frozen and np.any(ris.covered_users()):
            ris = _maxmin_theta_step(channels, ris, beams, topology, opts)
        new = _min_sinr(channels, ris, beams, topology.noise_power)
        if new - cur <= opts.init_stop * max(cur, 1e-12):
            cur = new
            break
        cur = new
    return beams, ris, cur


def _ao_loop(channels, topology, ris, beams, utility, fbl, energy, opts, max_iter=None):
    sigma2 = topology.noise_power
    max_iter = max_iter or opts.max_iter
    report = rate_report(channels, ris, beams.x, sigma2, fbl, energy)
    trace = [utility_value(report, utility)]
    rates = [report.r]
    history = [(beams, ris)] if opts.keep_history else []
    beam_kkt = ris_kkt = float("nan")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        binfo, rinfo = {}, {}
        beams = update_beams(
            channels, ris, beams, topology, utility, fbl, energy, opts.solver, info=binfo
        )
        ris = update_ris(
            channels, beams, ris, topology, utility, fbl, energy, opts.ccp, opts.solver, info=rinfo
        )
        report = rate_report(channels, ris, beams.x, sigma2, fbl, energy)
        trace.append(utility_value(report, utility))
        rates.append(report.r)
        if opts.keep_history:
            history.append((beams, ris))
        beam_kkt = binfo.get("kkt_residual", float("nan"))
        ris_kkt = rinfo.get("kkt_residual", beam_kkt)
        if abs(trace[-1] - trace[-2]) < opts.stop_rel * max(abs(trace[-2]), 1e-12):
            converged = True
            break
    return AoState(
        beams=beams,
        ris=ris,
        utility_trace=trace,
        rates_trace=rates,
        iterations=it,
        converged=converged,
        beam_kkt=beam_kkt,
        ris_kkt=ris_kkt,
        history=history,
    )


def optimize(
    channels,
    topology,
    ris0,
    utility: UtilitySpec,
    fbl: FblParams,
    energy: EnergyParams = None,
    opts: AoOptions = None,
):
    """Full pipeline: initialize, then alternate beam and coefficient ascent.

    Efficiency utilities start from the converged fairness-rate solution
    (their ratio surrogates need positive rates); rate utilities start
    directly from the max-min SINR point.
    """
    opts = opts or AoOptions()
    energy = energy or EnergyParams()
    beams, ris, min_sinr = init_maxmin_sinr(channels, topology, ris0, opts)

    if utility.rate_thresholds is not None and fbl.q_inv > 0.0:
        gamma_zero = lemma2_analysis(fbl.penalty_a).gamma_zero
        if min_sinr <= gamma_zero:
            raise InitializationInfeasible(
                f"max-min SINR {min_sinr:.4g} does not clear the zero-rate "
                f"SINR {gamma_zero:.4g} while rate thresholds are active"
            )

    if utility.kind in ("gee", "min_ee") and opts.ee_init_from_rate:
        pre_utility = UtilitySpec(
            "min_rate", weights=None, rate_thresholds=utility.rate_thresholds
        )
        pre = _ao_loop(
            channels, topology, ris, beams, pre_utility, fbl, energy, opts,
            max_iter=opts.ee_init_max_iter,
        )
        beams, ris = pre.beams, pre.ris

    state = _ao_loop(channels, topology, ris, beams, utility, fbl, energy, opts)
    state.init_min_sinr = min_sinr
    return state

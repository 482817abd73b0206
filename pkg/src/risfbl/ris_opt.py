"""Surface-coefficient updates for fixed beams, all feasibility sets and modes.

Non-convex sets (unit modulus, phase-coupled amplitude, STAR sum-power
equalities) are handled by the convex-concave recipe: relax the equality,
linearize its convex side at the previous iterate, solve the convex
surrogate problem, project the solution back onto the exact set, and keep
the projected point only when it does not decrease the true utility. The
returned state therefore always satisfies its set equalities exactly and
the utility sequence is non-decreasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .beam_opt import UtilitySpec, utility_value
from .channels import RisState, all_effective_channels
from .convex import ConvexSubproblem, SolverOptions, solve
from .forms import QuadraticForm, VariableLayout
from .metrics import (
    beam_amplitudes,
    fbl_rate,
    interference_mask,
    rate_report,
    user_time_fractions,
)
from .surrogates import expansion_coefficients, rate_surrogate_in_theta

__all__ = [
    "CcpOptions",
    "update_ris",
    "update_tu",
    "update_ti",
    "update_tc",
    "update_star_es",
    "update_star_ms",
    "update_star_ts",
    "project_candidate",
]

log = logging.getLogger(__name__)

AUX = "util_aux"


@dataclass
class CcpOptions:
    """Relaxation width of the linearized equality constraints."""

    epsilon_relax: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.epsilon_relax <= 0.5:
            raise ValueError("epsilon_relax must be in [0, 0.5]")


# ---- projections ----------------------------------------------------------------


def _project_unit(theta):
    out = np.where(theta == 0, 1.0 + 0.0j, theta)
    return out / np.abs(out)


def _project_phase_amplitude(theta, model):
    ang = np.angle(np.where(theta == 0, 1.0 + 0.0j, theta))
    return model.amplitude(ang) * np.exp(1j * ang)


def _project_sum_power(theta_r, theta_t):
    norm = np.sqrt(np.abs(theta_r) ** 2 + np.abs(theta_t) ** 2)
    zero = norm == 0
    norm = np.where(zero, 1.0, norm)
    tr = np.where(zero, 1.0 + 0.0j, theta_r) / norm
    tt = np.where(zero, 0.0j, theta_t) / norm
    return tr, tt


def _repair_orthogonality(theta_r, theta_t):
    """Minimal correction enforcing Re{conj(r) t} = 0, then renormalize."""
    rho = np.real(np.conj(theta_r) * theta_t)
    mag2 = np.abs(theta_r) ** 2
    safe = mag2 > 0
    tt = theta_t - np.where(safe, rho / np.where(safe, mag2, 1.0), 0.0) * theta_r
    return _project_sum_power(theta_r, tt)


# ---- subproblem assembly ---------------------------------------------------------


def _theta_blocks(ris, slot=None):
    """Variable blocks of the active coefficient optimization."""
    M, n_ris = (ris.theta if ris.mode == "regular" else ris.theta_r).shape
    blocks = []
    if ris.mode == "regular":
        for m in range(M):
            blocks.append((f"th{m}", "c", n_ris))
    elif ris.mode == "es":
        for m in range(M):
            blocks.append((f"tr{m}", "c", n_ris))
            blocks.append((f"tt{m}", "c", n_ris))
    elif ris.mode == "ms":
        for m in range(M):
            n_r = int(np.sum(ris.ms_partition[m]))
            if n_r:
                blocks.append((f"tr{m}", "c", n_r))
            if n_ris - n_r:
                blocks.append((f"tt{m}", "c", n_ris - n_r))
    else:  # ts, one slot at a time
        name = "tr" if slot == "r" else "tt"
        for m in range(M):
            blocks.append((f"{name}{m}", "c", n_ris))
    return blocks


def _theta_start(ris, layout, slot=None):
    M = ris.user_side.shape[0]
    vals = {}
    for m in range(M):
        if ris.mode == "regular":
            vals[f"th{m}"] = ris.theta[m]
        elif ris.mode == "es":
            vals[f"tr{m}"] = ris.theta_r[m]
            vals[f"tt{m}"] = ris.theta_t[m]
        elif ris.mode == "ms":
            sel = ris.ms_partition[m]
            if f"tr{m}" in layout:
                vals[f"tr{m}"] = ris.theta_r[m][sel]
            if f"tt{m}" in layout:
                vals[f"tt{m}"] = ris.theta_t[m][~sel]
        else:
            if slot == "r":
                vals[f"tr{m}"] = ris.theta_r[m]
            else:
                vals[f"tt{m}"] = ris.theta_t[m]
    return vals


def _amp_map(channels, beams, ris, slot=None):
    """(l,k,i,j) -> affine description of h_{lk,i}(theta) . x_ij."""
    L, K, M, n_bs, n_ris = channels.shape
    x = beams.x
    Gx = np.einsum("minb,ijb->mijn", channels.G, x)  # (M, L, K, n_ris)

    def amap(l, k, i, j):
        parts = {}
        offset = complex(np.dot(channels.d[l, k, i], x[i, j]))
        for m in range(M):
            side = ris.user_side[m, l, k]
            if side == "u":
                continue
            coeff = channels.f[l, k, m] * Gx[m, i, j]
            if ris.mode == "regular":
                parts[f"th{m}"] = coeff
            elif ris.mode == "es":
                parts[f"tr{m}" if side == "r" else f"tt{m}"] = coeff
            elif ris.mode == "ms":
                sel = ris.ms_partition[m]
                if side == "r":
                    parts[f"tr{m}"] = coeff[sel]
                else:
                    parts[f"tt{m}"] = coeff[~sel]
            else:  # ts: the active slot's coefficients serve same-side users only
                if side == slot:
                    parts[f"tr{m}" if slot == "r" else f"tt{m}"] = coeff
        return parts, offset

    return amap


def _unit_ball_per_element(layout, block, dim):
    cons = []
    for n in range(dim):
        q = QuadraticForm(layout, const=1.0)
        q.add_sq_norm(1.0, block, indices=[n])
        cons.append(q)
    return cons


def _linearized_floor(layout, block, prev, floor):
    """2 Re{conj(prev_n) theta_n} - |prev_n|^2 >= floor_n, one per element."""
    cons = []
    prev = np.asarray(prev)
    floor = np.broadcast_to(floor, prev.shape)
    for n in range(prev.size):
        q = QuadraticForm(layout, const=-abs(prev[n]) ** 2 - floor[n])
        c = np.zeros(prev.size, dtype=complex)
        c[n] = prev[n]
        q.add_linear_complex(block, c)
        cons.append(q)
    return cons


def _set_constraints(ris, layout, ccp, slot=None):
    M, n_ris = ris.user_side.shape[0], (
        ris.theta if ris.mode == "regular" else ris.theta_r
    ).shape[1]
    eps = ccp.epsilon_relax
    cons = []
    if ris.mode == "regular":
        for m in range(M):
            cons += _unit_ball_per_element(layout, f"th{m}", n_ris)
            if ris.set_tag == "TI":
                cons += _linearized_floor(layout, f"th{m}", ris.theta[m], 1.0 - eps)
            elif ris.set_tag == "TC":
                floor = ris.phase_model.theta_min**2
                cons += _linearized_floor(layout, f"th{m}", ris.theta[m], floor)
    elif ris.mode == "es":
        for m in range(M):
            for n in range(n_ris):
                ball = QuadraticForm(layout, const=1.0)
                ball.add_sq_norm(1.0, f"tr{m}", indices=[n])
                ball.add_sq_norm(1.0, f"tt{m}", indices=[n])
                cons.append(ball)
                if ris.set_tag in ("TSI", "TSN"):
                    q = QuadraticForm(
                        layout,
                        const=-abs(ris.theta_r[m, n]) ** 2
                        - abs(ris.theta_t[m, n]) ** 2
                        - (1.0 - eps),
                    )
                    cr = np.zeros(n_ris, dtype=complex)
                    cr[n] = ris.theta_r[m, n]
                    ct = np.zeros(n_ris, dtype=complex)
                    ct[n] = ris.theta_t[m, n]
                    q.add_linear_complex(f"tr{m}", cr)
                    q.add_linear_complex(f"tt{m}", ct)
                    cons.append(q)
                if ris.set_tag == "TSN":
                    e = np.zeros(n_ris, dtype=complex)
                    e[n] = 1.0
                    for sign in (+1.0, -1.0):
                        q = QuadraticForm(layout, const=1.0)
                        q.add_sq_affine(1.0, {f"tr{m}": e, f"tt{m}": sign * e})
                        cons.append(q)
    elif ris.mode == "ms":
        for m in range(M):
            sel = ris.ms_partition[m]
            if f"tr{m}" in layout:
                prev = ris.theta_r[m][sel]
                cons += _unit_ball_per_element(layout, f"tr{m}", prev.size)
                cons += _linearized_floor(layout, f"tr{m}", prev, 1.0 - eps)
            if f"tt{m}" in layout:
                prev = ris.theta_t[m][~sel]
                cons += _unit_ball_per_element(layout, f"tt{m}", prev.size)
                cons += _linearized_floor(layout, f"tt{m}", prev, 1.0 - eps)
    else:  # ts
        name = "tr" if slot == "r" else "tt"
        prev_all = ris.theta_r if slot == "r" else ris.theta_t
        for m in range(M):
            cons += _unit_ball_per_element(layout, f"{name}{m}", n_ris)
            cons += _linearized_floor(layout, f"{name}{m}", prev_all[m], 1.0 - eps)
    return cons


def _solve_theta(
    channels,
    beams,
    ris,
    topology,
    utility,
    fbl,
    energy,
    ccp,
    opts,
    slot=None,
    users=None,
):
    """Solve the convex coefficient subproblem; returns solution dict or None."""
    L, K = channels.d.shape[:2]
    sigma2 = topology.noise_power
    w = utility.weights_for(L, K)
    thresholds = utility.thresholds_for(L, K)
    frac = user_time_fractions(ris, L, K)

    if users is None:
        # only users with a surface path; the others' rates are constants here
        users = [
            (l, k)
            for l in range(L)
            for k in range(K)
            if np.any(ris.user_side[:, l, k] != "u")
        ]
    if not users:
        return None, None

    blocks = _theta_blocks(ris, slot=slot)
    needs_aux = utility.kind in ("min_rate", "min_ee")
    if needs_aux:
        blocks = blocks + [(AUX, "r", 1)]
    layout = VariableLayout(blocks)

    H = all_effective_channels(channels, ris)
    mask = interference_mask(ris, L, K)
    amp = beam_amplitudes(H, beams.x)
    coeffs = expansion_coefficients(amp, sigma2, fbl, mask)
    amap = _amp_map(channels, beams, ris, slot=slot)

    rate_forms = {
        (l, k): rate_surrogate_in_theta(coeffs, amap, l, k, layout, scale=frac[l, k])
        for (l, k) in users
    }
    cons = _set_constraints(ris, layout, ccp, slot=slot)
    if thresholds is not None:
        for (l, k), q in rate_forms.items():
            qt = q.copy()
            qt.add_const(-thresholds[l, k])
            cons.append(qt)

    x0 = _theta_start(ris, layout, slot=slot)
    r_prev = frac * fbl_rate(coeffs.gamma, fbl)

    if utility.kind == "min_rate":
        obj = QuadraticForm(layout)
        obj.add_linear_real(AUX, [1.0])
        for (l, k), q in rate_forms.items():
            qc = q.copy()
            qc.add_linear_real(AUX, [-w[l, k]])
            cons.append(qc)
        x0[AUX] = min(r_prev[l, k] / w[l, k] for (l, k) in users)
    elif utility.kind == "min_ee":
        obj = QuadraticForm(layout)
        obj.add_linear_real(AUX, [1.0])
        powers = frac * np.sum(np.abs(beams.x) ** 2, axis=-1)
        den = energy.p_c + energy.eta * powers
        for (l, k), q in rate_forms.items():
            qc = q.copy()
            qc.add_linear_real(AUX, [-w[l, k] * den[l, k]])
            cons.append(qc)
        x0[AUX] = min(r_prev[l, k] / den[l, k] for (l, k) in users)
    else:
        # sum_rate weights; gee has a fixed denominator here, so the sum
        # of surrogate rates is the exact ratio objective up to a constant
        obj = QuadraticForm(layout)
        for (l, k), q in rate_forms.items():
            obj.add(q, w[l, k] if utility.kind == "sum_rate" else 1.0)

    res = solve(ConvexSubproblem(layout, obj, cons), opts, x0=x0)
    if res.status not in ("optimal", "max_iter"):
        return None, res
    return res.variables, res


def project_candidate(ris_prev, sol, slot=None):
    """Projected state built from a relaxed subproblem solution.

    Regular sets keep the phase and restore the exact amplitude law; STAR
    sets renormalize the (reflect, transmit) pair jointly, with the
    orthogonality repair for the phase-coupled set. TSU/TU only clip
    solver slack above the bound.
    """
    cand = ris_prev.copy()
    M = ris_prev.user_side.shape[0]
    for m in range(M):
        if ris_prev.mode == "regular":
            theta = sol[f"th{m}"]
            if ris_prev.set_tag == "TU":
                mag = np.abs(theta)
                cand.theta[m] = np.where(mag > 1.0, theta / np.where(mag > 1.0, mag, 1.0), theta)
            elif ris_prev.set_tag == "TI":
                cand.theta[m] = _project_unit(theta)
            else:
                cand.theta[m] = _project_phase_amplitude(theta, ris_prev.phase_model)
        elif ris_prev.mode == "es":
            tr, tt = sol[f"tr{m}"], sol[f"tt{m}"]
            if ris_prev.set_tag == "TSU":
                power = np.abs(tr) ** 2 + np.abs(tt) ** 2
                scale = np.where(power > 1.0, np.sqrt(np.where(power > 1.0, power, 1.0)), 1.0)
                tr, tt = tr / scale, tt / scale
            else:
                tr, tt = _project_sum_power(tr, tt)
                if ris_prev.set_tag == "TSN":
                    tr, tt = _repair_orthogonality(tr, tt)
            cand.theta_r[m] = tr
            cand.theta_t[m] = tt
        elif ris_prev.mode == "ms":
            sel = ris_prev.ms_partition[m]
            if f"tr{m}" in sol:
                cand.theta_r[m][sel] = _project_unit(sol[f"tr{m}"])
            if f"tt{m}" in sol:
                cand.theta_t[m][~sel] = _project_unit(sol[f"tt{m}"])
        else:  # ts, one slot
            if slot == "r":
                cand.theta_r[m] = _project_unit(sol[f"tr{m}"])
            else:
                cand.theta_t[m] = _project_unit(sol[f"tt{m}"])
    return cand


def _accept(channels, beams, prev, cand, topology, utility, fbl, energy, info=None):
    """Monotone update rule: keep the candidate only if it does not regress."""
    sigma2 = topology.noise_power
    val_prev = utility_value(rate_report(channels, prev, beams.x, sigma2, fbl, energy), utility)
    val_cand = utility_value(rate_report(channels, cand, beams.x, sigma2, fbl, energy), utility)
    accepted = val_cand >= val_prev
    if info is not None:
        info.update(accepted=accepted, value_prev=val_prev, value_cand=val_cand)
    return cand if accepted else prev


# ---- per-set updates -------------------------------------------------------------


def _update_one_shot(channels, beams, ris_prev, topology, utility, fbl, energy, ccp, opts, info):
    sol, res = _solve_theta(channels, beams, ris_prev, topology, utility, fbl, energy, ccp, opts)
    if sol is None:
        return ris_prev
    cand = project_candidate(ris_prev, sol)
    if info is not None and res is not None:
        info.update(kkt_residual=res.kkt_residual, status=res.status)
    return _accept(channels, beams, ris_prev, cand, topology, utility, fbl, energy, info)


def update_tu(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Amplitude-bounded set: the subproblem is exact, no projection needed."""
    return _update_one_shot(
        channels, beams, ris_prev, topology, utility, fbl, energy,
        ccp or CcpOptions(), opts or SolverOptions(), info,
    )


def update_ti(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Unit-modulus set: relaxed subproblem, then per-element normalization."""
    return _update_one_shot(
        channels, beams, ris_prev, topology, utility, fbl, energy,
        ccp or CcpOptions(), opts or SolverOptions(), info,
    )


def update_tc(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Phase-coupled amplitude set: relax the coupling, project via the law."""
    return _update_one_shot(
        channels, beams, ris_prev, topology, utility, fbl, energy,
        ccp or CcpOptions(), opts or SolverOptions(), info,
    )


def update_star_es(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Energy splitting for the three STAR sets.

    TSU is convex (sum-power ball); the sum-power equality sets add the
    linearized floor, a joint renormalization, and for the phase-coupled
    set an orthogonality repair after normalization.
    """
    return _update_one_shot(
        channels, beams, ris_prev, topology, utility, fbl, energy,
        ccp or CcpOptions(), opts or SolverOptions(), info,
    )


def update_star_ms(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Mode switching: each element acts as a unit-modulus reflector or
    transmitter per the fixed partition; the inactive coefficient stays 0."""
    return _update_one_shot(
        channels, beams, ris_prev, topology, utility, fbl, energy,
        ccp or CcpOptions(), opts or SolverOptions(), info,
    )


def update_star_ts(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Time switching: one unit-modulus update per sub-slot, each accepted
    against the global utility."""
    ccp = ccp or CcpOptions()
    opts = opts or SolverOptions()
    L, K = channels.d.shape[:2]
    state = ris_prev
    for slot in ("r", "t"):
        users = [
            (l, k)
            for l in range(L)
            for k in range(K)
            if state.slot_of(l, k) == slot and np.any(state.user_side[:, l, k] == slot)
        ]
        if not users:
            continue
        sol, res = _solve_theta(
            channels, beams, state, topology, utility, fbl, energy, ccp, opts,
            slot=slot, users=users,
        )
        if sol is None:
            continue
        cand = project_candidate(state, sol, slot=slot)
        if info is not None and res is not None:
            info.update(kkt_residual=res.kkt_residual, status=res.status)
        state = _accept(channels, beams, state, cand, topology, utility, fbl, energy, info)
    return state


_DISPATCH = {
    ("regular", "TU"): update_tu,
    ("regular", "TI"): update_ti,
    ("regular", "TC"): update_tc,
    ("es", "TSU"): update_star_es,
    ("es", "TSI"): update_star_es,
    ("es", "TSN"): update_star_es,
    ("ms", "TSI"): update_star_ms,
    ("ms", "TSN"): update_star_ms,
    ("ts", "TSI"): update_star_ts,
    ("ts", "TSN"): update_star_ts,
}


def update_ris(channels, beams, ris_prev, topology, utility, fbl, energy, ccp=None, opts=None, info=None):
    """Dispatch on (mode, feasibility set); never decreases the utility.

    Frozen states (baselines with fixed coefficients) and states covering
    no users are returned unchanged. Any solver failure falls back to the
    previous state.
    """
    if ris_prev.frozen or not np.any(ris_prev.covered_users()):
        return ris_prev
    key = (ris_prev.mode, ris_prev.set_tag)
    if key not in _DISPATCH:
        raise ValueError(f"unsupported mode/set combination: {key}")
    try:
        return _DISPATCH[key](
            channels, beams, ris_prev, topology, utility, fbl, energy, ccp, opts, info
        )
    except np.linalg.LinAlgError as exc:
        log.warning("coefficient update failed (%s); keeping previous state", exc)
        return ris_prev

"""Interior-point solver for concave QCQPs, plus ratio-maximization drivers.

Problems are "maximize q0(v) s.t. q_i(v) >= 0" with every q a concave
QuadraticForm (balls and halfspaces included). The solver is a primal-dual
path-following method on the real embedding: slacks on the inequalities,
Mehrotra predictor-corrector centering, fraction-to-boundary 0.99 step
control. Iterates need not start feasible; an explicit single-slack
phase-1 certifies infeasibility when the direct solve stalls.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .forms import QuadraticForm, VariableLayout

__all__ = [
    "SolverOptions",
    "SolveResult",
    "ConvexSubproblem",
    "solve",
    "DinkelbachState",
    "dinkelbach",
    "generalized_dinkelbach",
]

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class SolverOptions:
    tol: float = 1e-7
    feas_tol: float = 1e-8
    max_iter: int = 50
    ftb: float = 0.99  # fraction-to-boundary factor


@dataclass
class SolveResult:
    v: np.ndarray
    variables: dict
    objective: float
    status: str
    iterations: int
    stat_residual: float
    feas_residual: float
    comp_residual: float

    @property
    def kkt_residual(self):
        return max(self.stat_residual, self.feas_residual, self.comp_residual)


@dataclass
class ConvexSubproblem:
    layout: VariableLayout
    objective: QuadraticForm
    constraints: list

    def dump(self):
        """Plain-text canonical form: block table, then one section per form.

        Lines are ``name: const=...`` followed by indented ``lin``/``diag``
        sparse entries and one ``sq w=... off=...`` line per squared affine
        term, all indexed in real embedding coordinates.
        """
        lines = ["blocks: " + " ".join(f"{n}:{k}{d}" for n, k, d in self.layout.blocks)]
        lines.append(self.objective.dump("objective"))
        for i, con in enumerate(self.constraints):
            lines.append(con.dump(f"constraint[{i}] >= 0"))
        return "\n".join(lines)


class _ConstraintSet:
    """Stacked evaluation of all constraint forms."""

    def __init__(self, forms, n):
        self.m = len(forms)
        self.n = n
        self.const = np.array([f.const for f in forms])
        self.Lin = np.array([f.lin for f in forms]).reshape(self.m, n)
        self.Dmat = np.array([f.diag for f in forms]).reshape(self.m, n)
        rows, weights, offs, owners = [], [], [], []
        for i, f in enumerate(forms):
            R, w, d = f._freeze()
            for j in range(R.shape[0]):
                rows.append(R[j])
                weights.append(w[j])
                offs.append(d[j])
                owners.append(i)
        self.R = np.array(rows).reshape(len(rows), n) if rows else np.zeros((0, n))
        self.w = np.asarray(weights)
        self.off = np.asarray(offs)
        self.owner = np.asarray(owners, dtype=int)
        # scatter matrix: O[i, j] = 1 when row j belongs to constraint i
        self.O = np.zeros((self.m, self.R.shape[0]))
        if rows:
            self.O[self.owner, np.arange(self.R.shape[0])] = 1.0

    def values(self, v):
        out = self.const + self.Lin @ v - self.Dmat @ (v * v)
        if self.R.shape[0]:
            aff = self.R @ v + self.off
            out = out - self.O @ (self.w * aff * aff)
        return out

    def grads(self, v):
        J = self.Lin - 2.0 * self.Dmat * v[None, :]
        if self.R.shape[0]:
            t = self.w * (self.R @ v + self.off)
            J = J - 2.0 * self.O @ (t[:, None] * self.R)
        return J

    def weighted_hess(self, lam):
        """sum_i lam_i * (-Hessian of c_i), PSD for lam >= 0."""
        H = np.diag(2.0 * (lam @ self.Dmat))
        if self.R.shape[0]:
            wl = self.w * lam[self.owner]
            H = H + 2.0 * (self.R.T * wl) @ self.R
        return H


def _max_step(z, dz):
    neg = dz < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-z[neg] / dz[neg])))


def _chol_solve(M, rhs_list):
    n = M.shape[0]
    reg = 1e-12 * (1.0 + float(np.trace(M)) / max(n, 1))
    for _ in range(12):
        try:
            cho = np.linalg.cholesky(M + reg * np.eye(n))
            out = []
            for rhs in rhs_list:
                y = np.linalg.solve(cho, rhs)
                out.append(np.linalg.solve(cho.T, y))
            return out
        except np.linalg.LinAlgError:
            reg *= 100.0
    raise np.linalg.LinAlgError("KKT system could not be factorized")


@np.errstate(over="ignore", invalid="ignore", divide="ignore")
def _ipm(layout, objective, constraints, v0, opts):
    # hopeless (infeasible) problems drive slacks to zero; the resulting
    # overflows surface as a factorization failure, not as warnings
    n = layout.size
    m = len(constraints)
    v = np.array(v0, dtype=float).copy()

    if m == 0:
        # unconstrained concave maximization: one regularized Newton solve
        P = objective.hess_neg()
        (v,) = _chol_solve(P, [objective.lin])
        g = objective.grad(v)
        stat = float(np.abs(g).max(initial=0.0)) / max(1.0, float(np.abs(objective.lin).max(initial=0.0)))
        return SolveResult(
            v=v,
            variables=layout.unpack(v),
            objective=objective.value(v),
            status=OPTIMAL if stat <= opts.tol else MAX_ITER,
            iterations=1,
            stat_residual=stat,
            feas_residual=0.0,
            comp_residual=0.0,
        )

    cons = _ConstraintSet(constraints, n)
    P_obj = objective.hess_neg()

    c = cons.values(v)
    s = np.maximum(c, 1e-2)
    lam = np.ones(m)

    status = MAX_ITER
    it = 0
    for it in range(1, opts.max_iter + 1):
        c = cons.values(v)
        J = cons.grads(v)
        gF = -objective.grad(v)
        r_d = gF - J.T @ lam
        r_p = c - s
        mu = float(s @ lam) / m
        scale = max(1.0, float(np.abs(gF).max(initial=0.0)))
        stat = float(np.abs(r_d).max(initial=0.0)) / scale
        prim = float(np.abs(r_p).max(initial=0.0))
        if stat <= opts.tol and prim <= opts.tol and mu / scale <= opts.tol:
            status = OPTIMAL
            break

        W = P_obj + cons.weighted_hess(lam)
        M = W + J.T @ ((lam / s)[:, None] * J)

        # predictor (sigma = 0)
        rc_aff = s * lam
        rhs_aff = -r_d - J.T @ ((rc_aff + lam * r_p) / s)
        try:
            (dv_aff,) = _chol_solve(M, [rhs_aff])
        except np.linalg.LinAlgError:
            break
        ds_aff = J @ dv_aff + r_p
        dl_aff = -(rc_aff + lam * ds_aff) / s
        a_p = _max_step(s, ds_aff)
        a_d = _max_step(lam, dl_aff)
        mu_aff = float((s + a_p * ds_aff) @ (lam + a_d * dl_aff)) / m
        sigma = min(1.0, max(0.0, mu_aff / mu) ** 3) if mu > 0 else 0.0

        # corrector
        rc = s * lam - sigma * mu + ds_aff * dl_aff
        rhs = -r_d - J.T @ ((rc + lam * r_p) / s)
        try:
            (dv,) = _chol_solve(M, [rhs])
        except np.linalg.LinAlgError:
            break
        ds = J @ dv + r_p
        dl = -(rc + lam * ds) / s

        a_p = min(1.0, opts.ftb * _max_step(s, ds))
        a_d = min(1.0, opts.ftb * _max_step(lam, dl))
        v = v + a_p * dv
        s = s + a_p * ds
        lam = lam + a_d * dl

    c = cons.values(v)
    gF = -objective.grad(v)
    J = cons.grads(v)
    scale = max(1.0, float(np.abs(gF).max(initial=0.0)))
    stat = float(np.abs(gF - J.T @ lam).max(initial=0.0)) / scale
    feas = float(max(0.0, -np.min(c, initial=0.0)))
    comp = float(np.abs(lam * c).max(initial=0.0)) / scale
    if status == OPTIMAL and feas > opts.feas_tol:
        status = MAX_ITER
    return SolveResult(
        v=v,
        variables=layout.unpack(v),
        objective=objective.value(v),
        status=status,
        iterations=it,
        stat_residual=stat,
        feas_residual=feas,
        comp_residual=comp,
    )


def _pad_form(q, new_layout):
    """Re-host a form on a layout that appends blocks to the old one."""
    out = QuadraticForm(new_layout, q.const)
    n_old = q.layout.size
    out.lin[:n_old] = q.lin
    out.diag[:n_old] = q.diag
    for row, w, off in zip(q._rows, q._weights, q._offsets):
        new_row = np.zeros(new_layout.size)
        new_row[:n_old] = row
        out._rows.append(new_row)
        out._weights.append(w)
        out._offsets.append(off)
    return out


def _phase1(problem, v0, opts):
    """Smallest uniform slack making all constraints hold; <= 0 means feasible."""
    ext = problem.layout.with_extra([("phase1_slack", "r", 1)])
    obj = QuadraticForm(ext)
    obj.add_linear_real("phase1_slack", [-1.0])
    cons = []
    for q in problem.constraints:
        qe = _pad_form(q, ext)
        qe.add_linear_real("phase1_slack", [1.0])
        cons.append(qe)
    floor = QuadraticForm(ext, const=1.0)
    floor.add_linear_real("phase1_slack", [1.0])
    cons.append(floor)

    base = _ConstraintSet(problem.constraints, problem.layout.size)
    t0 = max(0.0, -float(np.min(base.values(v0), initial=0.0))) + 1.0
    ve = np.zeros(ext.size)
    ve[: problem.layout.size] = v0
    ve[ext.re_slice("phase1_slack")] = t0
    res = _ipm(ext, obj, cons, ve, opts)
    t_star = float(res.v[ext.re_slice("phase1_slack")][0])
    return res.v[: problem.layout.size].copy(), t_star, res.status


def solve(problem: ConvexSubproblem, opts: SolverOptions = None, x0=None):
    """Solve a concave subproblem; deterministic given inputs.

    ``x0`` may be a packed real vector or a dict of block values; it does
    not need to be feasible.
    """
    opts = opts or SolverOptions()
    if isinstance(x0, dict):
        v0 = problem.layout.pack(x0)
    elif x0 is None:
        v0 = np.zeros(problem.layout.size)
    else:
        v0 = np.asarray(x0, dtype=float)
    res = _ipm(problem.layout, problem.objective, problem.constraints, v0, opts)
    if res.status == OPTIMAL or not problem.constraints:
        return res
    # stalled: certify feasibility before retrying
    v1, t_star, p1_status = _phase1(problem, v0, opts)
    if t_star > 1e-6 and p1_status == OPTIMAL:
        res.status = INFEASIBLE
        return res
    res2 = _ipm(problem.layout, problem.objective, problem.constraints, v1, opts)
    if res2.status == OPTIMAL or res2.kkt_residual < res.kkt_residual:
        return res2
    return res


@dataclass
class DinkelbachState:
    """Ratio parameter trajectory of a (generalized) Dinkelbach run."""

    mu: float = 0.0
    history: list = field(default_factory=list)
    tol: float = 1e-6
    max_iter: int = 30

    def push(self, mu):
        if self.history and mu < self.history[-1] - 1e-12:
            raise AssertionError("ratio parameter decreased")
        self.mu = mu
        self.history.append(mu)


def dinkelbach(numerator, neg_denominator, constraints, layout, x0, opts=None, state=None):
    """Maximize N(v)/D(v) over the constraint set (N concave, D convex > 0).

    ``neg_denominator`` carries -D as a concave form. Each round maximizes
    N - mu*D and updates mu to the achieved ratio; rounds stop when the
    ratio improves by less than ``state.tol``.
    """
    opts = opts or SolverOptions()
    state = state or DinkelbachState()
    v = layout.pack(x0) if isinstance(x0, dict) else np.asarray(x0, dtype=float)

    def ratio(vv):
        den = -neg_denominator.value(vv)
        return numerator.value(vv) / den

    mu = ratio(v)
    if mu < 0.0:
        log.debug("dinkelbach: clamping negative initial ratio %.3e to 0", mu)
        mu = 0.0
    state.push(mu)
    res = None
    for _ in range(state.max_iter):
        obj = numerator.copy()
        obj.add(neg_denominator, mu)
        res = solve(ConvexSubproblem(layout, obj, constraints), opts, x0=v)
        if res.status == INFEASIBLE:
            return res, state
        mu_new = ratio(res.v)
        if mu_new - mu <= state.tol:
            if mu_new > mu:
                state.push(mu_new)
                v = res.v
            break
        v = res.v
        mu = mu_new
        state.push(mu)
    if res is not None:
        res.v = v
        res.variables = layout.unpack(v)
        res.objective = state.mu
    return res, state


def generalized_dinkelbach(
    numerators,
    neg_denominators,
    alphas,
    constraints,
    layout,
    aux_block,
    x0,
    opts=None,
    state=None,
):
    """Maximize min_i N_i(v)/D_i(v) via the parametric max-min form.

    Each round maximizes the auxiliary scalar ``aux_block`` subject to
    N_i - mu*D_i >= alpha_i * aux for all i, then updates mu to the smallest
    achieved ratio. The positive ``alphas`` only weight the subproblem
    direction; the fixed point is the unweighted max-min ratio. The mu
    history is non-decreasing.
    """
    opts = opts or SolverOptions()
    state = state or DinkelbachState()
    v = layout.pack(x0) if isinstance(x0, dict) else np.asarray(x0, dtype=float)
    alphas = np.asarray(alphas, dtype=float).ravel()

    def ratios(vv):
        return np.array(
            [num.value(vv) / (-den.value(vv)) for num, den in zip(numerators, neg_denominators)]
        )

    mu = float(np.min(ratios(v)))
    if mu < 0.0:
        log.debug("generalized dinkelbach: clamping negative initial ratio %.3e", mu)
        mu = 0.0
    state.push(mu)

    obj = QuadraticForm(layout)
    obj.add_linear_real(aux_block, [1.0])

    res = None
    for _ in range(state.max_iter):
        cons = list(constraints)
        for num, den, a in zip(numerators, neg_denominators, alphas):
            g = num.copy()
            g.add(den, mu)
            g.add_linear_real(aux_block, [-a])
            cons.append(g)
        res = solve(ConvexSubproblem(layout, obj, cons), opts, x0=v)
        if res.status == INFEASIBLE:
            return res, state
        mu_new = float(np.min(ratios(res.v)))
        if mu_new - mu <= state.tol:
            if mu_new > mu:
                state.push(mu_new)
                v = res.v
            break
        v = res.v
        mu = mu_new
        state.push(mu)
    if res is not None:
        res.v = v
        res.variables = layout.unpack(v)
        res.objective = state.mu
    return res, state

import numpy as np
import pytest

from risfbl.convex import (
    ConvexSubproblem,
    DinkelbachState,
    SolverOptions,
    dinkelbach,
    generalized_dinkelbach,
    solve,
)
from risfbl.forms import QuadraticForm, VariableLayout


def _ball(layout, radius2, blocks):
    q = QuadraticForm(layout, const=radius2)
    for b in blocks:
        q.add_sq_norm(1.0, b)
    return q


def test_minimize_norm_gives_zero():
    layout = VariableLayout([("x", "c", 3)])
    obj = QuadraticForm(layout)
    obj.add_sq_norm(1.0, "x")
    res = solve(ConvexSubproblem(layout, obj, [_ball(layout, 1.0, ["x"])]))
    assert res.status == "optimal"
    assert abs(res.objective) <= 1e-6
    assert np.max(np.abs(res.variables["x"])) <= 1e-3


def test_linear_over_ball_is_matched_filter(rng):
    # maximize Re{c^H x} over |x|^2 <= p  ->  x = sqrt(p) c / |c|
    layout = VariableLayout([("x", "c", 4)])
    c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    p = 2.5
    obj = QuadraticForm(layout)
    obj.add_linear_complex("x", 0.5 * c)  # value = Re{c^H x}
    res = solve(ConvexSubproblem(layout, obj, [_ball(layout, p, ["x"])]))
    assert res.status == "optimal"
    expect = np.sqrt(p) * c / np.linalg.norm(c)
    assert np.max(np.abs(res.variables["x"] - expect)) <= 1e-5
    assert res.kkt_residual <= 1e-7


def _random_concave_qcqp(rng):
    layout = VariableLayout([("x1", "c", 1), ("x2", "c", 1)])
    obj = QuadraticForm(layout)
    obj.add_linear_complex("x1", rng.standard_normal(1) + 1j * rng.standard_normal(1))
    obj.add_linear_complex("x2", rng.standard_normal(1) + 1j * rng.standard_normal(1))
    for _ in range(2):
        obj.add_sq_affine(
            float(rng.uniform(0.2, 1.5)),
            {
                "x1": rng.standard_normal(1) + 1j * rng.standard_normal(1),
                "x2": rng.standard_normal(1) + 1j * rng.standard_normal(1),
            },
            complex(rng.standard_normal(), rng.standard_normal()) * 0.3,
        )
    cons = [_ball(layout, 1.0, ["x1", "x2"])]
    return ConvexSubproblem(layout, obj, cons)


def grid_search_oracle(problem, half_width=1.0, points_per_dim=33, zoom_levels=3):
    """Pure-enumeration maximizer: coarse grid plus nested local refinement.

    Each zoom keeps the incumbent as a grid point and shrinks the window to
    two grid cells, so the value never regresses and the final resolution
    is a few 1e-4 of the original width.
    """
    n = problem.layout.size
    center = np.zeros(n)
    width = half_width
    best_val, best_v = -np.inf, center
    for _ in range(zoom_levels + 1):
        axes = [np.linspace(c - width, c + width, points_per_dim) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        V = np.stack([m.ravel() for m in mesh], axis=1)
        feas = np.ones(len(V), dtype=bool)
        for con in problem.constraints:
            feas &= con.value_many(V) >= 0
        if np.any(feas):
            vals = problem.objective.value_many(V[feas])
            idx = int(np.argmax(vals))
            if vals[idx] > best_val:
                best_val = float(vals[idx])
                best_v = V[feas][idx]
            center = best_v
        width = 2.0 * (2.0 * width / (points_per_dim - 1))
    return best_val, best_v


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_random_qcqp_matches_grid(seed):
    rng = np.random.default_rng(seed)
    problem = _random_concave_qcqp(rng)
    res = solve(problem)
    assert res.status == "optimal"
    assert res.kkt_residual <= 1e-7
    grid_val, _ = grid_search_oracle(problem)
    assert abs(res.objective - grid_val) <= 1e-3


def test_infeasible_certificate():
    layout = VariableLayout([("t", "r", 1)])
    lo = QuadraticForm(layout, const=-1.0)
    lo.add_linear_real("t", [1.0])  # t >= 1
    hi = QuadraticForm(layout, const=0.0)
    hi.add_linear_real("t", [-1.0])  # t <= 0
    obj = QuadraticForm(layout)
    obj.add_linear_real("t", [1.0])
    res = solve(ConvexSubproblem(layout, obj, [lo, hi]))
    assert res.status == "infeasible"


def test_solver_deterministic(rng):
    problem = _random_concave_qcqp(np.random.default_rng(9))
    a = solve(problem)
    b = solve(problem)
    assert np.array_equal(a.v, b.v)
    assert a.objective == b.objective


def test_objective_scaling_leaves_argmax(rng):
    problem = _random_concave_qcqp(np.random.default_rng(5))
    res1 = solve(problem)
    scaled = ConvexSubproblem(problem.layout, problem.objective.copy().scale(7.0), problem.constraints)
    res2 = solve(scaled)
    assert np.max(np.abs(res1.v - res2.v)) <= 1e-5
    assert abs(res2.objective - 7.0 * res1.objective) <= 1e-4 * max(1.0, abs(res1.objective))


def test_dump_roundtrips_structure():
    problem = _random_concave_qcqp(np.random.default_rng(3))
    text = problem.dump()
    assert "blocks: x1:c1 x2:c1" in text
    assert "objective" in text and "constraint[0]" in text


def _interval_layout():
    layout = VariableLayout([("x", "r", 1)])
    lo = QuadraticForm(layout)
    lo.add_linear_real("x", [1.0])  # x >= 0
    hi = QuadraticForm(layout, const=1.0)
    hi.add_linear_real("x", [-1.0])  # x <= 1
    return layout, [lo, hi]


def test_dinkelbach_scalar_calculus_oracle():
    # maximize x / (1 + x) on [0, 1]: increasing ratio, optimum 1/2 at x = 1
    layout, cons = _interval_layout()
    num = QuadraticForm(layout)
    num.add_linear_real("x", [1.0])
    neg_den = QuadraticForm(layout, const=-1.0)
    neg_den.add_linear_real("x", [-1.0])
    res, state = dinkelbach(num, neg_den, cons, layout, {"x": [0.2]})
    assert abs(res.objective - 0.5) <= 1e-5
    assert abs(res.variables["x"][0] - 1.0) <= 1e-4
    assert np.all(np.diff(state.history) >= -1e-12)


def test_dinkelbach_constant_denominator_is_plain_max():
    layout, cons = _interval_layout()
    num = QuadraticForm(layout)
    num.add_linear_real("x", [3.0])
    num.add_sq_affine_real(2.0, {"x": [1.0]}, -0.2)  # 3x - 2(x-0.2)^2
    neg_den = QuadraticForm(layout, const=-4.0)
    res, state = dinkelbach(num, neg_den, cons, layout, {"x": [0.0]})
    direct = solve(ConvexSubproblem(layout, num, cons))
    assert abs(res.variables["x"][0] - direct.variables["x"][0]) <= 1e-5
    assert abs(res.objective - direct.objective / 4.0) <= 1e-6


def test_dinkelbach_gee_toy_matches_grid():
    # concave-quadratic numerator over affine denominator in one real power
    layout = VariableLayout([("p", "r", 1)])
    lo = QuadraticForm(layout)
    lo.add_linear_real("p", [1.0])
    hi = QuadraticForm(layout, const=4.0)
    hi.add_linear_real("p", [-1.0])
    cons = [lo, hi]
    num = QuadraticForm(layout, const=0.1)
    num.add_linear_real("p", [1.3])
    num.add_sq_affine_real(0.25, {"p": [1.0]})  # 0.1 + 1.3 p - 0.25 p^2
    neg_den = QuadraticForm(layout, const=-0.8)
    neg_den.add_linear_real("p", [-0.5])  # D = 0.8 + 0.5 p
    res, state = dinkelbach(num, neg_den, cons, layout, {"p": [1.0]},
                            state=DinkelbachState(tol=1e-9))
    grid = np.linspace(0.0, 4.0, 1_000_001)
    ratio = (0.1 + 1.3 * grid - 0.25 * grid**2) / (0.8 + 0.5 * grid)
    assert abs(res.objective - ratio.max()) <= 1e-4
    assert np.all(np.diff(state.history) >= -1e-12)


def test_generalized_single_ratio_reduces_to_scalar():
    layout = VariableLayout([("x", "r", 1), ("aux", "r", 1)])
    lo = QuadraticForm(layout)
    lo.add_linear_real("x", [1.0])
    hi = QuadraticForm(layout, const=1.0)
    hi.add_linear_real("x", [-1.0])
    num = QuadraticForm(layout)
    num.add_linear_real("x", [1.0])
    neg_den = QuadraticForm(layout, const=-1.0)
    neg_den.add_linear_real("x", [-1.0])
    res, state = generalized_dinkelbach(
        [num], [neg_den], [1.0], [lo, hi], layout, "aux", {"x": [0.2], "aux": [0.0]}
    )
    assert abs(state.mu - 0.5) <= 1e-5
    assert np.all(np.diff(state.history) >= -1e-12)


def test_generalized_symmetric_users_balance():
    layout = VariableLayout([("x", "r", 2), ("aux", "r", 1)])
    lo1 = QuadraticForm(layout)
    lo1.add_linear_real("x", [1.0, 0.0])
    lo2 = QuadraticForm(layout)
    lo2.add_linear_real("x", [0.0, 1.0])
    budget = QuadraticForm(layout, const=2.0)
    budget.add_linear_real("x", [-1.0, -1.0])  # x1 + x2 <= 2
    cons = [lo1, lo2, budget]
    nums, dens = [], []
    for i in range(2):
        e = [0.0, 0.0]
        e[i] = 1.0
        n = QuadraticForm(layout)
        n.add_linear_real("x", e)
        nums.append(n)
        d = QuadraticForm(layout, const=-1.0)
        d.add_linear_real("x", [-0.5 * v for v in e])
        dens.append(d)
    res, state = generalized_dinkelbach(
        nums, dens, [1.0, 1.0], cons, layout, "aux",
        {"x": [0.5, 0.1], "aux": [0.0]},
    )
    x = res.variables["x"]
    r0 = x[0] / (1 + 0.5 * x[0])
    r1 = x[1] / (1 + 0.5 * x[1])
    assert abs(r0 - r1) <= 1e-3
    assert np.all(np.diff(state.history) >= -1e-12)


def test_generalized_two_user_grid_oracle():
    # max-min of two concave/affine ratios under a shared budget
    layout = VariableLayout([("x", "r", 2), ("aux", "r", 1)])
    lo1 = QuadraticForm(layout)
    lo1.add_linear_real("x", [1.0, 0.0])
    lo2 = QuadraticForm(layout)
    lo2.add_linear_real("x", [0.0, 1.0])
    budget = QuadraticForm(layout, const=3.0)
    budget.add_linear_real("x", [-1.0, -1.0])
    cons = [lo1, lo2, budget]
    nums, dens = [], []
    coefs = [(1.0, 0.2), (1.6, 0.6)]
    for i, (a, b) in enumerate(coefs):
        e = [0.0, 0.0]
        e[i] = 1.0
        n = QuadraticForm(layout)
        n.add_linear_real("x", [a * v for v in e])
        n.add_sq_affine_real(0.1, {"x": e})
        nums.append(n)
        d = QuadraticForm(layout, const=-1.0)
        d.add_linear_real("x", [-b * v for v in e])
        dens.append(d)
    res, state = generalized_dinkelbach(
        nums, dens, [1.0, 1.0], cons, layout, "aux",
        {"x": [1.0, 1.0], "aux": [0.0]}, state=DinkelbachState(tol=1e-9),
    )
    g = np.linspace(0.0, 3.0, 1200)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    feas = X1 + X2 <= 3.0
    r1 = (coefs[0][0] * X1 - 0.1 * X1**2) / (1 + coefs[0][1] * X1)
    r2 = (coefs[1][0] * X2 - 0.1 * X2**2) / (1 + coefs[1][1] * X2)
    best = np.max(np.minimum(r1, r2)[feas])
    assert abs(state.mu - best) <= 1e-3

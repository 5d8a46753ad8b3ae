"""Tests for the convex program IR, backends and the text dump format."""

import math

import numpy as np
import pytest

from droopf.convex import (
    ConvexProgram,
    LinExpr,
    ProgramError,
    UnsupportedProgramError,
    dump_program,
    expand_inf_norm,
    parse_program,
    quad_to_soc,
    solve,
)


def test_min_x_bounded_below():
    p = ConvexProgram()
    x = p.add_var("x")
    p.add_ineq(3.0 - p.x(x))        # x >= 3
    p.add_lin_cost(p.x(x))
    sol = solve(p)
    assert sol.optimal
    assert abs(sol.x[x] - 3.0) < 1e-7
    assert abs(sol.objective - 3.0) < 1e-7


def test_quadratic_min():
    # min x^2 - 2x -> x* = 1, obj -1
    p = ConvexProgram()
    x = p.add_var("x")
    p.add_quad_cost(1.0, p.x(x))
    p.add_lin_cost(p.x(x) * -2.0)
    sol = solve(p)
    assert sol.optimal
    assert abs(sol.x[x] - 1.0) < 1e-6
    assert abs(sol.objective + 1.0) < 1e-8


def test_soc_pythagoras():
    p = ConvexProgram()
    t = p.add_var("t")
    p.add_soc(p.x(t), [LinExpr.constant(3.0), LinExpr.constant(4.0)])
    p.add_lin_cost(p.x(t))
    sol = solve(p)
    assert sol.optimal
    assert abs(sol.objective - 5.0) < 1e-6


def test_infeasible_and_unbounded_status():
    p = ConvexProgram()
    x = p.add_var("x", lb=0.0, ub=1.0)
    p.add_ineq(2.0 - p.x(x))        # x >= 2 contradicts ub
    p.add_lin_cost(p.x(x))
    assert solve(p, "scipy").status == "infeasible"
    assert solve(p, "clarabel").status == "infeasible"

    q = ConvexProgram()
    y = q.add_var("y")
    q.add_lin_cost(q.x(y))
    assert solve(q, "scipy").status == "unbounded"


def test_expand_inf_norm_abs_value():
    # e = (x, -x), t = 1  ->  |x| <= 1
    p = ConvexProgram()
    x = p.add_var("x")
    expand_inf_norm([p.x(x), -p.x(x)], LinExpr.constant(1.0), p)
    assert len(p.ineq_rows) == 4
    p.add_lin_cost(p.x(x) * -1.0)   # maximize x
    sol = solve(p, "scipy")
    assert abs(sol.x[x] - 1.0) < 1e-9


def test_expand_inf_norm_empty():
    p = ConvexProgram()
    t = p.add_var("t")
    expand_inf_norm([], p.x(t), p)
    assert not p.ineq_rows
    p.add_lin_cost(p.x(t))
    assert solve(p, "scipy").status == "unbounded"


def test_expand_inf_norm_zero_h_reduces_to_coef_bound():
    # components  0*sig - a  ->  ||a||_inf <= t
    p = ConvexProgram()
    t = p.add_var("t")
    a = np.array([0.5, -2.0, 1.0])
    expand_inf_norm([LinExpr.constant(-v) for v in a], p.x(t), p)
    p.add_lin_cost(p.x(t))
    sol = solve(p, "scipy")
    assert abs(sol.objective - 2.0) < 1e-9


def test_variable_bound_validation_and_names():
    p = ConvexProgram()
    with pytest.raises(ProgramError):
        p.add_var("x", lb=1.0, ub=0.0)
    with pytest.raises(ProgramError):
        p.add_var("bad name")
    with pytest.raises(ProgramError):
        p.add_quad_cost(-1.0, LinExpr.constant(0.0))
    with pytest.raises(ProgramError):
        p.add_eq(LinExpr({5: 1.0}))   # unknown variable id


def _random_program(rng, n_vars=6):
    p = ConvexProgram()
    for i in range(n_vars):
        lb = -math.inf if rng.random() < 0.4 else float(rng.normal())
        ub = math.inf if rng.random() < 0.4 else lb + abs(rng.normal()) + 0.1
        p.add_var(f"v{i}", lb, ub)

    def rand_expr():
        e = LinExpr(None, float(rng.normal()))
        for vid in rng.choice(n_vars, size=rng.integers(1, n_vars), replace=False):
            e.add_term(int(vid), float(rng.normal()))
        return e

    for _ in range(rng.integers(1, 5)):
        p.add_ineq(rand_expr())
    for _ in range(rng.integers(0, 3)):
        p.add_eq(rand_expr())
    for _ in range(rng.integers(0, 2)):
        p.add_soc(rand_expr(), [rand_expr() for _ in range(rng.integers(1, 4))])
    for _ in range(rng.integers(0, 3)):
        p.add_quad_cost(float(abs(rng.normal())), rand_expr())
    p.add_lin_cost(rand_expr())
    return p


def test_dump_parse_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(25):
        p = _random_program(rng)
        q = parse_program(dump_program(p))
        assert dump_program(q) == dump_program(p)
        assert q.n_vars == p.n_vars
        for vp, vq in zip(p.variables, q.variables):
            assert vp.name == vq.name and vp.lb == vq.lb and vp.ub == vq.ub
        for rp, rq in zip(p.ineq_rows, q.ineq_rows):
            assert rp.const == rq.const
            for vid, c in rp.terms.items():
                assert abs(rq.terms[vid] - c) <= 1e-12
        assert abs(q.obj_lin.const - p.obj_lin.const) <= 1e-12


def test_parse_rejects_garbage():
    with pytest.raises(ProgramError):
        parse_program("nonsense\n")
    with pytest.raises(ProgramError):
        parse_program("convexprogram v1\nfrob 1 2 3\n")
    with pytest.raises(ProgramError):
        parse_program("convexprogram v1\nineq not-a-number\n")


def _random_feasible_lp(rng, n=5, m=6):
    # bounded feasible region around a random interior point
    p = ConvexProgram()
    ids = p.add_vars("x", n, lb=-5.0, ub=5.0)
    x0 = rng.uniform(-1, 1, size=n)
    for _ in range(m):
        a = rng.normal(size=n)
        e = LinExpr(None, 0.0)
        for vid, c in zip(ids, a):
            e.add_term(vid, float(c))
        p.add_ineq(e, ub=float(a @ x0 + abs(rng.normal()) + 0.1))
    cost = LinExpr()
    for vid in ids:
        cost.add_term(vid, float(rng.normal()))
    p.add_lin_cost(cost)
    return p


def test_backend_agreement_lp():
    rng = np.random.default_rng(11)
    for _ in range(15):
        p = _random_feasible_lp(rng)
        a = solve(p, "clarabel")
        b = solve(p, "scipy")
        assert a.optimal and b.optimal
        scale = max(1.0, abs(b.objective))
        assert abs(a.objective - b.objective) / scale < 1e-5


def test_backend_agreement_qp_via_soc_rewrite():
    # scs is flagged quadratic-unsupported, forcing the automatic SOC path
    rng = np.random.default_rng(13)
    for _ in range(5):
        p = ConvexProgram()
        ids = p.add_vars("x", 3, lb=-4.0, ub=4.0)
        target = rng.uniform(-2, 2, size=3)
        for vid, t in zip(ids, target):
            p.add_quad_cost(1.0, p.x(vid) - float(t))
        a = solve(p, "clarabel")
        b = solve(p, "scs")
        assert a.optimal and b.optimal
        assert abs(a.objective - b.objective) < 1e-4
        np.testing.assert_allclose(a.x[:3], b.x[:3], atol=1e-3)


def test_quad_to_soc_matches_native():
    p = ConvexProgram()
    x = p.add_var("x")
    p.add_quad_cost(2.0, p.x(x) - 1.0)
    p.add_lin_cost(p.x(x))
    lifted = quad_to_soc(p)
    assert lifted.obj_quad == [] and lifted.soc_blocks
    a = solve(p, "clarabel")
    b = solve(lifted, "clarabel")
    assert abs(a.objective - b.objective) < 1e-6


def test_scipy_rejects_soc():
    p = ConvexProgram()
    t = p.add_var("t")
    p.add_soc(p.x(t), [LinExpr.constant(1.0)])
    p.add_lin_cost(p.x(t))
    with pytest.raises(UnsupportedProgramError):
        solve(p, "scipy")


def test_objective_scale_leaves_argmin():
    rng = np.random.default_rng(5)
    for _ in range(5):
        target = rng.uniform(-2, 2, size=4)
        sols = []
        for c in (1.0, 7.5):
            p = ConvexProgram()
            ids = p.add_vars("x", 4, lb=-3.0, ub=3.0)
            for vid, t in zip(ids, target):
                p.add_quad_cost(c, p.x(vid) - float(t))
            s = solve(p, "clarabel")
            assert s.optimal
            sols.append(s)
        np.testing.assert_allclose(sols[0].x, sols[1].x, atol=1e-6)
        assert abs(sols[1].objective - 7.5 * sols[0].objective) < 1e-6


def test_recheck_residual_reported():
    p = ConvexProgram()
    x = p.add_var("x", lb=0.0)
    p.add_eq(p.x(x) - 2.0)
    p.add_lin_cost(p.x(x))
    sol = solve(p, "scipy")
    assert sol.optimal
    assert sol.max_residual is not None and sol.max_residual <= 1e-6
    # objective recomputed from the IR, not taken from the backend
    assert sol.objective == pytest.approx(p.objective_value(sol.x))


def test_duals_sign_convention():
    # min x s.t. 3 - x <= 0 : multiplier of the binding row is 1
    p = ConvexProgram()
    x = p.add_var("x")
    p.add_ineq(3.0 - p.x(x))
    p.add_lin_cost(p.x(x))
    for backend in ("scipy", "clarabel"):
        sol = solve(p, backend)
        assert sol.duals["ineq"][0] == pytest.approx(1.0, abs=1e-6)

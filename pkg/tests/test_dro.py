"""Tests for the Wasserstein worst-case / CVaR machinery.

Expected values are frozen from independent oracles: brute-force grids over
the CVaR threshold, closed-form duals for unbounded 1-D supports, and the
explicit transport LP.
"""

import numpy as np
import pytest

from droopf.convex import ConvexProgram, LinExpr, solve
from droopf.dro import (
    AmbiguitySet,
    ConstructionError,
    MaxAffineLoss,
    ParameterDomainError,
    SampleSet,
    SupportPolytope,
    box_grid,
    cvar_to_max_affine,
    empirical_max_affine_mean,
    saa_cvar_constraint,
    transport_lp_oracle,
    wc_expectation_epigraph,
    wc_expectation_value,
)

RELU = MaxAffineLoss.from_arrays([[1.0], [0.0]], [0.0, 0.0])   # max(xi, 0)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def test_sample_set_validation():
    with pytest.raises(ConstructionError):
        SampleSet(np.zeros((0, 1)))
    with pytest.raises(ConstructionError):
        SampleSet(np.array([[np.nan]]))
    s = SampleSet(np.array([1.0, 2.0]))      # 1-D coerced to one sample? no: row
    assert s.samples.shape == (1, 2)


def test_sample_set_csv_round_trip(tmp_path):
    s = SampleSet(np.array([[0.25, -1.5], [3.0, 0.125]]), ("a", "b"))
    path = tmp_path / "samples.csv"
    s.to_csv(path)
    back = SampleSet.from_csv(path)
    np.testing.assert_array_equal(back.samples, s.samples)
    assert back.names == ("a", "b")


def test_support_polytope_text_round_trip():
    sup = SupportPolytope.from_text("1 0 <= 2\n-1 0 <= 2\n0 1 <= 0.5\n")
    assert sup.n_rows == 3
    again = SupportPolytope.from_text(sup.to_text())
    np.testing.assert_array_equal(again.h, sup.h)
    np.testing.assert_array_equal(again.d, sup.d)
    with pytest.raises(ConstructionError):
        SupportPolytope.from_text("1 0 2\n")


def test_ambiguity_set_checks_support_membership():
    sup = SupportPolytope.box([-1.0], [1.0])
    with pytest.raises(ConstructionError):
        AmbiguitySet.from_samples([[2.0]], radius=0.1, support=sup)
    # boundary sample allowed within 1e-9 slack
    AmbiguitySet.from_samples([[1.0 + 5e-10]], radius=0.1, support=sup)
    with pytest.raises(ParameterDomainError):
        AmbiguitySet.from_samples([[0.0]], radius=-0.5)


def test_unbounded_support_encoding():
    sup = SupportPolytope.unbounded(3)
    assert sup.is_unbounded() and sup.n_rows == 0
    assert sup.contains(np.array([[1e9, -1e9, 0.0]]))


# ---------------------------------------------------------------------------
# cvar_to_max_affine
# ---------------------------------------------------------------------------

def _brute_cvar(values, eta, kappas=None):
    # min over kappa of mean(max(kappa + (g-kappa)/eta, kappa))
    values = np.asarray(values, dtype=float)
    if kappas is None:
        lo, hi = values.min() - 1.0, values.max() + 1.0
        kappas = np.linspace(lo, hi, 20001)
    best = np.inf
    for k in kappas:
        best = min(best, np.mean(np.maximum(k + (values - k) / eta, k)))
    return best


def test_cvar_level_one_is_mean():
    # pieces max(xi, kappa); optimizing kappa recovers E[xi]
    samples = np.array([[0.3], [-1.2], [2.0]])
    best = np.inf
    for kap in np.linspace(-10, 3, 5001):
        loss = cvar_to_max_affine([1.0], 0.0, 1.0, kap)
        a, b = loss.numeric_arrays()
        np.testing.assert_allclose(a[:, 0], [1.0, 0.0])
        best = min(best, empirical_max_affine_mean(loss, samples))
    assert best == pytest.approx(samples.mean(), abs=1e-4)


def test_cvar_half_level_worked_example():
    # g(xi) = xi - 2, eta = 0.5, samples {1, 3}: worst half of {-1, 1} -> 1
    samples = np.array([[1.0], [3.0]])
    best = np.inf
    for kap in np.linspace(-5, 5, 10001):
        loss = cvar_to_max_affine([1.0], -2.0, 0.5, kap)
        best = min(best, empirical_max_affine_mean(loss, samples))
    assert best == pytest.approx(1.0, abs=1e-6)
    assert best == pytest.approx(_brute_cvar(samples.ravel() - 2.0, 0.5), abs=1e-9)


def test_cvar_one_percent_amplifies_slope():
    loss = cvar_to_max_affine([0.7], -1.05, 0.01, 0.0)
    a, _ = loss.numeric_arrays()
    assert a[0, 0] == pytest.approx(70.0)    # 100x amplification of the slope
    assert a[1, 0] == 0.0


def test_cvar_piece_coefficients_affine_in_kappa():
    p = ConvexProgram()
    kap = p.x(p.add_var("kappa"))
    loss = cvar_to_max_affine([2.0], 0.5, 0.2, kap)
    a1, b1 = loss.pieces[0]
    assert a1[0] == pytest.approx(10.0)
    assert isinstance(b1, LinExpr) and b1.terms  # carries the kappa term
    assert b1.terms[0] == pytest.approx(1.0 - 5.0)


def test_cvar_rejects_bad_level():
    for eta in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterDomainError):
            cvar_to_max_affine([1.0], 0.0, eta, 0.0)


def test_optimized_cvar_monotone_in_level():
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(40, 1))
    vals = []
    for eta in (0.05, 0.2, 0.5, 1.0):
        vals.append(_brute_cvar(samples.ravel(), eta))
    assert all(vals[i] >= vals[i + 1] - 1e-9 for i in range(len(vals) - 1))


# ---------------------------------------------------------------------------
# worst-case expectation
# ---------------------------------------------------------------------------

def test_wc_value_unbounded_relu():
    amb = AmbiguitySet.from_samples([[-1.0], [1.0]], radius=0.1)
    assert wc_expectation_value(RELU, amb) == pytest.approx(0.6, abs=1e-8)


def test_wc_value_zero_radius_is_sample_average():
    amb = AmbiguitySet.from_samples([[-1.0], [1.0]], radius=0.0)
    assert wc_expectation_value(RELU, amb) == pytest.approx(0.5, abs=1e-9)


def test_wc_value_constant_loss():
    loss = MaxAffineLoss.from_arrays([[0.0, 0.0]], [3.0])
    amb = AmbiguitySet.from_samples(np.zeros((4, 2)), radius=2.0)
    assert wc_expectation_value(loss, amb) == pytest.approx(3.0, abs=1e-9)


def test_wc_value_mass_pushed_to_boundary():
    sup = SupportPolytope.box([-1.0], [1.0])
    amb = AmbiguitySet.from_samples([[0.0]], radius=10.0, support=sup)
    lin = MaxAffineLoss.from_arrays([[1.0]], [0.0])
    assert wc_expectation_value(lin, amb) == pytest.approx(1.0, abs=1e-6)


def test_wc_epigraph_zero_rho_vanishes():
    prog = ConvexProgram()
    amb = AmbiguitySet.from_samples([[-1.0], [1.0]], radius=0.1)
    cert = wc_expectation_epigraph(RELU, amb, 0.0, prog)
    prog.add_lin_cost(cert.objective_term)
    sol = solve(prog, "scipy")
    assert sol.optimal and abs(sol.objective) < 1e-12
    assert cert.worst_case_value(sol.x) is None


def test_wc_epigraph_rho_scales_term():
    for rho in (0.5, 1.0, 7.0):
        prog = ConvexProgram()
        amb = AmbiguitySet.from_samples([[-1.0], [1.0]], radius=0.1)
        cert = wc_expectation_epigraph(RELU, amb, rho, prog)
        prog.add_lin_cost(cert.objective_term)
        sol = solve(prog, "scipy")
        assert sol.objective == pytest.approx(rho * 0.6, abs=1e-8)
        assert cert.worst_case_value(sol.x) == pytest.approx(0.6, abs=1e-8)


def test_wc_epigraph_dimension_mismatch():
    prog = ConvexProgram()
    amb = AmbiguitySet.from_samples(np.zeros((3, 2)), radius=0.1)
    with pytest.raises(ConstructionError):
        wc_expectation_epigraph(RELU, amb, 1.0, prog)


def test_wc_value_monotone_in_radius_with_lipschitz_increment():
    rng = np.random.default_rng(21)
    for _ in range(10):
        k, d, n = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 6)
        a = rng.normal(size=(k, d))
        loss = MaxAffineLoss.from_arrays(a, rng.normal(size=k))
        xs = rng.normal(size=(n, d))
        radii = [0.0, 0.05, 0.2, 0.7]
        lip = np.abs(a).max()
        vals = [wc_expectation_value(loss, AmbiguitySet.from_samples(xs, r))
                for r in radii]
        for (r0, v0), (r1, v1) in zip(zip(radii, vals), zip(radii[1:], vals[1:])):
            assert v1 >= v0 - 1e-9
            assert v1 - v0 <= (r1 - r0) * lip + 1e-8


def test_saa_reduction_many_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(100):
        k, d, n = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 8)
        loss = MaxAffineLoss.from_arrays(rng.normal(size=(k, d)), rng.normal(size=k))
        xs = rng.normal(size=(n, d))
        amb = AmbiguitySet.from_samples(xs, 0.0)
        assert wc_expectation_value(loss, amb) == pytest.approx(
            empirical_max_affine_mean(loss, xs), abs=1e-9)


def test_certificate_rows_feasible_at_solution():
    rng = np.random.default_rng(9)
    sup = SupportPolytope.box([-2.0, -2.0], [2.0, 2.0])
    xs = rng.uniform(-1.5, 1.5, size=(4, 2))
    amb = AmbiguitySet.from_samples(xs, 0.3, support=sup)
    loss = MaxAffineLoss.from_arrays(rng.normal(size=(3, 2)), rng.normal(size=3))
    prog = ConvexProgram()
    cert = wc_expectation_epigraph(loss, amb, 1.0, prog)
    prog.add_lin_cost(cert.objective_term)
    sol = solve(prog, "clarabel")
    assert sol.optimal
    assert prog.max_residual(sol.x) <= 1e-6
    assert sol.x[cert.lam] >= -1e-9
    if cert.sigma is not None:
        assert np.all(sol.x[cert.sigma.ravel()] >= -1e-9)


def test_single_sample_pure_robustness():
    # N_s = 1 stays valid: ball around one sample
    amb = AmbiguitySet.from_samples([[0.5]], radius=0.25)
    lin = MaxAffineLoss.from_arrays([[1.0]], [0.0])
    assert wc_expectation_value(lin, amb) == pytest.approx(0.75, abs=1e-9)


# ---------------------------------------------------------------------------
# SAA CVaR constraint
# ---------------------------------------------------------------------------

def _saa_feasible(g_values, beta):
    prog = ConvexProgram()
    varpi = prog.x(prog.add_var("varpi"))
    saa_cvar_constraint([LinExpr.constant(v) for v in g_values], beta, varpi, prog)
    return solve(prog, "scipy").optimal


def brute_force_cvar(values, beta):
    # exact SAA CVaR: epigraph objective is piecewise linear with sample breakpoints
    values = np.asarray(values, dtype=float)
    cands = np.unique(values)
    return min(t + np.mean(np.maximum(values - t, 0.0)) / beta for t in cands)


def test_saa_cvar_worked_examples():
    assert _saa_feasible([-2.0, -2.0, -2.0, -1.0], 0.25)       # CVaR = -1
    assert not _saa_feasible([-2.0, -2.0, -2.0, 1.0], 0.25)    # CVaR = +1
    assert _saa_feasible([0.0, 0.0, 0.0], 0.1)                 # boundary case


def test_saa_cvar_matches_brute_force():
    rng = np.random.default_rng(17)
    for _ in range(60):
        n = int(rng.integers(2, 12))
        g = rng.normal(size=n) * rng.uniform(0.5, 3.0)
        beta = float(rng.choice([0.01, 0.1, 0.25, 0.6]))
        cv = brute_force_cvar(g, beta)
        if abs(cv) <= 1e-6:
            continue
        assert _saa_feasible(g, beta) == (cv <= 0)


def test_saa_cvar_rejects_bad_beta():
    prog = ConvexProgram()
    varpi = prog.x(prog.add_var("varpi"))
    for beta in (0.0, 1.2, -0.3):
        with pytest.raises(ParameterDomainError):
            saa_cvar_constraint([LinExpr.constant(0.0)], beta, varpi, prog)


# ---------------------------------------------------------------------------
# transport LP oracle
# ---------------------------------------------------------------------------

def test_oracle_zero_radius_is_identity_plan():
    xs = np.array([[0.25], [-0.5], [0.75]])
    sup = SupportPolytope.box([-1.0], [1.0])
    amb = AmbiguitySet.from_samples(xs, 0.0, support=sup)
    grid = box_grid([-1.0], [1.0], 0.25)   # grid contains the samples
    val = transport_lp_oracle(RELU, amb, grid)
    assert val == pytest.approx(empirical_max_affine_mean(RELU, xs), abs=1e-9)


def test_oracle_single_sample_moves_budget():
    sup = SupportPolytope.box([-1.0], [1.0])
    amb = AmbiguitySet.from_samples([[0.0]], radius=0.3, support=sup)
    lin = MaxAffineLoss.from_arrays([[1.0]], [0.0])
    val = transport_lp_oracle(lin, amb, box_grid([-1.0], [1.0], 0.01))
    assert val == pytest.approx(0.3, abs=1e-9)


def test_oracle_weak_duality_random_2d():
    rng = np.random.default_rng(33)
    grid = box_grid([-1.0, -1.0], [1.0, 1.0], 0.05)
    sup = SupportPolytope.box([-1.0, -1.0], [1.0, 1.0])
    for _ in range(10):
        n = int(rng.integers(1, 6))
        xs = rng.uniform(-0.9, 0.9, size=(n, 2))
        loss = MaxAffineLoss.from_arrays(rng.normal(size=(2, 2)), rng.normal(size=2))
        amb = AmbiguitySet.from_samples(xs, float(rng.uniform(0, 0.5)), support=sup)
        lo = transport_lp_oracle(loss, amb, grid)
        hi = wc_expectation_value(loss, amb)
        assert lo <= hi + 1e-4


def test_oracle_gap_shrinks_under_refinement():
    rng = np.random.default_rng(8)
    sup = SupportPolytope.box([-1.0], [1.0])
    xs = rng.uniform(-0.8, 0.8, size=(3, 1))
    loss = MaxAffineLoss.from_arrays([[1.3], [-0.4]], [0.0, 0.2])
    amb = AmbiguitySet.from_samples(xs, 0.25, support=sup)
    hi = wc_expectation_value(loss, amb)
    gaps = []
    for step in (0.2, 0.05, 0.01):
        lo = transport_lp_oracle(loss, amb, box_grid([-1.0], [1.0], step))
        gaps.append(hi - lo)
        assert lo <= hi + 1e-6
    assert gaps[-1] <= gaps[0] + 1e-9
    assert gaps[-1] < 2e-2


def test_oracle_rejects_empty_grid():
    amb = AmbiguitySet.from_samples([[0.0]], radius=0.1,
                                    support=SupportPolytope.box([-1.0], [1.0]))
    with pytest.raises(ConstructionError):
        transport_lp_oracle(RELU, amb, np.zeros((0, 1)))

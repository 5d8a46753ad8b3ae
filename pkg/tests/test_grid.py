"""Tests for feeder sensitivities, DC power flow, PTDF/LODF and outages."""

import numpy as np
import pytest

from droopf.devices import FixedLoad, ThermalGenerator, WindFarm
from droopf.grid import (
    DistributionFeeder,
    FeederLine,
    LODF_MAGNITUDE_BOUND,
    Outage,
    TopologyError,
    TransLine,
    TransmissionGrid,
    dc_flows,
    enumerate_outages,
    lindistflow_sensitivities,
    lodf_postflows,
    mismatch_power,
    ptdf_matrix,
    voltage_profile,
)


# ---------------------------------------------------------------------------
# feeder sensitivities
# ---------------------------------------------------------------------------

def test_two_bus_feeder_sensitivity():
    lines = [FeederLine(0, 1, r=0.01, x=0.005)]
    feeder = DistributionFeeder(2, lines)
    v = voltage_profile(feeder, np.zeros(2), np.zeros(2))
    np.testing.assert_allclose(v, feeder.v0)
    p = np.array([0.0, 0.1])
    v = voltage_profile(feeder, p, np.zeros(2))
    assert v[1] == pytest.approx(1.0 + 2 * 0.01 * 0.1)   # v0 + 0.002


def test_series_far_bus_shares_near_path():
    # slack - 1 - 2 chain: sensitivity of bus 2 to injection at bus 1
    # equals bus 1 self-sensitivity (common path is the first line)
    lines = [FeederLine(0, 1, 0.02, 0.01), FeederLine(1, 2, 0.03, 0.015)]
    r_v, x_v = lindistflow_sensitivities(3, lines, slack=0)
    assert r_v[2, 1] == pytest.approx(r_v[1, 1])
    assert r_v[2, 2] == pytest.approx(2 * (0.02 + 0.03))
    assert x_v[2, 1] == pytest.approx(x_v[1, 1])


def test_sensitivity_symmetry_random_trees():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(3, 15))
        lines = [FeederLine(int(rng.integers(0, b)), b,
                            float(rng.uniform(0.005, 0.05)),
                            float(rng.uniform(0.005, 0.05)))
                 for b in range(1, n)]
        r_v, x_v = lindistflow_sensitivities(n, lines, 0)
        np.testing.assert_allclose(r_v, r_v.T)
        np.testing.assert_allclose(x_v, x_v.T)
        # PSD: common-path Gram matrices have nonnegative eigenvalues
        assert np.linalg.eigvalsh(r_v).min() > -1e-12


def _voltage_by_flow_recursion(n, lines, p):
    """Independent LinDistFlow oracle: accumulate downstream flows, then
    apply the 2*r*flow drop along each line from the slack outward."""
    children = {b: [] for b in range(n)}
    parent_line = {}
    for idx, ln in enumerate(lines):
        children[ln.f].append(ln.t)
        parent_line[ln.t] = (ln.f, idx)
    subtree = np.array(p, dtype=float)
    order = []
    stack = [0]
    while stack:
        b = stack.pop()
        order.append(b)
        stack.extend(children[b])
    for b in reversed(order):
        for c in children[b]:
            subtree[b] += subtree[c]
    v = np.ones(n)
    for b in order:
        if b == 0:
            continue
        par, idx = parent_line[b]
        v[b] = v[par] + 2 * lines[idx].r * subtree[b]
    return v


def test_sensitivities_match_flow_recursion_oracle():
    rng = np.random.default_rng(12)
    for _ in range(8):
        n = int(rng.integers(3, 12))
        lines = [FeederLine(int(rng.integers(0, b)), b,
                            float(rng.uniform(0.005, 0.05)), 0.0)
                 for b in range(1, n)]
        feeder = DistributionFeeder(n, lines)
        p = rng.normal(scale=0.1, size=n)
        p[0] = 0.0
        v_matrix = voltage_profile(feeder, p, np.zeros(n))
        v_oracle = _voltage_by_flow_recursion(n, lines, p)
        np.testing.assert_allclose(v_matrix, v_oracle, atol=1e-12)


def test_voltage_superposition():
    lines = [FeederLine(0, 1, 0.02, 0.01), FeederLine(1, 2, 0.01, 0.02)]
    feeder = DistributionFeeder(3, lines)
    rng = np.random.default_rng(2)
    p1, p2 = rng.normal(size=3), rng.normal(size=3)
    lhs = voltage_profile(feeder, p1 + p2, np.zeros(3)) - feeder.v0
    rhs = (voltage_profile(feeder, p1, np.zeros(3)) - feeder.v0) \
        + (voltage_profile(feeder, p2, np.zeros(3)) - feeder.v0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_heavy_injection_flags_overvoltage():
    # strong PV injection at the feeder end pushes v above 1.05
    lines = [FeederLine(i, i + 1, 0.02, 0.01) for i in range(5)]
    feeder = DistributionFeeder(6, lines)
    p = np.zeros(6)
    p[5] = 0.3
    v = voltage_profile(feeder, p, np.zeros(6))
    assert v[5] > feeder.vmax


def test_non_radial_feeder_rejected():
    with pytest.raises(TopologyError):
        lindistflow_sensitivities(3, [FeederLine(0, 1, 0.01, 0.01),
                                      FeederLine(1, 2, 0.01, 0.01),
                                      FeederLine(0, 2, 0.01, 0.01)], 0)
    with pytest.raises(TopologyError):
        # right line count but disconnected (cycle + orphan)
        lindistflow_sensitivities(4, [FeederLine(0, 1, 0.01, 0.01),
                                      FeederLine(2, 3, 0.01, 0.01),
                                      FeederLine(3, 2, 0.01, 0.01)], 0)


# ---------------------------------------------------------------------------
# PTDF
# ---------------------------------------------------------------------------

RING3 = [TransLine(0, 2, x=0.1, limit=100.0),
         TransLine(0, 1, x=0.1, limit=100.0),
         TransLine(1, 2, x=0.1, limit=100.0)]


def test_ptdf_three_bus_ring_split():
    # inject 1 MW at bus 0, withdraw at bus 2 (slack): 2/3 direct, 1/3 two-hop
    grid = TransmissionGrid(3, RING3, slack=2)
    inj = np.array([1.0, 0.0, -1.0])
    flows = grid.line_flows(inj)
    assert flows[0] == pytest.approx(2.0 / 3.0)       # direct 0->2
    assert flows[1] == pytest.approx(1.0 / 3.0)       # 0->1
    assert flows[2] == pytest.approx(1.0 / 3.0)       # 1->2


def test_ptdf_slack_only_injection_zero_flows():
    grid = TransmissionGrid(3, RING3, slack=2)
    flows = grid.line_flows(np.array([0.0, 0.0, 5.0]))
    np.testing.assert_allclose(flows, 0.0, atol=1e-12)


def test_ptdf_uniform_shift_changes_no_flow():
    grid = TransmissionGrid(3, RING3, slack=2)
    rng = np.random.default_rng(1)
    p = rng.normal(size=3)
    f0 = grid.line_flows(p, balance="uniform")
    f1 = grid.line_flows(p + 17.0, balance="uniform")
    np.testing.assert_allclose(f0, f1, atol=1e-12)


def test_ptdf_matches_dc_solve_on_balanced_injections():
    rng = np.random.default_rng(6)
    lines = RING3 + [TransLine(1, 3, 0.2, 100.0), TransLine(2, 3, 0.15, 100.0),
                     TransLine(0, 3, 0.12, 100.0)]
    grid = TransmissionGrid(4, lines, slack=0)
    for _ in range(20):
        p = rng.normal(size=4)
        p[0] -= p.sum()                      # balance at the slack
        np.testing.assert_allclose(grid.line_flows(p),
                                   dc_flows(4, lines, 0, p), atol=1e-8)


def test_disconnected_grid_rejected():
    with pytest.raises(TopologyError):
        TransmissionGrid(4, RING3, slack=0)


# ---------------------------------------------------------------------------
# LODF
# ---------------------------------------------------------------------------

def test_lodf_zero_flow_outage_changes_nothing():
    grid = TransmissionGrid(3, RING3, slack=2)
    base = grid.line_flows(np.zeros(3))
    post = lodf_postflows(grid, base, 1)
    np.testing.assert_allclose(post, 0.0, atol=1e-12)


def test_lodf_ring_outage_moves_full_transfer():
    grid = TransmissionGrid(3, RING3, slack=2)
    base = grid.line_flows(np.array([1.0, 0.0, -1.0]))
    post = lodf_postflows(grid, base, 0)      # trip the direct 0->2 line
    assert post[0] == pytest.approx(0.0)
    assert post[1] == pytest.approx(1.0)
    assert post[2] == pytest.approx(1.0)


def test_lodf_parallel_twin_doubles():
    lines = [TransLine(0, 1, 0.1, 100.0), TransLine(0, 1, 0.1, 100.0)]
    grid = TransmissionGrid(2, lines, slack=1)
    base = grid.line_flows(np.array([2.0, -2.0]))
    np.testing.assert_allclose(base, [1.0, 1.0])
    post = lodf_postflows(grid, base, 0)
    assert post[1] == pytest.approx(2.0)


def test_lodf_matches_fresh_resolve_random_grids():
    rng = np.random.default_rng(10)
    for _ in range(6):
        n = int(rng.integers(4, 9))
        lines = [TransLine(b - 1, b, float(rng.uniform(0.05, 0.3)), 100.0)
                 for b in range(1, n)]
        for _ in range(n):
            f, t = rng.choice(n, size=2, replace=False)
            lines.append(TransLine(int(f), int(t), float(rng.uniform(0.05, 0.3)), 100.0))
        grid = TransmissionGrid(n, lines, slack=0)
        p = rng.normal(size=n)
        p[0] -= p.sum()
        base = grid.line_flows(p)
        for j in range(grid.n_lines):
            if grid.islanding[j]:
                continue
            post = lodf_postflows(grid, base, j)
            fresh = dc_flows(n, lines, 0, p, skip_line=j)
            np.testing.assert_allclose(post, fresh, atol=1e-8)
            col = grid.lodf[:, j]
            assert np.nanmax(np.abs(col)) <= LODF_MAGNITUDE_BOUND


def test_lodf_islanding_line_refused():
    lines = [TransLine(0, 1, 0.1, 100.0), TransLine(1, 2, 0.1, 100.0),
             TransLine(0, 2, 0.1, 100.0), TransLine(2, 3, 0.1, 100.0)]
    grid = TransmissionGrid(4, lines, slack=0)
    assert grid.islanding[3]
    with pytest.raises(TopologyError, match="catalog"):
        lodf_postflows(grid, np.zeros(4), 3)


# ---------------------------------------------------------------------------
# outages
# ---------------------------------------------------------------------------

def _stub_system():
    lines = [TransLine(0, 1, 0.1, 100.0), TransLine(1, 2, 0.1, 100.0),
             TransLine(0, 2, 0.1, 100.0), TransLine(2, 3, 0.1, 100.0)]
    grid = TransmissionGrid(4, lines, slack=0)
    gens = [ThermalGenerator(bus=0, c1=0.1, c2=5.0, p_nom_mw=300.0,
                             outage_eligible=True),
            ThermalGenerator(bus=1, c1=0.1, c2=8.0, p_nom_mw=100.0,
                             outage_eligible=True)]
    loads = [FixedLoad(bus=2, p_mw=120.0, outage_eligible=True),
             FixedLoad(bus=3, p_mw=50.0, outage_eligible=True),
             FixedLoad(bus=1, p_mw=30.0, outage_eligible=True)]
    return grid, gens, loads


def test_outage_catalog_count():
    grid, gens, loads = _stub_system()
    catalog = enumerate_outages(grid, gens=gens, loads=loads)
    # 2 gens + 3 loads + 4 lines -> 9 outages + base case
    assert len(catalog) == 10
    assert catalog[0].kind == "none" and catalog[0].p_mis == 0.0


def test_stub_line_outage_loses_load():
    grid, gens, loads = _stub_system()
    catalog = enumerate_outages(grid, gens=gens, loads=loads)
    stub = [o for o in catalog if o.kind == "line" and o.islanding]
    assert len(stub) == 1
    assert stub[0].lost_loads == (1,)         # the 50 MW load at bus 3
    assert stub[0].p_mis == pytest.approx(50.0)


def test_generator_outage_mismatch_sign():
    grid, gens, loads = _stub_system()
    catalog = enumerate_outages(grid, gens=gens, loads=loads)
    gen_out = [o for o in catalog if o.kind == "gen" and o.element == 0][0]
    assert gen_out.p_mis == pytest.approx(-300.0)
    load_out = [o for o in catalog if o.kind == "load" and o.element == 1][0]
    assert load_out.p_mis == pytest.approx(50.0)


def test_mismatch_rule_exhaustive():
    grid, gens, loads = _stub_system()
    winds = [WindFarm(bus=1, p_forecast_mw=80.0, err=0)]
    catalog = enumerate_outages(grid, gens=gens, winds=winds, loads=loads)
    for o in catalog:
        assert o.p_mis == mismatch_power(o.kind, o.p_gone_gen, o.p_gone_load)
        if o.kind == "none":
            assert o.p_mis == 0.0
        elif o.kind == "line" and not o.islanding:
            assert o.p_mis == 0.0
    # winds are never tripped directly
    assert not any(o.kind == "gen" and o.lost_winds for o in catalog)


def test_non_islanding_line_outages_have_zero_mismatch():
    grid, gens, loads = _stub_system()
    catalog = enumerate_outages(grid, gens=gens, loads=loads)
    for o in catalog:
        if o.kind == "line" and not o.islanding:
            assert o.p_mis == 0.0 and not o.lost_loads and not o.lost_gens

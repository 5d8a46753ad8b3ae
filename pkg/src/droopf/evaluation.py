"""Out-of-sample Monte Carlo evaluation, tradeoff sweeps, error generators."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .assembly import (
    AssemblyConfig,
    DistStageData,
    PolicyDecision,
    assemble_distribution_opf,
    assemble_transmission_opf,
    extract_policy,
)
from .convex import solve
from .devices import generator_output
from .dro import AmbiguitySet, ParameterDomainError, SampleSet
from .grid import voltage_profile

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# empirical risk helpers
# ---------------------------------------------------------------------------

def empirical_var(values, eta: float) -> float:
    """Empirical value at risk: the ceil(N*eta)-th largest outcome."""
    if not 0.0 < eta <= 1.0:
        raise ParameterDomainError(f"eta must lie in (0, 1], got {eta}")
    values = np.sort(np.asarray(values, dtype=float))[::-1]
    m = int(np.ceil(values.size * eta))
    return float(values[m - 1])


def empirical_cvar(values, eta: float) -> float:
    """Empirical CVaR by sorting; equals min_t t + mean[(x-t)+]/eta."""
    values = np.asarray(values, dtype=float)
    t = empirical_var(values, eta)
    return float(t + np.mean(np.maximum(values - t, 0.0)) / eta)


# ---------------------------------------------------------------------------
# forecast-error generators
# ---------------------------------------------------------------------------

def persistence_errors(series, target_std=None) -> SampleSet:
    """Persistence-forecast residuals e_t = x_{t+1} - x_t, centered to zero
    mean, optionally rescaled column-wise to the given standard deviations."""
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise ParameterDomainError("need a series of length >= 2")
    errs = np.diff(arr, axis=0)
    errs = errs - errs.mean(axis=0)
    if target_std is not None:
        target = np.broadcast_to(np.asarray(target_std, dtype=float),
                                 (errs.shape[1],))
        sd = errs.std(axis=0)
        for j in range(errs.shape[1]):
            if sd[j] > 0:
                errs[:, j] *= target[j] / sd[j]
            elif target[j] != 0:
                log.warning("persistence errors: column %d is constant; "
                            "cannot rescale to std %g", j, target[j])
    if np.allclose(errs, 0.0):
        log.warning("persistence errors: constant series produced a "
                    "zero-error sample set")
    return SampleSet(errs)


def synth_errors(count: int, dim: int, std=1.0, family: str = "student_t",
                 df: float = 5.0, seed: int = 0) -> SampleSet:
    """Seeded heavy-tailed error generator (scaled Student-t family).

    The t draws are scaled by std*sqrt((df-2)/df) so the population standard
    deviation matches ``std`` per component; df must exceed 2 (and excess
    kurtosis 6/(df-4) is finite only for df > 4).
    """
    if count < 1:
        raise ParameterDomainError("count must be >= 1")
    if family != "student_t":
        raise ParameterDomainError(f"unknown error family {family!r}")
    if df <= 2:
        raise ParameterDomainError("student_t family needs df > 2")
    rng = np.random.default_rng(seed)
    scale = np.broadcast_to(np.asarray(std, dtype=float), (dim,)) \
        * np.sqrt((df - 2.0) / df)
    return SampleSet(rng.standard_t(df, size=(count, dim)) * scale)


def student_t_sampler(std, df: float = 5.0):
    """Sampler closure (rng, n) -> (n, dim) matching synth_errors scaling."""
    std = np.atleast_1d(np.asarray(std, dtype=float))
    scale = std * np.sqrt((df - 2.0) / df)

    def draw(rng, n):
        return rng.standard_t(df, size=(n, std.size)) * scale

    return draw


def empirical_sampler(samples: SampleSet):
    """Resample rows of a pool with replacement (held-out subsampling)."""
    pool = samples.samples

    def draw(rng, n):
        idx = rng.integers(0, pool.shape[0], size=n)
        return pool[idx]

    return draw


def zero_sampler(dim: int):
    def draw(rng, n):
        return np.zeros((n, dim))

    return draw


# ---------------------------------------------------------------------------
# realized-physics evaluation
# ---------------------------------------------------------------------------

def dist_realized_voltages(case, stages: DistStageData, decision: PolicyDecision,
                           xi: np.ndarray) -> np.ndarray:
    """Voltages (T, n_bus) under applied decisions and realized errors."""
    feeder = case.feeder
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    t_total = decision.alpha.shape[0]
    out = np.zeros((t_total, feeder.n_bus))
    for tau in range(t_total):
        p = np.zeros(feeder.n_bus)
        q = np.zeros(feeder.n_bus)
        for li, ld in enumerate(case.loads):
            p[ld.bus] -= stages.load_p[tau, li] + (
                ld.p_err_scale * xi[tau, ld.p_err] if ld.p_err >= 0 else 0.0)
            q[ld.bus] -= stages.load_q[tau, li] + (
                ld.q_err_scale * xi[tau, ld.q_err] if ld.q_err >= 0 else 0.0)
        for pi, pv in enumerate(case.pvs):
            pav = stages.pav[tau, pi] + (
                pv.err_scale * xi[tau, pv.err] if pv.err >= 0 else 0.0)
            p[pv.bus] += (1.0 - decision.alpha[tau, pv.bus]) * pav
            q[pv.bus] += decision.q[tau, pv.bus]
        for unit in case.storages:
            p[unit.bus] -= decision.p_b[tau, unit.bus]
        out[tau] = voltage_profile(feeder, p / feeder.sbase_kva,
                                   q / feeder.sbase_kva)
    return out


def dist_realized_cost(case, stages: DistStageData, decision: PolicyDecision,
                       xi: np.ndarray) -> float:
    """Stage-cost sum at one realized error trajectory."""
    a1, a2, a3, a4 = case.prices
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    t_total = decision.alpha.shape[0]
    total = 0.0
    for tau in range(t_total):
        net = np.zeros(case.feeder.n_bus)
        for li, ld in enumerate(case.loads):
            net[ld.bus] += stages.load_p[tau, li] + (
                ld.p_err_scale * xi[tau, ld.p_err] if ld.p_err >= 0 else 0.0)
        for unit in case.storages:
            net[unit.bus] += decision.p_b[tau, unit.bus]
        for pi, pv in enumerate(case.pvs):
            pav = stages.pav[tau, pi] + (
                pv.err_scale * xi[tau, pv.err] if pv.err >= 0 else 0.0)
            net[pv.bus] -= (1.0 - decision.alpha[tau, pv.bus]) * pav
            total += a3 * abs(decision.q[tau, pv.bus])
            total += a4 * decision.alpha[tau, pv.bus] * pav
        total += a1 * np.maximum(net, 0.0).sum() + a2 * np.maximum(-net, 0.0).sum()
    return float(total)


def trans_realized_flows(case, policies, xi_stack: np.ndarray, outage,
                         stage: int = 0) -> np.ndarray:
    """Line flows (MW) at one realized stacked error under an outage."""
    grid = case.grid
    xi = np.atleast_2d(np.asarray(xi_stack, dtype=float))
    lost_g = set(outage.lost_gens) | ({outage.element} if outage.kind == "gen"
                                      else set())
    inj = np.zeros(grid.n_bus)
    for g, pol in enumerate(policies):
        if g in lost_g:
            continue
        inj[case.gens[g].bus] += generator_output(
            pol, xi, outage if outage.kind != "none" else None)[stage]
    for w, wind in enumerate(case.winds):
        if w in outage.lost_winds:
            continue
        inj[wind.bus] += wind.p_forecast_mw + wind.err_scale_mw * xi[stage, wind.err]
    for l, load in enumerate(case.tloads):
        if l in outage.lost_loads:
            continue
        inj[load.bus] -= load.p_mw
    if outage.kind == "line" and not outage.islanding:
        return grid.outage_ptdf(outage.element) @ inj
    return grid.ptdf @ inj


# ---------------------------------------------------------------------------
# Monte Carlo evaluation
# ---------------------------------------------------------------------------

@dataclass
class ViolationStats:
    """Out-of-sample violation and cost summary over independent draws."""

    n_draws: int
    aggregate: float                 # fraction of draws with >= 1 violation
    per_constraint: dict             # label -> violation frequency
    empirical_cvar: dict             # label -> CVaR_eta of the loss margin
    cost_mean: float
    cost_std: float
    peaks: dict                      # label -> worst observed value

    def __post_init__(self):
        assert 0.0 <= self.aggregate <= 1.0
        assert all(0.0 <= f <= 1.0 for f in self.per_constraint.values())


def monte_carlo_eval(decision: PolicyDecision, case, sampler, n: int,
                     seed: int, *, stages: DistStageData | None = None,
                     eta: float = 0.01, catalog=None,
                     include_outages: bool = False,
                     monitored=None) -> ViolationStats:
    """Evaluate realized constraints and costs under n independent draws.

    Distribution decisions are checked against both voltage bounds at the
    monitored buses; transmission policies against all line limits, at the
    base case only unless ``include_outages``.  Deterministic given seed.
    """
    if n < 1:
        raise ParameterDomainError("need n >= 1 draws")
    rng = np.random.default_rng(seed)
    losses: dict[str, list] = {}
    costs = np.zeros(n)
    violated = np.zeros(n, dtype=bool)

    if decision.kind == "distribution":
        feeder = case.feeder
        if monitored is None:
            monitored = tuple(feeder.non_slack())
        t_total = decision.alpha.shape[0]
        draws = sampler(rng, n * t_total).reshape(n, t_total, -1)
        for r in range(n):
            v = dist_realized_voltages(case, stages, decision, draws[r])
            costs[r] = dist_realized_cost(case, stages, decision, draws[r])
            for m in monitored:
                for tau in range(t_total):
                    hi = v[tau, m] - feeder.vmax
                    lo = feeder.vmin - v[tau, m]
                    losses.setdefault(f"v_hi[{m}]@{tau}", []).append(hi)
                    losses.setdefault(f"v_lo[{m}]@{tau}", []).append(lo)
                    if hi > 0 or lo > 0:
                        violated[r] = True
    else:
        grid = case.grid
        t_total = decision.policies[0].e.shape[0]
        n_xi = case.n_xi
        draws = sampler(rng, n * t_total).reshape(n, t_total, n_xi)
        outages = [o for o in (catalog or []) if include_outages
                   or o.kind == "none"]
        if not outages:
            raise ParameterDomainError("transmission evaluation needs a catalog")
        for r in range(n):
            xi = draws[r]
            base = None
            for o in outages:
                if o.islanding:
                    continue
                flows = trans_realized_flows(case, decision.policies, xi, o)
                if o.kind == "none":
                    base = flows
                for line in range(grid.n_lines):
                    if o.kind == "line" and o.element == line:
                        continue
                    margin = abs(flows[line]) - grid.lines[line].limit
                    losses.setdefault(f"flow[{line}].o{o.oid}", []).append(margin)
                    if margin > 0:
                        violated[r] = True
            if base is not None:
                g_out = [generator_output(p, xi, None) for p in decision.policies]
                costs[r] = sum(
                    gen.c1 * g_out[g][tau] ** 2 + gen.c2 * g_out[g][tau] + gen.c3
                    for g, gen in enumerate(case.gens) for tau in range(t_total))

    per_freq = {k: float(np.mean(np.asarray(v) > 0)) for k, v in losses.items()}
    cvar = {k: empirical_cvar(v, eta) for k, v in losses.items()}
    peaks = {k: float(np.max(v)) for k, v in losses.items()}
    return ViolationStats(n, float(np.mean(violated)), per_freq, cvar,
                          float(costs.mean()), float(costs.std()), peaks)


# ---------------------------------------------------------------------------
# (rho, eps) tradeoff sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    rho: float
    eps: float
    status: str
    objective: float
    cost: float
    total_cvar: float
    violation_rate: float            # nan when no Monte Carlo was requested


def _solve_cell(case, cfg, *, stages, ambs, amb, catalog, backend,
                sampler, mc_draws, eta, seed, monitored):
    if case.kind == "distribution":
        prog, meta = assemble_distribution_opf(case, stages, ambs, cfg)
    else:
        prog, meta = assemble_transmission_opf(case, amb, cfg, catalog)
    sol = solve(prog, backend)
    if not sol.optimal:
        return SweepRow(cfg.rho, cfg.eps_at(0), sol.status,
                        float("nan"), float("nan"), float("nan"), float("nan"))
    dec = extract_policy(sol, meta)
    total_cvar = sum(dec.cvar.values()) if dec.cvar else 0.0
    rate = float("nan")
    if sampler is not None and mc_draws > 0:
        stats = monte_carlo_eval(dec, case, sampler, mc_draws, seed,
                                 stages=stages, eta=eta, catalog=catalog,
                                 monitored=monitored)
        rate = stats.aggregate
    return SweepRow(cfg.rho, cfg.eps_at(0), sol.status, sol.objective,
                    dec.cost_part, total_cvar, rate)


def tradeoff_sweep(case, rho_grid, eps_grid, cfg_base: AssemblyConfig, *,
                   stages=None, ambs=None, amb=None, catalog=None,
                   backend: str = "clarabel", sampler=None, mc_draws: int = 0,
                   seed: int = 0, monitored=None, workers: int = 1):
    """One independently solved row per (rho, eps) pair, in grid order.

    Per-cell Monte Carlo seeds derive from (seed, cell index), so rows are
    identical whether cells run serially or on a thread pool.
    """
    rho_grid = list(rho_grid)
    eps_grid = list(eps_grid)
    if not rho_grid or not eps_grid:
        raise ParameterDomainError("sweep grids must be non-empty")
    cells = []
    for rho in rho_grid:
        for eps in eps_grid:
            cells.append(replace(cfg_base, rho=rho, eps=eps))

    def run(idx_cfg):
        idx, cfg = idx_cfg
        try:
            return _solve_cell(case, cfg, stages=stages, ambs=ambs, amb=amb,
                               catalog=catalog, backend=backend,
                               sampler=sampler, mc_draws=mc_draws,
                               eta=cfg.eta, seed=seed + idx,
                               monitored=monitored)
        except Exception as exc:   # per-cell failures recorded, sweep continues
            log.warning("sweep cell rho=%g eps=%s failed: %s",
                        cfg.rho, cfg.eps, exc)
            return SweepRow(cfg.rho, cfg.eps_at(0), f"error:{type(exc).__name__}",
                            float("nan"), float("nan"), float("nan"), float("nan"))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, enumerate(cells)))
    else:
        rows = [run(ic) for ic in enumerate(cells)]
    return rows


def sweep_to_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rho", "eps", "status", "objective", "cost",
                         "total_cvar", "violation_rate"])
        for r in rows:
            writer.writerow([repr(r.rho), repr(r.eps), r.status,
                             repr(r.objective), repr(r.cost),
                             repr(r.total_cvar), repr(r.violation_rate)])


def stats_to_json(stats: ViolationStats, path) -> None:
    payload = {
        "schema": "droopf-violation-stats-1",
        "n_draws": stats.n_draws,
        "aggregate_violation_rate": stats.aggregate,
        "per_constraint_rate": stats.per_constraint,
        "empirical_cvar": stats.empirical_cvar,
        "cost_mean": stats.cost_mean,
        "cost_std": stats.cost_std,
        "peaks": stats.peaks,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Receding-horizon closed loop: solve, apply stage-t decisions, advance.

Each step assembles the horizon problem from the current storage state and
the rolling window of the most recent forecast-error samples, applies the
first stage of the optimized plan, advances the SOC with the applied
charging power, then appends the realized error to the window.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    AssemblyConfig,
    PolicyDecision,
    assemble_distribution_opf,
    extract_policy,
)
from .convex import TOLERANCE, solve
from .dro import AmbiguitySet, ConstructionError, SampleSet
from .evaluation import dist_realized_cost, dist_realized_voltages

log = logging.getLogger(__name__)


class MpcError(RuntimeError):
    """Hard closed-loop invariant violation (SOC outside its bounds)."""


@dataclass
class MpcState:
    """Clock, storage state, rolling error dataset and an append-only log."""

    t: int
    soc: np.ndarray                  # kWh per storage unit
    window: deque                    # most recent error samples (maxlen N_s)
    log: list = field(default_factory=list)

    @classmethod
    def initial(cls, case, dataset: SampleSet, n_window: int = 30,
                t0: int = 0, soc0=None) -> "MpcState":
        if dataset.n_samples < 1:
            raise ConstructionError("initial error dataset is empty")
        window = deque(maxlen=n_window)
        for row in dataset.samples[-n_window:]:
            window.append(np.array(row))
        soc = np.array([u.b0 for u in case.storages]) if soc0 is None \
            else np.asarray(soc0, dtype=float)
        return cls(t=t0, soc=soc, window=window, log=[])


@dataclass
class StepRecord:
    t: int
    status: str
    fallback: bool
    alpha: np.ndarray                # per PV device
    q: np.ndarray
    p_b: np.ndarray                  # per storage unit
    soc_after: np.ndarray
    v_realized: np.ndarray           # per bus
    cost_realized: float
    risk_term: float
    plan: PolicyDecision | None      # predicted horizon trajectory


def _fallback_decision(case, cfg) -> PolicyDecision:
    """Maximal curtailment, zero reactive power, idle storage."""
    t_total = cfg.n_stages
    n_bus = case.feeder.n_bus
    alpha = np.zeros((t_total, n_bus))
    for pv in case.pvs:
        alpha[:, pv.bus] = 1.0
    return PolicyDecision("distribution", float("nan"), float("nan"), None,
                          None, alpha=alpha, q=np.zeros((t_total, n_bus)),
                          p_b=np.zeros((t_total, n_bus)),
                          soc=np.zeros((t_total + 1, len(case.storages))))


def mpc_step(state: MpcState, case, cfg: AssemblyConfig,
             backend: str = "clarabel", support=None):
    """Solve the horizon problem at the current state and apply stage t.

    Returns (decision, status, fallback): the applied decision is stage 0 of
    the returned plan.  Solver failure triggers the hold/curtail fallback
    (never silent; the event lands in state.log).
    """
    if not state.window:
        raise ConstructionError("rolling error dataset is empty")
    samples = SampleSet(np.array(state.window))
    amb = AmbiguitySet.from_samples(samples, 0.0, support=support)
    ambs = [amb] * cfg.n_stages
    stages = case.stage_data(state.t, cfg.n_stages)
    prog, meta = assemble_distribution_opf(case, stages, ambs, cfg,
                                           b0=list(state.soc))
    sol = solve(prog, backend)
    if sol.optimal:
        return extract_policy(sol, meta), sol.status, False
    log.warning("mpc step %d: solver status %s; applying fallback", state.t,
                sol.status)
    state.log.append({"t": state.t, "event": "fallback", "status": sol.status})
    return _fallback_decision(case, cfg), sol.status, True


def mpc_run(case, cfg: AssemblyConfig, trace: np.ndarray, steps: int, *,
            dataset: SampleSet, n_window: int = 30, backend: str = "clarabel",
            soc0=None, support=None) -> list[StepRecord]:
    """Closed loop over ``steps`` stages of a realized error trace.

    ``trace`` holds one realized error vector per step (steps, n_xi); the
    realized error of each step is appended to the rolling window after the
    step is applied.  Deterministic given the trace and initial dataset.
    """
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    if trace.shape[0] < steps:
        raise ConstructionError(
            f"trace has {trace.shape[0]} steps, need {steps}")
    state = MpcState.initial(case, dataset, n_window=n_window, soc0=soc0)
    records = []
    units = case.storages
    for _ in range(steps):
        plan, status, fallback = mpc_step(state, case, cfg, backend=backend,
                                          support=support)
        alpha = np.array([plan.alpha[0, pv.bus] for pv in case.pvs])
        q = np.array([plan.q[0, pv.bus] for pv in case.pvs])
        p_b = np.array([plan.p_b[0, u.bus] for u in units])

        # SOC advances with the applied charging power (unit efficiency)
        new_soc = state.soc + p_b * cfg.step_hours
        for ui, unit in enumerate(units):
            if new_soc[ui] < unit.b_min_kwh - TOLERANCE \
                    or new_soc[ui] > unit.b_max_kwh + TOLERANCE:
                raise MpcError(
                    f"step {state.t}: SOC {new_soc[ui]:.6f} kWh violates "
                    f"[{unit.b_min_kwh}, {unit.b_max_kwh}] at bus {unit.bus}")
            new_soc[ui] = min(max(new_soc[ui], unit.b_min_kwh), unit.b_max_kwh)

        xi_real = trace[len(records)]
        stages = case.stage_data(state.t, 1)
        applied = PolicyDecision(
            "distribution", plan.objective, plan.cost_part, plan.risk_part,
            plan.cvar, alpha=plan.alpha[:1], q=plan.q[:1], p_b=plan.p_b[:1],
            soc=plan.soc)
        v_real = dist_realized_voltages(case, stages, applied,
                                        xi_real[None, :])[0]
        cost_real = dist_realized_cost(case, stages, applied, xi_real[None, :])
        risk_term = 0.0 if plan.risk_part is None else plan.risk_part

        records.append(StepRecord(
            t=state.t, status=status, fallback=fallback, alpha=alpha, q=q,
            p_b=p_b, soc_after=new_soc.copy(), v_realized=v_real,
            cost_realized=cost_real, risk_term=risk_term,
            plan=plan))
        state.soc = new_soc
        state.t += 1
        state.window.append(xi_real.copy())
    return records


def trajectory_to_csv(records, case, path) -> None:
    """One row per applied step: time, decisions, realized outputs, cost, risk."""
    pv_buses = [pv.bus for pv in case.pvs]
    bat_buses = [u.bus for u in case.storages]
    header = (["t", "status", "fallback"]
              + [f"alpha[{b}]" for b in pv_buses]
              + [f"q[{b}]" for b in pv_buses]
              + [f"p_b[{b}]" for b in bat_buses]
              + [f"soc[{b}]" for b in bat_buses]
              + [f"v[{b}]" for b in range(case.feeder.n_bus)]
              + ["cost", "risk_cvar_total"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            writer.writerow(
                [r.t, r.status, int(r.fallback)]
                + [repr(float(v)) for v in r.alpha]
                + [repr(float(v)) for v in r.q]
                + [repr(float(v)) for v in r.p_b]
                + [repr(float(v)) for v in r.soc_after]
                + [repr(float(v)) for v in r.v_realized]
                + [repr(float(r.cost_realized)), repr(float(r.risk_term))])

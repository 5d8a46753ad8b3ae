"""Assembly of the full voltage-regulation and N-1 dispatch programs.

The distribution problem prices worst-case CVaR of both voltage bounds at
every monitored bus inside a per-stage ambiguity ball, with inverter limits
as sample-average CVaR constraints.  The transmission problem schedules
affine reserve policies against wind errors and an outage catalog, with a
configurable subset of lines handled distributionally robustly in both flow
directions and the rest by sample-average CVaR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexProgram, LinExpr, as_expr
from .devices import (
    GeneratorPolicy,
    distribution_stage_cost,
    generation_cost,
    inverter_constraints,
    storage_constraints,
)
from .dro import (
    AmbiguitySet,
    ConstructionError,
    MaxAffineLoss,
    ParameterDomainError,
    cvar_to_max_affine,
    saa_cvar_constraint,
    wc_expectation_epigraph,
)

log = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    """Policy extraction attempted on a non-optimal solution."""


@dataclass
class AssemblyConfig:
    """Knobs shared by both problem families.

    ``rho`` weights the worst-case risk term, ``eps`` is the ball radius
    (scalar or one value per stage), ``eta`` the CVaR level, also bound to
    the sample-average constraints' beta.  ``horizon`` counts stages beyond
    the current one (total stages = horizon + 1).
    """

    rho: float = 1.0
    eta: float = 0.01
    eps: float | tuple = 0.0
    horizon: int = 0
    step_hours: float = 5.0 / 60.0
    monitored_buses: tuple | None = None     # default: all non-slack buses
    monitor_lower: bool = True
    include_inverter_saa: bool = True
    # transmission-only
    dro_lines: tuple = ()
    dro_outages: tuple | None = None         # outage ids; default: full catalog
    saa_lines: tuple | None = None           # default: all non-DRO lines
    saa_outages: tuple | None = None         # default: full catalog

    def __post_init__(self):
        if self.rho < 0:
            raise ParameterDomainError(f"rho must be >= 0, got {self.rho}")
        if not 0.0 < self.eta <= 1.0:
            raise ParameterDomainError(f"eta must lie in (0, 1], got {self.eta}")
        if self.horizon < 0:
            raise ParameterDomainError(f"horizon must be >= 0, got {self.horizon}")
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        if np.any(eps < 0):
            raise ParameterDomainError("eps must be >= 0")

    @property
    def n_stages(self) -> int:
        return self.horizon + 1

    def eps_at(self, stage: int) -> float:
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        if eps.size == 1:
            return float(eps[0])
        if stage >= eps.size:
            raise ParameterDomainError(
                f"eps has {eps.size} entries but stage {stage} requested")
        return float(eps[stage])


@dataclass
class DistStageData:
    """Per-stage nominal device data (kW): one column per device in case order."""

    load_p: np.ndarray    # (T, n_loads)
    load_q: np.ndarray    # (T, n_loads)
    pav: np.ndarray       # (T, n_pvs)

    @property
    def n_stages(self) -> int:
        return self.load_p.shape[0]


@dataclass
class PolicyDecision:
    """Optimized set points / policies plus per-constraint risk certificates."""

    kind: str
    objective: float
    cost_part: float
    risk_part: float | None
    cvar: dict | None
    # distribution fields (stage-major arrays over all buses)
    alpha: np.ndarray | None = None
    q: np.ndarray | None = None
    p_b: np.ndarray | None = None
    soc: np.ndarray | None = None     # (T+1, n_storage_units)
    # transmission fields
    policies: list | None = None      # GeneratorPolicy per thermal generator


# ---------------------------------------------------------------------------
# distribution problem
# ---------------------------------------------------------------------------

@dataclass
class DistributionMeta:
    case: object
    cfg: AssemblyConfig
    ambs: list
    stages: DistStageData
    alpha_ids: list        # [tau][pv_index] -> vid
    qp_ids: list
    qm_ids: list
    pb_ids: list           # [unit][tau] -> vid
    soc_ids: list          # [unit][tau]
    certs: list
    varpi_ids: list
    census: dict


def _realized(nominal: float, scale: float, comp: int, sample: np.ndarray) -> float:
    return nominal + (scale * sample[comp] if comp >= 0 else 0.0)


def assemble_distribution_opf(case, stages: DistStageData, ambs,
                              cfg: AssemblyConfig, b0=None):
    """Build the receding-horizon voltage-regulation program.

    ``ambs`` is one AmbiguitySet per stage over the case's error vector;
    ``b0`` optionally overrides the storage units' initial SOC.
    Returns (ConvexProgram, DistributionMeta).
    """
    feeder = case.feeder
    t_total = cfg.n_stages
    if stages.n_stages < t_total:
        raise ConstructionError(
            f"stage data covers {stages.n_stages} stages, horizon needs {t_total}")
    if len(ambs) < t_total:
        raise ConstructionError(
            f"missing samples: got {len(ambs)} ambiguity sets for {t_total} stages")
    for amb in ambs[:t_total]:
        if amb.dim != case.n_xi:
            raise ConstructionError(
                f"ambiguity dimension {amb.dim} != case error dimension {case.n_xi}")

    monitored = cfg.monitored_buses
    if monitored is None:
        monitored = tuple(feeder.non_slack())
    prog = ConvexProgram()
    sb = feeder.sbase_kva

    n_pv = len(case.pvs)
    alpha_ids = [[prog.add_var(f"alpha[{pv.bus}]@{tau}", 0.0, 1.0)
                  for pv in case.pvs] for tau in range(t_total)]
    qp_ids = [[prog.add_var(f"qp[{pv.bus}]@{tau}", 0.0) for pv in case.pvs]
              for tau in range(t_total)]
    qm_ids = [[prog.add_var(f"qm[{pv.bus}]@{tau}", 0.0) for pv in case.pvs]
              for tau in range(t_total)]

    if b0 is None:
        b0 = [unit.b0 for unit in case.storages]
    pb_ids, soc_ids = [], []
    for u, unit in enumerate(case.storages):
        pb, soc = storage_constraints(unit, prog, t_total, cfg.step_hours,
                                      b0=b0[u], label=f"bat[{unit.bus}]")
        pb_ids.append(pb)
        soc_ids.append(soc)

    certs = []
    varpi_ids = []
    total_cost = LinExpr()

    for tau in range(t_total):
        amb = ambs[tau]
        amb_t = AmbiguitySet(amb.data, amb.support, cfg.eps_at(tau))
        xs = amb.data.samples
        n_s = xs.shape[0]

        # decision-affine injection pieces, per bus
        const_p = {b: LinExpr() for b in range(feeder.n_bus)}
        const_q = {b: LinExpr() for b in range(feeder.n_bus)}
        coef_p: dict[int, dict[int, LinExpr]] = {}
        coef_q: dict[int, dict[int, LinExpr]] = {}

        def _coef(table, comp, bus):
            return table.setdefault(comp, {}).setdefault(bus, LinExpr())

        for li, ld in enumerate(case.loads):
            const_p[ld.bus].const -= stages.load_p[tau, li]
            const_q[ld.bus].const -= stages.load_q[tau, li]
            if ld.p_err >= 0:
                _coef(coef_p, ld.p_err, ld.bus).const -= ld.p_err_scale
            if ld.q_err >= 0:
                _coef(coef_q, ld.q_err, ld.bus).const -= ld.q_err_scale
        for pi, pv in enumerate(case.pvs):
            pav = stages.pav[tau, pi]
            a_e = prog.x(alpha_ids[tau][pi])
            const_p[pv.bus].const += pav
            const_p[pv.bus].add_scaled(a_e, -pav)
            const_q[pv.bus].add_term(qp_ids[tau][pi], 1.0)
            const_q[pv.bus].add_term(qm_ids[tau][pi], -1.0)
            if pv.err >= 0:
                c = _coef(coef_p, pv.err, pv.bus)
                c.const += pv.err_scale
                c.add_scaled(a_e, -pv.err_scale)
        for u, unit in enumerate(case.storages):
            const_p[unit.bus].add_term(pb_ids[u][tau], -1.0)

        # DRO voltage blocks at monitored buses
        for m in monitored:
            b_expr = LinExpr(None, feeder.v0[m])
            for bus in range(feeder.n_bus):
                rv = feeder.r_v[m, bus] / sb
                xv = feeder.x_v[m, bus] / sb
                if rv:
                    b_expr.add_scaled(const_p[bus], rv)
                if xv:
                    b_expr.add_scaled(const_q[bus], xv)
            a_exprs = [LinExpr() for _ in range(case.n_xi)]
            for comp, buses in coef_p.items():
                for bus, e in buses.items():
                    rv = feeder.r_v[m, bus] / sb
                    if rv:
                        a_exprs[comp].add_scaled(e, rv)
            for comp, buses in coef_q.items():
                for bus, e in buses.items():
                    xv = feeder.x_v[m, bus] / sb
                    if xv:
                        a_exprs[comp].add_scaled(e, xv)

            kap = prog.add_var(f"kappa.v_hi[{m}]@{tau}")
            loss = cvar_to_max_affine(a_exprs, b_expr - feeder.vmax,
                                      cfg.eta, prog.x(kap))
            certs.append(wc_expectation_epigraph(
                loss, amb_t, cfg.rho, prog, label=f"v_hi[{m}]@{tau}", kappa=kap))
            if cfg.monitor_lower:
                kap2 = prog.add_var(f"kappa.v_lo[{m}]@{tau}")
                neg_a = [e * -1.0 for e in a_exprs]
                loss2 = cvar_to_max_affine(neg_a, feeder.vmin - b_expr,
                                           cfg.eta, prog.x(kap2))
                certs.append(wc_expectation_epigraph(
                    loss2, amb_t, cfg.rho, prog, label=f"v_lo[{m}]@{tau}", kappa=kap2))

        # inverter sample-average CVaR limits (beta bound to eta)
        if cfg.include_inverter_saa:
            for pi, pv in enumerate(case.pvs):
                pav_samples = np.array([
                    _realized(stages.pav[tau, pi], pv.err_scale, pv.err, xs[i])
                    for i in range(n_s)])
                ids = inverter_constraints(
                    pv, pav_samples, cfg.eta, prog,
                    prog.x(alpha_ids[tau][pi]),
                    prog.x(qp_ids[tau][pi]), prog.x(qm_ids[tau][pi]),
                    label=f"inv[{pv.bus}]@{tau}")
                varpi_ids.append(ids)

        # expected stage cost
        bus_loads: dict[int, list[int]] = {}
        for li, ld in enumerate(case.loads):
            bus_loads.setdefault(ld.bus, []).append(li)
        bus_pv = {pv.bus: pi for pi, pv in enumerate(case.pvs)}
        bus_bat = {unit.bus: u for u, unit in enumerate(case.storages)}
        costed = sorted(set(bus_loads) | set(bus_pv) | set(bus_bat))
        net_samples = {}
        q_abs = {}
        curtail = {}
        for bus in costed:
            exprs = []
            for i in range(n_s):
                net = LinExpr()
                for li in bus_loads.get(bus, ()):
                    ld = case.loads[li]
                    net.const += _realized(stages.load_p[tau, li], ld.p_err_scale,
                                           ld.p_err, xs[i])
                if bus in bus_bat:
                    net.add_term(pb_ids[bus_bat[bus]][tau], 1.0)
                if bus in bus_pv:
                    pi = bus_pv[bus]
                    pv = case.pvs[pi]
                    pav_i = _realized(stages.pav[tau, pi], pv.err_scale, pv.err, xs[i])
                    net.const -= pav_i
                    net.add_term(alpha_ids[tau][pi], pav_i)
                exprs.append(net)
            net_samples[bus] = exprs
            if bus in bus_pv:
                pi = bus_pv[bus]
                pv = case.pvs[pi]
                q_abs[bus] = prog.x(qp_ids[tau][pi]) + prog.x(qm_ids[tau][pi])
                mean_pav = float(np.mean([
                    _realized(stages.pav[tau, pi], pv.err_scale, pv.err, xs[i])
                    for i in range(n_s)]))
                curtail[bus] = prog.x(alpha_ids[tau][pi]) * mean_pav
        total_cost.add_scaled(distribution_stage_cost(
            prog, net_load_samples=net_samples, prices=case.prices,
            q_abs=q_abs, curtail=curtail, label=f"cost@{tau}"))

    prog.add_lin_cost(total_cost)
    for cert in certs:
        prog.add_lin_cost(cert.objective_term)

    census = distribution_census(case, cfg, [a.n_samples for a in ambs[:t_total]],
                                 monitored)
    meta = DistributionMeta(case, cfg, list(ambs[:t_total]), stages, alpha_ids,
                            qp_ids, qm_ids, pb_ids, soc_ids, certs, varpi_ids,
                            census)
    return prog, meta


def distribution_census(case, cfg: AssemblyConfig, ns_per_stage, monitored) -> dict:
    """Closed-form variable/constraint counts of the distribution assembly.

    With T stages, M risk constraints per stage (monitored buses times the
    number of bounds), R inverters (R_pf of them with a power factor limit),
    B storage units, C costed buses, N_s samples per stage, N_xi error
    components and an unbounded support (K = 2 CVaR pieces):

      variables = 3RT + B(2T+1) + sum_stages [ M(N_s+2) + 2CN_s
                  + R(2N_s+1) + R_pf(N_s+1) ]
      eq rows   = B(T+1)
      ineq rows = sum_stages [ MKN_s + 2MKN_xi + 2CN_s + (R+R_pf)(N_s+1) ]
      soc blocks= R * sum_stages N_s
    """
    t_total = cfg.n_stages
    m = len(monitored) * (2 if cfg.monitor_lower else 1)
    r = len(case.pvs)
    r_pf = sum(1 for pv in case.pvs if pv.pf_limit is not None)
    bst = len(case.storages)
    buses = set(ld.bus for ld in case.loads) | set(pv.bus for pv in case.pvs) \
        | set(u.bus for u in case.storages)
    c = len(buses)
    n_xi = case.n_xi
    k = 2
    nvars = t_total * 3 * r + bst * (2 * t_total + 1)
    n_eq = bst * (t_total + 1)
    n_ineq = 0
    n_soc = 0
    for ns in ns_per_stage:
        nvars += m * (ns + 2) + 2 * c * ns
        n_ineq += m * k * ns + m * k * 2 * n_xi + 2 * c * ns
        if cfg.include_inverter_saa:
            nvars += r * (2 * ns + 1) + r_pf * (ns + 1)
            n_ineq += (r + r_pf) * (ns + 1)
            n_soc += r * ns
    return {"vars": nvars, "eq": n_eq, "ineq": n_ineq, "soc": n_soc}


# ---------------------------------------------------------------------------
# transmission problem
# ---------------------------------------------------------------------------

class _XiAffine:
    """Affine function of the stacked error vector with LinExpr coefficients."""

    __slots__ = ("b", "a")

    def __init__(self, n_comp: int):
        self.b = LinExpr()
        self.a: dict[int, LinExpr] = {}

    def coef(self, comp: int) -> LinExpr:
        e = self.a.get(comp)
        if e is None:
            e = self.a[comp] = LinExpr()
        return e

    def add(self, other: "_XiAffine", scale: float = 1.0) -> None:
        if scale == 0.0:
            return
        self.b.add_scaled(other.b, scale)
        for comp, e in other.a.items():
            self.coef(comp).add_scaled(e, scale)

    def at_sample(self, xi_flat: np.ndarray) -> LinExpr:
        out = self.b.copy()
        for comp, e in self.a.items():
            if xi_flat[comp] != 0.0:
                out.add_scaled(e, float(xi_flat[comp]))
        return out

    def dense_coeffs(self, n_comp: int) -> list:
        return [self.a.get(c, LinExpr()) for c in range(n_comp)]


@dataclass
class TransmissionMeta:
    case: object
    cfg: AssemblyConfig
    amb: AmbiguitySet
    catalog: list
    e_ids: list           # [gen][tau]
    d_ids: list           # [gen][tau][tau'] -> list of n_xi vids
    r_ids: dict           # oid -> [gen][tau] vid (only mismatch outages)
    certs: list
    dro_labels: list
    census: dict
    n_xi: int
    n_stages: int


def assemble_transmission_opf(case, amb: AmbiguitySet, cfg: AssemblyConfig,
                              catalog):
    """Build the reserve-scheduling program over an outage catalog.

    ``amb`` covers the stacked horizon error vector (stage-major: component
    k of stage tau sits at index tau*n_xi + k).  DRO blocks are emitted for
    both directions of each configured line under each configured outage;
    remaining line/outage pairs get sample-average CVaR rows.  Nodal balance
    is enforced exactly, per outage, for the constant part and every error
    component.
    """
    grid = case.grid
    t_total = cfg.n_stages
    n_xi = case.n_xi
    n_comp = n_xi * t_total
    if amb.dim != n_comp:
        raise ConstructionError(
            f"ambiguity dimension {amb.dim} != stacked horizon dimension {n_comp}")
    xs = amb.data.samples
    n_s = xs.shape[0]
    amb = AmbiguitySet(amb.data, amb.support, cfg.eps_at(0))
    gens = case.gens

    for line in cfg.dro_lines:
        if not 0 <= line < grid.n_lines:
            raise ConstructionError(f"DRO line index {line} out of range")
    oid_map = {o.oid: o for o in catalog}
    dro_outages = cfg.dro_outages if cfg.dro_outages is not None \
        else tuple(oid_map)
    saa_lines = cfg.saa_lines if cfg.saa_lines is not None \
        else tuple(l for l in range(grid.n_lines) if l not in cfg.dro_lines)
    saa_outages = cfg.saa_outages if cfg.saa_outages is not None \
        else tuple(oid_map)

    prog = ConvexProgram()

    # --- policy variables -------------------------------------------------
    e_ids, d_ids = [], []
    for g, gen in enumerate(gens):
        lb = gen.p_min_mw if gen.p_min_mw is not None else -np.inf
        ub = gen.p_max_mw if gen.p_max_mw is not None else np.inf
        e_ids.append([prog.add_var(f"e[{g}]@{tau}", lb, ub)
                      for tau in range(t_total)])
        d_ids.append([[prog.add_vars(f"D[{g}]@{tau},{tp}", n_xi)
                       for tp in range(tau + 1)] for tau in range(t_total)])
    r_ids = {}
    for o in catalog:
        if o.kind != "none" and o.p_mis != 0.0:
            r_ids[o.oid] = [
                [prog.add_var(f"R[{o.oid}][{g}]@{tau}") for tau in range(t_total)]
                if g not in _lost_gens(o) else None
                for g in range(len(gens))]

    # --- device output expressions ----------------------------------------
    def policy_output(g: int, tau: int) -> _XiAffine:
        u = _XiAffine(n_comp)
        u.b.add_term(e_ids[g][tau], 1.0)
        for tp in range(tau + 1):
            for k2 in range(n_xi):
                u.coef(tp * n_xi + k2).add_term(d_ids[g][tau][tp][k2], 1.0)
        return u

    base_outputs = []          # [gen][tau] -> _XiAffine (pass-through of dynamics)
    for g, gen in enumerate(gens):
        outs = []
        x_prev = None
        for tau in range(t_total):
            u = policy_output(g, tau)
            if gen.is_passthrough():
                outs.append(u)
                continue
            x_now = _XiAffine(n_comp)
            if x_prev is None:
                x_now.b.const += gen.dyn_a * gen.x0
            else:
                x_now.add(x_prev, gen.dyn_a)
            x_now.add(u, gen.dyn_b)
            inj = _XiAffine(n_comp)
            inj.add(x_now, gen.dyn_c)
            inj.b.const += gen.dyn_r
            outs.append(inj)
            x_prev = x_now
        base_outputs.append(outs)

    def injections(outage) -> list[list[_XiAffine]]:
        """Per stage, per bus injection under an outage (reserve term included)."""
        lost_g = _lost_gens(outage)
        lost_w = set(outage.lost_winds)
        lost_l = set(outage.lost_loads)
        per_stage = []
        for tau in range(t_total):
            inj = [_XiAffine(n_comp) for _ in range(grid.n_bus)]
            for g, gen in enumerate(gens):
                if g in lost_g:
                    continue
                inj[gen.bus].add(base_outputs[g][tau])
                if outage.oid in r_ids:
                    rv = r_ids[outage.oid][g]
                    inj[gen.bus].b.add_term(rv[tau], outage.p_mis)
            for w, wind in enumerate(case.winds):
                if w in lost_w:
                    continue
                inj[wind.bus].b.const += wind.p_forecast_mw
                inj[wind.bus].coef(tau * n_xi + wind.err).const += wind.err_scale_mw
            for l, load in enumerate(case.tloads):
                if l in lost_l:
                    continue
                inj[load.bus].b.const -= load.p_mw
            per_stage.append(inj)
        return per_stage

    def flow_expr(ptdf_row: np.ndarray, inj: list) -> _XiAffine:
        f = _XiAffine(n_comp)
        for bus in range(grid.n_bus):
            w = ptdf_row[bus]
            if w != 0.0:
                f.add(inj[bus], w)
        return f

    certs = []
    dro_labels = []
    dro_margins: dict[tuple, list] = {}
    n_saa_blocks = 0
    total_lin_cost = LinExpr()

    for o in catalog:
        inj_stages = injections(o)

        # exact nodal balance: constant part and every error coefficient
        for tau in range(t_total):
            total = _XiAffine(n_comp)
            for bus in range(grid.n_bus):
                total.add(inj_stages[tau][bus])
            prog.add_eq(total.b)
            for comp, e in sorted(total.a.items()):
                if not e.terms:
                    if abs(e.const) > 1e-12:
                        raise ConstructionError(
                            f"outage {o.oid} ({o.kind} {o.element}) loses an "
                            "uncertain injection no policy can rebalance")
                    continue
                prog.add_eq(e)

        if o.islanding:
            log.warning("outage %s islands the grid; line-flow constraints "
                        "skipped, balance kept with mismatch compensation", o.oid)
            continue

        if o.kind == "line":
            ptdf_o = grid.outage_ptdf(o.element)
        else:
            ptdf_o = grid.ptdf

        flows_cache: dict[int, _XiAffine] = {}

        def line_flow(line: int, tau: int) -> _XiAffine:
            key = line * t_total + tau
            if key not in flows_cache:
                flows_cache[key] = flow_expr(ptdf_o[line], inj_stages[tau])
            return flows_cache[key]

        # collect per-outage margin expressions; certificates are shared
        # across outages (the auxiliaries carry no outage index), so each
        # line/direction block prices the CVaR of its worst-outage margin
        if o.oid in dro_outages:
            for line in cfg.dro_lines:
                if o.kind == "line" and o.element == line:
                    continue        # the tripped line carries no flow
                for tau in range(t_total):
                    f = line_flow(line, tau)
                    for sign, tag in ((1.0, "fwd"), (-1.0, "rev")):
                        dro_margins.setdefault((line, tag, tau), []).append(
                            (sign, f))

        # sample-average CVaR on the remaining lines (hard constraints)
        if o.oid in saa_outages:
            for line in saa_lines:
                if o.kind == "line" and o.element == line:
                    continue
                limit = grid.lines[line].limit
                for tau in range(t_total):
                    f = line_flow(line, tau)
                    f_samples = [f.at_sample(xs[i]) for i in range(n_s)]
                    for sign, tag in ((1.0, "fwd"), (-1.0, "rev")):
                        varpi = prog.add_var(f"varpi.l{line}.{tag}.o{o.oid}@{tau}")
                        g_list = [fs * sign - limit for fs in f_samples]
                        saa_cvar_constraint(g_list, cfg.eta, prog.x(varpi), prog,
                                            label=f"saa.l{line}.{tag}.o{o.oid}@{tau}")
                        n_saa_blocks += 1

    # --- DRO blocks: one shared certificate per line/direction/stage -------
    inv_eta = 1.0 / cfg.eta
    for (line, tag, tau), margins in sorted(dro_margins.items()):
        limit = grid.lines[line].limit
        label = f"flow[{line}].{tag}@{tau}"
        kap = prog.add_var(f"kappa.{label}")
        kap_e = prog.x(kap)
        pieces = []
        for sign, f in margins:
            a = [e * (sign * inv_eta) for e in f.dense_coeffs(n_comp)]
            b = kap_e * (1.0 - inv_eta) + (f.b * sign - limit) * inv_eta
            pieces.append((a, b))
        pieces.append(([0.0] * n_comp, kap_e))
        loss = MaxAffineLoss(pieces, n_comp)
        certs.append(wc_expectation_epigraph(loss, amb, cfg.rho, prog,
                                             label=label, kappa=kap))
        dro_labels.append(label)

    # --- expected generation cost (base-case outputs) ----------------------
    outputs_per_sample = [
        [[base_outputs[g][tau].at_sample(xs[i]) for i in range(n_s)]
         for tau in range(t_total)]
        for g in range(len(gens))]
    total_lin_cost.add_scaled(generation_cost(prog, gens, outputs_per_sample))
    prog.add_lin_cost(total_lin_cost)
    for cert in certs:
        prog.add_lin_cost(cert.objective_term)

    meta = TransmissionMeta(case, cfg, amb, list(catalog), e_ids, d_ids, r_ids,
                            certs, dro_labels,
                            {"saa_blocks": n_saa_blocks, **prog.counts()},
                            n_xi, t_total)
    return prog, meta


def _lost_gens(outage) -> set:
    return set(outage.lost_gens) if outage.kind != "gen" \
        else set(outage.lost_gens) | {outage.element}


# ---------------------------------------------------------------------------
# policy extraction
# ---------------------------------------------------------------------------

def extract_policy(solution, meta) -> PolicyDecision:
    """Read optimized decisions and risk certificates out of a solution."""
    if not solution.optimal:
        raise ExtractionError(
            f"cannot extract decisions from a {solution.status!r} solution")
    x = solution.x
    cfg = meta.cfg
    terms = sum(c.term_value(x) for c in meta.certs)
    risk = terms / cfg.rho if cfg.rho > 0 else None
    cvar = None
    if cfg.rho > 0:
        cvar = {c.label: c.term_value(x) / cfg.rho for c in meta.certs}
    cost = solution.objective - terms

    if isinstance(meta, DistributionMeta):
        case = meta.case
        t_total = cfg.n_stages
        n_bus = case.feeder.n_bus
        alpha = np.zeros((t_total, n_bus))
        q = np.zeros((t_total, n_bus))
        p_b = np.zeros((t_total, n_bus))
        for tau in range(t_total):
            for pi, pv in enumerate(case.pvs):
                alpha[tau, pv.bus] = x[meta.alpha_ids[tau][pi]]
                q[tau, pv.bus] = x[meta.qp_ids[tau][pi]] - x[meta.qm_ids[tau][pi]]
            for u, unit in enumerate(case.storages):
                p_b[tau, unit.bus] = x[meta.pb_ids[u][tau]]
        soc = np.array([[x[meta.soc_ids[u][tau]]
                         for u in range(len(case.storages))]
                        for tau in range(t_total + 1)]) \
            if case.storages else np.zeros((t_total + 1, 0))
        return PolicyDecision("distribution", solution.objective, cost, risk,
                              cvar, alpha=alpha, q=q, p_b=p_b, soc=soc)

    policies = []
    n_xi, t_total = meta.n_xi, meta.n_stages
    for g in range(len(meta.case.gens)):
        e = np.array([x[meta.e_ids[g][tau]] for tau in range(t_total)])
        d = np.zeros((t_total, t_total, n_xi))
        for tau in range(t_total):
            for tp in range(tau + 1):
                d[tau, tp] = x[np.array(meta.d_ids[g][tau][tp], dtype=int)]
        r_mis = {}
        for oid, per_gen in meta.r_ids.items():
            if per_gen[g] is not None:
                r_mis[oid] = np.array([x[per_gen[g][tau]]
                                       for tau in range(t_total)])
            else:
                r_mis[oid] = np.zeros(t_total)
        policies.append(GeneratorPolicy(g, e, d, r_mis))
    return PolicyDecision("transmission", solution.objective, cost, risk,
                          cvar, policies=policies)

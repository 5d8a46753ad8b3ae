"""Device models: loads, curtailable inverters, storage, generator policies.

Distribution devices work in kW/kWh, transmission devices in MW.  Each
constraint emitter creates its own auxiliary variables on the target
program and returns the handles the assembly needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexProgram, LinExpr, as_expr
from .dro import ConstructionError, saa_cvar_constraint
from .grid import Outage


class ConfigurationError(ValueError):
    """Inconsistent device parameters."""


# ---------------------------------------------------------------------------
# distribution-side devices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadModel:
    """Nominal demand plus additive error-map entries (component index, kW/unit)."""

    bus: int
    p_kw: float
    q_kvar: float = 0.0
    p_err: int = -1
    p_err_scale: float = 0.0
    q_err: int = -1
    q_err_scale: float = 0.0


@dataclass(frozen=True)
class ResInverter:
    """Curtailable RES inverter with apparent-power and power-factor limits.

    ``pf_limit`` is cos(theta); None drops the power-factor constraint.
    ``err``/``err_scale`` map one error component additively onto the
    available power (kW per unit of the component).
    """

    bus: int
    s_max_kva: float
    pav_kw: float
    pf_limit: float | None = 0.9
    err: int = -1
    err_scale: float = 0.0

    def __post_init__(self):
        if self.s_max_kva <= 0:
            raise ConfigurationError(f"inverter at bus {self.bus}: s_max must be > 0")
        if self.pf_limit is not None and not 0.0 < self.pf_limit <= 1.0:
            raise ConfigurationError(f"inverter at bus {self.bus}: pf must be in (0,1]")


@dataclass(frozen=True)
class StorageUnit:
    """Energy storage with unit round-trip efficiency (charging: P_B >= 0)."""

    bus: int
    b_max_kwh: float
    b_min_kwh: float = 0.0
    p_max_kw: float | None = None    # default: 10% of energy capacity
    p_min_kw: float | None = None    # default: -p_max
    b0_kwh: float | None = None      # default: midpoint of the SOC band

    def __post_init__(self):
        if self.b_min_kwh > self.b_max_kwh:
            raise ConfigurationError(
                f"storage at bus {self.bus}: b_min {self.b_min_kwh} > b_max {self.b_max_kwh}")

    @property
    def p_max(self) -> float:
        return self.p_max_kw if self.p_max_kw is not None else 0.1 * self.b_max_kwh

    @property
    def p_min(self) -> float:
        return self.p_min_kw if self.p_min_kw is not None else -self.p_max

    @property
    def b0(self) -> float:
        if self.b0_kwh is not None:
            return self.b0_kwh
        return 0.5 * (self.b_min_kwh + self.b_max_kwh)


def storage_constraints(unit: StorageUnit, prog: ConvexProgram, n_stages: int,
                        delta_hours: float, b0: float | None = None,
                        label: str = "bat"):
    """SOC dynamics B[tau+1] = B[tau] + P_B[tau]*Delta plus box bounds.

    Returns (p_ids, b_ids) with len(b_ids) = n_stages + 1.
    """
    if delta_hours <= 0:
        raise ConfigurationError(f"step length must be > 0, got {delta_hours}")
    pb = prog.add_vars(f"{label}.pb", n_stages, lb=unit.p_min, ub=unit.p_max)
    soc = prog.add_vars(f"{label}.soc", n_stages + 1,
                        lb=unit.b_min_kwh, ub=unit.b_max_kwh)
    start = unit.b0 if b0 is None else float(b0)
    prog.add_eq(prog.x(soc[0]) - start)
    for tau in range(n_stages):
        prog.add_eq(prog.x(soc[tau + 1]) - prog.x(soc[tau])
                    - prog.x(pb[tau]) * delta_hours)
    return pb, soc


def inverter_constraints(inv: ResInverter, pav_samples: np.ndarray, beta: float,
                         prog: ConvexProgram, alpha: LinExpr, q_plus: LinExpr,
                         q_minus: LinExpr, label: str = "inv"):
    """Sample-average CVaR forms of the apparent-power and power-factor limits.

    The quadratic sample term ((1-alpha)*Pav_i)^2 + Q^2 is epigraph-lifted
    with one free variable and one SOC block per sample; both limits then go
    through the hinge-based CVaR constraint at level beta.
    """
    pav_samples = np.asarray(pav_samples, dtype=float).ravel()
    n_s = pav_samples.size
    if n_s == 0:
        raise ConstructionError("need at least one available-power sample")
    q = q_plus - q_minus
    varpi1 = prog.add_var(f"{label}.varpi_s")
    m_ids = prog.add_vars(f"{label}.sq", n_s)
    g1 = []
    for i, pav in enumerate(pav_samples):
        u = alpha * (-pav) + pav          # (1 - alpha) * Pav_i
        m = prog.x(m_ids[i])
        # ||(u, q, (m-1)/2)|| <= (m+1)/2  <=>  u^2 + q^2 <= m
        prog.add_soc((m + 1.0) * 0.5, [u, q, (m - 1.0) * 0.5])
        g1.append(m - inv.s_max_kva ** 2)
    saa_cvar_constraint(g1, beta, prog.x(varpi1), prog, label=f"{label}.s")

    varpi2 = None
    if inv.pf_limit is not None:
        varpi2 = prog.add_var(f"{label}.varpi_pf")
        tan_th = math.tan(math.acos(inv.pf_limit))
        g2 = []
        for pav in pav_samples:
            # |Q| <= tan(theta) * (1-alpha) * Pav_i, with |Q| -> q+ + q-
            g2.append(q_plus + q_minus - (alpha * (-pav) + pav) * tan_th)
        saa_cvar_constraint(g2, beta, prog.x(varpi2), prog, label=f"{label}.pf")
    return varpi1, varpi2, m_ids


def distribution_stage_cost(prog: ConvexProgram, *, net_load_samples,
                            prices, q_abs: dict, curtail: dict,
                            label: str = "cost") -> LinExpr:
    """Expected stage cost: purchase and feed-in hinges per bus and sample,
    plus reactive-compensation and curtailment terms.

    ``net_load_samples`` maps bus -> list over samples of affine expressions
    for  P_l + P_B - (1-alpha)P_av  (kW); ``q_abs`` maps bus -> expression
    for |Q| (the split Q+ + Q-); ``curtail`` maps bus -> expression for
    alpha * mean available power.
    """
    a1, a2, a3, a4 = prices
    if min(a1, a2, a3, a4) < 0:
        raise ConfigurationError("cost prices must be nonnegative")
    cost = LinExpr()
    for bus, sample_exprs in net_load_samples.items():
        n_s = len(sample_exprs)
        h1 = prog.add_vars(f"{label}.buy[{bus}]", n_s, lb=0.0)
        h2 = prog.add_vars(f"{label}.feed[{bus}]", n_s, lb=0.0)
        for i, net in enumerate(sample_exprs):
            prog.add_ineq(net - prog.x(h1[i]))         # h1 >= net
            prog.add_ineq(-net - prog.x(h2[i]))        # h2 >= -net
            cost.add_term(h1[i], a1 / n_s)
            cost.add_term(h2[i], a2 / n_s)
    for bus, expr in q_abs.items():
        cost.add_scaled(as_expr(expr), a3)
    for bus, expr in curtail.items():
        cost.add_scaled(as_expr(expr), a4)
    return cost


# ---------------------------------------------------------------------------
# transmission-side devices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalGenerator:
    """Dispatchable unit with quadratic cost and an affine reserve policy.

    Optional scalar first-order dynamics x+ = dyn_a*x + dyn_b*u with output
    dyn_c*x + dyn_r; the defaults are a static pass-through (output = u).
    """

    bus: int
    c1: float
    c2: float
    c3: float = 0.0
    p_nom_mw: float = 0.0   # nominal disconnection magnitude for the catalog
    p_min_mw: float | None = None
    p_max_mw: float | None = None
    outage_eligible: bool = False
    name: str = ""
    dyn_a: float = 0.0
    dyn_b: float = 1.0
    dyn_c: float = 1.0
    dyn_r: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.c1 < 0:
            raise ConfigurationError(
                f"generator {self.name or self.bus}: quadratic cost must be >= 0")

    def is_passthrough(self) -> bool:
        return (self.dyn_a, self.dyn_b, self.dyn_c, self.dyn_r, self.x0) == \
            (0.0, 1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class WindFarm:
    """Uncontrolled feed-in: forecast + err_scale * xi[err] (MW)."""

    bus: int
    p_forecast_mw: float
    err: int
    err_scale_mw: float = 1.0
    name: str = ""


@dataclass(frozen=True)
class FixedLoad:
    bus: int
    p_mw: float
    outage_eligible: bool = False
    name: str = ""


@dataclass
class GeneratorPolicy:
    """Optimized affine reserve policy of one generator.

    ``d`` has shape (T, T, n_xi); block (tau, tau') couples stage tau output
    to stage-tau' errors and is exactly zero for tau' > tau (causality).
    ``r_mis`` maps outage id -> length-T response vector (per MW of
    mismatch); ``e`` is the nominal schedule.
    """

    device: int
    e: np.ndarray
    d: np.ndarray
    r_mis: dict[int, np.ndarray] = field(default_factory=dict)

    def causal(self) -> bool:
        t = self.d.shape[0]
        return all(np.all(self.d[tau, tau + 1:, :] == 0.0) for tau in range(t))


def generator_output(policy: GeneratorPolicy, xi_stack: np.ndarray,
                     outage: Outage | None) -> np.ndarray:
    """Stage-wise power u_tau = sum_{tau'<=tau} D[tau,tau'].xi_tau' +
    R_mis[j][tau]*P_mis + e[tau] for a numeric policy and error stack."""
    t = policy.e.shape[0]
    xi = np.atleast_2d(np.asarray(xi_stack, dtype=float))
    if xi.shape[0] != t:
        raise ConstructionError(f"xi stack needs {t} stages, got {xi.shape[0]}")
    out = policy.e.astype(float).copy()
    for tau in range(t):
        for tp in range(tau + 1):
            out[tau] += policy.d[tau, tp] @ xi[tp]
    if outage is not None and outage.kind != "none" and outage.p_mis != 0.0:
        if outage.oid not in policy.r_mis:
            raise ConstructionError(f"unknown outage id {outage.oid} for this policy")
        out += policy.r_mis[outage.oid] * outage.p_mis
    return out


def generation_cost(prog: ConvexProgram, gens, outputs_per_sample,
                    label: str = "gencost") -> LinExpr:
    """Expected quadratic generation cost over training samples.

    ``outputs_per_sample[g][tau][i]`` is the affine output expression of
    generator g at stage tau under sample i.  Quadratic parts are registered
    on the program; the linear + constant part is returned (and also added
    is left to the caller via the returned expression).
    """
    lin = LinExpr()
    for g, gen in enumerate(gens):
        if gen.c1 < 0:
            raise ConfigurationError("quadratic cost coefficient must be >= 0")
        for stage_exprs in outputs_per_sample[g]:
            n_s = len(stage_exprs)
            for expr in stage_exprs:
                if gen.c1 > 0:
                    prog.add_quad_cost(gen.c1 / n_s, expr)
                lin.add_scaled(as_expr(expr), gen.c2 / n_s)
            lin.const += gen.c3
    return lin

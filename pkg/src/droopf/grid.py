"""Linearized network physics.

Distribution feeders get LinDistFlow voltage sensitivities (common-path
resistance rule).  Transmission grids get DC power flow, PTDF (slack
referenced: the slack column is zero), LODF, and the N-1 outage catalog
with the signed generation-load mismatch per outage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Documented sanity bound: on the connected test systems shipped here, no
# LODF column of a non-islanding outage exceeds this magnitude.
LODF_MAGNITUDE_BOUND = 20.0

# |1 - h_jj| below this marks a line whose outage islands the grid.
ISLANDING_TOL = 1e-6


class TopologyError(ValueError):
    """Disconnected, non-radial, or otherwise invalid network topology."""


# ---------------------------------------------------------------------------
# distribution feeder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeederLine:
    f: int
    t: int
    r: float
    x: float


def _feeder_paths(n_bus: int, lines, slack: int):
    """Parent BFS over a radial feeder; returns per-bus path line-index sets."""
    adj: dict[int, list[tuple[int, int]]] = {b: [] for b in range(n_bus)}
    for idx, ln in enumerate(lines):
        if not (0 <= ln.f < n_bus and 0 <= ln.t < n_bus):
            raise TopologyError(f"line {idx} references unknown bus")
        adj[ln.f].append((ln.t, idx))
        adj[ln.t].append((ln.f, idx))
    if len(lines) != n_bus - 1:
        raise TopologyError(
            f"radial feeder needs {n_bus - 1} lines for {n_bus} buses, got {len(lines)}")
    paths: dict[int, frozenset[int]] = {slack: frozenset()}
    queue = [slack]
    seen = {slack}
    while queue:
        b = queue.pop()
        for nb, idx in adj[b]:
            if nb in seen:
                continue
            seen.add(nb)
            paths[nb] = paths[b] | {idx}
            queue.append(nb)
    if len(seen) != n_bus:
        raise TopologyError("feeder is disconnected from the slack bus")
    return paths


def lindistflow_sensitivities(n_bus: int, lines, slack: int = 0):
    """Voltage sensitivity matrices (R_v, X_v) of a radial feeder.

    R_v[m, n] = 2 * sum of resistances on the common slack path of m and n
    (LinDistFlow), likewise X_v with reactances; slack row/column are zero.
    """
    paths = _feeder_paths(n_bus, lines, slack)
    r_v = np.zeros((n_bus, n_bus))
    x_v = np.zeros((n_bus, n_bus))
    rs = np.array([ln.r for ln in lines])
    xs = np.array([ln.x for ln in lines])
    for m in range(n_bus):
        for n in range(m, n_bus):
            common = paths[m] & paths[n]
            if common:
                idx = list(common)
                r_v[m, n] = r_v[n, m] = 2.0 * rs[idx].sum()
                x_v[m, n] = x_v[n, m] = 2.0 * xs[idx].sum()
    return r_v, x_v


class DistributionFeeder:
    """Radial feeder with precomputed voltage sensitivities (per unit)."""

    def __init__(self, n_bus: int, lines, slack: int = 0, v_slack: float = 1.0,
                 vmax: float = 1.05, vmin: float = 0.95, sbase_kva: float = 1000.0):
        if vmin >= vmax:
            raise TopologyError(f"vmin {vmin} must be below vmax {vmax}")
        self.n_bus = int(n_bus)
        self.lines = tuple(lines)
        self.slack = int(slack)
        self.vmax = float(vmax)
        self.vmin = float(vmin)
        self.sbase_kva = float(sbase_kva)
        self.r_v, self.x_v = lindistflow_sensitivities(self.n_bus, self.lines, self.slack)
        self.v0 = np.full(self.n_bus, float(v_slack))

    def non_slack(self) -> list[int]:
        return [b for b in range(self.n_bus) if b != self.slack]


def voltage_profile(feeder: DistributionFeeder, p_pu: np.ndarray,
                    q_pu: np.ndarray) -> np.ndarray:
    """Bus voltages for per-unit net injections (positive = generation)."""
    p = np.asarray(p_pu, dtype=float)
    q = np.asarray(q_pu, dtype=float)
    if p.shape != (feeder.n_bus,) or q.shape != (feeder.n_bus,):
        raise TopologyError("injection vectors must have one entry per bus")
    return feeder.v0 + feeder.r_v @ p + feeder.x_v @ q


# ---------------------------------------------------------------------------
# transmission grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransLine:
    f: int
    t: int
    x: float
    limit: float    # MW, applies to both flow directions

    def __post_init__(self):
        if self.x <= 0:
            raise TopologyError(f"line {self.f}-{self.t}: reactance must be > 0")
        if self.limit <= 0:
            raise TopologyError(f"line {self.f}-{self.t}: flow limit must be > 0")


def _connected(n_bus: int, lines, skip: int | None = None,
               start: int = 0) -> tuple[bool, set]:
    adj: dict[int, list[int]] = {b: [] for b in range(n_bus)}
    for idx, ln in enumerate(lines):
        if idx == skip:
            continue
        adj[ln.f].append(ln.t)
        adj[ln.t].append(ln.f)
    seen = {start}
    stack = [start]
    while stack:
        b = stack.pop()
        for nb in adj[b]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n_bus, seen


def dc_flows(n_bus: int, lines, slack: int, injections: np.ndarray,
             skip_line: int | None = None) -> np.ndarray:
    """Fresh DC solve: angles from the reduced susceptance matrix, then flows.

    Any injection imbalance is absorbed at the slack.  Disconnected
    topologies (e.g. after removing ``skip_line``) raise TopologyError.
    Used as the independent oracle for PTDF/LODF checks.
    """
    ok, _ = _connected(n_bus, lines, skip=skip_line)
    if not ok:
        raise TopologyError("grid is disconnected; cannot run a DC solve")
    b_bus = np.zeros((n_bus, n_bus))
    for idx, ln in enumerate(lines):
        if idx == skip_line:
            continue
        w = 1.0 / ln.x
        b_bus[ln.f, ln.f] += w
        b_bus[ln.t, ln.t] += w
        b_bus[ln.f, ln.t] -= w
        b_bus[ln.t, ln.f] -= w
    keep = [b for b in range(n_bus) if b != slack]
    theta = np.zeros(n_bus)
    p = np.asarray(injections, dtype=float)
    theta[keep] = np.linalg.solve(b_bus[np.ix_(keep, keep)], p[keep])
    flows = np.zeros(len(lines))
    for idx, ln in enumerate(lines):
        if idx == skip_line:
            continue
        flows[idx] = (theta[ln.f] - theta[ln.t]) / ln.x
    return flows


def ptdf_matrix(n_bus: int, lines, slack: int) -> np.ndarray:
    """Slack-referenced PTDF: flow = PTDF @ injections, slack column zero."""
    ok, _ = _connected(n_bus, lines)
    if not ok:
        raise TopologyError("grid is disconnected")
    b_bus = np.zeros((n_bus, n_bus))
    b_f = np.zeros((len(lines), n_bus))
    for idx, ln in enumerate(lines):
        w = 1.0 / ln.x
        b_bus[ln.f, ln.f] += w
        b_bus[ln.t, ln.t] += w
        b_bus[ln.f, ln.t] -= w
        b_bus[ln.t, ln.f] -= w
        b_f[idx, ln.f] = w
        b_f[idx, ln.t] = -w
    keep = [b for b in range(n_bus) if b != slack]
    ptdf = np.zeros((len(lines), n_bus))
    ptdf[:, keep] = b_f[:, keep] @ np.linalg.inv(b_bus[np.ix_(keep, keep)])
    return ptdf


def lodf_matrix(ptdf: np.ndarray, lines) -> tuple[np.ndarray, np.ndarray]:
    """LODF plus per-line islanding flags (|1 - h_jj| ~ 0)."""
    n_l = len(lines)
    cft = np.zeros((ptdf.shape[1], n_l))
    for idx, ln in enumerate(lines):
        cft[ln.f, idx] = 1.0
        cft[ln.t, idx] = -1.0
    h = ptdf @ cft
    hd = np.diag(h)
    islanding = np.abs(1.0 - hd) < ISLANDING_TOL
    den = 1.0 - hd
    den[islanding] = 1.0     # avoid division blow-up; columns flagged invalid
    lodf = h / den[None, :]
    np.fill_diagonal(lodf, -1.0)
    lodf[:, islanding] = np.nan
    return lodf, islanding


class TransmissionGrid:
    """Meshed DC grid with precomputed PTDF/LODF (immutable after build)."""

    def __init__(self, n_bus: int, lines, slack: int = 0):
        self.n_bus = int(n_bus)
        self.lines = tuple(lines)
        self.slack = int(slack)
        self.ptdf = ptdf_matrix(self.n_bus, self.lines, self.slack)
        self.lodf, self.islanding = lodf_matrix(self.ptdf, self.lines)
        self.limits = np.array([ln.limit for ln in self.lines])

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def line_flows(self, injections: np.ndarray, balance: str = "slack") -> np.ndarray:
        """Flows for an injection vector.

        ``balance="slack"`` absorbs any imbalance at the slack bus (the PTDF
        convention); ``balance="uniform"`` spreads it uniformly over all
        buses, under which a uniform injection shift changes no flow.
        """
        p = np.asarray(injections, dtype=float)
        if balance == "uniform":
            p = p - p.mean()
        elif balance != "slack":
            raise ValueError(f"unknown balance mode {balance!r}")
        return self.ptdf @ p

    def outage_ptdf(self, line: int) -> np.ndarray:
        """PTDF of the grid with ``line`` removed, via the LODF composition."""
        if self.islanding[line]:
            raise TopologyError(
                f"outage of line {line} islands the grid; regenerate the catalog"
            )
        mod = self.ptdf + np.outer(self.lodf[:, line], self.ptdf[line, :])
        mod[line, :] = 0.0
        return mod


def lodf_postflows(grid: TransmissionGrid, base_flows: np.ndarray,
                   line: int) -> np.ndarray:
    """Post-outage flows  f_l + LODF[l, j] * f_j  (zero on the tripped line)."""
    if grid.islanding[line]:
        raise TopologyError(
            f"outage of line {line} islands the grid; regenerate the catalog")
    f = np.asarray(base_flows, dtype=float)
    out = f + grid.lodf[:, line] * f[line]
    out[line] = 0.0
    return out


# ---------------------------------------------------------------------------
# outage catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Outage:
    """One N-1 contingency with its signed generation-load mismatch."""

    oid: int
    kind: str                  # none | line | gen | load
    element: int               # line index or device index; -1 for base case
    lost_gens: tuple = ()      # thermal generator indices disconnected
    lost_winds: tuple = ()
    lost_loads: tuple = ()
    p_gone_gen: float = 0.0    # P_G^j (MW)
    p_gone_load: float = 0.0   # P_L^j (MW)
    islanding: bool = False

    @property
    def p_mis(self) -> float:
        return mismatch_power(self.kind, self.p_gone_gen, self.p_gone_load)


def mismatch_power(kind: str, p_gone_gen: float, p_gone_load: float) -> float:
    """Signed mismatch: P_L - P_G for line outages, +P_L for loads, -P_G for
    generators, 0 for the base case.  All catalog sign handling lives here."""
    if kind == "none":
        return 0.0
    if kind == "line":
        return p_gone_load - p_gone_gen
    if kind == "load":
        return p_gone_load
    if kind == "gen":
        return -p_gone_gen
    raise ValueError(f"unknown outage kind {kind!r}")


def enumerate_outages(grid: TransmissionGrid, gens=(), winds=(), loads=()) -> list[Outage]:
    """Base case plus one entry per eligible generator, eligible load and line.

    Line outages that island part of the grid list every disconnected device
    and aggregate their powers; non-islanding line outages carry zero
    mismatch.  Wind farms are never tripped directly (their uncertain
    injection cannot be rebalanced by a constant-mismatch policy) but can be
    lost to an islanding line outage, which assembly then rejects.
    """
    catalog = [Outage(0, "none", -1)]
    oid = 1
    for gi, gen in enumerate(gens):
        if getattr(gen, "outage_eligible", False):
            catalog.append(Outage(oid, "gen", gi, lost_gens=(gi,),
                                  p_gone_gen=gen.p_nom_mw))
            oid += 1
    for li, load in enumerate(loads):
        if getattr(load, "outage_eligible", False):
            catalog.append(Outage(oid, "load", li, lost_loads=(li,),
                                  p_gone_load=load.p_mw))
            oid += 1
    for idx in range(grid.n_lines):
        if not grid.islanding[idx]:
            catalog.append(Outage(oid, "line", idx))
        else:
            ok, reachable = _connected(grid.n_bus, grid.lines, skip=idx,
                                       start=grid.slack)
            assert not ok
            island = set(range(grid.n_bus)) - reachable
            lg = tuple(i for i, g in enumerate(gens) if g.bus in island)
            lw = tuple(i for i, w in enumerate(winds) if w.bus in island)
            ll = tuple(i for i, l in enumerate(loads) if l.bus in island)
            pg = sum(gens[i].p_nom_mw for i in lg) + sum(winds[i].p_forecast_mw for i in lw)
            pl = sum(loads[i].p_mw for i in ll)
            catalog.append(Outage(oid, "line", idx, lost_gens=lg, lost_winds=lw,
                                  lost_loads=ll, p_gone_gen=pg, p_gone_load=pl,
                                  islanding=True))
        oid += 1
    return catalog

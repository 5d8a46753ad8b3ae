"""Grid case files: parsing, validation, and the bundled example cases.

Case file format (structured text, ``schema = droopf-case-1``)::

    [meta]
    schema = droopf-case-1
    kind = distribution | transmission
    name = <string>
    n_xi = <int>                  # error vector dimension
    # distribution only:
    sbase_kva = <float>           # per-unit power base
    v_slack = <float>             # fixed substation voltage (p.u.)
    vmax = <float>
    vmin = <float>
    prices = a1,a2,a3,a4          # purchase, feed-in, |Q|, curtailment

    [buses]
    <bus label> [slack]           # one per line; exactly one slack

    [lines]
    <from> <to> <r_pu> <x_pu>              # distribution
    <from> <to> <x_pu> <limit_mw>          # transmission

    [devices]
    load <bus> p=<kW> q=<kVar> [perr=<k> pscale=<kW>] [qerr=<k> qscale=<kVar>]
    pv <bus> smax=<kVA> pav=<kW> [pf=<cos>] [err=<k> scale=<kW>]
    storage <bus> bmax=<kWh> [bmin=] [pmax=] [pmin=] [b0=]
    gen <bus> c1= c2= [c3=] [pnom=] [pmin=] [pmax=] [outage=0|1] [name=]
    wind <bus> pnom=<MW> err=<k> [scale=<MW>] [name=]
    load <bus> p=<MW> [outage=0|1] [name=]          # transmission load

    [profiles]                    # optional, distribution only
    <name> = v0,v1,...            # per-step multipliers, wraps cyclically

    [support]                     # optional bounded error support
    h1 h2 ... <= d

Distribution units are kW/kWh/p.u., transmission units MW; all unit
conversion happens in this loader and in the assembly's injection builder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .assembly import DistStageData
from .devices import (
    FixedLoad,
    LoadModel,
    ResInverter,
    StorageUnit,
    ThermalGenerator,
    WindFarm,
)
from .dro import SupportPolytope
from .grid import (
    DistributionFeeder,
    FeederLine,
    TransLine,
    TransmissionGrid,
    enumerate_outages,
)

SCHEMA = "droopf-case-1"


class CaseFormatError(ValueError):
    """Schema violation; message carries file, line and section context."""


@dataclass
class GridCase:
    """A loaded feeder or transmission case with attached devices."""

    kind: str
    name: str
    n_xi: int
    bus_labels: list
    # distribution
    feeder: DistributionFeeder | None = None
    loads: list = field(default_factory=list)
    pvs: list = field(default_factory=list)
    storages: list = field(default_factory=list)
    prices: tuple = (10.0, 3.0, 3.0, 6.0)
    profiles: dict = field(default_factory=dict)
    # transmission
    grid: TransmissionGrid | None = None
    gens: list = field(default_factory=list)
    winds: list = field(default_factory=list)
    tloads: list = field(default_factory=list)
    support: SupportPolytope | None = None

    def bus_index(self, label) -> int:
        return self.bus_labels.index(label)

    def profile(self, name: str, t: int) -> float:
        prof = self.profiles.get(name)
        if prof is None or len(prof) == 0:
            return 1.0
        return float(prof[t % len(prof)])

    def stage_data(self, t0: int, n_stages: int) -> DistStageData:
        """Nominal per-device stage data from the case profiles (cyclic)."""
        load_p = np.zeros((n_stages, len(self.loads)))
        load_q = np.zeros((n_stages, len(self.loads)))
        pav = np.zeros((n_stages, len(self.pvs)))
        for s in range(n_stages):
            lm = self.profile("load", t0 + s)
            sm = self.profile("solar", t0 + s)
            for i, ld in enumerate(self.loads):
                load_p[s, i] = ld.p_kw * lm
                load_q[s, i] = ld.q_kvar * lm
            for i, pv in enumerate(self.pvs):
                pav[s, i] = pv.pav_kw * sm
        return DistStageData(load_p, load_q, pav)

    def outage_catalog(self):
        if self.kind != "transmission":
            raise CaseFormatError("outage catalogs exist for transmission cases only")
        return enumerate_outages(self.grid, gens=self.gens, winds=self.winds,
                                 loads=self.tloads)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _err(path, lineno, section, msg) -> CaseFormatError:
    where = f"{path}:{lineno}" if lineno else str(path)
    sec = f" [{section}]" if section else ""
    return CaseFormatError(f"{where}:{sec} {msg}")


def _parse_kv(fields, path, lineno, section):
    out = {}
    for f in fields:
        if "=" not in f:
            raise _err(path, lineno, section, f"expected key=value, got {f!r}")
        k, _, v = f.partition("=")
        out[k] = v
    return out


def _fnum(kv, key, path, lineno, section, default=None):
    if key not in kv:
        if default is not None:
            return default
        raise _err(path, lineno, section, f"missing required field {key!r}")
    try:
        return float(kv[key])
    except ValueError:
        raise _err(path, lineno, section, f"field {key!r} is not a number")


def load_case_text(text: str, path: str = "<case>") -> GridCase:
    meta: dict[str, str] = {}
    bus_rows, line_rows, dev_rows, prof_rows, sup_rows = [], [], [], [], []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in ("meta", "buses", "lines", "devices",
                               "profiles", "support"):
                raise _err(path, lineno, section, "unknown section")
            continue
        if section == "meta":
            if "=" not in line:
                raise _err(path, lineno, section, "expected key = value")
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
        elif section == "buses":
            bus_rows.append((lineno, line.split()))
        elif section == "lines":
            line_rows.append((lineno, line.split()))
        elif section == "devices":
            dev_rows.append((lineno, line.split()))
        elif section == "profiles":
            prof_rows.append((lineno, line))
        elif section == "support":
            sup_rows.append(line)
        else:
            raise _err(path, lineno, None, "content before any section header")

    if meta.get("schema") != SCHEMA:
        raise _err(path, 0, "meta",
                   f"unsupported schema {meta.get('schema')!r}; expected {SCHEMA!r}")
    kind = meta.get("kind")
    if kind not in ("distribution", "transmission"):
        raise _err(path, 0, "meta", f"kind must be distribution|transmission, got {kind!r}")
    try:
        n_xi = int(meta.get("n_xi", "0"))
    except ValueError:
        raise _err(path, 0, "meta", "n_xi must be an integer")

    labels, slack = [], None
    for lineno, fields in bus_rows:
        try:
            label = int(fields[0])
        except ValueError:
            raise _err(path, lineno, "buses", f"bus label must be an integer: {fields[0]!r}")
        if label in labels:
            raise _err(path, lineno, "buses", f"duplicate bus {label}")
        if len(fields) > 1:
            if fields[1] != "slack":
                raise _err(path, lineno, "buses", f"unexpected token {fields[1]!r}")
            if slack is not None:
                raise _err(path, lineno, "buses", "second slack bus")
            slack = len(labels)
        labels.append(label)
    if not labels:
        raise _err(path, 0, "buses", "no buses defined")
    if slack is None:
        raise _err(path, 0, "buses", "no slack bus marked")
    index = {label: i for i, label in enumerate(labels)}

    def bus_of(tok, lineno, section):
        try:
            label = int(tok)
        except ValueError:
            raise _err(path, lineno, section, f"bus reference must be an integer: {tok!r}")
        if label not in index:
            raise _err(path, lineno, section, f"unknown bus {label}")
        return index[label]

    case = GridCase(kind=kind, name=meta.get("name", "unnamed"), n_xi=n_xi,
                    bus_labels=labels)

    if kind == "distribution":
        lines = []
        for lineno, fields in line_rows:
            if len(fields) != 4:
                raise _err(path, lineno, "lines", "expected: from to r_pu x_pu")
            lines.append(FeederLine(bus_of(fields[0], lineno, "lines"),
                                    bus_of(fields[1], lineno, "lines"),
                                    float(fields[2]), float(fields[3])))
        case.feeder = DistributionFeeder(
            len(labels), lines, slack=slack,
            v_slack=float(meta.get("v_slack", "1.0")),
            vmax=float(meta.get("vmax", "1.05")),
            vmin=float(meta.get("vmin", "0.95")),
            sbase_kva=float(meta.get("sbase_kva", "1000.0")))
        if "prices" in meta:
            vals = [float(v) for v in meta["prices"].split(",")]
            if len(vals) != 4:
                raise _err(path, 0, "meta", "prices needs four comma-separated values")
            case.prices = tuple(vals)
    else:
        lines = []
        for lineno, fields in line_rows:
            if len(fields) != 4:
                raise _err(path, lineno, "lines", "expected: from to x_pu limit_mw")
            lines.append(TransLine(bus_of(fields[0], lineno, "lines"),
                                   bus_of(fields[1], lineno, "lines"),
                                   float(fields[2]), float(fields[3])))
        case.grid = TransmissionGrid(len(labels), lines, slack=slack)

    for lineno, fields in dev_rows:
        dtype = fields[0]
        if len(fields) < 2:
            raise _err(path, lineno, "devices", "device needs a bus")
        bus = bus_of(fields[1], lineno, "devices")
        kv = _parse_kv(fields[2:], path, lineno, "devices")

        def err_index(key):
            if key not in kv:
                return -1
            k = int(kv[key])
            if not 0 <= k < n_xi:
                raise _err(path, lineno, "devices",
                           f"error component {k} outside 0..{n_xi - 1}")
            return k

        if kind == "distribution" and dtype == "load":
            case.loads.append(LoadModel(
                bus, _fnum(kv, "p", path, lineno, "devices"),
                _fnum(kv, "q", path, lineno, "devices", 0.0),
                p_err=err_index("perr"),
                p_err_scale=_fnum(kv, "pscale", path, lineno, "devices", 0.0),
                q_err=err_index("qerr"),
                q_err_scale=_fnum(kv, "qscale", path, lineno, "devices", 0.0)))
        elif kind == "distribution" and dtype == "pv":
            pf = kv.get("pf")
            case.pvs.append(ResInverter(
                bus, _fnum(kv, "smax", path, lineno, "devices"),
                _fnum(kv, "pav", path, lineno, "devices"),
                pf_limit=float(pf) if pf not in (None, "none") else None,
                err=err_index("err"),
                err_scale=_fnum(kv, "scale", path, lineno, "devices", 0.0)))
        elif kind == "distribution" and dtype == "storage":
            bmax = _fnum(kv, "bmax", path, lineno, "devices")
            case.storages.append(StorageUnit(
                bus, bmax,
                b_min_kwh=_fnum(kv, "bmin", path, lineno, "devices", 0.0),
                p_max_kw=float(kv["pmax"]) if "pmax" in kv else None,
                p_min_kw=float(kv["pmin"]) if "pmin" in kv else None,
                b0_kwh=float(kv["b0"]) if "b0" in kv else None))
        elif kind == "transmission" and dtype == "gen":
            case.gens.append(ThermalGenerator(
                bus, _fnum(kv, "c1", path, lineno, "devices"),
                _fnum(kv, "c2", path, lineno, "devices"),
                _fnum(kv, "c3", path, lineno, "devices", 0.0),
                p_nom_mw=_fnum(kv, "pnom", path, lineno, "devices", 0.0),
                p_min_mw=float(kv["pmin"]) if "pmin" in kv else None,
                p_max_mw=float(kv["pmax"]) if "pmax" in kv else None,
                outage_eligible=kv.get("outage", "0") == "1",
                name=kv.get("name", f"g{bus}")))
        elif kind == "transmission" and dtype == "wind":
            k = err_index("err")
            if k < 0:
                raise _err(path, lineno, "devices", "wind farm needs err=<component>")
            case.winds.append(WindFarm(
                bus, _fnum(kv, "pnom", path, lineno, "devices"), k,
                err_scale_mw=_fnum(kv, "scale", path, lineno, "devices", 1.0),
                name=kv.get("name", f"w{bus}")))
        elif kind == "transmission" and dtype == "load":
            case.tloads.append(FixedLoad(
                bus, _fnum(kv, "p", path, lineno, "devices"),
                outage_eligible=kv.get("outage", "0") == "1",
                name=kv.get("name", f"l{bus}")))
        else:
            raise _err(path, lineno, "devices",
                       f"unknown device type {dtype!r} for a {kind} case")

    for lineno, line in prof_rows:
        if "=" not in line:
            raise _err(path, lineno, "profiles", "expected name = v0,v1,...")
        name, _, values = line.partition("=")
        try:
            case.profiles[name.strip()] = np.array(
                [float(v) for v in values.split(",")])
        except ValueError:
            raise _err(path, lineno, "profiles", "profile values must be numbers")

    if sup_rows:
        case.support = SupportPolytope.from_text("\n".join(sup_rows), dim=n_xi)
        if case.support.h.shape[1] != n_xi:
            raise _err(path, 0, "support", "support width != n_xi")
    return case


def load_case(path) -> GridCase:
    """Parse and validate a case file; errors name the section and line."""
    with open(path) as fh:
        return load_case_text(fh.read(), str(path))


def bundled_case(name: str) -> GridCase:
    """Load one of the cases shipped with the package (no extension)."""
    ref = resources.files("droopf.cases").joinpath(f"{name}.case")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise CaseFormatError(f"no bundled case named {name!r}")
    return load_case_text(text, f"bundled:{name}")


def bundled_case_names() -> list[str]:
    out = []
    for entry in resources.files("droopf.cases").iterdir():
        if entry.name.endswith(".case"):
            out.append(entry.name[:-5])
    return sorted(out)

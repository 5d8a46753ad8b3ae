"""Solver-agnostic representation of convex programs plus solve adapters.

The intermediate representation (IR) covers everything the OPF assemblies
emit: linear equalities/inequalities, second-order cones ||u||_2 <= t, and
a convex quadratic objective stored as a weighted sum of squared affine
expressions (PSD by construction).  Backends adapt the IR to an actual
solver; no backend-specific concept leaks back into the IR.

Debug text format (stable, versioned, used by ``dump_program`` /
``parse_program``)::

    convexprogram v1
    var <id> <name> <lb> <ub>
    objconst <float>
    objlin <expr>
    objquad <weight> | <expr>
    eq <expr>          # meaning expr == 0
    ineq <expr>        # meaning expr <= 0
    soc <t expr> | <u1 expr> | <u2 expr> ...

where ``<expr>`` is ``<const> <id>:<coef> <id>:<coef> ...`` with ids sorted
and floats written with ``repr`` (exact round trip).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Single configurable feasibility tolerance (absolute) used by the
# independent solution recheck.
TOLERANCE = 1e-6

INF = math.inf


class ProgramError(ValueError):
    """Malformed program construction or text format."""


class UnsupportedProgramError(ProgramError):
    """Program uses blocks the selected backend cannot handle."""


class LinExpr:
    """Sparse affine expression  sum_i coef_i * x_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def variable(vid: int, coef: float = 1.0) -> "LinExpr":
        return LinExpr({vid: float(coef)})

    @staticmethod
    def constant(c: float) -> "LinExpr":
        return LinExpr(None, c)

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, vid: int, coef: float) -> None:
        if coef == 0.0:
            return
        c = self.terms.get(vid)
        if c is None:
            self.terms[vid] = coef
        else:
            c += coef
            if c == 0.0:
                del self.terms[vid]
            else:
                self.terms[vid] = c

    def add_scaled(self, other: "LinExpr", scale: float = 1.0) -> "LinExpr":
        """In-place self += scale * other (returns self for chaining)."""
        if scale == 0.0:
            return self
        self.const += scale * other.const
        for vid, coef in other.terms.items():
            self.add_term(vid, scale * coef)
        return self

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, LinExpr):
            out.add_scaled(other)
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({v: -c for v, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        out = self.copy()
        if isinstance(other, LinExpr):
            out.add_scaled(other, -1.0)
        else:
            out.const -= float(other)
        return out

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scale):
        scale = float(scale)
        return LinExpr({v: scale * c for v, c in self.terms.items()},
                       scale * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scale):
        return self * (1.0 / float(scale))

    def is_constant(self) -> bool:
        return not self.terms

    def value(self, x: np.ndarray) -> float:
        acc = self.const
        for vid, coef in self.terms.items():
            acc += coef * x[vid]
        return acc

    def __repr__(self):
        return f"LinExpr({self.terms!r}, {self.const!r})"


def as_expr(obj) -> LinExpr:
    """Coerce a number or LinExpr into a LinExpr."""
    if isinstance(obj, LinExpr):
        return obj
    return LinExpr.constant(float(obj))


@dataclass
class VarInfo:
    vid: int
    name: str
    lb: float
    ub: float


@dataclass
class Solution:
    """Result of a solve, with an independent feasibility recheck.

    ``status`` is one of optimal | infeasible | unbounded |
    numerical-failure.  ``duals`` carries per-row multipliers for the
    stacked inequality/equality blocks when the backend provides them
    (nonnegative for inequalities, Lagrangian sign convention).
    """

    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: dict | None = None
    wall_time: float = 0.0
    max_residual: float | None = None
    backend: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class ConvexProgram:
    """Container for variables, constraint blocks and the objective."""

    def __init__(self):
        self.variables: list[VarInfo] = []
        self.eq_rows: list[LinExpr] = []          # expr == 0
        self.ineq_rows: list[LinExpr] = []        # expr <= 0
        self.soc_blocks: list[tuple[LinExpr, list[LinExpr]]] = []  # ||u|| <= t
        self.obj_lin = LinExpr()
        self.obj_quad: list[tuple[float, LinExpr]] = []  # sum w * expr^2

    # -- construction -----------------------------------------------------
    def add_var(self, name: str, lb: float = -INF, ub: float = INF) -> int:
        if lb > ub:
            raise ProgramError(f"variable {name}: lb {lb} > ub {ub}")
        if any(ch.isspace() for ch in name):
            raise ProgramError(f"variable name may not contain whitespace: {name!r}")
        vid = len(self.variables)
        self.variables.append(VarInfo(vid, name, float(lb), float(ub)))
        return vid

    def add_vars(self, name: str, n: int, lb: float = -INF, ub: float = INF) -> list[int]:
        return [self.add_var(f"{name}[{i}]", lb, ub) for i in range(n)]

    def x(self, vid: int) -> LinExpr:
        """Expression holding a single variable."""
        return LinExpr.variable(vid)

    def _check(self, expr: LinExpr) -> LinExpr:
        n = len(self.variables)
        for vid in expr.terms:
            if not 0 <= vid < n:
                raise ProgramError(f"expression references unknown variable id {vid}")
        return expr

    def add_eq(self, expr: LinExpr, rhs: float = 0.0) -> int:
        """Add expr == rhs; returns the row index."""
        row = self._check(as_expr(expr) - rhs)
        self.eq_rows.append(row)
        return len(self.eq_rows) - 1

    def add_ineq(self, expr: LinExpr, ub: float = 0.0) -> int:
        """Add expr <= ub; returns the row index."""
        row = self._check(as_expr(expr) - ub)
        self.ineq_rows.append(row)
        return len(self.ineq_rows) - 1

    def add_soc(self, t: LinExpr, u: list[LinExpr]) -> int:
        self._check(t)
        u = [self._check(as_expr(e)) for e in u]
        self.soc_blocks.append((as_expr(t), u))
        return len(self.soc_blocks) - 1

    def add_lin_cost(self, expr) -> None:
        self.obj_lin.add_scaled(as_expr(expr))

    def add_quad_cost(self, weight: float, expr: LinExpr) -> None:
        """Add weight * expr^2 to the objective; weight must be >= 0."""
        if weight < 0:
            raise ProgramError(f"quadratic weight must be nonnegative, got {weight}")
        if weight > 0:
            self.obj_quad.append((float(weight), self._check(as_expr(expr))))

    # -- inspection --------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def is_lp(self) -> bool:
        return not self.soc_blocks and not self.obj_quad

    def counts(self) -> dict:
        return {
            "vars": self.n_vars,
            "eq": len(self.eq_rows),
            "ineq": len(self.ineq_rows),
            "soc": len(self.soc_blocks),
            "quad_terms": len(self.obj_quad),
        }

    def objective_value(self, x: np.ndarray) -> float:
        val = self.obj_lin.value(x)
        for w, e in self.obj_quad:
            val += w * e.value(x) ** 2
        return val

    def max_residual(self, x: np.ndarray) -> float:
        """Largest absolute constraint violation at x (bounds included)."""
        worst = 0.0
        for row in self.eq_rows:
            worst = max(worst, abs(row.value(x)))
        for row in self.ineq_rows:
            worst = max(worst, row.value(x))
        for t, u in self.soc_blocks:
            norm = math.sqrt(sum(e.value(x) ** 2 for e in u))
            worst = max(worst, norm - t.value(x))
        for v in self.variables:
            xi = x[v.vid]
            if v.lb > -INF:
                worst = max(worst, v.lb - xi)
            if v.ub < INF:
                worst = max(worst, xi - v.ub)
        return worst

    # -- matrix export (shared by backends) --------------------------------
    def _stack(self, rows: list[LinExpr]):
        """Rows as (sparse A, b) so that A x <= b (or == b)."""
        data, ri, ci, b = [], [], [], np.zeros(len(rows))
        for i, row in enumerate(rows):
            b[i] = -row.const
            for vid, coef in row.terms.items():
                ri.append(i)
                ci.append(vid)
                data.append(coef)
        a = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n_vars))
        return a, b

    def ineq_matrix(self):
        return self._stack(self.ineq_rows)

    def eq_matrix(self):
        return self._stack(self.eq_rows)

    def lin_cost_vector(self):
        c = np.zeros(self.n_vars)
        for vid, coef in self.obj_lin.terms.items():
            c[vid] = coef
        return c, self.obj_lin.const

    def bounds_arrays(self):
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return lb, ub


def expand_inf_norm(exprs: list[LinExpr], bound: LinExpr, prog: ConvexProgram) -> None:
    """Enforce ||e||_inf <= bound by adding +-e_j <= bound for each component.

    An empty vector adds no constraints and leaves the bound untouched.
    """
    bound = as_expr(bound)
    for e in exprs:
        e = as_expr(e)
        prog.add_ineq(e - bound)
        prog.add_ineq(-e - bound)


# ---------------------------------------------------------------------------
# text dump / parse
# ---------------------------------------------------------------------------

def _fmt_float(v: float) -> str:
    if v == INF:
        return "inf"
    if v == -INF:
        return "-inf"
    return repr(float(v))


def _fmt_expr(e: LinExpr) -> str:
    parts = [_fmt_float(e.const)]
    parts += [f"{vid}:{_fmt_float(c)}" for vid, c in sorted(e.terms.items())]
    return " ".join(parts)


def _parse_expr(tok: str, lineno: int) -> LinExpr:
    fields = tok.split()
    if not fields:
        raise ProgramError(f"line {lineno}: empty expression")
    try:
        e = LinExpr(None, float(fields[0]))
        for f in fields[1:]:
            vid, coef = f.split(":")
            e.add_term(int(vid), float(coef))
    except ValueError as exc:
        raise ProgramError(f"line {lineno}: bad expression token ({exc})") from exc
    return e


def dump_program(prog: ConvexProgram) -> str:
    lines = ["convexprogram v1"]
    for v in prog.variables:
        lines.append(f"var {v.vid} {v.name} {_fmt_float(v.lb)} {_fmt_float(v.ub)}")
    lines.append(f"objconst {_fmt_float(prog.obj_lin.const)}")
    body = LinExpr(prog.obj_lin.terms, 0.0)
    lines.append(f"objlin {_fmt_expr(body)}")
    for w, e in prog.obj_quad:
        lines.append(f"objquad {_fmt_float(w)} | {_fmt_expr(e)}")
    for row in prog.eq_rows:
        lines.append(f"eq {_fmt_expr(row)}")
    for row in prog.ineq_rows:
        lines.append(f"ineq {_fmt_expr(row)}")
    for t, u in prog.soc_blocks:
        segs = " | ".join([_fmt_expr(t)] + [_fmt_expr(e) for e in u])
        lines.append(f"soc {segs}")
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> ConvexProgram:
    prog = ConvexProgram()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "convexprogram v1":
        raise ProgramError("missing/unknown header (expected 'convexprogram v1')")
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, _, rest = line.partition(" ")
        if kind == "var":
            vid, name, lb, ub = rest.split()
            got = prog.add_var(name, float(lb), float(ub))
            if got != int(vid):
                raise ProgramError(f"line {lineno}: variable ids must be contiguous")
        elif kind == "objconst":
            prog.obj_lin.const = float(rest)
        elif kind == "objlin":
            e = _parse_expr(rest, lineno)
            e.const += prog.obj_lin.const
            prog.obj_lin = prog._check(e)
        elif kind == "objquad":
            w, _, expr = rest.partition("|")
            prog.add_quad_cost(float(w), _parse_expr(expr, lineno))
        elif kind == "eq":
            prog.add_eq(_parse_expr(rest, lineno))
        elif kind == "ineq":
            prog.add_ineq(_parse_expr(rest, lineno))
        elif kind == "soc":
            segs = [_parse_expr(s, lineno) for s in rest.split("|")]
            prog.add_soc(segs[0], segs[1:])
        else:
            raise ProgramError(f"line {lineno}: unknown record {kind!r}")
    return prog


# ---------------------------------------------------------------------------
# quadratic -> SOC rewrite (for backends without native QP support)
# ---------------------------------------------------------------------------

def quad_to_soc(prog: ConvexProgram) -> ConvexProgram:
    """Copy of prog with the quadratic objective epigraph-lifted into a SOC.

    sum w_i e_i^2 <= t  via  ||(2*sqrt(w_i)*e_i ..., 1-t)||_2 <= 1+t.
    """
    out = ConvexProgram()
    out.variables = [VarInfo(v.vid, v.name, v.lb, v.ub) for v in prog.variables]
    out.eq_rows = [r.copy() for r in prog.eq_rows]
    out.ineq_rows = [r.copy() for r in prog.ineq_rows]
    out.soc_blocks = [(t.copy(), [e.copy() for e in u]) for t, u in prog.soc_blocks]
    out.obj_lin = prog.obj_lin.copy()
    if prog.obj_quad:
        t = out.add_var("_quad_epi", lb=0.0)
        te = LinExpr.variable(t)
        u = [e * (2.0 * math.sqrt(w)) for w, e in prog.obj_quad]
        u.append(1.0 - te)
        out.add_soc(1.0 + te, u)
        out.add_lin_cost(te)
    return out


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

class _CvxpyBackend:
    """ECOS/Clarabel/SCS family through cvxpy."""

    def __init__(self, solver: str, supports_quadratic: bool = True):
        self.solver = solver
        self.supports_quadratic = supports_quadratic
        self.supports_soc = True

    def solve(self, prog: ConvexProgram, options: dict):
        import cvxpy as cp

        n = prog.n_vars
        x = cp.Variable(n)
        cons = []
        a_in, b_in = prog.ineq_matrix()
        if a_in.shape[0]:
            cons.append(a_in @ x <= b_in)
        a_eq, b_eq = prog.eq_matrix()
        if a_eq.shape[0]:
            cons.append(a_eq @ x == b_eq)
        lb, ub = prog.bounds_arrays()
        lmask = lb > -INF
        umask = ub < INF
        if lmask.any():
            cons.append(x[np.where(lmask)[0]] >= lb[lmask])
        if umask.any():
            cons.append(x[np.where(umask)[0]] <= ub[umask])
        for t, u in prog.soc_blocks:
            tv = _cp_affine(t, x, cp)
            uv = cp.hstack([_cp_affine(e, x, cp) for e in u])
            cons.append(cp.SOC(tv, uv))
        c, c0 = prog.lin_cost_vector()
        obj = c @ x + c0
        for w, e in prog.obj_quad:
            obj = obj + w * cp.square(_cp_affine(e, x, cp))
        problem = cp.Problem(cp.Minimize(obj), cons)
        try:
            problem.solve(solver=self.solver, **options)
        except cp.error.SolverError:
            return "numerical-failure", None, None
        status_map = {
            cp.OPTIMAL: "optimal",
            cp.OPTIMAL_INACCURATE: "optimal",
            cp.INFEASIBLE: "infeasible",
            cp.INFEASIBLE_INACCURATE: "infeasible",
            cp.UNBOUNDED: "unbounded",
            cp.UNBOUNDED_INACCURATE: "unbounded",
        }
        status = status_map.get(problem.status, "numerical-failure")
        if status != "optimal" or x.value is None:
            return status, None, None
        duals = {}
        idx = 0
        if a_in.shape[0]:
            duals["ineq"] = np.asarray(cons[idx].dual_value).ravel()
            idx += 1
        if a_eq.shape[0]:
            duals["eq"] = np.asarray(cons[idx].dual_value).ravel()
        return status, np.asarray(x.value).ravel(), duals


def _cp_affine(e: LinExpr, x, cp):
    if not e.terms:
        return e.const
    ids = np.fromiter(e.terms.keys(), dtype=int)
    coefs = np.fromiter(e.terms.values(), dtype=float)
    return coefs @ x[ids] + e.const


class _ScipyLinprogBackend:
    """Pure-LP backend on scipy's HiGHS interface."""

    supports_quadratic = False
    supports_soc = False
    solver = "highs"

    def solve(self, prog: ConvexProgram, options: dict):
        from scipy.optimize import linprog

        if prog.soc_blocks:
            raise UnsupportedProgramError("scipy backend handles LPs only (SOC present)")
        a_in, b_in = prog.ineq_matrix()
        a_eq, b_eq = prog.eq_matrix()
        c, _ = prog.lin_cost_vector()
        lb, ub = prog.bounds_arrays()
        bounds = list(zip(np.where(lb > -INF, lb, -np.inf),
                          np.where(ub < INF, ub, np.inf)))
        res = linprog(
            c,
            A_ub=a_in if a_in.shape[0] else None,
            b_ub=b_in if a_in.shape[0] else None,
            A_eq=a_eq if a_eq.shape[0] else None,
            b_eq=b_eq if a_eq.shape[0] else None,
            bounds=bounds,
            method="highs",
            options=options or None,
        )
        if res.status == 2:
            return "infeasible", None, None
        if res.status == 3:
            return "unbounded", None, None
        if res.status != 0:
            return "numerical-failure", None, None
        duals = {}
        if a_in.shape[0]:
            duals["ineq"] = -np.asarray(res.ineqlin.marginals)
        if a_eq.shape[0]:
            duals["eq"] = -np.asarray(res.eqlin.marginals)
        return "optimal", np.asarray(res.x), duals


_BACKENDS = {
    "clarabel": _CvxpyBackend("CLARABEL"),
    "scs": _CvxpyBackend("SCS", supports_quadratic=False),
    "scipy": _ScipyLinprogBackend(),
}

DEFAULT_BACKEND = "clarabel"


def backend_names() -> list[str]:
    return sorted(_BACKENDS)


def solve(prog: ConvexProgram, backend: str = DEFAULT_BACKEND, **options) -> Solution:
    """Solve the program and independently recheck the returned point.

    The objective value reported is recomputed from the IR at the returned
    point (never taken from the backend).  A point whose worst constraint
    violation exceeds TOLERANCE downgrades the status to numerical-failure.
    """
    try:
        impl = _BACKENDS[backend]
    except KeyError:
        raise ProgramError(f"unknown backend {backend!r}; have {backend_names()}")
    work = prog
    if prog.obj_quad and not impl.supports_quadratic:
        if not impl.supports_soc:
            raise UnsupportedProgramError(
                f"backend {backend!r} supports neither quadratics nor SOC")
        work = quad_to_soc(prog)
    t0 = time.perf_counter()
    status, xfull, duals = impl.solve(work, options)
    wall = time.perf_counter() - t0
    if status != "optimal":
        return Solution(status=status, wall_time=wall, backend=backend)
    x = xfull[: prog.n_vars]
    resid = prog.max_residual(x)
    if resid > TOLERANCE:
        return Solution(status="numerical-failure", x=x, wall_time=wall,
                        max_residual=resid, backend=backend)
    return Solution(
        status="optimal",
        x=x,
        objective=prog.objective_value(x),
        duals=duals,
        wall_time=wall,
        max_residual=resid,
        backend=backend,
    )

"""Wasserstein-ball worst-case expectation and CVaR constraint machinery.

Losses are pointwise maxima of pieces affine in the uncertainty, with piece
coefficients affine in decision variables.  The worst case over a ball of
distributions (1-norm ground metric, radius ``eps``, centered on the
empirical distribution of the training samples) compiles into linear
constraint blocks; the dual of the 1-norm appears as an inf-norm bound,
which is expanded into signed linear rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .convex import ConvexProgram, LinExpr, as_expr, expand_inf_norm, solve


class ParameterDomainError(ValueError):
    """A risk level or radius is outside its admissible domain."""


class ConstructionError(ValueError):
    """Inconsistent dimensions or otherwise malformed inputs."""


class SolveFailure(RuntimeError):
    def __init__(self, status: str, context: str = ""):
        super().__init__(f"solver returned status {status!r} {context}".strip())
        self.status = status


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """Training matrix of forecast-error samples, one row per sample."""

    samples: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "samples", arr)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConstructionError("need at least one sample of dimension >= 1")
        if not np.all(np.isfinite(arr)):
            raise ConstructionError("samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ConstructionError(f"{path}: empty sample CSV")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ConstructionError(f"{path}: no sample rows")
        return cls(np.array(rows), tuple(header))

    def to_csv(self, path) -> None:
        names = self.names or tuple(f"xi_{j}" for j in range(self.dim))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in self.samples:
                writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SupportPolytope:
    """Support set {xi : H xi <= d}; zero rows encode unbounded support."""

    h: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1, self.h.shape[-1]) \
            if np.size(self.h) else np.zeros((0, 0))
        d = np.asarray(self.d, dtype=float).ravel()
        object.__setattr__(self, "h", np.atleast_2d(h) if h.size else h)
        object.__setattr__(self, "d", d)
        if self.h.shape[0] != d.shape[0]:
            raise ConstructionError("H and d row counts differ")

    @classmethod
    def unbounded(cls, dim: int) -> "SupportPolytope":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def box(cls, lo, hi) -> "SupportPolytope":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ConstructionError("invalid box bounds")
        eye = np.eye(lo.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def from_text(cls, block: str, dim: int | None = None) -> "SupportPolytope":
        """Parse lines of the form ``h_1 ... h_n <= d`` (blank/# lines skipped)."""
        rows, rhs = [], []
        for lineno, raw in enumerate(block.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "<=" not in line:
                raise ConstructionError(f"support line {lineno}: missing '<='")
            left, _, right = line.partition("<=")
            rows.append([float(v) for v in left.split()])
            rhs.append(float(right))
        if not rows:
            return cls.unbounded(dim if dim is not None else 1)
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ConstructionError("support rows have inconsistent widths")
        return cls(np.array(rows), np.array(rhs))

    def to_text(self) -> str:
        lines = []
        for row, b in zip(self.h, self.d):
            lines.append(" ".join(repr(float(v)) for v in row) + " <= " + repr(float(b)))
        return "\n".join(lines)

    @property
    def n_rows(self) -> int:
        return self.h.shape[0]

    def is_unbounded(self) -> bool:
        return self.n_rows == 0

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> bool:
        if self.is_unbounded():
            return True
        pts = np.atleast_2d(points)
        return bool(np.all(pts @ self.h.T <= self.d + tol))


@dataclass(frozen=True)
class AmbiguitySet:
    """Empirical samples + support polytope + transport budget (1-norm)."""

    data: SampleSet
    support: SupportPolytope
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ParameterDomainError(f"radius must be >= 0, got {self.radius}")
        if not self.support.is_unbounded():
            if self.support.h.shape[1] != self.data.dim:
                raise ConstructionError("support dimension != sample dimension")
            if not self.support.contains(self.data.samples):
                raise ConstructionError("some training sample violates the support")

    @classmethod
    def from_samples(cls, samples, radius: float = 0.0,
                     support: SupportPolytope | None = None) -> "AmbiguitySet":
        data = samples if isinstance(samples, SampleSet) else SampleSet(np.asarray(samples))
        if support is None:
            support = SupportPolytope.unbounded(data.dim)
        return cls(data, support, float(radius))

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def n_samples(self) -> int:
        return self.data.n_samples


class MaxAffineLoss:
    """max_k ( a_k . xi + b_k ) with a_k, b_k numbers or LinExpr."""

    def __init__(self, pieces, n_xi: int | None = None):
        if not pieces:
            raise ConstructionError("loss needs at least one piece")
        norm = []
        for a, b in pieces:
            a = list(np.atleast_1d(a)) if not isinstance(a, (list, tuple)) else list(a)
            if n_xi is None:
                n_xi = len(a)
            if len(a) != n_xi:
                raise ConstructionError("loss pieces have inconsistent xi dimension")
            norm.append((a, b))
        self.pieces = norm
        self.n_xi = int(n_xi)

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    @classmethod
    def from_arrays(cls, a: np.ndarray, b: np.ndarray) -> "MaxAffineLoss":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ConstructionError("piece count mismatch between a and b")
        return cls([(a[k], b[k]) for k in range(a.shape[0])], a.shape[1])

    def is_numeric(self) -> bool:
        for a, b in self.pieces:
            if isinstance(b, LinExpr) and not b.is_constant():
                return False
            for c in a:
                if isinstance(c, LinExpr) and not c.is_constant():
                    return False
        return True

    def numeric_arrays(self):
        if not self.is_numeric():
            raise ConstructionError("loss has decision-dependent coefficients")
        a = np.zeros((self.n_pieces, self.n_xi))
        b = np.zeros(self.n_pieces)
        for k, (ak, bk) in enumerate(self.pieces):
            a[k] = [c.const if isinstance(c, LinExpr) else float(c) for c in ak]
            b[k] = bk.const if isinstance(bk, LinExpr) else float(bk)
        return a, b

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Numeric loss at each row of ``points`` (shape (m, n_xi) or (n_xi,))."""
        a, b = self.numeric_arrays()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts @ a.T + b).max(axis=1)


@dataclass
class DroCertificate:
    """Variable ids of one worst-case-expectation block plus its objective term."""

    label: str
    lam: int                     # ball-radius multiplier, >= 0
    s: list[int]                 # per-sample epigraph values
    sigma: np.ndarray | None     # support multipliers, ids (n_s, K, L); None if L = 0
    kappa: int | None            # CVaR threshold variable when the loss came from one
    objective_term: LinExpr
    rho: float

    def term_value(self, x: np.ndarray) -> float:
        return self.objective_term.value(x)

    def worst_case_value(self, x: np.ndarray) -> float | None:
        """Worst-case expectation of the underlying loss (term / rho)."""
        if self.rho == 0:
            return None
        return self.term_value(x) / self.rho


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def cvar_to_max_affine(a, b, eta: float, kappa) -> MaxAffineLoss:
    """Two-piece max-affine epigraph of the CVaR of an affine loss.

    For g(xi) = a.xi + b and threshold variable kappa,
    CVaR_eta(g) = min_kappa E[ max(kappa + (g - kappa)/eta, kappa) ],
    so the pieces are (a/eta, kappa(1 - 1/eta) + b/eta) and (0, kappa).
    """
    if not 0.0 < eta <= 1.0:
        raise ParameterDomainError(f"risk level must lie in (0, 1], got {eta}")
    a = list(np.atleast_1d(a)) if not isinstance(a, (list, tuple)) else list(a)
    inv = 1.0 / eta
    a1 = [c * inv for c in a]
    kap = kappa if isinstance(kappa, LinExpr) else as_expr(kappa)
    b1 = kap * (1.0 - inv) + (b * inv)
    a2 = [0.0] * len(a)
    return MaxAffineLoss([(a1, b1), (a2, kap)], len(a))


def wc_expectation_epigraph(loss: MaxAffineLoss, amb: AmbiguitySet, rho: float,
                            prog: ConvexProgram, label: str = "wc",
                            kappa: int | None = None) -> DroCertificate:
    """Add the certificate block bounding rho * sup_ball E[loss] from above.

    Allocates lam >= 0, one s_i per sample and, for a bounded support,
    nonnegative multipliers sigma_ikl; emits, for every sample i and piece k,

        rho*(b_k + a_k.xi_i + sigma_ik.(d - H xi_i)) <= s_i
        || H^T sigma_ik - rho*a_k ||_inf <= lam        (2 n_xi rows)

    and returns the certificate whose objective term is
    lam*eps + mean_i s_i.  With an unbounded support the sigma terms vanish
    and the inf-norm rows collapse to one set per piece.
    """
    if rho < 0:
        raise ParameterDomainError(f"risk weight must be >= 0, got {rho}")
    if loss.n_xi != amb.dim:
        raise ConstructionError(
            f"loss dimension {loss.n_xi} != ambiguity dimension {amb.dim}")
    xs = amb.data.samples
    n_s, n_xi = xs.shape
    big_k = loss.n_pieces
    big_l = amb.support.n_rows
    lam = prog.add_var(f"{label}.lam", lb=0.0)
    lam_e = prog.x(lam)
    s_ids = prog.add_vars(f"{label}.s", n_s)

    piece_a = [[as_expr(c) for c in a] for a, _ in loss.pieces]
    piece_b = [as_expr(b) for _, b in loss.pieces]

    sigma_ids = None
    if big_l:
        sigma_ids = np.array([
            [prog.add_vars(f"{label}.sig[{i}][{k}]", big_l, lb=0.0)
             for k in range(big_k)]
            for i in range(n_s)
        ], dtype=int)
        slack = amb.support.d - xs @ amb.support.h.T   # (n_s, L), >= 0 on samples

    for k in range(big_k):
        ak, bk = piece_a[k], piece_b[k]
        if not big_l:
            # || rho*a_k ||_inf <= lam, identical for every sample: add once.
            expand_inf_norm([c * rho for c in ak], lam_e, prog)
        for i in range(n_s):
            row = LinExpr()
            row.add_scaled(bk, rho)
            for j in range(n_xi):
                if xs[i, j] != 0.0:
                    row.add_scaled(ak[j], rho * xs[i, j])
            if big_l:
                for l in range(big_l):
                    row.add_term(int(sigma_ids[i, k, l]), rho * slack[i, l])
            row.add_term(s_ids[i], -1.0)
            prog.add_ineq(row)
            if big_l:
                comps = []
                for j in range(n_xi):
                    c = ak[j] * (-rho)
                    for l in range(big_l):
                        c.add_term(int(sigma_ids[i, k, l]), amb.support.h[l, j])
                    comps.append(c)
                expand_inf_norm(comps, lam_e, prog)

    term = lam_e * amb.radius
    for sid in s_ids:
        term.add_term(sid, 1.0 / n_s)
    return DroCertificate(label, lam, s_ids, sigma_ids, kappa, term, rho)


def wc_expectation_value(loss: MaxAffineLoss, amb: AmbiguitySet,
                         backend: str = "scipy") -> float:
    """sup over the ball of E[loss] for a numeric loss, via the dual LP.

    The default LP backend returns vertex solutions, so degenerate cases
    like a zero radius reproduce the sample average to machine precision.
    """
    loss.numeric_arrays()   # raises on decision-dependent coefficients
    prog = ConvexProgram()
    cert = wc_expectation_epigraph(loss, amb, 1.0, prog)
    prog.add_lin_cost(cert.objective_term)
    sol = solve(prog, backend=backend)
    if not sol.optimal:
        raise SolveFailure(sol.status, "in wc_expectation_value")
    return float(sol.objective)


def saa_cvar_constraint(g_exprs, beta: float, varpi, prog: ConvexProgram,
                        label: str = "saa") -> None:
    """Empirical-CVaR constraint  mean_i [g_i + varpi]_+ <= varpi * beta.

    Equivalent to CVaR_beta(g) <= 0 under the substitution varpi = -t of the
    usual epigraph form; each hinge gets one nonnegative auxiliary.
    """
    if not 0.0 < beta <= 1.0:
        raise ParameterDomainError(f"risk level must lie in (0, 1], got {beta}")
    g_exprs = [as_expr(g) for g in g_exprs]
    n = len(g_exprs)
    if n == 0:
        raise ConstructionError("need at least one sample expression")
    varpi = as_expr(varpi)
    h_ids = prog.add_vars(f"{label}.h", n, lb=0.0)
    for g, hid in zip(g_exprs, h_ids):
        prog.add_ineq(g + varpi - prog.x(hid))
    mean_row = LinExpr()
    for hid in h_ids:
        mean_row.add_term(hid, 1.0 / n)
    prog.add_ineq(mean_row - varpi * beta)


def transport_lp_oracle(loss: MaxAffineLoss, amb: AmbiguitySet,
                        grid: np.ndarray) -> float:
    """Brute-force worst case by an explicit transport LP on a support grid.

    Maximizes sum_j loss(atom_j) * mass_j over plans moving the empirical
    distribution onto the atoms with total 1-norm transport cost <= radius.
    The training samples are always included as atoms (they lie inside the
    support), so the stay-put plan is feasible for any radius.  Lower-bounds
    the dual value; the gap vanishes as the grid refines.
    """
    atoms = np.atleast_2d(np.asarray(grid, dtype=float))
    if atoms.ndim != 2 or atoms.shape[0] == 0:
        raise ConstructionError("grid must contain at least one atom")
    if atoms.shape[1] != amb.dim:
        raise ConstructionError("grid dimension != ambiguity dimension")
    atoms = np.vstack([atoms, amb.data.samples])
    vals = loss.evaluate(atoms)                      # (M,)
    xs = amb.data.samples                            # (n_s, d)
    n_s, m = xs.shape[0], atoms.shape[0]
    # plan q[i, j] flattened row-major
    cost = np.abs(xs[:, None, :] - atoms[None, :, :]).sum(axis=2).ravel()
    c = -np.tile(vals, n_s)
    a_eq = sp.kron(sp.eye(n_s), np.ones((1, m)), format="csr")
    b_eq = np.full(n_s, 1.0 / n_s)
    res = linprog(
        c,
        A_ub=sp.csr_matrix(cost[None, :]),
        b_ub=np.array([amb.radius]),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise SolveFailure(f"linprog status {res.status}", "in transport_lp_oracle")
    return float(-res.fun)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def box_grid(lo, hi, step: float) -> np.ndarray:
    """Uniform grid over a box, inclusive of the box corners."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = []
    for a, b in zip(lo, hi):
        n = int(round((b - a) / step)) + 1
        axes.append(np.linspace(a, b, n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def empirical_max_affine_mean(loss: MaxAffineLoss, samples: np.ndarray) -> float:
    """Sample average of a numeric max-affine loss."""
    return float(loss.evaluate(samples).mean())

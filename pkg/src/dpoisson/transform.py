"""Closure operations and coordinate changes for self-referential structures.

Each operation takes a matrix whose entries are Casimir invariants of the
matrix itself and produces another one: sandwich products with odd or even
matrix polynomials, conjugation by commuting Casimir-built matrices,
multiplicative scaling by a function of the Casimirs, diffeomorphic
coordinate changes whose Jacobian is built from Casimirs, entrywise sums
and alternating products.

The conclusions are conditional, so every hypothesis (symmetry class,
commutation, Casimir form of the auxiliary entries, shared invariants) is
checked numerically on a sample region first; operations refuse with a
:class:`HypothesisError` rather than return a matrix that was never
guaranteed to close.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .core import (CasimirSet, StructureMatrix, VerificationReport,
                   rank_profile, verify_casimir, verify_dsolution, DEFAULT_TOL)

__all__ = [
    "MatrixPolynomial", "CasimirMatrix", "CoordinateChange",
    "HypothesisError", "ExpressionSwellError",
    "matrix_poly", "thm1_skew_sandwich", "thm1_commuting_sym",
    "thm1_conjugate", "thm1_even_sandwich", "scale_by_casimir",
    "change_coordinates", "sum_structures", "alternating_product",
    "MAX_ENTRY_NODES",
]

# Symbolic swell is the dominant failure mode of repeated matrix products;
# per-entry trees larger than this abort with a clear error.
MAX_ENTRY_NODES = 10_000


class HypothesisError(ValueError):
    """An enforced hypothesis failed; carries the diagnostic report."""

    def __init__(self, message, report=None):
        if report is not None:
            message = f"{message}: {report.summary()}"
        super().__init__(message)
        self.report = report


class ExpressionSwellError(RuntimeError):
    """A symbolic entry outgrew the configured node cap."""


# ---------------------------------------------------------------------------
# expression-matrix helpers
# ---------------------------------------------------------------------------

def _guard(e, max_nodes):
    if ex.count_nodes(e) > max_nodes:
        raise ExpressionSwellError(
            f"entry grew beyond {max_nodes} nodes; "
            "reduce the polynomial degree or the power count")
    return e


def _mat_mul(A, B, max_nodes=MAX_ENTRY_NODES):
    n = len(A)
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = None
            for k in range(n):
                a, b = A[i][k], B[k][j]
                if _is_zero(a) or _is_zero(b):
                    continue
                term = ex.Mul(a, b)
                acc = term if acc is None else ex.Add(acc, term)
            out[i][j] = _guard(ex.simplify(acc) if acc is not None
                               else ex.Const(0.0), max_nodes)
    return out


def _mat_add(A, B):
    return [[ex.simplify(ex.Add(a, b)) for a, b in zip(ra, rb)]
            for ra, rb in zip(A, B)]


def _mat_scale(c, A):
    return [[ex.simplify(ex.Mul(ex.Const(c), a)) for a in row] for row in A]


def _transpose(A):
    return [list(row) for row in zip(*A)]


def _is_zero(e):
    return type(e) is ex.Const and e.value == 0.0


def _eval_dense(entries, env, samples):
    n = len(entries)
    out = np.zeros((n, n, samples))
    with np.errstate(all="ignore"):
        for i in range(n):
            for j in range(n):
                if not _is_zero(entries[i][j]):
                    out[i, j] = entries[i][j].eval(env)
    return out


def _wrap_skew(entries, variables, region, tol):
    """Wrap a dense expression matrix as a structurally skew matrix.

    The upper triangle is kept; before discarding the lower one, the
    numeric mismatch |M_ij + M_ji| is checked on the region so that a
    hypothesis violation cannot slip through silently.
    """
    n = len(entries)
    env = region.env()
    vals = _eval_dense(entries, env, region.samples)
    mismatch = vals + np.swapaxes(vals, 0, 1)
    finite = np.isfinite(mismatch).all()
    scale = 1.0 + (np.abs(vals).max() if finite else 0.0)
    worst = np.abs(mismatch).max() if finite else np.inf
    if not finite or worst > max(tol, 1e-9) * scale:
        raise HypothesisError(
            f"result is not skew-symmetric on the region "
            f"(mismatch {worst:.3g}); a hypothesis must be violated")
    upper = {}
    for i in range(n):
        for j in range(i + 1, n):
            if not _is_zero(entries[i][j]):
                upper[(i + 1, j + 1)] = entries[i][j]
    return StructureMatrix(variables, upper)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixPolynomial:
    """Odd or even real matrix polynomial without constant term.

    ``coefficients[k]`` multiplies J^(2k+1) for odd parity and J^(2k+2)
    for even parity.
    """

    parity: str
    coefficients: tuple

    def __post_init__(self):
        if self.parity not in ("odd", "even"):
            raise ValueError("parity must be 'odd' or 'even'")
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("a matrix polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def odd(cls, *coefficients):
        return cls("odd", tuple(coefficients))

    @classmethod
    def even(cls, *coefficients):
        return cls("even", tuple(coefficients))

    def powers(self):
        start = 1 if self.parity == "odd" else 2
        return [start + 2 * k for k in range(len(self.coefficients))]


def matrix_poly(J, poly, max_nodes=MAX_ENTRY_NODES):
    """Evaluate a matrix polynomial of ``J`` symbolically.

    Returns a dense n x n list of simplified expressions (skew-symmetric
    for odd parity, symmetric for even parity).
    """
    base = J.as_list()
    square = _mat_mul(base, base, max_nodes)
    power = base if poly.parity == "odd" else square
    coeffs = poly.coefficients
    acc = _mat_scale(coeffs[0], power)
    for c in coeffs[1:]:
        power = _mat_mul(power, square, max_nodes)
        if c != 0.0:
            acc = _mat_add(acc, _mat_scale(c, power))
    return acc


@dataclass(frozen=True)
class CasimirMatrix:
    """Auxiliary matrix whose entries are functions of Casimir invariants.

    Entries live in the coordinates of the target matrix (the Casimir
    expressions are substituted in at construction).  The symmetry tag is
    validated structurally: after simplification the transpose must match
    (skew up to sign).
    """

    entries: tuple
    symmetry: str

    def __post_init__(self):
        if self.symmetry not in ("skew", "symmetric", "general"):
            raise ValueError("symmetry must be 'skew', 'symmetric' or 'general'")
        rows = tuple(tuple(ex.simplify(e if isinstance(e, ex.Expr)
                                       else ex.Const(e)) for e in row)
                     for row in self.entries)
        n = len(rows)
        if any(len(row) != n for row in rows):
            raise ValueError("entries must form a square matrix")
        object.__setattr__(self, "entries", rows)
        if self.symmetry == "skew":
            for i in range(n):
                if not _is_zero(rows[i][i]):
                    raise ValueError("skew matrix needs a zero diagonal")
                for j in range(i + 1, n):
                    if not _is_zero(ex.simplify(ex.Add(rows[i][j], rows[j][i]))):
                        raise ValueError(
                            f"entries ({i+1},{j+1})/({j+1},{i+1}) are not "
                            "structural negations")
        elif self.symmetry == "symmetric":
            for i in range(n):
                for j in range(i + 1, n):
                    if not _is_zero(ex.simplify(ex.Sub(rows[i][j], rows[j][i]))):
                        raise ValueError(
                            f"entries ({i+1},{j+1})/({j+1},{i+1}) differ")

    @property
    def n(self):
        return len(self.entries)

    @classmethod
    def constant(cls, array, symmetry):
        array = np.asarray(array, dtype=float)
        rows = [[ex.Const(v) for v in row] for row in array]
        return cls(tuple(tuple(r) for r in rows), symmetry)

    @classmethod
    def identity(cls, n, scale=1.0):
        return cls.constant(np.eye(n) * float(scale), "symmetric")

    @classmethod
    def from_functions(cls, entries_y, casimirs, symmetry, y_names=None):
        """Build from entries written in y1..y_m, substituting the
        Casimir expressions positionally for the y variables."""
        casimirs = list(casimirs)
        if y_names is None:
            y_names = [f"y{i}" for i in range(1, len(casimirs) + 1)]
        bindings = dict(zip(y_names, casimirs))
        rows = []
        for row in entries_y:
            out_row = []
            for e in row:
                if not isinstance(e, ex.Expr):
                    e = ex.parse(str(e), y_names)
                extra = ex.free_vars(e) - set(y_names)
                if extra:
                    raise ValueError(
                        f"entry uses variables {sorted(extra)} outside "
                        f"{list(y_names)}")
                out_row.append(ex.substitute(e, bindings))
            rows.append(tuple(out_row))
        return cls(tuple(rows), symmetry)

    def as_list(self):
        return [list(row) for row in self.entries]


def _check_casimir_entries(J, A, region, tol, what="auxiliary matrix"):
    """Every (distinct, non-constant) entry must be a Casimir invariant of J."""
    seen = set()
    for row in A.entries:
        for e in row:
            k = e.key()
            if k in seen or not ex.free_vars(e):
                continue
            seen.add(k)
            rep = verify_casimir(J, e, region, tol)
            if not rep.passed:
                raise HypothesisError(
                    f"entry {ex.to_string(e)} of the {what} is not a "
                    "Casimir invariant of the input", rep)


def _check_commutes(J, A, region, tol):
    env = region.env()
    Jv = J.eval_entries(env)
    Av = _eval_dense(A.as_list(), env, region.samples)
    AJ = np.einsum("ikN,kjN->ijN", Av, Jv)
    JA = np.einsum("ikN,kjN->ijN", Jv, Av)
    diff = AJ - JA
    if not np.isfinite(diff).all():
        raise HypothesisError("commutator check hit a singular evaluation")
    worst = float(np.abs(diff).max())
    scale = 1.0 + float(np.abs(AJ).max())
    if worst > max(tol, 1e-9) * scale:
        raise HypothesisError(
            f"auxiliary matrix does not commute with the input "
            f"(max commutator entry {worst:.3g})")


# ---------------------------------------------------------------------------
# closure operations
# ---------------------------------------------------------------------------

def thm1_skew_sandwich(J, A, P, m, region, tol=DEFAULT_TOL,
                       max_nodes=MAX_ENTRY_NODES):
    """(P(J) A)^m P(J) for odd P, skew Casimir-built A and integer m >= 0."""
    if P.parity != "odd":
        raise HypothesisError("the polynomial must be odd")
    if A.symmetry != "skew":
        raise HypothesisError("the auxiliary matrix must be skew-symmetric")
    if m < 0:
        raise HypothesisError("the power m must be a non-negative integer")
    _check_casimir_entries(J, A, region, tol)
    PJ = matrix_poly(J, P, max_nodes)
    sandwich = _mat_mul(PJ, A.as_list(), max_nodes)
    out = PJ
    for _ in range(int(m)):
        out = _mat_mul(sandwich, out, max_nodes)
    return _wrap_skew(out, J.variables, region, tol)


def thm1_commuting_sym(J, A, P, m, region, tol=DEFAULT_TOL,
                       max_nodes=MAX_ENTRY_NODES):
    """(A P(J))^m for odd P, symmetric commuting Casimir-built A, odd m >= 1."""
    if P.parity != "odd":
        raise HypothesisError("the polynomial must be odd")
    if A.symmetry != "symmetric":
        raise HypothesisError("the auxiliary matrix must be symmetric")
    if m < 1 or m % 2 == 0:
        raise HypothesisError("the power m must be an odd integer >= 1")
    _check_casimir_entries(J, A, region, tol)
    _check_commutes(J, A, region, tol)
    PJ = matrix_poly(J, P, max_nodes)
    factor = _mat_mul(A.as_list(), PJ, max_nodes)
    out = factor
    for _ in range(int(m) - 1):
        out = _mat_mul(factor, out, max_nodes)
    return _wrap_skew(out, J.variables, region, tol)


def thm1_conjugate(J, A, P, region, tol=DEFAULT_TOL,
                   max_nodes=MAX_ENTRY_NODES):
    """A P(J) A^T for odd P and a commuting Casimir-built A (any symmetry)."""
    if P.parity != "odd":
        raise HypothesisError("the polynomial must be odd")
    _check_casimir_entries(J, A, region, tol)
    _check_commutes(J, A, region, tol)
    PJ = matrix_poly(J, P, max_nodes)
    out = _mat_mul(_mat_mul(A.as_list(), PJ, max_nodes),
                   _transpose(A.as_list()), max_nodes)
    return _wrap_skew(out, J.variables, region, tol)


def thm1_even_sandwich(J, A, Q, m, region, tol=DEFAULT_TOL,
                       max_nodes=MAX_ENTRY_NODES):
    """(Q(J) A)^m Q(J) for even constant-term-free Q, skew A, odd m >= 1."""
    if Q.parity != "even":
        raise HypothesisError("the polynomial must be even (no constant term)")
    if A.symmetry != "skew":
        raise HypothesisError("the auxiliary matrix must be skew-symmetric")
    if m < 1 or m % 2 == 0:
        raise HypothesisError("the power m must be an odd integer >= 1")
    _check_casimir_entries(J, A, region, tol)
    QJ = matrix_poly(J, Q, max_nodes)
    sandwich = _mat_mul(QJ, A.as_list(), max_nodes)
    out = QJ
    for _ in range(int(m)):
        out = _mat_mul(sandwich, out, max_nodes)
    return _wrap_skew(out, J.variables, region, tol)


def scale_by_casimir(J, eta, casimirs, region, tol=DEFAULT_TOL, y_names=None):
    """Entrywise product of J with eta(D_1, ..., D_m).

    ``eta`` is an expression in y1..y_m (or the names passed in
    ``y_names``); the generators of ``casimirs`` are substituted
    positionally after each one is verified against J.
    """
    casimirs = list(casimirs)
    if y_names is None:
        y_names = [f"y{i}" for i in range(1, len(casimirs) + 1)]
    if not isinstance(eta, ex.Expr):
        eta = ex.parse(str(eta), y_names)
    for d in casimirs:
        rep = verify_casimir(J, d, region, tol)
        if not rep.passed:
            raise HypothesisError(
                f"claimed Casimir {ex.to_string(d)} fails verification", rep)
    factor = ex.substitute(eta, dict(zip(y_names, casimirs)))
    upper = {}
    for i, j, e in J.upper_items():
        if not _is_zero(e):
            upper[(i, j)] = ex.simplify(ex.Mul(factor, e))
    return StructureMatrix(J.variables, upper)


@dataclass(frozen=True)
class CoordinateChange:
    """Diffeomorphism given by explicit forward and inverse expression maps.

    ``forward`` is written in ``x_vars`` and ``inverse`` in ``y_vars``;
    the composition inverse(forward(x)) = x is verified numerically when
    the change is applied.
    """

    x_vars: tuple
    y_vars: tuple
    forward: tuple
    inverse: tuple

    def __post_init__(self):
        x_vars, y_vars = tuple(self.x_vars), tuple(self.y_vars)
        object.__setattr__(self, "x_vars", x_vars)
        object.__setattr__(self, "y_vars", y_vars)
        if len(x_vars) != len(y_vars):
            raise ValueError("forward and inverse spaces must share a dimension")
        fwd = tuple(e if isinstance(e, ex.Expr) else ex.parse(str(e), x_vars)
                    for e in self.forward)
        inv = tuple(e if isinstance(e, ex.Expr) else ex.parse(str(e), y_vars)
                    for e in self.inverse)
        if len(fwd) != len(x_vars) or len(inv) != len(x_vars):
            raise ValueError("maps must have one component per coordinate")
        for e in fwd:
            extra = ex.free_vars(e) - set(x_vars)
            if extra:
                raise ValueError(f"forward map uses {sorted(extra)}")
        for e in inv:
            extra = ex.free_vars(e) - set(y_vars)
            if extra:
                raise ValueError(f"inverse map uses {sorted(extra)}")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)

    @classmethod
    def identity(cls, variables):
        variables = tuple(variables)
        vs = tuple(ex.Var(v) for v in variables)
        return cls(variables, variables, vs, vs)

    @classmethod
    def linear(cls, matrix, x_vars, y_vars=None):
        """Invertible linear change y = M x with exact rational-free inverse."""
        M = np.asarray(matrix, dtype=float)
        n = len(tuple(x_vars))
        if M.shape != (n, n):
            raise ValueError("matrix shape does not match the variables")
        Minv = np.linalg.inv(M)
        x_vars = tuple(x_vars)
        y_vars = tuple(y_vars) if y_vars is not None else x_vars
        fwd = [ex.simplify(_linear_form(M[i], x_vars)) for i in range(n)]
        inv = [ex.simplify(_linear_form(Minv[i], y_vars)) for i in range(n)]
        return cls(x_vars, y_vars, tuple(fwd), tuple(inv))

    def jacobian(self):
        """Entries d forward_i / d x_j, simplified."""
        return [[ex.differentiate(f, v) for v in self.x_vars]
                for f in self.forward]

    def check_inverse(self, region, tol=1e-9):
        """Max |inverse(forward(x)) - x| over the region's samples."""
        env = region.env()
        with np.errstate(all="ignore"):
            yvals = {yv: np.broadcast_to(np.asarray(f.eval(env), dtype=float),
                                         (region.samples,))
                     for yv, f in zip(self.y_vars, self.forward)}
            worst = 0.0
            for xv, g in zip(self.x_vars, self.inverse):
                back = np.broadcast_to(np.asarray(g.eval(yvals), dtype=float),
                                       (region.samples,))
                err = np.abs(back - env[xv])
                if not np.isfinite(err).all():
                    return np.inf
                worst = max(worst, float(err.max()))
        return worst


def _linear_form(row, variables):
    e = ex.Const(0.0)
    for c, v in zip(row, variables):
        if c != 0.0:
            e = ex.Add(e, ex.Mul(ex.Const(float(c)), ex.Var(v)))
    return e


def change_coordinates(J, change, region, casimir_jacobian=False,
                       tol=DEFAULT_TOL, max_nodes=MAX_ENTRY_NODES):
    """Push J forward through a coordinate change.

    Computes A J A^T with A the Jacobian of the forward map, substitutes
    the inverse map, and returns the result over the new coordinates.
    The inverse is always verified on the region (tolerance 1e-9); with
    ``casimir_jacobian`` every Jacobian entry is additionally required to
    be a Casimir invariant of J, which is the hypothesis under which the
    self-referential property is guaranteed to survive.
    """
    if tuple(change.x_vars) != tuple(J.variables):
        raise ValueError("change of variables does not match the matrix")
    inv_err = change.check_inverse(region)
    if inv_err > 1e-9:
        raise HypothesisError(
            f"inverse map fails round-trip check (max error {inv_err:.3g})")
    A = [[ex.simplify(e) for e in row] for row in change.jacobian()]
    if casimir_jacobian:
        wrapped = CasimirMatrix(tuple(tuple(row) for row in A), "general")
        _check_casimir_entries(J, wrapped, region, tol, what="Jacobian")
    M = _mat_mul(_mat_mul(A, J.as_list(), max_nodes), _transpose(A), max_nodes)
    pushed = _wrap_skew(M, J.variables, region, tol)

    bindings = dict(zip(J.variables, change.inverse))
    upper = {}
    for i, j, e in pushed.upper_items():
        if _is_zero(e):
            continue
        moved = ex.substitute(e, bindings, change.y_vars)
        upper[(i, j)] = _guard(ex.simplify(moved), max_nodes)
    return StructureMatrix(change.y_vars, upper)


# ---------------------------------------------------------------------------
# sums and alternating products
# ---------------------------------------------------------------------------

def _check_shared_casimirs(matrices, shared_casimirs, region, tol):
    """Proxy for equality of the full Casimir sets: every generator must be
    a verified Casimir invariant of every input matrix."""
    for d in shared_casimirs:
        for idx, J in enumerate(matrices, start=1):
            rep = verify_casimir(J, d, region, tol)
            if not rep.passed:
                raise HypothesisError(
                    f"shared Casimir {ex.to_string(d)} fails against "
                    f"input #{idx}", rep)


def _warn_low_rank(matrices, region):
    # The closure statements assume constant rank >= 2; sampled violations
    # are surfaced but not fatal.
    for idx, J in enumerate(matrices, start=1):
        prof = rank_profile(J, region)
        ranks = set(prof.counts)
        if len(ranks) > 1 or (ranks and min(ranks) < 2):
            warnings.warn(
                f"input #{idx} has sampled ranks {sorted(ranks)}; the sum/"
                "product closure assumes constant rank >= 2", stacklevel=3)


def _reverify(J, region, tol, what):
    report = verify_dsolution(J, region, tol)
    if not report.passed:
        raise HypothesisError(
            f"{what} failed re-verification; the shared-Casimir hypothesis "
            "is apparently insufficient", report)
    return J


def sum_structures(J1, J2, shared_casimirs, region, tol=DEFAULT_TOL):
    """Entrywise sum of two self-referential matrices with equal Casimir sets.

    The shared set is represented by generators, each verified against
    both inputs; the result is re-verified before being returned.
    """
    if J1.n != J2.n or J1.variables != J2.variables:
        raise ValueError("the matrices live in different coordinates")
    _check_shared_casimirs((J1, J2), shared_casimirs, region, tol)
    _warn_low_rank((J1, J2), region)
    upper = {}
    for i, j, e in J1.upper_items():
        s = ex.simplify(ex.Add(e, J2.entry(i, j)))
        if not _is_zero(s):
            upper[(i, j)] = s
    out = StructureMatrix(J1.variables, upper)
    return _reverify(out, region, tol, "the sum")


def alternating_product(matrices, shared_casimirs, region, tol=DEFAULT_TOL,
                        max_nodes=MAX_ENTRY_NODES):
    """J_1 ... J_p + (-1)^(p+1) J_p ... J_1 for matrices with equal Casimir sets.

    The p = 2 case is the commutator; p = 1 returns exactly twice the
    input.  As for sums, generators are verified against every input and
    the result is re-verified.
    """
    matrices = list(matrices)
    if not matrices:
        raise ValueError("need at least one matrix")
    n, variables = matrices[0].n, matrices[0].variables
    for J in matrices[1:]:
        if J.n != n or J.variables != variables:
            raise ValueError("the matrices live in different coordinates")
    _check_shared_casimirs(matrices, shared_casimirs, region, tol)
    _warn_low_rank(matrices, region)

    forward = matrices[0].as_list()
    for J in matrices[1:]:
        forward = _mat_mul(forward, J.as_list(), max_nodes)
    backward = matrices[-1].as_list()
    for J in reversed(matrices[:-1]):
        backward = _mat_mul(backward, J.as_list(), max_nodes)
    sign = 1.0 if len(matrices) % 2 == 1 else -1.0
    dense = _mat_add(forward, _mat_scale(sign, backward))
    out = _wrap_skew(dense, variables, region, tol)
    return _reverify(out, region, tol, "the alternating product")

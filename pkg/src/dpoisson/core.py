"""Structure matrices and numerical verification of their defining identities.

A :class:`StructureMatrix` is a skew-symmetric matrix of expressions; the
verifiers sample a :class:`SampleRegion` and report the worst residual of
the identity under test (bracket closure, kernel-gradient / Casimir
property, or the self-referential condition that every entry is a Casimir
invariant of the matrix itself).  All checks are seeded and deterministic.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex

__all__ = [
    "StructureMatrix", "SampleRegion", "VerificationReport", "CasimirSet",
    "RankProfile", "make_matrix", "default_variables",
    "jacobi_residual", "verify_jacobi", "kg_residual", "verify_casimir",
    "verify_dsolution", "rank_at", "rank_profile", "find_linear_casimirs",
    "DEFAULT_TOL", "DEFAULT_RANK_TOL",
]

# Residuals of exact identities sit at rounding scale for O(1) entries on
# unit boxes; rank thresholds are relative to the largest singular value.
DEFAULT_TOL = 1e-9
DEFAULT_RANK_TOL = 1e-8


def default_variables(n):
    return tuple(f"x{i}" for i in range(1, n + 1))


def _coerce_entry(entry, variables):
    if isinstance(entry, ex.Expr):
        extra = ex.free_vars(entry) - set(variables)
        if extra:
            raise ValueError(f"entry uses undeclared variable(s) {sorted(extra)}")
        return entry
    return ex.parse(str(entry), variables)


class StructureMatrix:
    """Skew-symmetric matrix of expressions over named variables.

    Skew-symmetry is structural: only the upper triangle is stored, the
    lower triangle is the negation of it and the diagonal is zero.
    Instances are immutable; share them freely.
    """

    def __init__(self, variables, upper):
        variables = tuple(variables)
        n = len(variables)
        if n < 2:
            raise ValueError("dimension must be at least 2")
        if len(set(variables)) != n:
            raise ValueError("variable names must be distinct")
        clash = set(variables) & set(ex.KNOWN_FUNCTIONS)
        if clash:
            raise ValueError(f"variable name(s) {sorted(clash)} shadow functions")
        self.n = n
        self.variables = variables

        zero = ex.Const(0.0)
        entries = [[zero for _ in range(n)] for _ in range(n)]
        for (i, j), entry in upper.items():
            if not (1 <= i < j <= n):
                raise ValueError(f"entry index ({i},{j}) out of range for n={n}")
            e = _coerce_entry(entry, variables)
            entries[i - 1][j - 1] = e
            entries[j - 1][i - 1] = ex.simplify(ex.Neg(e))
        self._entries = entries
        self._derivs = None

    def entry(self, i, j):
        """Entry J_ij with 1-based indices."""
        return self._entries[i - 1][j - 1]

    def as_list(self):
        """Dense n x n list of expressions (copy)."""
        return [row[:] for row in self._entries]

    def upper_items(self):
        for i in range(1, self.n + 1):
            for j in range(i + 1, self.n + 1):
                yield i, j, self._entries[i - 1][j - 1]

    def derivative(self, l, i, j):
        """Exact partial derivative of J_ij with respect to variable l (1-based)."""
        return self._derivatives()[l - 1][i - 1][j - 1]

    def _derivatives(self):
        # Lazy memo; idempotent, so benign under concurrent reads.
        if self._derivs is None:
            n = self.n
            zero = ex.Const(0.0)
            derivs = [[[zero for _ in range(n)] for _ in range(n)] for _ in range(n)]
            for i, j, e in self.upper_items():
                for l, v in enumerate(self.variables):
                    d = ex.differentiate(e, v)
                    derivs[l][i - 1][j - 1] = d
                    derivs[l][j - 1][i - 1] = ex.simplify(ex.Neg(d))
            self._derivs = derivs
        return self._derivs

    def eval_entries(self, env):
        """Evaluate all entries on ``env``; returns shape (n, n) + value shape."""
        probe = np.asarray(next(iter(env.values()))) if env else np.float64(0.0)
        shape = (self.n, self.n) + np.shape(probe)
        out = np.zeros(shape)
        with np.errstate(all="ignore"):
            for i, j, e in self.upper_items():
                v = e.eval(env)
                out[i - 1, j - 1] = v
                out[j - 1, i - 1] = -np.asarray(v)
        return out

    def eval_derivatives(self, env):
        """Evaluate all partials; shape (n, n, n) + value shape, [l, i, j]."""
        derivs = self._derivatives()
        probe = np.asarray(next(iter(env.values()))) if env else np.float64(0.0)
        shape = (self.n, self.n, self.n) + np.shape(probe)
        out = np.zeros(shape)
        with np.errstate(all="ignore"):
            for i in range(self.n):
                for j in range(self.n):
                    if i == j:
                        continue
                    for l in range(self.n):
                        d = derivs[l][i][j]
                        if not (type(d) is ex.Const and d.value == 0.0):
                            out[l, i, j] = d.eval(env)
        return out

    def __str__(self):
        rows = [", ".join(ex.to_string(e) for e in row) for row in self._entries]
        return "[" + "; ".join(rows) + "]"


def make_matrix(n, variables, upper_triangle):
    """Build a structure matrix from its strictly-upper entries.

    ``upper_triangle`` is a sequence of ``(i, j, entry)`` with 1-based
    ``i < j``; entries may be expressions or text.  Unspecified entries
    default to zero.
    """
    variables = tuple(variables)
    if len(variables) != n:
        raise ValueError(f"expected {n} variable names, got {len(variables)}")
    upper = {}
    for i, j, entry in upper_triangle:
        if not (1 <= i < j <= n):
            raise ValueError(f"entry index ({i},{j}) out of range for n={n}")
        if (i, j) in upper:
            raise ValueError(f"duplicate entry ({i},{j})")
        upper[(i, j)] = entry
    return StructureMatrix(variables, upper)


class SampleRegion:
    """Box domain with exclusion constraints and a seeded sampler.

    Points are drawn uniformly from the box and rejected unless every
    exclusion expression ``g`` satisfies ``|g(x)| >= margin``.  The same
    seed always yields bit-identical points.
    """

    def __init__(self, variables, box, exclusions=(), margin=0.0,
                 samples=200, seed=42):
        self.variables = tuple(variables)
        n = len(self.variables)
        box = [(float(lo), float(hi)) for lo, hi in box]
        if len(box) != n:
            raise ValueError(f"expected {n} intervals, got {len(box)}")
        for lo, hi in box:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        self.box = box
        self.exclusions = tuple(_coerce_entry(g, self.variables)
                                for g in exclusions)
        self.margin = float(margin)
        self.samples = int(samples)
        self.seed = int(seed)
        if self.samples < 1:
            raise ValueError("samples must be positive")
        self.points = self._draw()

    @classmethod
    def unit_box(cls, variables, samples=200, seed=42, halfwidth=1.0):
        box = [(-halfwidth, halfwidth)] * len(tuple(variables))
        return cls(variables, box, samples=samples, seed=seed)

    def _draw(self):
        rng = np.random.default_rng(self.seed)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        accepted = []
        count = 0
        for _ in range(200):
            batch = rng.uniform(lo, hi, size=(max(self.samples, 256), len(lo)))
            if self.exclusions:
                env = {v: batch[:, k] for k, v in enumerate(self.variables)}
                mask = np.ones(len(batch), dtype=bool)
                with np.errstate(all="ignore"):
                    for g in self.exclusions:
                        vals = np.asarray(g.eval(env), dtype=float)
                        vals = np.broadcast_to(vals, (len(batch),))
                        mask &= np.isfinite(vals) & (np.abs(vals) >= self.margin)
                batch = batch[mask]
            accepted.append(batch)
            count += len(batch)
            if count >= self.samples:
                break
        else:
            raise ValueError("exclusion constraints reject almost all samples")
        return np.concatenate(accepted)[: self.samples]

    def env(self):
        """Mapping name -> column of sample values (length N arrays)."""
        return {v: self.points[:, k] for k, v in enumerate(self.variables)}

    def point(self, k):
        """The k-th sample as a name -> float mapping."""
        return {v: float(self.points[k, i])
                for i, v in enumerate(self.variables)}


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one numerically checked property.

    ``passed`` holds exactly when ``max_residual <= tolerance`` and every
    sampled evaluation was finite.
    """

    name: str
    passed: bool
    max_residual: float
    argmax_point: dict | None
    worst_index: tuple | None
    samples: int
    tolerance: float
    note: str = ""

    def summary(self):
        verdict = "pass" if self.passed else "fail"
        rel = "<=" if self.max_residual <= self.tolerance else ">"
        msg = (f"{self.name}: {verdict} (max residual {self.max_residual:.17g} "
               f"{rel} tol {self.tolerance:.17g}")
        if self.worst_index is not None:
            msg += f" at index {self.worst_index}"
        if self.argmax_point is not None:
            pt = ", ".join(f"{k}={v:.17g}" for k, v in self.argmax_point.items())
            msg += f", point ({pt})"
        msg += ")"
        if self.note:
            msg += f" [{self.note}]"
        return msg

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "max_residual": self.max_residual,
            "argmax_point": self.argmax_point,
            "worst_index": list(self.worst_index) if self.worst_index else None,
            "samples": self.samples,
            "tolerance": self.tolerance,
            "note": self.note,
        }


def _report(name, values, region, tol, index_of, note=""):
    """Build a report from a residual array whose last axis runs over samples.

    ``index_of`` maps the non-sample part of the argmax position to the
    reported index tuple.
    """
    values = np.asarray(values)
    finite = np.isfinite(values)
    if not finite.all():
        pos = tuple(int(p) for p in
                    np.unravel_index(int(np.argmin(finite)), values.shape))
        return VerificationReport(
            name, False, math.inf, region.point(pos[-1]), index_of(pos[:-1]),
            region.samples, tol,
            note or "singular evaluation inside the region")
    absval = np.abs(values)
    pos = tuple(int(p) for p in
                np.unravel_index(int(np.argmax(absval)), values.shape))
    worst = float(absval[pos])
    return VerificationReport(
        name, worst <= tol, worst, region.point(pos[-1]), index_of(pos[:-1]),
        region.samples, tol, note)


def _check_region(J, region):
    if tuple(region.variables) != tuple(J.variables):
        raise ValueError("region variables do not match the matrix variables")


# ---------------------------------------------------------------------------
# pointwise residuals
# ---------------------------------------------------------------------------

def jacobi_residual(J, i, j, k, point):
    """Bracket-closure residual for the index triple (i, j, k) at a point.

    Computes sum_l (J_li d_l J_jk + J_lj d_l J_ki + J_lk d_l J_ij); this is
    totally antisymmetric in (i, j, k), so distinct triples with i < j < k
    carry all the information.
    """
    total = 0.0
    for l in range(1, J.n + 1):
        total += (
            ex.evaluate(J.entry(l, i), point) * ex.evaluate(J.derivative(l, j, k), point)
            + ex.evaluate(J.entry(l, j), point) * ex.evaluate(J.derivative(l, k, i), point)
            + ex.evaluate(J.entry(l, k), point) * ex.evaluate(J.derivative(l, i, j), point)
        )
    return total


def kg_residual(J, f, point):
    """The vector J(p) . grad f(p); zero for kernel-gradient functions."""
    f = _coerce_entry(f, J.variables)
    grad = [ex.evaluate(g, point) for g in ex.gradient(f, J.variables)]
    mat = np.array([[ex.evaluate(J.entry(i, j), point)
                     for j in range(1, J.n + 1)]
                    for i in range(1, J.n + 1)])
    return mat @ np.array(grad)


# ---------------------------------------------------------------------------
# region-wide verification
# ---------------------------------------------------------------------------

def _jacobi_residual_array(Jv, Dv, n):
    """Residuals for all i<j<k triples; returns (list of triples, array)."""
    triples = [(i, j, k)
               for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n)]
    if not triples:
        return triples, np.zeros((0, Jv.shape[-1]))
    res = np.empty((len(triples), Jv.shape[-1]))
    for t, (i, j, k) in enumerate(triples):
        res[t] = (
            (Jv[:, i] * Dv[:, j, k]).sum(axis=0)
            + (Jv[:, j] * Dv[:, k, i]).sum(axis=0)
            + (Jv[:, k] * Dv[:, i, j]).sum(axis=0)
        )
    return triples, res


def verify_jacobi(J, region, tol=DEFAULT_TOL):
    """Check the bracket-closure identity over all triples and samples."""
    _check_region(J, region)
    env = region.env()
    Jv = J.eval_entries(env)
    Dv = J.eval_derivatives(env)
    triples, res = _jacobi_residual_array(Jv, Dv, J.n)
    if not triples:
        return VerificationReport("jacobi", True, 0.0, None, None,
                                  region.samples, tol,
                                  note="no index triples for n < 3")
    return _report("jacobi", res, region, tol,
                   lambda pos: tuple(t + 1 for t in triples[pos[0]]))


def verify_casimir(J, f, region, tol=DEFAULT_TOL):
    """Check J . grad f = 0 over the region (f a claimed Casimir invariant)."""
    _check_region(J, region)
    f = _coerce_entry(f, J.variables)
    env = region.env()
    Jv = J.eval_entries(env)
    grad = ex.gradient(f, J.variables)
    gv = np.zeros((J.n, region.samples))
    with np.errstate(all="ignore"):
        for idx, g in enumerate(grad):
            gv[idx] = g.eval(env)
    res = np.einsum("abN,bN->aN", Jv, gv)
    return _report("casimir", res, region, tol,
                   lambda pos: (pos[0] + 1,))


def verify_dsolution(J, region, tol=DEFAULT_TOL):
    """Check that every entry is a Casimir invariant of the matrix itself.

    The verdict additionally requires the bracket-closure check to pass, so
    a passing report certifies a genuine (distinguished) structure matrix
    on the sampled region.
    """
    _check_region(J, region)
    env = region.env()
    Jv = J.eval_entries(env)
    Dv = J.eval_derivatives(env)
    n = J.n

    # kernel-gradient residuals of all upper entries, in one contraction:
    # R[a, i, j, N] = sum_b J_ab d_b J_ij
    R = np.einsum("abN,bijN->aijN", Jv, Dv)
    iu, ju = np.triu_indices(n, k=1)
    kg = R[:, iu, ju, :]  # (n, n_entries, N)

    entries = [(int(a) + 1, int(b) + 1) for a, b in zip(iu, ju)]
    kg_report = _report(
        "dsolution", kg, region, tol,
        lambda pos: (entries[pos[1]][0], entries[pos[1]][1], pos[0] + 1))

    jac_report = verify_jacobi(J, region, tol)
    passed = kg_report.passed and jac_report.passed
    if jac_report.max_residual > kg_report.max_residual:
        worse, note = jac_report, "worst residual from the bracket-closure check"
    else:
        worse, note = kg_report, kg_report.note
    return VerificationReport(
        "dsolution", passed, worse.max_residual, worse.argmax_point,
        worse.worst_index, region.samples, tol, note)


# ---------------------------------------------------------------------------
# rank analysis and linear-Casimir search
# ---------------------------------------------------------------------------

def _numerical_rank(mat, tol):
    sigma = np.linalg.svd(mat, compute_uv=False)
    if sigma.size == 0 or sigma[0] <= tol:
        return 0, False
    r = int(np.count_nonzero(sigma > tol * sigma[0]))
    if r % 2 == 1:
        return r - 1, True
    return r, False


def rank_at(J, point, tol=DEFAULT_RANK_TOL):
    """Numerical rank of J at a point, rounded down to the nearest even value.

    Singular values below ``tol`` times the largest are treated as zero
    (rank 0 when the largest itself is below ``tol``).  An odd count before
    rounding signals conditioning trouble and emits a warning.
    """
    mat = np.array([[ex.evaluate(J.entry(i, j), point)
                     for j in range(1, J.n + 1)]
                    for i in range(1, J.n + 1)])
    r, odd = _numerical_rank(mat, tol)
    if odd:
        warnings.warn(
            f"odd numerical rank {r + 1} rounded down to {r}; "
            "the point may sit near a rank-transition surface",
            stacklevel=2)
    return r


@dataclass(frozen=True)
class RankProfile:
    """Histogram of sampled ranks, plus counts of problem points."""

    counts: dict
    singular: int = 0
    odd_adjustments: int = 0

    @property
    def max_rank(self):
        return max(self.counts) if self.counts else 0

    def fraction(self, rank):
        total = sum(self.counts.values())
        return self.counts.get(rank, 0) / total if total else 0.0


def rank_profile(J, region, tol=DEFAULT_RANK_TOL):
    """Apply :func:`rank_at` across the region's samples."""
    _check_region(J, region)
    env = region.env()
    Jv = J.eval_entries(env)  # (n, n, N)
    mats = np.moveaxis(Jv, -1, 0)  # (N, n, n)
    finite = np.isfinite(mats).all(axis=(1, 2))
    counts = {}
    odd = 0
    for mat in mats[finite]:
        r, was_odd = _numerical_rank(mat, tol)
        odd += was_odd
        counts[r] = counts.get(r, 0) + 1
    return RankProfile(dict(sorted(counts.items())),
                       singular=int((~finite).sum()), odd_adjustments=odd)


def find_linear_casimirs(J, region, tol=DEFAULT_RANK_TOL):
    """Orthonormal basis of coefficient vectors a with J(x) . a = 0 on the region.

    Stacks the sampled matrices into one tall system and returns the right
    singular vectors of its numerical nullspace, as columns.  A full basis
    comes back for the zero matrix; an empty (n, 0) array means no linear
    Casimir invariant exists on the region.
    """
    _check_region(J, region)
    env = region.env()
    Jv = J.eval_entries(env)
    stacked = np.moveaxis(Jv, -1, 0).reshape(-1, J.n)
    finite = np.isfinite(stacked).all(axis=1)
    stacked = stacked[finite]
    if stacked.size == 0:
        return np.eye(J.n)
    _, sigma, vh = np.linalg.svd(stacked, full_matrices=True)
    if sigma.size == 0 or sigma[0] <= tol:
        return np.eye(J.n)
    nullity = J.n - int(np.count_nonzero(sigma > tol * sigma[0]))
    if nullity == 0:
        return np.zeros((J.n, 0))
    return vh[-nullity:].T


# ---------------------------------------------------------------------------
# Casimir sets
# ---------------------------------------------------------------------------

CLAIMED = "claimed"
VERIFIED = "verified-on-region"


@dataclass(frozen=True)
class CasimirSet:
    """Ordered generators of (claimed or verified) Casimir invariants.

    The full set of Casimir invariants of a matrix is closed under smooth
    composition and therefore not finitely representable; a finite
    generator list stands in for it.  An entry is only marked verified
    when a passing kernel-gradient report is attached.
    """

    exprs: tuple
    status: tuple = ()
    reports: tuple = ()

    def __post_init__(self):
        exprs = tuple(self.exprs)
        object.__setattr__(self, "exprs", exprs)
        if not self.status:
            object.__setattr__(self, "status", tuple(CLAIMED for _ in exprs))
        if not self.reports:
            object.__setattr__(self, "reports", tuple(None for _ in exprs))
        if len(self.status) != len(exprs) or len(self.reports) != len(exprs):
            raise ValueError("status/report lists do not match the generators")
        for st, rep in zip(self.status, self.reports):
            if st == VERIFIED and (rep is None or not rep.passed):
                raise ValueError("verified entries need a passing report")

    @classmethod
    def claimed(cls, exprs, variables=None):
        if variables is not None:
            exprs = [_coerce_entry(e, variables) for e in exprs]
        return cls(tuple(exprs))

    def __len__(self):
        return len(self.exprs)

    def __iter__(self):
        return iter(self.exprs)

    def verify(self, J, region, tol=DEFAULT_TOL):
        """Check every generator against ``J``; returns the promoted set."""
        status, reports = [], []
        for e in self.exprs:
            rep = verify_casimir(J, e, region, tol)
            status.append(VERIFIED if rep.passed else CLAIMED)
            reports.append(rep)
        return CasimirSet(self.exprs, tuple(status), tuple(reports))

    def all_verified(self):
        return all(st == VERIFIED for st in self.status)

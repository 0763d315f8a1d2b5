"""Builders for the explicit families of self-referential structure matrices.

The central constructor assembles a matrix in four blocks from a strictly
upper-triangular array of smooth functions psi_ij evaluated on the linear
invariants D_l(x) = x_l - sum_k a_lk x_k: the top-left rho x rho block holds
the psi values, the remaining rows and columns are constant-coefficient
combinations of it.  Every entry is then a function of the D_l, which makes
the D_l (and all entries) Casimir invariants of the matrix by construction.
Variants cover constant matrices, the three-dimensional scaled-rotation
family, the generally-failing ansatz with nonlinear invariants, and a
rational rank-2 family with no linear Casimir invariant at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .core import (CasimirSet, SampleRegion, StructureMatrix,
                   default_variables, verify_dsolution, DEFAULT_TOL)

__all__ = [
    "DPsiSpec", "NonlinearAnsatzSpec", "build_dpsi", "build_constant",
    "build_3d_family", "build_nonlinear_ansatz", "build_example5",
    "permute_structure",
]


def _as_expr(value, variables):
    if isinstance(value, ex.Expr):
        return value
    return ex.parse(str(value), variables)


def _y_names(count):
    return tuple(f"y{i}" for i in range(1, count + 1))


@dataclass
class DPsiSpec:
    """Specification of a block-constructed solution.

    ``a`` holds the coefficients of the linear invariants, one row per
    l = rho+1..n over columns k = 1..rho.  ``psi`` maps strictly upper
    index pairs (i, j), 1 <= i < j <= rho, to expressions in y1..y_{n-rho};
    missing pairs are zero.  ``permutation`` optionally relabels the
    coordinates after construction.
    """

    n: int
    rho: int
    a: np.ndarray = None
    psi: dict = field(default_factory=dict)
    permutation: tuple | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("dimension must be at least 3")
        if not 1 <= self.rho <= self.n:
            raise ValueError(f"rho must lie in 1..{self.n}")
        m = self.n - self.rho
        if self.a is None:
            self.a = np.zeros((m, self.rho))
        self.a = np.asarray(self.a, dtype=float)
        if self.a.shape != (m, self.rho):
            raise ValueError(
                f"coefficient array must have shape ({m}, {self.rho})")
        ynames = _y_names(m)
        psi = {}
        for (i, j), e in self.psi.items():
            if not (1 <= i < j <= self.rho):
                raise ValueError(f"psi index ({i},{j}) must satisfy "
                                 f"1 <= i < j <= rho={self.rho}")
            e = _as_expr(e, ynames)
            extra = ex.free_vars(e) - set(ynames)
            if extra:
                raise ValueError(
                    f"psi[{i},{j}] uses undeclared variable(s) {sorted(extra)}")
            psi[(i, j)] = e
        self.psi = psi
        if self.permutation is not None:
            perm = tuple(int(p) for p in self.permutation)
            if sorted(perm) != list(range(1, self.n + 1)):
                raise ValueError("permutation must be a bijection of 1..n")
            self.permutation = perm

    def coefficient(self, l, k):
        """a_lk for l in rho+1..n, k in 1..rho."""
        return float(self.a[l - self.rho - 1, k - 1])


def _linear_invariants(spec, variables):
    """D_l = x_l - sum_k a_lk x_k for l = rho+1..n."""
    out = []
    for l in range(spec.rho + 1, spec.n + 1):
        e = ex.Var(variables[l - 1])
        for k in range(1, spec.rho + 1):
            c = spec.coefficient(l, k)
            if c != 0.0:
                e = ex.Sub(e, ex.Mul(ex.Const(c), ex.Var(variables[k - 1])))
        out.append(ex.simplify(e))
    return out


def _substituted_psi(spec, invariants):
    """psi_ij with y arguments replaced by the invariants; skew in (i, j)."""
    ynames = _y_names(len(invariants))
    bindings = dict(zip(ynames, invariants))
    zero = ex.Const(0.0)
    table = {}
    for i in range(1, spec.rho + 1):
        for j in range(1, spec.rho + 1):
            if i == j:
                table[(i, j)] = zero
            elif i < j:
                e = spec.psi.get((i, j))
                table[(i, j)] = (zero if e is None
                                 else ex.simplify(ex.substitute(e, bindings)))
    for i in range(1, spec.rho + 1):
        for j in range(1, i):
            table[(i, j)] = ex.simplify(ex.Neg(table[(j, i)]))
    return table


def build_dpsi(spec):
    """Assemble the four-block matrix of a :class:`DPsiSpec`.

    Returns the structure matrix together with the n - rho linear
    invariants as a claimed Casimir set.  With ``rho == n`` the matrix is
    constant and the Casimir set is empty; psi identically zero gives the
    zero matrix.
    """
    variables = default_variables(spec.n)
    invariants = _linear_invariants(spec, variables)
    psi = _substituted_psi(spec, invariants)
    rho, n = spec.rho, spec.n

    upper = {}
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if j <= rho:
                e = psi[(i, j)]
            elif i <= rho:
                # row block: J_ij = sum_k a_jk psi_ik
                terms = [ex.Mul(ex.Const(spec.coefficient(j, k)), psi[(i, k)])
                         for k in range(1, rho + 1)
                         if k != i and spec.coefficient(j, k) != 0.0]
                e = ex.simplify(_sum(terms))
            else:
                # corner block: J_ij = sum_{k<l} (a_ik a_jl - a_il a_jk) psi_kl
                terms = []
                for k in range(1, rho + 1):
                    for l in range(k + 1, rho + 1):
                        c = (spec.coefficient(i, k) * spec.coefficient(j, l)
                             - spec.coefficient(i, l) * spec.coefficient(j, k))
                        if c != 0.0:
                            terms.append(ex.Mul(ex.Const(c), psi[(k, l)]))
                e = ex.simplify(_sum(terms))
            if not (type(e) is ex.Const and e.value == 0.0):
                upper[(i, j)] = e

    J = StructureMatrix(variables, upper)
    casimirs = CasimirSet.claimed(invariants)
    if spec.permutation is not None:
        J, casimirs = permute_structure(J, casimirs, spec.permutation)
    return J, casimirs


def _sum(terms):
    if not terms:
        return ex.Const(0.0)
    e = terms[0]
    for t in terms[1:]:
        e = ex.Add(e, t)
    return e


def permute_structure(J, casimirs, sigma):
    """Relabel coordinates by a permutation (new index i <- old index sigma(i)).

    Acts as the linear change y_i = x_{sigma(i)}: entries move to
    J'_ij = J_{sigma(i) sigma(j)} and every old variable x_m is rewritten
    as the new x_{sigma^{-1}(m)}.
    """
    sigma = tuple(int(p) for p in sigma)
    n = J.n
    if sorted(sigma) != list(range(1, n + 1)):
        raise ValueError("permutation must be a bijection of 1..n")
    inverse = {sigma[i]: i + 1 for i in range(n)}
    variables = J.variables
    bindings = {variables[m - 1]: ex.Var(variables[inverse[m] - 1])
                for m in range(1, n + 1)}

    upper = {}
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            e = J.entry(sigma[i - 1], sigma[j - 1])
            e = ex.simplify(ex.substitute(e, bindings, variables))
            if not (type(e) is ex.Const and e.value == 0.0):
                upper[(i, j)] = e
    J_new = StructureMatrix(variables, upper)
    if casimirs is None:
        return J_new, None
    moved = [ex.simplify(ex.substitute(d, bindings, variables))
             for d in casimirs]
    return J_new, CasimirSet.claimed(moved)


def build_constant(n, upper, variables=None):
    """Constant skew-symmetric matrix; always a valid (and self-referential)
    structure matrix, for every admissible rank.

    ``upper`` maps (i, j) with i < j to numbers.
    """
    variables = default_variables(n) if variables is None else tuple(variables)
    entries = {}
    for (i, j), value in upper.items():
        v = float(value)
        if v != 0.0:
            entries[(i, j)] = ex.Const(v)
    return StructureMatrix(variables, entries)


def build_3d_family(a1, a2, a3, eta, variables=None):
    """The three-dimensional family eta(a . x) times the constant rotation
    pattern [[0, a3, -a2], [-a3, 0, a1], [a2, -a1, 0]].

    ``eta`` is a single-variable expression (or text, variable name free);
    its argument is replaced by a1*x1 + a2*x2 + a3*x3.  The all-zero
    coefficient case degenerates to the zero matrix.
    """
    variables = default_variables(3) if variables is None else tuple(variables)
    if len(variables) != 3:
        raise ValueError("the family is three-dimensional")
    if isinstance(eta, ex.Expr):
        names = sorted(ex.free_vars(eta))
        if len(names) > 1:
            raise ValueError("eta must be a single-variable function")
        eta_var = names[0] if names else "y"
    else:
        eta_var = "y"
        eta = ex.parse(str(eta), [eta_var])
    a = (float(a1), float(a2), float(a3))
    linear = ex.simplify(_sum([ex.Mul(ex.Const(c), ex.Var(v))
                               for c, v in zip(a, variables) if c != 0.0]))
    factor = ex.substitute(eta, {eta_var: linear})
    upper = {}
    for (i, j), c in {(1, 2): a[2], (1, 3): -a[1], (2, 3): a[0]}.items():
        if c != 0.0:
            upper[(i, j)] = ex.simplify(ex.Mul(ex.Const(c), factor))
    return StructureMatrix(variables, upper)


@dataclass
class NonlinearAnsatzSpec:
    """Ansatz with invariants D_i = x_i - mu_i(x_1..x_rho), mu_i smooth.

    The same block construction is applied with the (generally
    non-constant) partial derivatives of mu in place of the constant
    coefficients, so the D_i are kernel-gradient functions of the result
    by construction -- but the other entries usually are not.
    """

    n: int
    rho: int
    mu: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("dimension must be at least 3")
        if not 1 <= self.rho < self.n:
            raise ValueError(f"rho must lie in 1..{self.n - 1}")
        head = default_variables(self.n)[: self.rho]
        mu = {}
        for l in range(self.rho + 1, self.n + 1):
            e = self.mu.get(l)
            if e is None:
                e = ex.Const(0.0)
            e = _as_expr(e, head)
            extra = ex.free_vars(e) - set(head)
            if extra:
                raise ValueError(
                    f"mu[{l}] must depend only on the first rho variables; "
                    f"found {sorted(extra)}")
            mu[l] = e
        self.mu = mu
        ynames = _y_names(self.n - self.rho)
        psi = {}
        for (i, j), e in self.psi.items():
            if not (1 <= i < j <= self.rho):
                raise ValueError(f"psi index ({i},{j}) out of range")
            psi[(i, j)] = _as_expr(e, ynames)
        self.psi = psi


def build_nonlinear_ansatz(spec, region=None, tol=DEFAULT_TOL):
    """Assemble the nonlinear-invariant ansatz and test it.

    Returns the candidate matrix, the intended invariants
    D_i = x_i - mu_i (these are kernel-gradient functions of the candidate
    by construction), and the self-referential verification report, which
    fails whenever some mu_i has a non-constant gradient.  ``region``
    defaults to the unit box.
    """
    variables = default_variables(spec.n)
    rho, n = spec.rho, spec.n
    invariants = [ex.simplify(ex.Sub(ex.Var(variables[l - 1]), spec.mu[l]))
                  for l in range(rho + 1, n + 1)]
    dspec = DPsiSpec(n=n, rho=rho, a=np.zeros((n - rho, rho)), psi=spec.psi)
    psi = _substituted_psi(dspec, invariants)

    # coefficient expressions: c[l][k] = d mu_l / d x_k
    coeff = {l: [ex.differentiate(spec.mu[l], variables[k - 1])
                 for k in range(1, rho + 1)]
             for l in range(rho + 1, n + 1)}

    upper = {}
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if j <= rho:
                e = psi[(i, j)]
            elif i <= rho:
                terms = [ex.Mul(coeff[j][k - 1], psi[(i, k)])
                         for k in range(1, rho + 1) if k != i]
                e = ex.simplify(_sum(terms))
            else:
                terms = []
                for k in range(1, rho + 1):
                    for l in range(k + 1, rho + 1):
                        c = ex.Sub(ex.Mul(coeff[i][k - 1], coeff[j][l - 1]),
                                   ex.Mul(coeff[i][l - 1], coeff[j][k - 1]))
                        terms.append(ex.Mul(c, psi[(k, l)]))
                e = ex.simplify(_sum(terms))
            if not (type(e) is ex.Const and e.value == 0.0):
                upper[(i, j)] = e

    J = StructureMatrix(variables, upper)
    if region is None:
        region = SampleRegion.unit_box(variables)
    report = verify_dsolution(J, region, tol)
    return J, CasimirSet.claimed(invariants), report


def build_example5(n, samples=200, seed=42, margin=0.2):
    """Rank-2 family with first row x3/x2, (x3/x2)^2, ..., (x3/x2)^{n-1}.

    Self-referential on any region avoiding x2 = 0 and x3 = 0, yet it has
    no linear Casimir invariant, so it lies outside the block-constructed
    family.  Returns the matrix, its n - 2 rational invariants and a
    region with the two exclusions built in.

    The margin keeps |x3/x2| <= 1/margin on the unit box so that the
    high powers stay well conditioned.
    """
    if n < 3:
        raise ValueError("dimension must be at least 3")
    variables = default_variables(n)
    x2, x3 = ex.Var(variables[1]), ex.Var(variables[2])
    ratio = ex.Div(x3, x2)
    upper = {}
    for k in range(2, n + 1):
        upper[(1, k)] = ratio if k == 2 else ex.Pow(ratio, k - 1)
    J = StructureMatrix(variables, upper)

    casimirs = [ratio]
    for i in range(4, n + 1):
        xim1 = ex.Var(variables[i - 2])
        casimirs.append(ex.Sub(ex.Div(ex.Mul(x3, xim1), x2),
                               ex.Var(variables[i - 1])))
    region = SampleRegion(variables, [(-1.0, 1.0)] * n,
                          exclusions=(x2, x3), margin=margin,
                          samples=samples, seed=seed)
    return J, CasimirSet.claimed(casimirs), region

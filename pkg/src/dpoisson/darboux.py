"""Global canonical-form reduction of the three-dimensional scaled family.

For J = eta(a1 x1 + a2 x2 + a3 x3) * [[0, a3, -a2], [-a3, 0, a1],
[a2, -a1, 0]] with some a_q nonzero and eta nonvanishing on the region,
an explicit two-step chart brings J to the constant canonical block
[[0, 1, 0], [-1, 0, 0], [0, 0, 0]] on the whole region:

1. a linear change picks the pivot q with the largest |a_q| (ties to the
   lowest index) and, with (p1, p2) the remaining indices in increasing
   order, sets y1 = s * x_p1 / a_q, y2 = x_p2, y3 = a . x, the sign s
   chosen so the (1,2) bracket comes out +1; the matrix becomes
   eta(y3) times the canonical block;
2. the rescale z1 = y1 / eta(y3), z2 = y2, z3 = y3 removes the factor.

The chart is verified symbolically through the generic pushforward and
numerically on the region samples; the third forward coordinate is the
(only independent) Casimir invariant a . x itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .construct import build_3d_family
from .core import SampleRegion, StructureMatrix, default_variables
from .transform import CoordinateChange, change_coordinates

__all__ = ["DarbouxChart", "darboux_reduce_3d", "casimir_of_family",
           "CANONICAL_3D"]

CANONICAL_3D = ((0.0, 1.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class DarbouxChart:
    """Explicit chart bringing a family member to canonical form.

    ``forward`` maps the original coordinates to the chart, ``inverse``
    goes back, ``reduced`` is the pushed-forward matrix (canonical up to
    the recorded deviation) and ``region`` is where the reduction was
    certified.
    """

    forward: tuple
    inverse: tuple
    reduced: StructureMatrix
    region: SampleRegion
    casimir: ex.Expr
    change: CoordinateChange
    max_deviation: float
    max_roundtrip: float

    def chart_variables(self):
        return self.change.y_vars

    def to_document(self):
        return {
            "forward": [ex.to_string(e) for e in self.forward],
            "inverse": [ex.to_string(e) for e in self.inverse],
            "reduced": [[ex.to_string(self.reduced.entry(i, j))
                         for j in range(1, 4)] for i in range(1, 4)],
            "region": {
                "box": [list(b) for b in self.region.box],
                "exclusions": [ex.to_string(g) for g in self.region.exclusions],
                "margin": self.region.margin,
                "samples": self.region.samples,
                "seed": self.region.seed,
            },
            "casimir": ex.to_string(self.casimir),
            "max_deviation": self.max_deviation,
            "max_roundtrip": self.max_roundtrip,
        }


def casimir_of_family(a1, a2, a3, variables=None):
    """The linear invariant a1 x1 + a2 x2 + a3 x3 of the 3D family."""
    variables = default_variables(3) if variables is None else tuple(variables)
    e = ex.Const(0.0)
    for c, v in zip((a1, a2, a3), variables):
        c = float(c)
        if c != 0.0:
            e = ex.Add(e, ex.Mul(ex.Const(c), ex.Var(v)))
    return ex.simplify(e)


def _pivot(a):
    """Index (1-based) of the largest |a_q|, ties to the lowest index."""
    absa = [abs(v) for v in a]
    return max(range(3), key=lambda i: (absa[i], -i)) + 1


def darboux_reduce_3d(a1, a2, a3, eta, region, tol=1e-10,
                      chart_names=("z1", "z2", "z3")):
    """Construct and certify the canonical chart for one family member.

    ``eta`` is a single-variable expression; it must stay away from zero
    on the region (checked with margin 10 * tol).  Returns the chart with
    the composed forward/inverse maps, the reduced matrix and the
    certified deviations.
    """
    a = (float(a1), float(a2), float(a3))
    if all(v == 0.0 for v in a):
        raise ValueError("at least one coefficient must be nonzero")
    variables = tuple(region.variables)
    if len(variables) != 3:
        raise ValueError("the reduction applies to three-dimensional regions")

    if isinstance(eta, ex.Expr):
        names = sorted(ex.free_vars(eta))
        if len(names) > 1:
            raise ValueError("eta must be a single-variable function")
        eta_var = names[0] if names else "y"
    else:
        eta_var = "y"
        eta = ex.parse(str(eta), [eta_var])

    J = build_3d_family(*a, eta, variables=variables)
    casimir = casimir_of_family(*a, variables=variables)

    # certify eta away from zero on the region
    env = region.env()
    with np.errstate(all="ignore"):
        eta_vals = np.asarray(
            ex.substitute(eta, {eta_var: casimir}).eval(env), dtype=float)
    eta_vals = np.broadcast_to(eta_vals, (region.samples,))
    floor = 10.0 * tol
    if not np.isfinite(eta_vals).all() or np.abs(eta_vals).min() < floor:
        raise ValueError(
            f"eta is not bounded away from zero on the region "
            f"(min |eta| = {np.abs(eta_vals).min():.3g} < {floor:.3g})")

    q = _pivot(a)
    p1, p2 = [i for i in (1, 2, 3) if i != q]
    s = -1.0 if q == 2 else 1.0
    aq = a[q - 1]
    z1, z2, z3 = chart_names

    eta_of_casimir = ex.substitute(eta, {eta_var: casimir})
    forward = [None, None, None]
    forward[0] = ex.simplify(
        ex.Div(ex.Mul(ex.Const(s / aq), ex.Var(variables[p1 - 1])),
               eta_of_casimir))
    forward[1] = ex.Var(variables[p2 - 1])
    forward[2] = casimir

    eta_of_z3 = ex.substitute(eta, {eta_var: ex.Var(z3)})
    x_p1 = ex.simplify(ex.Mul(ex.Const(s * aq),
                              ex.Mul(ex.Var(z1), eta_of_z3)))
    x_p2 = ex.Var(z2)
    # remaining coordinate from the invariant: x_q = (z3 - a_p1 x_p1 - a_p2 x_p2)/a_q
    residue = ex.Var(z3)
    for idx, e in ((p1, x_p1), (p2, x_p2)):
        c = a[idx - 1]
        if c != 0.0:
            residue = ex.Sub(residue, ex.Mul(ex.Const(c), e))
    x_q = ex.simplify(ex.Mul(ex.Const(1.0 / aq), residue))
    inverse = [None, None, None]
    inverse[p1 - 1] = x_p1
    inverse[p2 - 1] = x_p2
    inverse[q - 1] = x_q

    change = CoordinateChange(variables, chart_names,
                              tuple(forward), tuple(inverse))
    reduced = change_coordinates(J, change, region, casimir_jacobian=False,
                                 tol=max(tol, 1e-9))

    # certify canonical form at the image of the sample points
    with np.errstate(all="ignore"):
        zvals = {name: np.broadcast_to(
                     np.asarray(f.eval(env), dtype=float), (region.samples,))
                 for name, f in zip(chart_names, forward)}
        deviation = 0.0
        for i in range(1, 4):
            for j in range(1, 4):
                if i == j:
                    continue
                vals = np.broadcast_to(
                    np.asarray(reduced.entry(i, j).eval(zvals), dtype=float),
                    (region.samples,))
                dev = np.abs(vals - CANONICAL_3D[i - 1][j - 1])
                if not np.isfinite(dev).all():
                    raise ValueError("reduced matrix is singular on the region")
                deviation = max(deviation, float(dev.max()))
        if deviation > tol:
            raise ValueError(
                f"reduced matrix deviates from canonical form by {deviation:.3g}")

        # forward(inverse(z)) = z at the sampled chart points
        roundtrip = 0.0
        back = {name: np.broadcast_to(
                    np.asarray(g.eval(zvals), dtype=float), (region.samples,))
                for name, g in zip(variables, inverse)}
        for name, f in zip(chart_names, forward):
            again = np.broadcast_to(np.asarray(f.eval(back), dtype=float),
                                    (region.samples,))
            err = np.abs(again - zvals[name])
            if not np.isfinite(err).all():
                raise ValueError("chart round trip is singular on the region")
            roundtrip = max(roundtrip, float(err.max()))
    roundtrip = max(roundtrip, change.check_inverse(region))
    if roundtrip > 1e-9:
        raise ValueError(f"chart round trip error {roundtrip:.3g} exceeds 1e-9")

    return DarbouxChart(tuple(forward), tuple(inverse), reduced, region,
                        casimir, change, deviation, roundtrip)

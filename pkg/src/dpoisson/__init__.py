"""Toolkit for Poisson structure matrices built from their own Casimir invariants.

Subpackages:

- :mod:`dpoisson.expr` -- small symbolic expression language
- :mod:`dpoisson.core` -- structure matrices and numerical verification
- :mod:`dpoisson.construct` -- builders for the explicit solution families
- :mod:`dpoisson.transform` -- closure operations and coordinate changes
- :mod:`dpoisson.darboux` -- global canonical-form reduction of the 3D family
- :mod:`dpoisson.dynamics` -- Poisson flow integration and conservation checks
- :mod:`dpoisson.fixtures` -- bundled example structures
- :mod:`dpoisson.io` -- JSON document schemas
- :mod:`dpoisson.cli` -- command-line interface
"""

from .expr import (
    Expr, Const, Var, parse, to_string, evaluate, differentiate, gradient,
    substitute, simplify, free_vars, ParseError, EvaluationError,
)
from .core import (
    StructureMatrix, SampleRegion, VerificationReport, CasimirSet, RankProfile,
    make_matrix, jacobi_residual, verify_jacobi, kg_residual, verify_casimir,
    verify_dsolution, rank_at, rank_profile, find_linear_casimirs,
)
from .construct import (
    DPsiSpec, NonlinearAnsatzSpec, build_dpsi, build_constant,
    build_3d_family, build_nonlinear_ansatz, build_example5,
)
from .transform import (
    MatrixPolynomial, CasimirMatrix, CoordinateChange, HypothesisError,
    ExpressionSwellError, matrix_poly, thm1_skew_sandwich, thm1_commuting_sym,
    thm1_conjugate, thm1_even_sandwich, scale_by_casimir, change_coordinates,
    sum_structures, alternating_product,
)
from .darboux import DarbouxChart, darboux_reduce_3d, casimir_of_family
from .dynamics import (
    Trajectory, ConservationReport, IntegrationError, integrate,
    conservation_report, map_trajectory,
)

__version__ = "0.1.0"

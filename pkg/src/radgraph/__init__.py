"""Radial graphs over sphere bundles with prescribed vertical Gaussian curvature.

The compiled kernels are used when the extension is importable; set
``RADGRAPH_PURE_PYTHON=1`` to force the NumPy fallback. The active backend
is reported by :data:`BACKEND`.
"""

from .kernels import BACKEND
from .errors import (
    AdmissibilityLoss,
    BarrierViolation,
    ConfigError,
    CurvatureError,
    DegenerateMesh,
    FixedPointStall,
    GridError,
    NoBracket,
    NonConvergence,
    PathFailure,
    RadGraphError,
    SingularLinearization,
    SolverError,
)
from .geometry import (
    BaseGrid,
    BundleGrid,
    FrameDerivatives,
    ScalarField,
    SphereGrid,
    build_bundle_grid,
    covariant_gradient,
    covariant_hessian,
    radial_identity_check,
    vertical_third_derivative,
)
from .curvature import CurvatureSpec, parse_expression
from .curvature_ops import (
    AdmissibleTensor,
    FieldOperator,
    admissible_tensor,
    linearize_horizontal,
    linearize_vertical,
    log_concavity_probe,
    n1_operator,
    n2_operator,
    residual_direct,
    residual_theorem3,
    residual_theorem4,
    vertical_gauss_curvature,
)
from .solvers import (
    DirectProblem,
    SolveReport,
    SolverConfig,
    Theorem3Problem,
    Theorem4Inner,
    check_barriers,
    continuity_path_theorem3,
    monitor_bounds,
    nagumo_iteration_theorem4,
    newton_solve,
    uniqueness_probe,
)
from .verification import (
    ConvergenceResult,
    EmbeddedMesh,
    RadiusResult,
    convergence_study,
    embed_and_measure,
    manufactured_curvature,
    restrict,
    seeded_test_fields,
    sphere_triangles,
    structure_identity_suite,
    theorem1_oracle,
    theorem2_radius,
)
from .cli_io import RunConfig, emit_solution, load_curvature_table, parse_config

__version__ = "0.1.0"

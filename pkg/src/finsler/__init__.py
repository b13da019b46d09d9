"""Pseudo-Finsler geometry: metrics given by 2-homogeneous Lagrangians, their
anisotropic connections, geodesics and parallel transport, and a suite of
numeric checks of the identities relating them.
"""

from .errors import (
    ChartError,
    DegenerateMetric,
    DomainError,
    DomainExit,
    FinslerError,
    NonSmoothError,
    NotAdmissible,
    ParseError,
    SamplerExhausted,
    SpecError,
    StepFailure,
)
from .expr import parse
from .calculus import DerivativeTower, FDConfig, ScalarField, fd_partial, grad_y, hessian_y
from .geometry import (
    MetricSpec,
    PointedDirection,
    cartan_tensor,
    causal_classify,
    fundamental_tensor,
    restspace_basis,
    restspace_metric,
    signature,
)
from .connections import (
    AnisotropicTensorField,
    ConnectionField,
    NonlinearConnectionField,
    berwald_connection,
    chern_connection,
    connection_difference,
    covariant_derivative_tensor,
    formal_christoffels,
    geodesic_spray,
    metric_tensor_field,
    nonlinear_connection,
    torsion,
)
from .transport import (
    Curve,
    IntegratorConfig,
    TransportResult,
    covariant_derivative_along_curve,
    integrate_geodesic,
    observer_transport,
    recover_nabla,
    reference_transport,
    tensor_transport,
)
from .verify import ChartMap, CheckReport, SuiteConfig, run_suite

__version__ = "0.1.0"

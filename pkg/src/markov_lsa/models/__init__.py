from .base import FiniteObservationModel, NoiseSpec, ObservationModel, TabularModel, tabular_model
from .td import TD0Model, TDLambdaModel, td0_exact_solution, td0_model, tdlambda_exact_solution, tdlambda_model
from .var import (
    LyapunovCertificate,
    VARModel,
    companion_matrix,
    lyapunov_certificate,
    var_exact_covariances,
    var_model,
)

__all__ = [
    "ObservationModel",
    "FiniteObservationModel",
    "NoiseSpec",
    "TabularModel",
    "tabular_model",
    "TD0Model",
    "TDLambdaModel",
    "td0_model",
    "tdlambda_model",
    "td0_exact_solution",
    "tdlambda_exact_solution",
    "VARModel",
    "var_model",
    "var_exact_covariances",
    "companion_matrix",
    "lyapunov_certificate",
    "LyapunovCertificate",
]

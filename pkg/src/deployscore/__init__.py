"""Deployment checklist scoring with dichotomous IRT, plus soft error budgets
and the deployment index."""

__version__ = "0.1.0"

from .budgets import (
    BudgetResult,
    MeshWindow,
    Product,
    ServiceWindowStats,
    SLORecord,
    Window,
    budget_minutes,
    error_budget,
    min_soft_budget,
    soft_error_budget,
)
from .effectiveness import (
    DeploymentIndexResult,
    VersionOutcome,
    achieved_slo,
    correlation,
    deployment_index,
    deployment_indices,
)
from .errors import (
    ConvergenceWarning,
    DataError,
    DegenerateItemError,
    DeployScoreError,
    IncompatibleVersionError,
    IncompleteMeshError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalError,
    SchemaError,
    UndefinedCorrelationError,
)
from .irt import (
    AbilityEstimate,
    CurveTable,
    FitConfig,
    FittedModel,
    ItemParameters,
    ResponseMatrix,
    curve_table,
    expected_score,
    fit,
    icc,
    item_information,
    marginal_log_likelihood,
    score_abilities,
    test_information,
)
from .scoring import (
    DeploymentScoreReport,
    TrendReport,
    ads,
    score_new_deployment,
    score_report,
    trend,
)

__all__ = [
    "BudgetResult",
    "MeshWindow",
    "Product",
    "ServiceWindowStats",
    "SLORecord",
    "Window",
    "budget_minutes",
    "error_budget",
    "min_soft_budget",
    "soft_error_budget",
    "DeploymentIndexResult",
    "VersionOutcome",
    "achieved_slo",
    "correlation",
    "deployment_index",
    "deployment_indices",
    "ConvergenceWarning",
    "DataError",
    "DegenerateItemError",
    "DeployScoreError",
    "IncompatibleVersionError",
    "IncompleteMeshError",
    "InsufficientDataError",
    "InvalidArgumentError",
    "NumericalError",
    "SchemaError",
    "UndefinedCorrelationError",
    "AbilityEstimate",
    "CurveTable",
    "FitConfig",
    "FittedModel",
    "ItemParameters",
    "ResponseMatrix",
    "curve_table",
    "expected_score",
    "fit",
    "icc",
    "item_information",
    "marginal_log_likelihood",
    "score_abilities",
    "test_information",
    "DeploymentScoreReport",
    "TrendReport",
    "ads",
    "score_new_deployment",
    "score_report",
    "trend",
]

"""Risk-unbiased scaling of VaR and ES estimators.

The package calibrates a multiplicative scaling factor c* for a risk
estimator so that the secured position (loss plus scaled reserve) carries
no residual risk, compares that factor against square-root-of-time and
quantile-ratio rules, and evaluates all of them in rolling backtests.
"""

from .backtest import (
    DEFAULT_CAL_M,
    AggregateSummary,
    BacktestResult,
    DensityBlock,
    DensityReport,
    EmpiricalNonParametric,
    EmpiricalParametric,
    Fixed,
    GaussianUnbiasedCalibrated,
    MethodSpec,
    MethodSummary,
    NormalRatioTimesSqrt,
    OnePeriod,
    ReturnPanel,
    StudentTUnbiasedCalibrated,
    TwoPeriodOverlap,
    aggregate_methods,
    density_report,
    fit_empirical_scalar,
    horizon_from_config,
    ingest_returns,
    make_synthetic_panel,
    method_from_config,
    method_to_config,
    nu_from_kurtosis,
    rolling_backtest,
    standard_methods,
)
from .calibration import (
    DEFAULT_TOL,
    CalibrationProblem,
    DecompositionResult,
    IID,
    OverlappingSum,
    PanelProvenance,
    RobustResult,
    ScalarResult,
    SecuredPanel,
    SolverDiagnostics,
    build_panel,
    calibrate,
    closed_form_gaussian_scalar,
    decompose,
    one_period_law,
    problem_from_config,
    problem_to_config,
    risk_of_secured,
    robust_calibrate,
    solve_scalar,
)
from .config import (
    DEFAULT_M,
    RunConfig,
    canonical_json,
    config_hash,
    load_config_file,
    write_manifest,
)
from .distributions import (
    Cauchy,
    Convolution,
    DistributionSpec,
    GeneralizedNormal,
    GPD,
    Laplace,
    Negated,
    Normal,
    Scale,
    Shift,
    StudentT,
    quantile,
    sample,
    standardize,
    true_es,
    true_var,
)
from .errors import (
    ConfigError,
    DegenerateFitError,
    IngestionError,
    InsufficientSampleError,
    PanelError,
    ParameterError,
    RiskScalingError,
    UnboundedScalarError,
)
from .estimators import (
    EmpiricalES,
    EmpiricalVaR,
    GaussianPlugInES,
    GaussianPlugInVaR,
    GaussianUnbiasedVaR,
    GPDPlugInES,
    OrderStatCombo,
    RiskEstimator,
    ScaledEstimator,
    WorstCase,
    evaluate,
)
from .riskmeasures import (
    ES,
    RiskMeasureSpec,
    TrafficLight,
    VAR,
    clt_adjusted_sqrt_scalar,
    empirical_es,
    empirical_risk,
    empirical_var,
    exception_rate,
    normal_risk_ratio,
    sqrt_time_scalar,
    traffic_light,
)
from .rng import DEFAULT_SEED, RngStream

__version__ = "0.1.0"

__all__ = [
    "AggregateSummary",
    "BacktestResult",
    "CalibrationProblem",
    "Cauchy",
    "ConfigError",
    "Convolution",
    "DEFAULT_CAL_M",
    "DEFAULT_M",
    "DEFAULT_SEED",
    "DEFAULT_TOL",
    "DecompositionResult",
    "DegenerateFitError",
    "DensityBlock",
    "DensityReport",
    "DistributionSpec",
    "ES",
    "EmpiricalES",
    "EmpiricalNonParametric",
    "EmpiricalParametric",
    "EmpiricalVaR",
    "Fixed",
    "GPD",
    "GPDPlugInES",
    "GaussianPlugInES",
    "GaussianPlugInVaR",
    "GaussianUnbiasedCalibrated",
    "GaussianUnbiasedVaR",
    "GeneralizedNormal",
    "IID",
    "IngestionError",
    "InsufficientSampleError",
    "Laplace",
    "MethodSpec",
    "MethodSummary",
    "Negated",
    "Normal",
    "NormalRatioTimesSqrt",
    "OnePeriod",
    "OrderStatCombo",
    "OverlappingSum",
    "PanelError",
    "PanelProvenance",
    "ParameterError",
    "ReturnPanel",
    "RiskEstimator",
    "RiskMeasureSpec",
    "RiskScalingError",
    "RngStream",
    "RobustResult",
    "RunConfig",
    "Scale",
    "ScalarResult",
    "ScaledEstimator",
    "SecuredPanel",
    "Shift",
    "SolverDiagnostics",
    "StudentT",
    "StudentTUnbiasedCalibrated",
    "TrafficLight",
    "TwoPeriodOverlap",
    "UnboundedScalarError",
    "VAR",
    "WorstCase",
    "aggregate_methods",
    "build_panel",
    "calibrate",
    "canonical_json",
    "closed_form_gaussian_scalar",
    "clt_adjusted_sqrt_scalar",
    "config_hash",
    "decompose",
    "density_report",
    "empirical_es",
    "empirical_risk",
    "empirical_var",
    "evaluate",
    "exception_rate",
    "fit_empirical_scalar",
    "horizon_from_config",
    "ingest_returns",
    "load_config_file",
    "make_synthetic_panel",
    "method_from_config",
    "method_to_config",
    "normal_risk_ratio",
    "nu_from_kurtosis",
    "one_period_law",
    "problem_from_config",
    "problem_to_config",
    "quantile",
    "risk_of_secured",
    "robust_calibrate",
    "rolling_backtest",
    "sample",
    "solve_scalar",
    "sqrt_time_scalar",
    "standard_methods",
    "standardize",
    "traffic_light",
    "true_es",
    "true_var",
    "write_manifest",
]

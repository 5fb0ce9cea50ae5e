"""Monte Carlo machinery for weighted gradient estimates of SDE semigroups.

The package simulates SDEs with unbounded first-derivative coefficients,
estimates semigroup gradients three independent ways (pathwise stochastic
integral representation, variation-of-constants quadrature, common-random-
number finite differences), audits Lyapunov moment bounds, and ships a
1-d drift construction with bounded solution but unboundedly growing
derivative, where the unweighted gradient estimate provably fails.
"""

from .counterexample import Counterexample, ConvergenceBudgetError, TailSeries
from .estimators import (
    BelGradient,
    DuhamelGradient,
    Estimate,
    GradientGrowth,
    MomentAudit,
    RatioSweep,
    TestFunction,
    bel_gradient_s,
    constant,
    cosine,
    duhamel_gradient_p,
    estimate_from_samples,
    estimate_p,
    estimate_s,
    fd_gradient_p,
    fd_gradient_s,
    get_test_function,
    gradient_growth,
    h1_grid_constant,
    moment_audit,
    ratio_sweep,
    sine_pi,
    standard_test_functions,
    tangent_weight_statistic,
    tanh_profile,
)
from .fixtures import FIXTURE_BUILDERS, get_fixture
from .models import HypothesisReport, SdeModel, check_hypotheses, scalar_model
from .regularization import RegularizedModel, radial_clip, regularize
from .reporting import TableSpec, write_csv, write_plot_companion, write_summary
from .simulate import (
    PATH_BLOCK,
    PathEnsemble,
    SimConfig,
    SimulationError,
    WORKERS_ENV_VAR,
    simulate_ensemble,
    simulate_independent_starts,
    simulate_many_starts,
)
from .weights import WeightSpec

__version__ = "0.1.0"

__all__ = [
    "BelGradient",
    "ConvergenceBudgetError",
    "Counterexample",
    "DuhamelGradient",
    "Estimate",
    "FIXTURE_BUILDERS",
    "GradientGrowth",
    "HypothesisReport",
    "MomentAudit",
    "PATH_BLOCK",
    "PathEnsemble",
    "RatioSweep",
    "RegularizedModel",
    "SdeModel",
    "SimConfig",
    "SimulationError",
    "TableSpec",
    "TailSeries",
    "TestFunction",
    "WORKERS_ENV_VAR",
    "WeightSpec",
    "bel_gradient_s",
    "check_hypotheses",
    "constant",
    "cosine",
    "duhamel_gradient_p",
    "estimate_from_samples",
    "estimate_p",
    "estimate_s",
    "fd_gradient_p",
    "fd_gradient_s",
    "get_fixture",
    "get_test_function",
    "gradient_growth",
    "h1_grid_constant",
    "moment_audit",
    "radial_clip",
    "ratio_sweep",
    "regularize",
    "scalar_model",
    "simulate_ensemble",
    "simulate_independent_starts",
    "simulate_many_starts",
    "sine_pi",
    "standard_test_functions",
    "tangent_weight_statistic",
    "tanh_profile",
    "write_csv",
    "write_plot_companion",
    "write_summary",
]

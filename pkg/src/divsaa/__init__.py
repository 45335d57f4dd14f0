"""Risk-averse Sample Average Approximation under divergence risk measures.

Risk values come from the optimized certainty equivalent
``rho(Y) = inf_x E[phi_star(Y + x)] - x``; the SAA solver minimizes the
empirical risk over a parameter box, and the asymptotics module predicts and
tests the behaviour of the resulting minimizers.
"""

__version__ = "0.1.0"

from .divergence import (  # noqa: E402
    DivergencePair,
    EmpiricalSample,
    OceResult,
    avar,
    avar_closed_form,
    custom,
    entropic,
    entropic_closed_form,
    evaluate_risk,
    minimizer_bracket,
    oce_minimize,
    oce_objective,
    oce_subgradient,
    polynomial,
    population_oce,
)
from .models import (  # noqa: E402
    GoalModel,
    ParamBox,
    PLGoal,
    PLPiece,
    builtin_models,
    c_diagnostics,
    pl_evaluate,
    pl_mdot,
    pl_selectors,
    resolve_model,
    validate_partition,
)
from .solver import SaaSolution, SolveConfig, saa_objective, solve_population, solve_saa  # noqa: E402
from .asymptotics import (  # noqa: E402
    AsymptoticPrediction,
    ReplicationTable,
    coverage_normality,
    estimate_hessian,
    estimate_sigma_fd,
    predict,
    predict_covariance,
    rate_diagnostic,
    run_replications,
    sigma_pl,
)

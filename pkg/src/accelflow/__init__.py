"""High-order acceleration with closed-loop proximal feedback.

Library layout:

* :mod:`accelflow.problems` -- convex test objectives with analytic
  derivatives and documented Lipschitz constants.
* :mod:`accelflow.taylor` -- regularized Taylor models and the two tensor
  subproblem solves.
* :mod:`accelflow.stepsize` -- the feedback law, coupling recurrences,
  large-step window, and the lambda bisection search.
* :mod:`accelflow.drivers` -- the accelerated outer loops (two framework
  variants and their tensor instantiations) with full diagnostic traces.
* :mod:`accelflow.flow` -- the continuous-time closed-loop system, its
  integration, and the energy diagnostics.
* :mod:`accelflow.harness` / :mod:`accelflow.cli` -- experiment configs,
  artifacts, rate fits, invariant audits, and the command-line front end.
"""

__version__ = "0.1.0"

from .problems import (  # noqa: F401
    LogisticProblem,
    LogSumExpProblem,
    OracleEvaluation,
    PowerNormProblem,
    Problem,
    QuadraticProblem,
    check_derivatives,
    evaluate,
    make_problem,
)
from .taylor import (  # noqa: F401
    SubproblemError,
    SubproblemSolution,
    TaylorModel,
    build_model,
    model_gradient,
    model_value,
    solve_regularized,
    solve_unregularized,
)
from .stepsize import (  # noqa: F401
    AccumulatorState,
    BracketError,
    FeedbackParams,
    StationaryPointError,
    a_next,
    alpha_next,
    bisect_lambda,
    lambda_feedback,
    large_step_check,
)
from .drivers import (  # noqa: F401
    IterateRecord,
    RunResult,
    SolverConfig,
    StepConditionError,
    TensorStepProvider,
    hpe_check,
    lyapunov_discrete,
    replay_framework_check,
    run,
)
from .flow import (  # noqa: F401
    FlowConfig,
    FlowResult,
    FlowSample,
    a_lower_bound,
    default_v0,
    integrate,
    lyapunov_continuous,
)
from .harness import (  # noqa: F401
    ExperimentConfig,
    RateFit,
    compare,
    fit_rate,
    run_experiment,
    run_suite,
)

"""Direct gradient optimization of continuous-time LQR gains.

State- and output-feedback quadratic costs as functions of the feedback
matrix, their analytic gradients/Hessian forms and smoothness constants,
gradient-flow and line-search descent methods on the stabilizing set, and
a benchmark harness with fixtures, landscape scans, and flat-file I/O.
"""

from .errors import (
    ConvergenceError,
    DegenerateDirection,
    EigendecompositionError,
    IllConditionedError,
    LqrGradError,
    StabilityError,
    UnsupportedForOutputFeedback,
    ValidationError,
)
from .linalg import (
    KRON_MAX_ORDER,
    LYAPUNOV_RTOL,
    STABILITY_TOL,
    LyapunovSolution,
    SpectrumSummary,
    is_stabilizing,
    solve_lyapunov,
    solve_lyapunov_kron,
    spectrum,
)
from .model import (
    BoundsReport,
    CostEval,
    HessianWorkspace,
    LqrProblem,
    bounds_report,
    coercivity_bounds,
    evaluate,
    hessian_form,
    hessian_workspace,
    k_norm_bound,
    lpl_constant,
    riccati_optimum,
    smoothness_constant,
    y_trace_bound,
)
from .optim import (
    ConstantStep,
    FlowSample,
    FlowTrace,
    IterationRecord,
    NewtonArmijoStep,
    RunTrace,
    SafeBoundStep,
    algorithm1,
    conjugate_gradient,
    generic_conjugate_gradient,
    generic_descent,
    gradient_descent,
    gradient_flow,
    multi_start,
    newton_quotient_step,
    safe_step_bound,
)
from .harness import (
    BenchmarkConfig,
    BenchmarkReport,
    Fixture,
    LandscapeScan,
    ScanAxis,
    Uniform64,
    fixture,
    generate_random_problem,
    landscape_scan,
    load_problem,
    run_benchmark,
    save_problem,
    save_trace,
    stabilizing_intervals,
    tune_constant_step,
    write_scan_csv,
)

__version__ = "0.1.0"

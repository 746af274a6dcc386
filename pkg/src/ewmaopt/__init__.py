"""Run-length analysis and optimal design of one-sided EWMA charts for
exponential data, benchmarked against the Shiryaev-Roberts family."""

__version__ = "0.1.0"

from .analytic import (
    DEFAULT_RULE,
    EwmaDesign,
    PerformanceProfile,
    SaddResult,
    SeriesCoefficients,
    StabilizationRule,
    SurvivalSystem,
    add0,
    arl,
    delta0_coeffs,
    delta_k_coeffs,
    delta_value,
    performance_profile,
    psi,
    rho_k,
    rho_sequence,
    sadd,
    stadd,
    survival_coeffs,
)
from .design import (
    CalibrationTarget,
    DesignOptimum,
    MisspecReport,
    calibrate_ewma,
    calibrate_sr,
    calibrate_threshold,
    lambda_opt_curve,
    misspecification_study,
    optimize_design,
    optimize_srr,
    sr_profile,
)
from .errors import (
    BracketFailure,
    CancellationDetected,
    DegenerateDesignWarning,
    EwmaOptError,
    FlaggedEstimate,
    HorizonCap,
    InsufficientConditioning,
    NonConvergence,
    SingularSystem,
)
from .evaluate import ProfileResult, ewma_profile, ewma_solution, three_way
from .fredholm import (
    KernelSpec,
    OcSolution,
    Quadrature,
    ewma_kernel,
    iterate_rho_delta,
    solve_add0,
    solve_arl,
    solve_iadd,
    sr_kernel,
    sr_lr_cdf,
    srr_profile,
)
from .mc import (
    McConfig,
    McEstimate,
    ProcedureKind,
    ProcedureSpec,
    estimate_add,
    estimate_arl,
    estimate_stadd,
    run_once,
)
from .model import ExpChangeModel, Regime, cdf, density, likelihood_ratio, sample
from .qseries import (
    DEFAULT_TRUNCATION,
    QFactorialTable,
    SeriesTruncation,
    q_bracket_factorial,
    q_pochhammer,
    q_table,
    sum_series,
)

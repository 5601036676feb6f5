"""Mean-reverting SAV integrators and long-time statistics for damped-driven models.

The package splits into four layers:

* `mrsav.models`: the abstract damped-driven model and the Lorenz 96 instance;
* `mrsav.integrators`: the two-step (BDF2-based) and one-step (backward
  Euler) mean-reverting SAV schemes with their discrete energy machinery;
* `mrsav.stats`: streaming histograms, running moments, and the JS/KL/TV
  distances used to compare empirical invariant measures;
* `mrsav.experiments`: config-driven, checkpointable long runs and the
  table-producing experiment commands (also exposed as the ``mrsav`` CLI).
"""

from .models import (
    AssumptionReport,
    DampedDrivenModel,
    check_assumptions,
    eval_nonlinear,
    lorenz96_model,
)
from .integrators import (
    BDF2,
    BE,
    DivergenceError,
    EnergyConstants,
    LinearSolveCache,
    PairState,
    RunSummary,
    SchemeParams,
    bdf2_step,
    be_step,
    build_cache,
    discrete_energy,
    energy_constants,
    g_norm_sq,
    init_pair,
    run_trajectory,
    scheme_b,
    step,
)
from .stats import (
    DistanceReport,
    ProbVector,
    RunningMoments,
    StreamingHistogram,
    coarsen,
    distance_report,
    js_divergence,
    kl_divergence,
    moving_average,
    observed_order,
    tv_distance,
)
from .experiments import (
    ComparisonReport,
    ExperimentConfig,
    RunArtifacts,
    TableRow,
    bins_table,
    check_invariants,
    compare_orders,
    dt_table,
    initial_data_table,
    load_reference,
    make_reference,
    run_experiment,
    terminal_time_table,
)

__version__ = "0.1.0"

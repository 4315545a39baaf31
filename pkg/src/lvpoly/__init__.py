"""lvpoly: decentralized estimation of LV-feeder network variables.

Offline, the toolkit sweeps unbalanced power flows over a grid of uniform DG
setpoints for representative demand scenarios and fits per-variable quadratic
surfaces whose coefficients are themselves linear in a locally observable
reference voltage.  Online, each DG unit turns its own voltage measurement and
setpoint into magnitude and sensitivity estimates for remote voltages, head-of-
feeder flows and losses, through direct (non-iterative) calculations.  A
weighted-least-squares state estimator with demand pseudo-measurements serves
as the accuracy benchmark.
"""

from .bundle import BundleError, CoeffBundle, load_bundle, merge_bundles, save_bundle
from .clustering import (
    ClusterError,
    ClusterResult,
    NormalizedPatternSet,
    PatternSet,
    build_patterns,
    cluster,
    elbow_analysis,
    normalize,
    within_cluster_ss,
)
from .demand import (
    DemandError,
    DemandPool,
    DemandScenario,
    load_pool_csv,
    required_sample_size,
    sample_scenarios,
    synthetic_pool,
)
from .dse import (
    DseError,
    DseNonConvergence,
    LocalInjection,
    Measurement,
    build_pseudo_measurements,
    run_dse,
)
from .estimator import (
    Estimate,
    EstimatorError,
    LocalMeasurement,
    SingularInversionError,
    estimate,
    estimate_all,
    recover_reference_voltage,
)
from .feeder import (
    Branch,
    Customer,
    DGUnit,
    Feeder,
    FeederFormatError,
    load_feeder,
    parse_feeder,
    save_feeder,
    serialize_feeder,
    validate_radial,
)
from .powerflow import InjectionSet, PowerFlowError, PowerFlowSolution, solve, solve_batch
from .timeseries import (
    ErrorReport,
    HarnessError,
    TimeSeriesRun,
    benchmark_comparison,
    compute_metrics,
    inject_transducer_noise,
    robustness_scenario,
    run_timeseries,
)
from .training import (
    FitError,
    IllConditionedError,
    PolySurface,
    SetpointGrid,
    TrainingConfig,
    fit_coeff_models,
    fit_current_magnitude,
    fit_surface,
    surface_fit_report,
    sweep,
    train_bundle,
)
from .variables import tracked_variables

__version__ = "0.1.0"

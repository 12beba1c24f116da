"""Probabilistic hosting-capacity analysis over radial feeders.

The pipeline: parse a feeder document, assemble a parametric QP whose
parameters are scaled scenario data, solve whole scenario batches by
critical-region reuse, then summarize violations and slack statistics.
"""

from .acflow import (
    PowerFlowSolution,
    angle_form_losses,
    approximation_error_sweep,
    linear_model_prediction,
    power_balance_residual,
    solve_powerflow,
)
from .builder import (
    BuilderConfig,
    MpqpProblem,
    RowLabel,
    ScalingRecord,
    build_problem,
    calibrate_eta,
    dump_problem,
    load_config,
    scale_problem,
    theta_map,
    theta_map_batch,
)
from .engine import (
    BatchResult,
    EngineOptions,
    InstanceRecord,
    RegionRecord,
    load_result_json,
    run_batch,
    validate_batch,
)
from .errors import (
    AbortError,
    AllInfeasibleError,
    ConfigError,
    CycleError,
    DimensionError,
    DisconnectedError,
    DuplicateRegulatorError,
    EmptyGroupError,
    HeadroomError,
    MissingBusError,
    ModelError,
    NegativeValueError,
    NonConvergenceError,
    NotInRegionError,
    PhcaError,
    RankDeficientKError,
    SchemaError,
    SingularIncidenceError,
)
from .feeder import (
    FeederModel,
    Line,
    RegulatorSpec,
    Subgraph,
    SubgraphSensitivity,
    flow_from_injections,
    load_feeder,
    partition_by_regulators,
    sensitivity_matrices,
)
from .qp import QpInstance, QpSolution, identify_active, solve_qp
from .regions import CriticalRegion, RegionContext
from .scenarios import (
    AnalysisGrid,
    ScenarioSet,
    ScenarioTable,
    ThetaSet,
    expand_grid,
    load_scenarios,
    parse_profile,
)
from .stats import (
    GroupStats,
    group_stats,
    json_report,
    recover_ratios,
    render_report,
    slack_cdf,
    slack_values,
    soft_violations,
    violation_bound_gap,
    voltage_matrix,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

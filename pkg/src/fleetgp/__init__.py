"""fleetgp: decentralized GP demand fusion and active sensing for vehicle fleets."""

__version__ = "0.1.0"

from .config import POLICIES, RunConfig, load_config
from .errors import (
    ContractError,
    FleetGPError,
    JointSizeError,
    NumericalError,
    ParseError,
    PlannerError,
    ProtocolError,
    ValidationError,
)
from .fusion import (
    Assignment,
    GlobalSummary,
    LocalSummary,
    SupportSet,
    VehiclePredictive,
    aggregate_summaries,
    assign_regions,
    consistent_predictive,
    local_summary,
    merge_globals,
    summary_predictive,
    vehicle_predictive,
)
from .gp import (
    Dataset,
    GaussianPredictive,
    Hyperparameters,
    RegionSet,
    cov_matrix,
    gp_posterior,
    kernel_value,
    log_gaussian_entropy,
    log_gaussian_mean,
)
from .pic import PicOperator, pic_predictive, pitc_predictive, woodbury_residual
from .planning import (
    RoadGraph,
    Walk,
    WalkContext,
    WalkScore,
    enumerate_walks,
    grid_graph,
    joint_best_walks,
    joint_entropy,
    score_walk,
    select_walk,
)
from .sim import (
    DemandField,
    HotspotConfig,
    MetricsRow,
    Simulation,
    demand_rmse,
    generate_field,
    make_field,
    smoothed_kld,
)

__all__ = [name for name in dir() if not name.startswith("_")]

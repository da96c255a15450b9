"""Adaptive estimation of graph-filter coefficients over networks."""
from .adapt import (
    ALGORITHMS,
    FilterModel,
    NetworkState,
    build_combination_matrix,
    compute_global_moments,
    compute_preconditioner,
    local_covariances,
    make_state,
)
from .clustering import ClusterParams, ClusterState
from .errors import (
    ConfigError,
    ConvergenceError,
    DatasetError,
    GraphLMSError,
    PreconditionError,
    UnstableError,
)
from .graph import Graph, ShiftMatrix, build_shift, gen_erdos_renyi_thresholded, gen_knn_sensor
from .regressor import RegressorState, centralized_regressor, distributed_regressor_step
from .signal import ARSource, NoiseModel, ObservationStream, WhiteGaussianSource, make_rng
from .theory import build_theory_model, steady_state_msd, transient_msd_B, transient_msd_F

__version__ = "0.1.0"

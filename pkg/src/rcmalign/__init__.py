"""Sensorless estimation of remote-center-of-motion misalignment.

Core pipeline: simulate a misaligned trocar rig, train a free-space torque
predictor, estimate incision forces from torque residuals, calibrate the
tissue stiffness on pivot data, then optimize the misalignment distance.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    InsufficientExcitationError,
    RcmAlignError,
    SingularJacobianError,
)
from .kinematics import (
    D_ABS_MIN,
    IncisionJacobian,
    JointConfig,
    PivotGeometry,
    coaxial_offset,
    dh_forward,
    incision_jacobian,
    pivot_angle,
    pivot_geometry,
)
from .phantom import (
    Dataset,
    JointSample,
    RigConfig,
    TrajectorySpec,
    force_angle_sweep,
    freespace_torque_truth,
    gen_pivot_trajectory,
    gen_teleop_trajectory,
    read_dataset_csv,
    synthesize_dataset,
    tissue_force,
    write_dataset_csv,
)
from .estimation import (
    FeatureConfig,
    ForceEstimateSeries,
    FreeSpaceModel,
    TrainReport,
    estimate_force,
    estimate_force_series,
    extract_features,
    force_rmse,
    load_model,
    predict_tau0,
    save_model,
    train_freespace,
)
from .optimize import (
    KRange,
    Phase1Result,
    Phase2Result,
    SampleFilters,
    calibrate_k,
    fuse_k,
    grid_oracle,
    phase1_k_range,
    phase2_optimize_d,
    residual_phase1,
    residual_phase2,
    solve_bounded_lsq,
    total_cost,
)

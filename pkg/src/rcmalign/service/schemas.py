"""Request/response models for the HTTP service and the CLI thin client.

All quantities are SI (m, rad, N, N/m); the CLI converts its mm/deg flags
before building a request. ``extra="forbid"`` everywhere: unknown fields are
rejected rather than ignored.
"""

from __future__ import annotations

from math import pi, radians
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

from ..phantom import RigConfig, TrajectorySpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RigModel(_Strict):
    d_true: float = 0.030
    k_true: float = 900.0
    radial_offset_delta0: float = 0.0
    radial_dir: tuple[float, float, float] = (1.0, 0.0, 0.0)
    gravity_g2: float = 0.8
    gravity_g3: float = 2.0
    viscous_b: tuple[float, float, float] = (0.05, 0.05, 2.0)
    coulomb_c: tuple[float, float, float] = (0.1, 0.1, 1.0)
    coulomb_vel_scale: float = 0.05
    torque_noise_sigma: tuple[float, float, float] = (0.01, 0.01, 0.1)
    seed: int = 0

    def to_rig(self, noise_scale: float = 1.0) -> RigConfig:
        values = self.model_dump()
        values["torque_noise_sigma"] = tuple(
            noise_scale * s for s in values["torque_noise_sigma"]
        )
        return RigConfig(**values)


class TrajModel(_Strict):
    kind: Literal["pivot", "teleop"]
    duration: float = 60.0
    sample_rate: float = 200.0
    q3_depth: float = 0.12
    theta_star: float = 0.2618
    omega: float = 0.5
    seed: int = 0
    amp_max: float = 0.5

    def to_spec(self) -> TrajectorySpec:
        return TrajectorySpec(**self.model_dump())


class SimulateRequest(_Strict):
    out: str
    traj: TrajModel
    rig: RigModel = RigModel()
    noise_scale: float = 1.0


class SimulateResponse(_Strict):
    path: str
    n_samples: int
    kind: str
    d_true: float
    k_true: float
    seed: int


class TrainRequest(_Strict):
    data: str
    model_out: str
    report_out: Optional[str] = None
    window: int = 1
    velocity_scale: float = 0.05
    seed: int = 0


class TrainReportModel(_Strict):
    rmse_train: tuple[float, float, float]
    rmse_val: tuple[float, float, float]
    rmse_test: tuple[float, float, float]
    fractions: tuple[float, float, float]
    n_train: int
    n_val: int
    n_test: int
    seed: int
    lambdas: tuple[float, float, float]


class TrainResponse(_Strict):
    model_path: str
    report_path: Optional[str]
    report: TrainReportModel


class EstimateForceRequest(_Strict):
    data: str
    d: float
    model: Optional[str] = None
    oracle_tau0: bool = False
    series_out: Optional[str] = None
    rmse_out: Optional[str] = None


class EstimateForceResponse(_Strict):
    n: int
    rmse: Optional[tuple[float, float, float]]
    series_path: Optional[str]
    rmse_path: Optional[str]


class PivotConfigModel(_Strict):
    data: str
    d_star: float
    theta_star: float


class CalibrateKRequest(_Strict):
    pivots: list[PivotConfigModel]
    e: float = 0.002
    k_min: float = 100.0
    k_max: float = 3000.0
    k_step: float = 10.0
    d_min: float = -0.020
    d_max: float = 0.050
    f_min: float = 2.0
    out: Optional[str] = None


class KRangeModel(_Strict):
    lo: float
    hi: float


class ConfigRangeModel(_Strict):
    data: str
    d_star: float
    theta_star: float
    k_range: KRangeModel


class CalibrateKResponse(_Strict):
    ranges: list[ConfigRangeModel]
    common: KRangeModel
    k_hat: float
    out_path: Optional[str]


class EstimateDRequest(_Strict):
    data: str
    k_hat: float
    model: Optional[str] = None
    use_true_forces: bool = False
    d_star: Optional[float] = None
    d_min: float = -0.020
    d_max: float = 0.050
    # None picks the route default: 2 N sensorless, 0 N with ground-truth forces
    f_min: Optional[float] = None
    theta_min: float = radians(5.0)
    filter_d_ref: float = 0.030
    min_samples: int = 100
    out: Optional[str] = None


class SolveStartModel(_Strict):
    init: float
    d_hat: float
    cost: float
    iterations: int


class EstimateDResponse(_Strict):
    d_hat: float
    cost: float
    iterations: int
    n_used: int
    n_rejected: int
    k_hat: float
    e_abs: Optional[float]
    starts: list[SolveStartModel]
    out_path: Optional[str]


class SweepRequest(_Strict):
    k: float = 900.0
    d_values: list[float] = [0.0, 0.010, 0.020, 0.030, 0.040, 0.050]
    theta_max: float = pi / 2
    theta_steps: int = 91
    out: Optional[str] = None


class SweepRowModel(_Strict):
    d: float
    theta: float
    force: float


class SweepResponse(_Strict):
    n_rows: int
    out_path: Optional[str]
    rows: list[SweepRowModel]


class VerifyRequest(_Strict):
    data: str
    k_hat: float
    model: Optional[str] = None
    use_true_forces: bool = False
    d_step: float = 5e-4
    d_min: float = -0.020
    d_max: float = 0.050
    f_min: Optional[float] = None
    theta_min: float = radians(5.0)
    filter_d_ref: float = 0.030
    min_samples: int = 100
    out: Optional[str] = None
    surface_out: Optional[str] = None


class VerifyResponse(_Strict):
    solver_d_hat: float
    oracle_d_hat: float
    diff: float
    tol: float
    agree: bool
    n_grid: int
    out_path: Optional[str]
    surface_path: Optional[str]


class HealthResponse(_Strict):
    status: str
    version: str

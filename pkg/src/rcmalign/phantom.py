"""Synthetic trocar/tissue rig: trajectories, interaction forces, measured torques.

Stands in for a physical test rig. Ground truth (misalignment distance,
tissue stiffness, free-space torque model) is configured explicitly, so every
downstream estimate can be checked against it. All quantities SI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from math import pi
from pathlib import Path

import numpy as np

from .errors import DataError
from .kinematics import (
    JointConfig,
    incision_jacobians,
    incision_points,
    pivot_angles,
    shaft_axes,
)

D_TRUE_BOUNDS = (-0.020, 0.050)

CSV_COLUMNS = (
    "t",
    "q1", "q2", "q3",
    "qd1", "qd2", "qd3",
    "tau1", "tau2", "tau3",
    "fx", "fy", "fz",
    "tau01", "tau02", "tau03",
)

# angle below which the lateral displacement direction is numerically undefined
_THETA_EPS = 1e-9


@dataclass(frozen=True)
class RigConfig:
    """Ground-truth rig: misalignment, tissue spring, free-space torque model, noise."""

    d_true: float = 0.030
    k_true: float = 900.0
    radial_offset_delta0: float = 0.0
    radial_dir: tuple = (1.0, 0.0, 0.0)
    gravity_g2: float = 0.8
    gravity_g3: float = 2.0
    viscous_b: tuple = (0.05, 0.05, 2.0)
    coulomb_c: tuple = (0.1, 0.1, 1.0)
    coulomb_vel_scale: float = 0.05
    torque_noise_sigma: tuple = (0.01, 0.01, 0.1)
    seed: int = 0

    def __post_init__(self):
        if not D_TRUE_BOUNDS[0] <= self.d_true <= D_TRUE_BOUNDS[1]:
            raise ValueError(
                f"d_true {self.d_true} m outside [{D_TRUE_BOUNDS[0]}, {D_TRUE_BOUNDS[1]}]"
            )
        if self.k_true < 0.0:
            raise ValueError("k_true must be >= 0 (0 means no tissue contact)")
        if any(s < 0 for s in self.torque_noise_sigma):
            raise ValueError("noise sigmas must be >= 0")
        if self.coulomb_vel_scale <= 0:
            raise ValueError("coulomb_vel_scale must be > 0")


@dataclass(frozen=True)
class TrajectorySpec:
    """Joint trajectory to run on the simulated robot."""

    kind: str
    duration: float = 60.0
    sample_rate: float = 200.0
    q3_depth: float = 0.12
    theta_star: float = 0.2618  # pivot only
    omega: float = 0.5  # pivot only, rad/s
    seed: int = 0  # teleop only
    amp_max: float = 0.5  # teleop only, rad

    def __post_init__(self):
        if self.kind not in ("pivot", "teleop"):
            raise ValueError(f"kind must be 'pivot' or 'teleop', got {self.kind!r}")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ValueError("duration and sample_rate must be > 0")
        if self.kind == "pivot" and not 0.0 < self.theta_star < pi / 2:
            raise ValueError(f"theta_star must lie in (0, pi/2), got {self.theta_star}")
        if self.kind == "teleop" and not 0.0 < self.amp_max < pi / 2:
            raise ValueError(f"amp_max must lie in (0, pi/2), got {self.amp_max}")


@dataclass(frozen=True)
class JointSample:
    """One timestamped row of the dataset."""

    t: float
    q: JointConfig
    qdot: np.ndarray
    tau: np.ndarray
    f_true: np.ndarray | None = None
    tau0_true: np.ndarray | None = None


@dataclass
class Dataset:
    """Column-oriented sample store; f_true/tau0_true are debug channels."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray
    f_true: np.ndarray | None = None
    tau0_true: np.ndarray | None = None
    rig: RigConfig | None = None
    traj: TrajectorySpec | None = None

    def __post_init__(self):
        n = len(self.t)
        if n >= 2:
            dt = np.diff(self.t)
            if np.any(dt <= 0):
                raise DataError("sample times must be strictly increasing")
            if np.any(np.abs(dt - dt[0]) > 1e-9 * max(1.0, dt[0])):
                raise DataError("sample times must be uniformly spaced")
        if np.any(np.abs(self.q[:, :2]) > pi / 2 + 1e-9):
            raise DataError("joint angles out of workspace (|q1|,|q2| <= pi/2)")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def has_force_truth(self) -> bool:
        return self.f_true is not None

    @property
    def has_tau0_truth(self) -> bool:
        return self.tau0_true is not None

    def sample(self, i: int) -> JointSample:
        return JointSample(
            t=float(self.t[i]),
            q=JointConfig(*[float(v) for v in self.q[i]]),
            qdot=self.qdot[i].copy(),
            tau=self.tau[i].copy(),
            f_true=None if self.f_true is None else self.f_true[i].copy(),
            tau0_true=None if self.tau0_true is None else self.tau0_true[i].copy(),
        )


def _time_grid(spec: TrajectorySpec) -> np.ndarray:
    n = int(round(spec.duration * spec.sample_rate))
    return np.arange(n) / spec.sample_rate


def gen_pivot_trajectory(spec: TrajectorySpec):
    """Circular pivot at exactly constant deflection theta*.

    The shaft axis sweeps the cone of half-angle theta* around the plumb line:
    q2 = arcsin(sin(theta*) sin(w t)), q1 = arcsin(sin(theta*) cos(w t) / cos q2),
    which keeps arccos(cos q1 cos q2) = theta* to machine precision. This
    matches the small-angle form q1 = theta* cos(w t), q2 = theta* sin(w t) at
    the quarter-period waypoints and to third order in theta* in between; the
    literal small-angle form would let the deflection drift by ~theta*^3 / 24.
    """
    if spec.kind != "pivot":
        raise ValueError("spec.kind must be 'pivot'")
    t = _time_grid(spec)
    wt = spec.omega * t
    st, ct = np.sin(spec.theta_star), np.cos(spec.theta_star)
    sin_p, cos_p = np.sin(wt), np.cos(wt)
    q2 = np.arcsin(st * sin_p)
    c2 = np.cos(q2)
    q1 = np.arcsin(st * cos_p / c2)
    qd2 = st * spec.omega * cos_p / c2
    qd1 = -st * ct * spec.omega * sin_p / np.square(c2)
    q = np.column_stack([q1, q2, np.full_like(t, spec.q3_depth)])
    qdot = np.column_stack([qd1, qd2, np.zeros_like(t)])
    return t, q, qdot


def _sinusoid_sum(rng: np.random.Generator, t: np.ndarray, amp: float):
    """Seeded sum of 3 sinusoids scaled so the sampled max-|value| equals amp."""
    freqs = rng.uniform(0.1, 0.8, size=3)
    phases = rng.uniform(0.0, 2.0 * pi, size=3)
    weights = rng.uniform(0.5, 1.0, size=3)
    w = 2.0 * pi * freqs
    pos = (weights[None, :] * np.sin(np.outer(t, w) + phases)).sum(axis=1)
    vel = (weights[None, :] * w * np.cos(np.outer(t, w) + phases)).sum(axis=1)
    scale = amp / np.abs(pos).max()
    return scale * pos, scale * vel


def gen_teleop_trajectory(spec: TrajectorySpec):
    """Seeded multi-sine free motion standing in for hand teleoperation."""
    if spec.kind != "teleop":
        raise ValueError("spec.kind must be 'teleop'")
    t = _time_grid(spec)
    rng = np.random.default_rng(spec.seed)
    q1, qd1 = _sinusoid_sum(rng, t, spec.amp_max)
    q2, qd2 = _sinusoid_sum(rng, t, spec.amp_max)
    q3_osc, qd3 = _sinusoid_sum(rng, t, 0.01)  # small slide around the nominal depth
    q = np.column_stack([q1, q2, spec.q3_depth + q3_osc])
    qdot = np.column_stack([qd1, qd2, qd3])
    return t, q, qdot


def gen_trajectory(spec: TrajectorySpec):
    if spec.kind == "pivot":
        return gen_pivot_trajectory(spec)
    return gen_teleop_trajectory(spec)


def freespace_torques(q: np.ndarray, qdot: np.ndarray, rig: RigConfig) -> np.ndarray:
    """Deterministic free-space torque truth: gravity + viscous + smoothed Coulomb."""
    b = np.asarray(rig.viscous_b)
    c = np.asarray(rig.coulomb_c)
    fric = b * qdot + c * np.tanh(qdot / rig.coulomb_vel_scale)
    grav = np.zeros_like(fric)
    grav[..., 1] = rig.gravity_g2 * np.sin(q[..., 1])
    grav[..., 2] = rig.gravity_g3 * np.cos(q[..., 0]) * np.cos(q[..., 1])
    return grav + fric


def freespace_torque_truth(q: JointConfig, qdot, rig: RigConfig) -> np.ndarray:
    qv = np.array([q.q1, q.q2, q.q3])
    return freespace_torques(qv, np.asarray(qdot, dtype=float), rig)


def tissue_forces(q1, q2, rig: RigConfig) -> np.ndarray:
    """Linear-spring trocar force(s): magnitude k |D sin(theta)|, lateral direction.

    The direction is the unit lateral displacement of the shaft point at the
    incision depth relative to the undeflected pose, which is orthogonal to the
    current shaft axis by construction.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    theta = pivot_angles(q1, q2)
    out = np.zeros(theta.shape + (3,))
    if rig.k_true == 0.0:
        return out
    mag = rig.k_true * np.abs(rig.d_true * np.sin(theta))
    if rig.d_true != 0.0:
        u = shaft_axes(q1, q2)
        p = incision_points(q1, q2, rig.d_true)
        p0 = np.array([0.0, 0.0, rig.d_true])  # undeflected shaft point
        w = p - p0
        lateral = w - (w * u).sum(axis=-1, keepdims=True) * u
        norm = np.linalg.norm(lateral, axis=-1)
        ok = theta >= _THETA_EPS
        safe = np.where(ok, norm, 1.0)
        out = np.where(ok[..., None], (mag / safe)[..., None] * lateral, 0.0)
    if rig.radial_offset_delta0 > 0.0:
        n0 = np.asarray(rig.radial_dir, dtype=float)
        n0 = n0 / np.linalg.norm(n0)
        out = out + rig.k_true * rig.radial_offset_delta0 * n0
    return out


def tissue_force(q: JointConfig, rig: RigConfig) -> np.ndarray:
    return tissue_forces(q.q1, q.q2, rig)


def synthesize_dataset(traj: TrajectorySpec, rig: RigConfig) -> Dataset:
    """Run the trajectory on the simulated rig and record measured torques.

    tau = tau0 + J(d_true)^T f + eps, with eps drawn per joint from the seeded
    generator; f and tau0 ground truth ride along as debug channels.
    """
    t, q, qdot = gen_trajectory(traj)
    f = tissue_forces(q[:, 0], q[:, 1], rig)
    tau0 = freespace_torques(q, qdot, rig)
    J = incision_jacobians(q[:, 0], q[:, 1], rig.d_true)
    tau = tau0 + np.einsum("nji,nj->ni", J, f)
    sigma = np.asarray(rig.torque_noise_sigma)
    if np.any(sigma > 0):
        rng = np.random.default_rng(rig.seed)
        tau = tau + sigma * rng.standard_normal(tau.shape)
    return Dataset(t=t, q=q, qdot=qdot, tau=tau, f_true=f, tau0_true=tau0, rig=rig, traj=traj)


def force_angle_sweep(rig: RigConfig, theta_grid, d_grid) -> np.ndarray:
    """Static |force| over a (D, theta) grid; rows (d, theta, force), D-major."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    d_grid = np.asarray(d_grid, dtype=float)
    if theta_grid.size == 0 or d_grid.size == 0:
        raise ValueError("grids must be nonempty")
    dd, tt = np.meshgrid(d_grid, theta_grid, indexing="ij")
    force = rig.k_true * np.abs(dd * np.sin(tt))
    return np.column_stack([dd.ravel(), tt.ravel(), force.ravel()])


def free_space_rig(rig: RigConfig) -> RigConfig:
    """Same rig with the tissue removed (k_true = 0)."""
    return replace(rig, k_true=0.0)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset_csv(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        n = len(ds)
        f = ds.f_true
        tau0 = ds.tau0_true
        for i in range(n):
            row = [
                _fmt(ds.t[i]),
                *(_fmt(v) for v in ds.q[i]),
                *(_fmt(v) for v in ds.qdot[i]),
                *(_fmt(v) for v in ds.tau[i]),
            ]
            row += [_fmt(v) for v in f[i]] if f is not None else ["", "", ""]
            row += [_fmt(v) for v in tau0[i]] if tau0 is not None else ["", "", ""]
            w.writerow(row)


def read_dataset_csv(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(CSV_COLUMNS)}")
        rows = list(r)
    if not rows:
        raise DataError(f"{path}: no samples")
    raw = np.array([[cell.strip() for cell in row] for row in rows], dtype=object)
    if raw.shape[1] != len(CSV_COLUMNS):
        raise DataError(f"{path}: wrong column count")
    base = raw[:, :10].astype(float)

    def _group(cols: np.ndarray, name: str):
        empty = cols == ""
        if empty.all():
            return None
        if empty.any():
            raise DataError(f"{path}: {name} columns are partially empty")
        return cols.astype(float)

    f = _group(raw[:, 10:13], "force")
    tau0 = _group(raw[:, 13:16], "tau0")
    return Dataset(
        t=base[:, 0],
        q=base[:, 1:4],
        qdot=base[:, 4:7],
        tau=base[:, 7:10],
        f_true=f,
        tau0_true=tau0,
    )

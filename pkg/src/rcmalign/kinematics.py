"""Kinematics of a laparoscopic manipulator's proximal joints and the incision Jacobian.

Only the yaw, pitch, and insertion joints are modeled; the wrist does not
move the incision point. The base frame sits at the remote center of motion
(RCM), all units are SI (m, rad).
"""

from dataclasses import dataclass
from math import pi

import numpy as np

from .errors import SingularJacobianError

# Jacobian invertibility guard: below this |D| the first two columns are
# numerically useless and the force solve is meaningless.
D_ABS_MIN = 1e-3

_HALF_PI = pi / 2.0


@dataclass(frozen=True)
class JointConfig:
    """One joint configuration: q1, q2 in rad, q3 insertion depth in m."""

    q1: float
    q2: float
    q3: float = 0.0

    def __post_init__(self):
        # workspace guard keeps cos(q2) > 0 so the Jacobian stays well-conditioned
        if abs(self.q1) > _HALF_PI + 1e-12 or abs(self.q2) > _HALF_PI + 1e-12:
            raise ValueError(
                f"joint angles out of workspace: |q1|,|q2| <= pi/2, got ({self.q1}, {self.q2})"
            )


@dataclass(frozen=True)
class IncisionJacobian:
    """3x3 map from joint rates (rad/s, rad/s, m/s) to incision-point velocity (m/s)."""

    m: np.ndarray
    d: float

    @property
    def is_singular(self) -> bool:
        return abs(self.d) < D_ABS_MIN


@dataclass(frozen=True)
class PivotGeometry:
    """Pivot deflection theta (rad) and coaxial lateral offset delta_p (m)."""

    theta: float
    delta_p: float


def _rot_x(a: float) -> np.ndarray:
    ca, sa = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0, 0], [0, ca, -sa, 0], [0, sa, ca, 0], [0, 0, 0, 1]])


def _rot_z(t: float) -> np.ndarray:
    ct, st = np.cos(t), np.sin(t)
    return np.array([[ct, -st, 0, 0], [st, ct, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])


def _trans_z(d: float) -> np.ndarray:
    T = np.eye(4)
    T[2, 3] = d
    return T


def _mdh(alpha: float, theta: float, d: float) -> np.ndarray:
    # modified-DH link transform with a = 0 for every link of this chain
    return _rot_x(alpha) @ _rot_z(theta) @ _trans_z(d)


def dh_forward(q: JointConfig, d: float) -> np.ndarray:
    """Candidate incision point at distance ``d`` from the RCM, base frame.

    Built from the modified-DH chain of the first three joints with the third
    link translation fixed at -d; the result does not depend on q3 (the shaft
    slides through the incision without moving it).
    """
    T = (
        _mdh(+_HALF_PI, q.q1 + _HALF_PI, 0.0)
        @ _mdh(-_HALF_PI, q.q2 - _HALF_PI, 0.0)
        # link-3 twist is +pi/2: the chain must agree with the closed-form
        # incision Jacobian below (finite-difference checked in the tests)
        @ _mdh(+_HALF_PI, 0.0, -d)
    )
    return T[:3, 3].copy()


def shaft_axes(q1, q2) -> np.ndarray:
    """Unit insertion-axis direction(s) for (arrays of) joint angles.

    This is the third Jacobian column; points from the RCM toward the tool tip.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    return np.stack(
        [np.cos(q2) * np.sin(q1), -np.sin(q2), -np.cos(q1) * np.cos(q2)], axis=-1
    )


def incision_points(q1, q2, d: float) -> np.ndarray:
    """Vectorized closed form of dh_forward: p = -d * shaft_axis."""
    return -d * shaft_axes(q1, q2)


def incision_jacobians(q1, q2, d) -> np.ndarray:
    """Closed-form incision Jacobian(s); shape (..., 3, 3). Independent of q3."""
    q1, q2, d = np.broadcast_arrays(
        np.asarray(q1, dtype=float), np.asarray(q2, dtype=float), np.asarray(d, dtype=float)
    )
    c1, s1 = np.cos(q1), np.sin(q1)
    c2, s2 = np.cos(q2), np.sin(q2)
    J = np.empty(q1.shape + (3, 3))
    J[..., 0, 0] = -d * c1 * c2
    J[..., 0, 1] = d * s1 * s2
    J[..., 0, 2] = c2 * s1
    J[..., 1, 0] = 0.0
    J[..., 1, 1] = d * c2
    J[..., 1, 2] = -s2
    J[..., 2, 0] = -d * c2 * s1
    J[..., 2, 1] = -d * c1 * s2
    J[..., 2, 2] = -c1 * c2
    return J


def incision_jacobian(q: JointConfig, d: float) -> IncisionJacobian:
    """Closed-form Jacobian at the incision for one configuration."""
    return IncisionJacobian(m=incision_jacobians(q.q1, q.q2, d), d=float(d))


def pivot_angles(q1, q2) -> np.ndarray:
    """Deflection angle(s) from the RCM plumb line: arccos(cos q1 cos q2)."""
    c = np.cos(np.asarray(q1, dtype=float)) * np.cos(np.asarray(q2, dtype=float))
    # roundoff at q = 0 can push the argument just past 1
    return np.arccos(np.clip(c, -1.0, 1.0))


def pivot_angle(q: JointConfig) -> float:
    return float(pivot_angles(q.q1, q.q2))


def coaxial_offset(d: float, theta: float) -> float:
    """Lateral offset of the misaligned port at deflection theta: d * sin(theta)."""
    if not 0.0 <= theta <= pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    return d * np.sin(theta)


def pivot_geometry(q: JointConfig, d: float) -> PivotGeometry:
    theta = pivot_angle(q)
    return PivotGeometry(theta=theta, delta_p=coaxial_offset(d, theta))


def _damped_force_solve(jac: np.ndarray, residual: np.ndarray) -> np.ndarray:
    jjt = jac @ np.swapaxes(jac, -1, -2) + 1e-9 * np.eye(3)
    return np.linalg.solve(jjt, jac @ residual[..., None])[..., 0]


def solve_force_from_torque(jac: np.ndarray, residual: np.ndarray, d: float) -> np.ndarray:
    """Solve J^T f = residual for f without forming an explicit inverse.

    Guards |d| >= 1 mm; falls back to a Tikhonov-damped (1e-9) normal solve for
    any sample whose Jacobian condition number exceeds 1e8.
    """
    if abs(d) < D_ABS_MIN:
        raise SingularJacobianError(
            f"|D| = {abs(d):.4g} m is below the 1 mm invertibility guard"
        )
    jt = np.swapaxes(jac, -1, -2)
    cond = np.linalg.cond(jt)
    if jac.ndim == 2:
        if cond > 1e8:
            return _damped_force_solve(jac, residual)
        return np.linalg.solve(jt, residual[..., None])[..., 0]
    bad = ~(cond <= 1e8)  # catches inf/nan conditions too
    f = np.empty_like(residual, dtype=float)
    if (~bad).any():
        f[~bad] = np.linalg.solve(jt[~bad], residual[~bad][..., None])[..., 0]
    if bad.any():
        f[bad] = _damped_force_solve(jac[bad], residual[bad])
    return f

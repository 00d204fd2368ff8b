"""Two-phase stiffness/misalignment optimization and a brute-force grid oracle.

Phase 1 sweeps a stiffness grid against pivot datasets with ground-truth
forces and keeps the values whose best-fit distance lands within tolerance of
the measured one; the per-configuration intervals are intersected and their
midpoint becomes the working stiffness. Phase 2 holds that stiffness fixed and
solves for the misalignment distance from estimated forces with a bounded
Levenberg-Marquardt search started from several initial guesses.

Residual convention: the 3-vector residual (scale - 1) * f has Euclidean norm
|k D sin(theta) - ||f|||, so the solver stacks the scalar form, which is also
the continuous extension at ||f|| = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import radians

import numpy as np

from .errors import CalibrationError, DataError, InsufficientExcitationError
from .estimation import FreeSpaceModel, predict_tau0
from .kinematics import D_ABS_MIN, pivot_angles
from .phantom import Dataset, JointSample

D_BOUNDS_DEFAULT = (-0.020, 0.050)
K_BOUNDS_DEFAULT = (100.0, 3000.0)
K_STEP_DEFAULT = 10.0
E_TOL_DEFAULT = 0.002
D_GRID_STEP_DEFAULT = 5e-4
MULTISTART_INITS = (-0.025, -0.015, -0.005, 0.005, 0.015, 0.025, 0.035, 0.045)
MIN_SAMPLES_DEFAULT = 100

_ZERO_FORCE_EPS = 1e-12


@dataclass(frozen=True)
class SampleFilters:
    """Which samples may enter the cost: force floor, angle floor.

    The force floor is checked at the reference distance ``d_ref`` so the
    retained set does not change while the solver moves the candidate D.
    """

    f_min: float = 2.0
    theta_min: float = radians(5.0)
    d_ref: float = 0.030
    min_samples: int = MIN_SAMPLES_DEFAULT


@dataclass(frozen=True)
class KRange:
    """Accepted stiffness interval [lo, hi] for one configuration."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty stiffness range: [{self.lo}, {self.hi}]")

    def intersect(self, other: "KRange"):
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return KRange(lo, hi) if lo <= hi else None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass
class Phase1Result:
    """Per-configuration stiffness ranges, their intersection, and the fused value."""

    ranges: list
    common: KRange
    k_hat: float


@dataclass
class Phase2Result:
    """Optimized misalignment distance with solver diagnostics."""

    d_hat: float
    cost: float
    iterations: int
    n_used: int
    n_rejected: int
    k_hat: float
    e_abs: float | None = None
    starts: list | None = None


@dataclass
class SolveResult:
    params: np.ndarray
    cost: float
    iterations: int


def residual_phase1(k: float, d: float, f_e, theta_star: float) -> np.ndarray:
    """Stiffness-calibration residual h = (k d sin(theta*) / ||f|| - 1) f."""
    f_e = np.asarray(f_e, dtype=float)
    norm = float(np.linalg.norm(f_e))
    if norm < _ZERO_FORCE_EPS:
        raise ValueError("zero-force sample: must be filtered out upstream")
    return (k * d * np.sin(theta_star) / norm - 1.0) * f_e


def residual_phase2(k: float, d: float, sample: JointSample, model: FreeSpaceModel) -> np.ndarray:
    """Distance-optimization residual on the estimated force g = J(d)^-T (tau - tau0_hat)."""
    state = (np.array([sample.q.q1, sample.q.q2, sample.q.q3]), sample.qdot)
    r = sample.tau - predict_tau0(model, [state])
    g = _force_components(
        np.array([sample.q.q1]), np.array([sample.q.q2]), r[None, :], d
    )[0]
    norm = float(np.linalg.norm(g))
    if norm < _ZERO_FORCE_EPS:
        raise ValueError("zero estimated force: must be filtered out upstream")
    theta = pivot_angles(sample.q.q1, sample.q.q2)
    return (k * d * np.sin(theta) / norm - 1.0) * g


def total_cost(params, dataset: Dataset, residual_fn) -> float:
    """Sum of half squared residual norms over the unfiltered samples.

    ``residual_fn(params, sample)`` returns a residual vector or None when the
    sample is filtered out. Raises when every sample is filtered.
    """
    cost = 0.0
    used = 0
    for i in range(len(dataset)):
        h = residual_fn(params, dataset.sample(i))
        if h is None:
            continue
        h = np.asarray(h, dtype=float)
        cost += 0.5 * float(h @ h)
        used += 1
    if used == 0:
        raise InsufficientExcitationError(
            "insufficient excitation: every sample was filtered out of the cost"
        )
    return cost


def _fd_jacobian(residual_fn, x, r0, rel_step):
    J = np.empty((len(r0), len(x)))
    for j in range(len(x)):
        h = rel_step * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (residual_fn(xp) - residual_fn(xm)) / (2.0 * h)
    return J


def solve_bounded_lsq(
    residual_fn,
    bounds,
    x0,
    max_iter: int = 200,
    gtol: float = 1e-10,
    step_tol: float = 1e-12,
    fd_rel_step: float = 1e-7,
) -> SolveResult:
    """Levenberg-Marquardt with projection of each step onto the box bounds.

    ``residual_fn(x)`` returns the stacked residual vector. The residual
    Jacobian is taken by central finite differences (step 1e-7 relative to the
    parameter magnitude). Stops on the gradient inf-norm, the step norm, or
    the iteration cap; deterministic for fixed inputs.
    """
    lo = np.atleast_1d(np.asarray(bounds[0], dtype=float))
    hi = np.atleast_1d(np.asarray(bounds[1], dtype=float))
    x = np.atleast_1d(np.asarray(x0, dtype=float)).astype(float).copy()
    if np.any(x < lo - 1e-15) or np.any(x > hi + 1e-15):
        raise ValueError(f"init {x} outside bounds [{lo}, {hi}]")
    x = np.clip(x, lo, hi)
    r = np.asarray(residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residual at the initial point")
    cost = 0.5 * float(r @ r)
    mu = None
    iterations = 0
    for _ in range(max_iter):
        J = _fd_jacobian(residual_fn, x, r, fd_rel_step)
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol:
            break
        JTJ = J.T @ J
        if mu is None:
            mu = 1e-3 * max(float(np.max(np.diag(JTJ))), 1e-12)
        moved = False
        while mu <= 1e16:
            delta = np.linalg.solve(JTJ + mu * np.eye(len(x)), -g)
            x_new = np.clip(x + delta, lo, hi)
            step = np.linalg.norm(x_new - x)
            if step <= step_tol:
                break
            r_new = np.asarray(residual_fn(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                mu = max(mu / 3.0, 1e-12)
                moved = True
                break
            mu *= 10.0
        iterations += 1
        if not moved:
            break
    return SolveResult(params=x, cost=cost, iterations=iterations)


def _force_components(q1, q2, residual, d):
    """Estimated force from torque residuals via the closed-form J(d)^-T.

    The Jacobian columns are mutually orthogonal with norms (|d| cos q2, |d|, 1),
    so the solve reduces to three divisions in the column frame.
    """
    c1, s1 = np.cos(q1), np.sin(q1)
    c2, s2 = np.cos(q2), np.sin(q2)
    # orthonormal column frame: e1 = col1/(d c2), e2 = col2/d, e3 = col3
    e1 = np.stack([-c1, np.zeros_like(c1), -s1], axis=-1)
    e2 = np.stack([s1 * s2, c2, -c1 * s2], axis=-1)
    e3 = np.stack([c2 * s1, -s2, -c1 * c2], axis=-1)
    g1 = residual[..., 0] / (d * c2)
    g2 = residual[..., 1] / d
    g3 = residual[..., 2]
    return g1[..., None] * e1 + g2[..., None] * e2 + g3[..., None] * e3


def _estimated_force_invariants(q1, q2, residual):
    """Per-sample (A, B) with ||g(d)||^2 = A / d^2 + B, independent of d."""
    c2 = np.cos(q2)
    A = np.square(residual[..., 0] / c2) + np.square(residual[..., 1])
    B = np.square(residual[..., 2])
    return A, B


def make_phase1_stack(ds: Dataset, theta_star: float, f_min: float = 2.0):
    """Stacked scalar residual r_i(k, d) = k d sin(theta*) - ||f*_i|| on a pivot set.

    Returns (fn, n_used, n_rejected); fn(k, d) evaluates the retained samples.
    """
    if not ds.has_force_truth:
        raise DataError("phase 1 needs ground-truth force columns in the dataset")
    theta = pivot_angles(ds.q[:, 0], ds.q[:, 1])
    if np.max(np.abs(theta - theta_star)) > 1e-3:
        raise DataError(
            "not a pivot dataset for the declared deflection: "
            f"max |theta - theta*| = {np.max(np.abs(theta - theta_star)):.2e} rad"
        )
    fnorm = np.linalg.norm(ds.f_true, axis=1)
    keep = fnorm > f_min
    kept = fnorm[keep]
    sin_t = np.sin(theta_star)

    def fn(k: float, d: float) -> np.ndarray:
        return k * d * sin_t - kept

    return fn, int(keep.sum()), int((~keep).sum())


def make_phase2_stack(
    ds: Dataset,
    model: FreeSpaceModel | None = None,
    use_true_forces: bool = False,
    filters: SampleFilters = SampleFilters(),
):
    """Stacked scalar residual r_i(k, d) = k d sin(theta_i) - ||g_i(d)||.

    Sensorless route: g = J(d)^-T (tau - tau0_hat), whose norm varies with the
    candidate d; the force floor is applied at filters.d_ref. Ground-truth
    route: g is the recorded force, independent of d.
    Returns (fn, n_used, n_rejected).
    """
    theta_all = pivot_angles(ds.q[:, 0], ds.q[:, 1])
    if use_true_forces:
        if not ds.has_force_truth:
            raise DataError("dataset has no ground-truth force columns")
        fnorm = np.linalg.norm(ds.f_true, axis=1)
        keep = (theta_all >= filters.theta_min) & (fnorm >= filters.f_min)
        sin_t = np.sin(theta_all[keep])
        fn_kept = fnorm[keep]

        def fn(k: float, d: float) -> np.ndarray:
            return k * d * sin_t - fn_kept

        return fn, int(keep.sum()), int((~keep).sum())

    if model is None:
        raise DataError("a trained model is required unless use_true_forces is set")
    offset = model.feature.window - 1
    residual = ds.tau[offset:] - model.predict_series(ds.q, ds.qdot)
    q1, q2 = ds.q[offset:, 0], ds.q[offset:, 1]
    theta = theta_all[offset:]
    A, B = _estimated_force_invariants(q1, q2, residual)
    gnorm_ref = np.sqrt(A / filters.d_ref**2 + B)
    keep = (theta >= filters.theta_min) & (gnorm_ref >= filters.f_min)
    sin_t = np.sin(theta[keep])
    A_k, B_k = A[keep], B[keep]

    def fn(k: float, d: float) -> np.ndarray:
        return k * d * sin_t - np.sqrt(A_k / d**2 + B_k)

    return fn, int(keep.sum()), int((~keep).sum()) + offset


def stack_cost(fn, k: float, d: float) -> float:
    r = fn(k, d)
    return 0.5 * float(r @ r)


def _positive_branch(d_bounds):
    lo, hi = d_bounds
    if hi < D_ABS_MIN:
        return None
    return (max(lo, D_ABS_MIN), hi)


def _negative_branch(d_bounds):
    lo, hi = d_bounds
    if lo > -D_ABS_MIN:
        return None
    return (lo, min(hi, -D_ABS_MIN))


def phase1_k_range(
    ds: Dataset,
    d_star: float,
    theta_star: float,
    e: float = E_TOL_DEFAULT,
    k_bounds=K_BOUNDS_DEFAULT,
    k_step: float = K_STEP_DEFAULT,
    d_bounds=D_BOUNDS_DEFAULT,
    f_min: float = 2.0,
) -> KRange:
    """Accepted stiffness interval for one pivot configuration.

    Sweeps the stiffness grid; for each value the distance is re-optimized
    against the ground-truth forces, and the value is accepted when the
    distance lands within +-e of the measured one.
    """
    if e <= 0:
        raise ValueError("tolerance e must be > 0")
    fn, n_used, _ = make_phase1_stack(ds, theta_star, f_min=f_min)
    if n_used == 0:
        raise InsufficientExcitationError(
            "insufficient excitation: all pivot samples below the force floor"
        )
    branch = _positive_branch(d_bounds)
    if branch is None:
        raise ValueError("distance bounds leave no searchable |D| >= 1 mm region")
    init = min(max(d_star, branch[0]), branch[1])
    grid = k_grid(k_bounds, k_step)
    accepted = []
    best_miss = None
    for k in grid:
        res = solve_bounded_lsq(lambda x, k=k: fn(k, x[0]), branch, [init])
        miss = abs(float(res.params[0]) - d_star)
        if miss <= e:
            accepted.append(k)
        if best_miss is None or miss < best_miss[0]:
            best_miss = (miss, k, float(res.params[0]))
    if not accepted:
        raise CalibrationError(
            "no stiffness value reproduces the measured distance within tolerance",
            details={
                "k_bounds": list(k_bounds),
                "k_step": k_step,
                "e": e,
                "closest_miss_m": best_miss[0],
                "closest_k": best_miss[1],
                "closest_d_hat": best_miss[2],
            },
        )
    return KRange(lo=float(min(accepted)), hi=float(max(accepted)))


def k_grid(k_bounds, k_step: float) -> np.ndarray:
    lo, hi = k_bounds
    if not (lo < hi and k_step > 0):
        raise ValueError("need k_min < k_max and k_step > 0")
    n = int(np.floor((hi - lo) / k_step + 1e-9)) + 1
    return lo + k_step * np.arange(n)


def fuse_k(ranges) -> Phase1Result:
    """Intersect per-configuration ranges; the fused stiffness is the midpoint."""
    ranges = list(ranges)
    if not ranges:
        raise ValueError("need at least one stiffness range")
    common = ranges[0]
    for r in ranges[1:]:
        nxt = common.intersect(r)
        if nxt is None:
            raise CalibrationError(
                "stiffness ranges have no common intersection",
                details={"ranges": [[r.lo, r.hi] for r in ranges]},
            )
        common = nxt
    return Phase1Result(ranges=ranges, common=common, k_hat=common.midpoint)


def calibrate_k(
    configs,
    e: float = E_TOL_DEFAULT,
    k_bounds=K_BOUNDS_DEFAULT,
    k_step: float = K_STEP_DEFAULT,
    d_bounds=D_BOUNDS_DEFAULT,
    f_min: float = 2.0,
) -> Phase1Result:
    """Phase 1 over several (dataset, d_star, theta_star) pivot configurations."""
    ranges = [
        phase1_k_range(ds, d_star, theta_star, e=e, k_bounds=k_bounds,
                       k_step=k_step, d_bounds=d_bounds, f_min=f_min)
        for ds, d_star, theta_star in configs
    ]
    return fuse_k(ranges)


def phase2_optimize_d(
    ds: Dataset,
    k_hat: float,
    model: FreeSpaceModel | None = None,
    d_bounds=D_BOUNDS_DEFAULT,
    filters: SampleFilters = SampleFilters(),
    use_true_forces: bool = False,
    d_star: float | None = None,
    inits=MULTISTART_INITS,
) -> Phase2Result:
    """Phase 2: optimize the misalignment distance with the stiffness fixed.

    Multi-start bounded least squares over the two |D| >= 1 mm branches of the
    distance interval; the lowest-cost solution wins (first found on ties).
    """
    fn, n_used, n_rejected = make_phase2_stack(
        ds, model=model, use_true_forces=use_true_forces, filters=filters
    )
    if n_used < filters.min_samples:
        raise InsufficientExcitationError(
            f"insufficient excitation: {n_used} samples survive the filters, "
            f"need at least {filters.min_samples}"
        )
    branches = {"neg": _negative_branch(d_bounds), "pos": _positive_branch(d_bounds)}
    if branches["neg"] is None and branches["pos"] is None:
        raise ValueError("distance bounds leave no searchable |D| >= 1 mm region")
    starts = []
    seen = set()
    for d0 in inits:
        branch = branches["neg"] if d0 < 0 else branches["pos"]
        if branch is None:
            continue
        d0c = min(max(d0, branch[0]), branch[1])
        key = (d0 < 0, round(d0c, 12))
        if key in seen:
            continue
        seen.add(key)
        res = solve_bounded_lsq(lambda x: fn(k_hat, x[0]), branch, [d0c])
        starts.append(
            {
                "init": d0c,
                "d_hat": float(res.params[0]),
                "cost": res.cost,
                "iterations": res.iterations,
            }
        )
    if not starts:
        raise ValueError("no feasible multi-start initial points inside the bounds")
    best = min(starts, key=lambda s: s["cost"])
    e_abs = None if d_star is None else abs(abs(d_star) - abs(best["d_hat"]))
    return Phase2Result(
        d_hat=best["d_hat"],
        cost=best["cost"],
        iterations=best["iterations"],
        n_used=n_used,
        n_rejected=n_rejected,
        k_hat=k_hat,
        e_abs=e_abs,
        starts=starts,
    )


def d_grid(d_bounds=D_BOUNDS_DEFAULT, step: float = D_GRID_STEP_DEFAULT) -> np.ndarray:
    """Distance grid over both branches, excluding the singular |D| < 1 mm gap."""
    lo, hi = d_bounds
    vals = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    return vals[np.abs(vals) >= D_ABS_MIN - 1e-12]


def grid_oracle(residual_fn, k_values, d_values):
    """Exhaustive cost over a (k, D) grid; independent check on the solver.

    ``residual_fn(k, d)`` returns the stacked residual (see the stack makers).
    Returns ((k_best, d_best), surface) with surface rows (k, d, cost) in
    k-major order; the argmin takes the first row on exact ties.
    """
    k_values = np.atleast_1d(np.asarray(k_values, dtype=float))
    d_values = np.atleast_1d(np.asarray(d_values, dtype=float))
    if k_values.size == 0 or d_values.size == 0:
        raise ValueError("grids must be nonempty")
    surface = np.empty((k_values.size * d_values.size, 3))
    i = 0
    for k in k_values:
        for d in d_values:
            surface[i] = (k, d, stack_cost(residual_fn, float(k), float(d)))
            i += 1
    best = surface[np.argmin(surface[:, 2])]
    return (float(best[0]), float(best[1])), surface

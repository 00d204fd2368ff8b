"""Free-space torque regression and sensorless force estimation at the incision.

The predictor is a per-joint ridge regression over a fixed trigonometric /
velocity feature basis. It is deterministic, trains in closed form, and the
simulator's torque truth lies inside the feature span, so fits can be checked
to tight tolerances. Any other predictor can stand in as long as it offers the
same predict surface.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .kinematics import incision_jacobians, solve_force_from_torque
from .phantom import Dataset, JointSample

FEATURES_PER_STATE = 15
LAMBDA_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
SPLIT_DEFAULT = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class FeatureConfig:
    """Feature basis settings: lag window length and tanh velocity scale."""

    window: int = 1
    velocity_scale: float = 0.05

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.velocity_scale <= 0:
            raise ValueError("velocity_scale must be > 0")

    @property
    def length(self) -> int:
        return FEATURES_PER_STATE * self.window


def state_features(q: np.ndarray, qdot: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Per-state feature block, shape (..., 15)."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    c1, c2 = np.cos(q1), np.cos(q2)
    return np.stack(
        [
            np.ones_like(q1),
            q1,
            q2,
            q3,
            np.sin(q1),
            c1,
            np.sin(q2),
            c2,
            qdot[..., 0],
            qdot[..., 1],
            qdot[..., 2],
            np.tanh(qdot[..., 0] / cfg.velocity_scale),
            np.tanh(qdot[..., 1] / cfg.velocity_scale),
            np.tanh(qdot[..., 2] / cfg.velocity_scale),
            c1 * c2,  # gravity on the insertion joint needs the product term
        ],
        axis=-1,
    )


def extract_features(window, cfg: FeatureConfig) -> np.ndarray:
    """Features for one lag window of (q, qdot) pairs, oldest state first."""
    window = list(window)
    if len(window) < cfg.window:
        raise DataError(
            f"window holds {len(window)} states, feature config needs {cfg.window}"
        )
    window = window[-cfg.window:]
    blocks = [
        state_features(np.asarray(q, float), np.asarray(qd, float), cfg)
        for q, qd in window
    ]
    return np.concatenate(blocks, axis=-1)


def dataset_features(q: np.ndarray, qdot: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Feature matrix for a whole series; row i describes states i-W+1 .. i.

    Returns (N - W + 1, 15 W); the first W-1 samples cannot form a full window.
    """
    n = len(q)
    if n < cfg.window:
        raise DataError(f"dataset holds {n} samples, feature window needs {cfg.window}")
    base = state_features(q, qdot, cfg)
    if cfg.window == 1:
        return base
    lags = [base[i : n - cfg.window + 1 + i] for i in range(cfg.window)]
    return np.concatenate(lags, axis=1)


@dataclass(frozen=True)
class TrainReport:
    """Per-joint torque RMSE on the chronological train/val/test splits."""

    rmse_train: tuple
    rmse_val: tuple
    rmse_test: tuple
    fractions: tuple
    n_train: int
    n_val: int
    n_test: int
    seed: int


@dataclass(frozen=True)
class FreeSpaceModel:
    """Fitted per-joint ridge weights over the feature basis.

    Downstream code only touches ``feature.window``, ``predict_window`` and
    ``predict_series``, so any predictor exposing that surface (e.g. a
    recurrent network over the same lag windows) can stand in.
    """

    feature: FeatureConfig
    weights: np.ndarray  # (3, n_features)
    lambdas: tuple
    report: TrainReport | None = None

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T

    def predict_window(self, window) -> np.ndarray:
        """Free-space torque for one lag window of (q, qdot) states."""
        return self.predict_features(extract_features(window, self.feature))

    def predict_series(self, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        """Predicted free-space torques for rows W-1 .. N-1 of a series."""
        return self.predict_features(dataset_features(q, qdot, self.feature))


def predict_tau0(model, window) -> np.ndarray:
    """Free-space torque prediction for a single lag window."""
    return model.predict_window(window)


def _ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    A = X.T @ X + lam * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ y)


def _rmse(err: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(np.square(err), axis=0))


def train_freespace(
    ds: Dataset,
    split=SPLIT_DEFAULT,
    lambdas=LAMBDA_GRID,
    feature: FeatureConfig | None = None,
    seed: int = 0,
):
    """Fit the free-space torque predictor on a contact-free dataset.

    Chronological 70/20/10 split by default (no shuffling: time series).
    The ridge weight is picked per joint from the fixed grid by validation
    RMSE; ties go to the smaller weight.
    """
    if len(ds) == 0:
        raise DataError("empty dataset")
    if ds.has_force_truth and np.any(ds.f_true != 0.0):
        raise DataError("dataset has nonzero interaction forces: not free space")
    if abs(sum(split) - 1.0) > 1e-9 or any(s <= 0 for s in split):
        raise ValueError("split fractions must be positive and sum to 1")
    cfg = feature or FeatureConfig()
    X = dataset_features(ds.q, ds.qdot, cfg)
    y = ds.tau[cfg.window - 1 :]
    n = len(X)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"dataset too small to split: {n} usable samples")
    Xtr, ytr = X[:n_train], y[:n_train]
    Xva, yva = X[n_train : n_train + n_val], y[n_train : n_train + n_val]
    Xte, yte = X[n_train + n_val :], y[n_train + n_val :]

    weights = np.zeros((3, X.shape[1]))
    chosen = [0.0, 0.0, 0.0]
    for j in range(3):
        best = None
        for lam in lambdas:
            w = _ridge_fit(Xtr, ytr[:, j], lam)
            val_rmse = float(np.sqrt(np.mean(np.square(Xva @ w - yva[:, j]))))
            if best is None or val_rmse < best[0]:
                best = (val_rmse, lam, w)
        weights[j] = best[2]
        chosen[j] = best[1]

    report = TrainReport(
        rmse_train=tuple(_rmse(Xtr @ weights.T - ytr).tolist()),
        rmse_val=tuple(_rmse(Xva @ weights.T - yva).tolist()),
        rmse_test=tuple(_rmse(Xte @ weights.T - yte).tolist()),
        fractions=tuple(float(s) for s in split),
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        seed=seed,
    )
    model = FreeSpaceModel(feature=cfg, weights=weights, lambdas=tuple(chosen), report=report)
    return model, report


@dataclass
class ForceEstimateSeries:
    """Estimated incision forces over a dataset, plus truth when available."""

    t: np.ndarray
    f_hat: np.ndarray
    f_true: np.ndarray | None = None
    rmse: np.ndarray | None = None
    offset: int = 0  # first dataset row covered (lag window warm-up)


def force_rmse(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-axis RMSE between two force series of equal length."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DataError(f"series length mismatch: {est.shape} vs {truth.shape}")
    return _rmse(est - truth)


def estimate_force(model: FreeSpaceModel, sample, d: float) -> np.ndarray:
    """Estimated Cartesian force at the incision for one sample.

    For a lag window > 1 pass a sequence of JointSamples (oldest first); the
    torque of the newest sample is used. Requires |d| >= 1 mm.
    """
    if isinstance(sample, JointSample):
        window = [sample]
    else:
        window = list(sample)
    newest = window[-1]
    states = [(np.array([s.q.q1, s.q.q2, s.q.q3]), s.qdot) for s in window]
    tau0_hat = model.predict_window(states)
    residual = newest.tau - tau0_hat
    jac = incision_jacobians(newest.q.q1, newest.q.q2, d)
    return solve_force_from_torque(jac, residual, d)


def estimate_force_series(
    ds: Dataset,
    d: float,
    model: FreeSpaceModel | None = None,
    oracle_tau0: bool = False,
) -> ForceEstimateSeries:
    """Estimate forces over a whole dataset; attaches truth and RMSE if present."""
    if oracle_tau0:
        if not ds.has_tau0_truth:
            raise DataError("dataset has no tau0 truth channel for the oracle path")
        offset = 0
        tau0_hat = ds.tau0_true
    else:
        if model is None:
            raise DataError("a trained model is required unless oracle_tau0 is set")
        offset = model.feature.window - 1
        tau0_hat = model.predict_series(ds.q, ds.qdot)
    residual = ds.tau[offset:] - tau0_hat
    jac = incision_jacobians(ds.q[offset:, 0], ds.q[offset:, 1], d)
    f_hat = solve_force_from_torque(jac, residual, d)
    f_true = ds.f_true[offset:] if ds.has_force_truth else None
    rmse = force_rmse(f_hat, f_true) if f_true is not None else None
    return ForceEstimateSeries(
        t=ds.t[offset:], f_hat=f_hat, f_true=f_true, rmse=rmse, offset=offset
    )


def save_model(model: FreeSpaceModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "feature": asdict(model.feature),
        "lambdas": list(model.lambdas),
        "weights": [list(map(float, row)) for row in model.weights],
        "report": asdict(model.report) if model.report is not None else None,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_model(path) -> FreeSpaceModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    payload = json.loads(path.read_text())
    report = None
    if payload.get("report") is not None:
        r = payload["report"]
        report = TrainReport(
            rmse_train=tuple(r["rmse_train"]),
            rmse_val=tuple(r["rmse_val"]),
            rmse_test=tuple(r["rmse_test"]),
            fractions=tuple(r["fractions"]),
            n_train=r["n_train"],
            n_val=r["n_val"],
            n_test=r["n_test"],
            seed=r["seed"],
        )
    return FreeSpaceModel(
        feature=FeatureConfig(**payload["feature"]),
        weights=np.array(payload["weights"], dtype=float),
        lambdas=tuple(payload["lambdas"]),
        report=report,
    )

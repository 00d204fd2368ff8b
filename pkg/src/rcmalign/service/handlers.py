"""Command implementations behind the service endpoints and the CLI.

Each handler takes a validated request model, does the file I/O it names, and
returns the response model. No unit conversion happens here: requests are SI.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import estimation, optimize, phantom
from ..errors import ConfigError, DataError
from . import schemas


def write_json(path, payload: dict) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return str(path)


def _write_rows_csv(path, header: str, rows) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    try:
        rig = req.rig.to_rig(noise_scale=req.noise_scale)
        traj = req.traj.to_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = phantom.synthesize_dataset(traj, rig)
    phantom.write_dataset_csv(ds, req.out)
    return schemas.SimulateResponse(
        path=str(req.out),
        n_samples=len(ds),
        kind=traj.kind,
        d_true=rig.d_true,
        k_true=rig.k_true,
        seed=rig.seed,
    )


def _report_model(report, lambdas) -> schemas.TrainReportModel:
    return schemas.TrainReportModel(
        rmse_train=report.rmse_train,
        rmse_val=report.rmse_val,
        rmse_test=report.rmse_test,
        fractions=report.fractions,
        n_train=report.n_train,
        n_val=report.n_val,
        n_test=report.n_test,
        seed=report.seed,
        lambdas=lambdas,
    )


def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    ds = phantom.read_dataset_csv(req.data)
    cfg = estimation.FeatureConfig(window=req.window, velocity_scale=req.velocity_scale)
    model, report = estimation.train_freespace(ds, feature=cfg, seed=req.seed)
    estimation.save_model(model, req.model_out)
    report_model = _report_model(report, model.lambdas)
    report_path = None
    if req.report_out is not None:
        report_path = write_json(req.report_out, report_model.model_dump())
    return schemas.TrainResponse(
        model_path=str(req.model_out), report_path=report_path, report=report_model
    )


def estimate_force(req: schemas.EstimateForceRequest) -> schemas.EstimateForceResponse:
    ds = phantom.read_dataset_csv(req.data)
    model = None
    if not req.oracle_tau0:
        if req.model is None:
            raise DataError("estimate-force needs a model unless oracle_tau0 is set")
        model = estimation.load_model(req.model)
    series = estimation.estimate_force_series(ds, req.d, model=model, oracle_tau0=req.oracle_tau0)
    series_path = None
    if req.series_out is not None:
        if series.f_true is not None:
            header = "t,fx_hat,fy_hat,fz_hat,fx_true,fy_true,fz_true"
            rows = np.column_stack([series.t, series.f_hat, series.f_true])
        else:
            header = "t,fx_hat,fy_hat,fz_hat"
            rows = np.column_stack([series.t, series.f_hat])
        series_path = _write_rows_csv(req.series_out, header, rows)
    rmse = None if series.rmse is None else tuple(float(v) for v in series.rmse)
    rmse_path = None
    if req.rmse_out is not None:
        rmse_path = write_json(
            req.rmse_out,
            {"rmse": None if rmse is None else list(rmse), "n": len(series.f_hat), "d": req.d},
        )
    return schemas.EstimateForceResponse(
        n=len(series.f_hat), rmse=rmse, series_path=series_path, rmse_path=rmse_path
    )


def calibrate_k(req: schemas.CalibrateKRequest) -> schemas.CalibrateKResponse:
    configs = [
        (phantom.read_dataset_csv(p.data), p.d_star, p.theta_star) for p in req.pivots
    ]
    result = optimize.calibrate_k(
        configs,
        e=req.e,
        k_bounds=(req.k_min, req.k_max),
        k_step=req.k_step,
        d_bounds=(req.d_min, req.d_max),
        f_min=req.f_min,
    )
    ranges = [
        schemas.ConfigRangeModel(
            data=p.data,
            d_star=p.d_star,
            theta_star=p.theta_star,
            k_range=schemas.KRangeModel(lo=r.lo, hi=r.hi),
        )
        for p, r in zip(req.pivots, result.ranges)
    ]
    resp = schemas.CalibrateKResponse(
        ranges=ranges,
        common=schemas.KRangeModel(lo=result.common.lo, hi=result.common.hi),
        k_hat=result.k_hat,
        out_path=None,
    )
    if req.out is not None:
        payload = resp.model_dump()
        payload["e"] = req.e
        payload["k_step"] = req.k_step
        resp.out_path = write_json(req.out, payload)
    return resp


def _phase2_filters(req) -> optimize.SampleFilters:
    f_min = req.f_min
    if f_min is None:
        # ground-truth forces are exact; the small-force floor only protects
        # the sensorless estimate
        f_min = 0.0 if req.use_true_forces else 2.0
    return optimize.SampleFilters(
        f_min=f_min,
        theta_min=req.theta_min,
        d_ref=req.filter_d_ref,
        min_samples=req.min_samples,
    )


def _load_phase2_inputs(req):
    ds = phantom.read_dataset_csv(req.data)
    model = None
    if not req.use_true_forces:
        if req.model is None:
            raise DataError("a model is required unless use_true_forces is set")
        model = estimation.load_model(req.model)
    return ds, model


def estimate_d(req: schemas.EstimateDRequest) -> schemas.EstimateDResponse:
    ds, model = _load_phase2_inputs(req)
    result = optimize.phase2_optimize_d(
        ds,
        req.k_hat,
        model=model,
        d_bounds=(req.d_min, req.d_max),
        filters=_phase2_filters(req),
        use_true_forces=req.use_true_forces,
        d_star=req.d_star,
    )
    resp = schemas.EstimateDResponse(
        d_hat=result.d_hat,
        cost=result.cost,
        iterations=result.iterations,
        n_used=result.n_used,
        n_rejected=result.n_rejected,
        k_hat=result.k_hat,
        e_abs=result.e_abs,
        starts=[schemas.SolveStartModel(**s) for s in result.starts],
        out_path=None,
    )
    if req.out is not None:
        payload = resp.model_dump()
        payload["d_star"] = req.d_star
        payload["use_true_forces"] = req.use_true_forces
        resp.out_path = write_json(req.out, payload)
    return resp


def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    if req.theta_steps < 2:
        raise DataError("theta_steps must be >= 2")
    rig = phantom.RigConfig(k_true=req.k, torque_noise_sigma=(0.0, 0.0, 0.0))
    theta_grid = np.linspace(0.0, req.theta_max, req.theta_steps)
    table = phantom.force_angle_sweep(rig, theta_grid, np.asarray(req.d_values))
    out_path = None
    if req.out is not None:
        out_path = _write_rows_csv(req.out, "d,theta,force", table)
    rows = [
        schemas.SweepRowModel(d=float(r[0]), theta=float(r[1]), force=float(r[2]))
        for r in table
    ]
    return schemas.SweepResponse(n_rows=len(rows), out_path=out_path, rows=rows)


def verify(req: schemas.VerifyRequest) -> schemas.VerifyResponse:
    ds, model = _load_phase2_inputs(req)
    filters = _phase2_filters(req)
    result = optimize.phase2_optimize_d(
        ds,
        req.k_hat,
        model=model,
        d_bounds=(req.d_min, req.d_max),
        filters=filters,
        use_true_forces=req.use_true_forces,
    )
    fn, _, _ = optimize.make_phase2_stack(
        ds, model=model, use_true_forces=req.use_true_forces, filters=filters
    )
    grid = optimize.d_grid((req.d_min, req.d_max), req.d_step)
    (_, d_oracle), surface = optimize.grid_oracle(fn, [req.k_hat], grid)
    diff = abs(abs(result.d_hat) - abs(d_oracle))
    resp = schemas.VerifyResponse(
        solver_d_hat=result.d_hat,
        oracle_d_hat=d_oracle,
        diff=diff,
        tol=req.d_step,
        agree=bool(diff <= req.d_step + 1e-12),
        n_grid=len(grid),
        out_path=None,
        surface_path=None,
    )
    if req.surface_out is not None:
        resp.surface_path = _write_rows_csv(req.surface_out, "k,D,cost", surface)
    if req.out is not None:
        # output locations stay out of the payload so re-runs are byte-identical
        resp.out_path = write_json(
            req.out, resp.model_dump(exclude={"out_path", "surface_path"})
        )
    return resp

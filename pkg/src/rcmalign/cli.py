"""Command-line client for the pipeline.

Thin layer over the service handlers: flags (lengths in mm, angles in deg) are
merged with an optional ``key = value`` config file (SI), turned into the same
request models the HTTP service accepts, and dispatched in-process, or to a
running server when --server is given. Precedence: flag > RCM_ALIGN_SEED (seed
only) > config file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.request
from math import degrees, radians

from . import __version__
from .configio import load_run_config
from .errors import CalibrationError, ConfigError, RcmAlignError
from .service import handlers, schemas

MM = 1e-3


def _mm(v):
    return None if v is None else v * MM


def _deg(v):
    return None if v is None else radians(v)


def _pick(*values, default=None):
    for v in values:
        if v is not None:
            return v
    return default


def _load_cfg(args) -> dict:
    return load_run_config(args.config) if args.config else {}


def _resolve_seed(args, cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("RCM_ALIGN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"RCM_ALIGN_SEED must be an integer, got {env!r}")
    return cfg.get("seed", 0)


def _send(args, route: str, req, handler) -> dict:
    """Run the request in-process, or POST it to --server."""
    if getattr(args, "server", None):
        url = args.server.rstrip("/") + route
        http_req = urllib.request.Request(
            url,
            data=req.model_dump_json().encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(http_req) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode(errors="replace")
            raise RcmAlignError(f"server returned {exc.code}: {detail}") from None
    return handler(req).model_dump()


def _fail_json(out_path, exc) -> None:
    """Keep outputs machine-readable even when a command fails."""
    if not out_path:
        return
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, CalibrationError):
        payload["details"] = exc.details
    handlers.write_json(out_path, payload)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg)
    kind = _pick(args.kind, cfg.get("kind"))
    out = _pick(args.out, cfg.get("out"))
    if kind is None or out is None:
        raise ConfigError("simulate needs --kind and --out (flags or config)")
    rig_fields = {}
    for key in ("d_true", "k_true", "radial_offset_delta0", "radial_dir",
                "gravity_g2", "gravity_g3", "viscous_b", "coulomb_c",
                "coulomb_vel_scale", "torque_noise_sigma"):
        if key in cfg:
            rig_fields[key] = cfg[key]
    if args.d_true_mm is not None:
        rig_fields["d_true"] = _mm(args.d_true_mm)
    if args.k_true is not None:
        rig_fields["k_true"] = args.k_true
    rig_fields["seed"] = seed
    traj_fields = {"kind": kind, "seed": seed}
    for key in ("duration", "sample_rate", "q3_depth", "theta_star", "omega", "amp_max"):
        if key in cfg:
            traj_fields[key] = cfg[key]
    for key, value in (
        ("duration", args.duration),
        ("sample_rate", args.sample_rate),
        ("q3_depth", _mm(args.q3_depth_mm)),
        ("theta_star", _deg(args.theta_star_deg)),
        ("omega", args.omega),
        ("amp_max", _deg(args.amp_max_deg)),
    ):
        if value is not None:
            traj_fields[key] = value
    req = schemas.SimulateRequest(
        out=out,
        rig=schemas.RigModel(**rig_fields),
        traj=schemas.TrajModel(**traj_fields),
        noise_scale=_pick(args.noise_scale, cfg.get("noise_scale"), default=1.0),
    )
    resp = _send(args, "/simulate", req, handlers.simulate)
    print(
        f"wrote {resp['n_samples']} samples to {resp['path']} "
        f"(kind={resp['kind']}, D*={resp['d_true'] / MM:.1f} mm, "
        f"k={resp['k_true']:.1f} N/m, seed={resp['seed']})"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = _pick(args.data, cfg.get("data"))
    model_out = _pick(args.model_out, cfg.get("model_out"))
    if data is None or model_out is None:
        raise ConfigError("train needs --data and --model-out")
    req = schemas.TrainRequest(
        data=data,
        model_out=model_out,
        report_out=_pick(args.report_out, cfg.get("report_out")),
        window=_pick(args.window, default=1),
        velocity_scale=_pick(args.velocity_scale, cfg.get("coulomb_vel_scale"), default=0.05),
        seed=_resolve_seed(args, cfg),
    )
    try:
        resp = _send(args, "/train", req, handlers.train)
    except RcmAlignError as exc:
        _fail_json(req.report_out, exc)
        raise
    rmse = resp["report"]["rmse_test"]
    print(f"model saved to {resp['model_path']}")
    print(f"test torque RMSE: j1={rmse[0]:.4g}, j2={rmse[1]:.4g}, j3={rmse[2]:.4g}")
    return 0


def cmd_estimate_force(args) -> int:
    cfg = _load_cfg(args)
    data = _pick(args.data, cfg.get("data"))
    d = _pick(_mm(args.d_mm), cfg.get("d"))
    if data is None or d is None:
        raise ConfigError("estimate-force needs --data and --d-mm")
    req = schemas.EstimateForceRequest(
        data=data,
        d=d,
        model=_pick(args.model, cfg.get("model")),
        oracle_tau0=bool(_pick(args.oracle_tau0 or None, cfg.get("oracle_tau0"), default=False)),
        series_out=_pick(args.series_out, cfg.get("series_out")),
        rmse_out=_pick(args.rmse_out, cfg.get("rmse_out")),
    )
    try:
        resp = _send(args, "/estimate-force", req, handlers.estimate_force)
    except RcmAlignError as exc:
        _fail_json(req.rmse_out, exc)
        raise
    msg = f"estimated forces for {resp['n']} samples at D = {d / MM:.1f} mm"
    if resp["rmse"] is not None:
        r = resp["rmse"]
        msg += f"; per-axis RMSE [N] = ({r[0]:.3f}, {r[1]:.3f}, {r[2]:.3f})"
    else:
        msg += "; no ground-truth forces, RMSE omitted"
    print(msg)
    return 0


def cmd_calibrate_k(args) -> int:
    cfg = _load_cfg(args)
    if args.pivot:
        pivots = [
            schemas.PivotConfigModel(
                data=p[0], d_star=float(p[1]) * MM, theta_star=radians(float(p[2]))
            )
            for p in args.pivot
        ]
    else:
        pivots = [schemas.PivotConfigModel(**p) for p in cfg.get("pivots", [])]
    if not pivots:
        raise ConfigError("calibrate-k needs at least one --pivot DATA D_MM THETA_DEG")
    out = _pick(args.out, cfg.get("out"))
    req = schemas.CalibrateKRequest(
        pivots=pivots,
        e=_pick(_mm(args.e_mm), cfg.get("e"), default=0.002),
        k_min=_pick(args.k_min, cfg.get("k_min"), default=100.0),
        k_max=_pick(args.k_max, cfg.get("k_max"), default=3000.0),
        k_step=_pick(args.k_step, cfg.get("k_step"), default=10.0),
        d_min=_pick(_mm(args.d_min_mm), cfg.get("d_min"), default=-0.020),
        d_max=_pick(_mm(args.d_max_mm), cfg.get("d_max"), default=0.050),
        f_min=_pick(args.f_min, cfg.get("f_min"), default=2.0),
        out=out,
    )
    try:
        resp = _send(args, "/calibrate-k", req, handlers.calibrate_k)
    except RcmAlignError as exc:
        _fail_json(out, exc)
        raise
    for entry in resp["ranges"]:
        r = entry["k_range"]
        print(
            f"  D*={entry['d_star'] / MM:5.1f} mm, theta*={degrees(entry['theta_star']):5.1f} deg"
            f" -> k in [{r['lo']:.0f}, {r['hi']:.0f}] N/m"
        )
    common = resp["common"]
    print(f"common range [{common['lo']:.0f}, {common['hi']:.0f}] N/m -> k_hat = {resp['k_hat']:.1f}")
    return 0


def _phase2_request(args, cfg, cls, **extra):
    data = _pick(args.data, cfg.get("data"))
    k_hat = _pick(args.k_hat, cfg.get("k_hat"))
    if data is None or k_hat is None:
        raise ConfigError("need --data and --k-hat")
    use_true = bool(_pick(args.use_true_forces or None, cfg.get("use_true_forces"), default=False))
    return cls(
        data=data,
        k_hat=k_hat,
        model=_pick(args.model, cfg.get("model")),
        use_true_forces=use_true,
        d_min=_pick(_mm(args.d_min_mm), cfg.get("d_min"), default=-0.020),
        d_max=_pick(_mm(args.d_max_mm), cfg.get("d_max"), default=0.050),
        f_min=_pick(args.f_min, cfg.get("f_min")),
        theta_min=_pick(_deg(args.theta_min_deg), cfg.get("theta_min"), default=radians(5.0)),
        filter_d_ref=_pick(_mm(args.filter_d_ref_mm), cfg.get("filter_d_ref"), default=0.030),
        min_samples=_pick(args.min_samples, cfg.get("min_samples"), default=100),
        out=_pick(args.out, cfg.get("out")),
        **extra,
    )


def cmd_estimate_d(args) -> int:
    cfg = _load_cfg(args)
    req = _phase2_request(
        args, cfg, schemas.EstimateDRequest,
        d_star=_pick(_mm(args.d_star_mm), cfg.get("d_star")),
    )
    try:
        resp = _send(args, "/estimate-d", req, handlers.estimate_d)
    except RcmAlignError as exc:
        _fail_json(req.out, exc)
        raise
    print(
        f"D_hat = {resp['d_hat'] / MM:.2f} mm (cost {resp['cost']:.4g}, "
        f"{resp['n_used']} samples used, {resp['n_rejected']} rejected)"
    )
    if resp["e_abs"] is not None:
        print(f"e_abs = | |D*| - |D_hat| | = {resp['e_abs'] / MM:.2f} mm")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    d_values = (
        [float(v) * MM for v in args.d_grid_mm.split(",")]
        if args.d_grid_mm
        else [0.0, 0.010, 0.020, 0.030, 0.040, 0.050]
    )
    req = schemas.SweepRequest(
        k=_pick(args.k, cfg.get("k_hat"), default=900.0),
        d_values=d_values,
        theta_max=_pick(_deg(args.theta_max_deg), default=radians(90.0)),
        theta_steps=_pick(args.theta_steps, default=91),
        out=_pick(args.out, cfg.get("out")),
    )
    resp = _send(args, "/sweep", req, handlers.sweep)
    peak = max(r["force"] for r in resp["rows"])
    where = resp["out_path"] or "(not written)"
    print(f"sweep table: {resp['n_rows']} rows, peak force {peak:.2f} N -> {where}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_cfg(args)
    req = _phase2_request(
        args, cfg, schemas.VerifyRequest,
        d_step=_pick(_mm(args.d_step_mm), cfg.get("d_step"), default=5e-4),
        surface_out=_pick(args.surface_out, cfg.get("surface_out")),
    )
    try:
        resp = _send(args, "/verify", req, handlers.verify)
    except RcmAlignError as exc:
        _fail_json(req.out, exc)
        raise
    print(
        f"solver D_hat = {resp['solver_d_hat'] / MM:.2f} mm, "
        f"grid oracle = {resp['oracle_d_hat'] / MM:.2f} mm, "
        f"|diff| = {resp['diff'] / MM:.3f} mm (tol {resp['tol'] / MM:.3f} mm)"
    )
    print("agreement: OK" if resp["agree"] else "agreement: FAILED")
    return 0 if resp["agree"] else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _add_common(p, seed=True):
    p.add_argument("--config", help="key = value run config file (SI units)")
    p.add_argument("--server", help="base URL of a running service to send the request to")
    if seed:
        p.add_argument("--seed", type=int, help="global seed (overrides RCM_ALIGN_SEED)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rcmalign",
        description="Estimate surgical-robot RCM misalignment from joint torques.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a dataset on the phantom rig")
    p.add_argument("--kind", choices=["pivot", "teleop"])
    p.add_argument("--out", help="dataset CSV to write")
    p.add_argument("--d-true-mm", type=float, help="true misalignment [mm]")
    p.add_argument("--k-true", type=float, help="tissue stiffness [N/m], 0 = free space")
    p.add_argument("--theta-star-deg", type=float, help="pivot deflection [deg]")
    p.add_argument("--omega", type=float, help="pivot angular rate [rad/s]")
    p.add_argument("--duration", type=float, help="trajectory length [s]")
    p.add_argument("--sample-rate", type=float, help="sampling rate [Hz]")
    p.add_argument("--q3-depth-mm", type=float, help="nominal insertion depth [mm]")
    p.add_argument("--amp-max-deg", type=float, help="teleop joint amplitude [deg]")
    p.add_argument("--noise-scale", type=float, help="torque noise multiplier (0 = noise-free)")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the free-space torque predictor")
    p.add_argument("--data", help="free-space dataset CSV")
    p.add_argument("--model-out", help="model JSON to write")
    p.add_argument("--report-out", help="train report JSON to write")
    p.add_argument("--window", type=int, help="feature lag window length")
    p.add_argument("--velocity-scale", type=float, help="tanh velocity scale [rad/s]")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate-force", help="estimate incision forces over a dataset")
    p.add_argument("--data")
    p.add_argument("--model", help="trained model JSON")
    p.add_argument("--d-mm", type=float, help="misalignment distance to evaluate at [mm]")
    p.add_argument("--oracle-tau0", action="store_true",
                   help="use the recorded tau0 truth instead of the model")
    p.add_argument("--series-out", help="force series CSV to write")
    p.add_argument("--rmse-out", help="RMSE JSON to write")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_estimate_force)

    p = sub.add_parser("calibrate-k", help="phase 1: admissible stiffness from pivot data")
    p.add_argument("--pivot", nargs=3, action="append",
                   metavar=("DATA", "D_MM", "THETA_DEG"),
                   help="pivot dataset with its measured D* [mm] and theta* [deg]")
    p.add_argument("--e-mm", type=float, help="distance acceptance tolerance [mm]")
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--k-step", type=float)
    p.add_argument("--d-min-mm", type=float)
    p.add_argument("--d-max-mm", type=float)
    p.add_argument("--f-min", type=float, help="force floor [N]")
    p.add_argument("--out", help="result JSON to write")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_calibrate_k)

    p = sub.add_parser("estimate-d", help="phase 2: optimize the misalignment distance")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--k-hat", type=float, help="fixed stiffness from phase 1 [N/m]")
    p.add_argument("--use-true-forces", action="store_true",
                   help="use recorded ground-truth forces instead of the estimator")
    p.add_argument("--d-star-mm", type=float, help="ground truth for e_abs reporting [mm]")
    p.add_argument("--d-min-mm", type=float)
    p.add_argument("--d-max-mm", type=float)
    p.add_argument("--f-min", type=float)
    p.add_argument("--theta-min-deg", type=float)
    p.add_argument("--filter-d-ref-mm", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--out")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_estimate_d)

    p = sub.add_parser("sweep", help="static force-vs-angle table over misalignments")
    p.add_argument("--k", type=float, help="stiffness [N/m]")
    p.add_argument("--d-grid-mm", help="comma-separated misalignments [mm]")
    p.add_argument("--theta-max-deg", type=float)
    p.add_argument("--theta-steps", type=int)
    p.add_argument("--out")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="grid oracle vs solver agreement check")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--k-hat", type=float)
    p.add_argument("--use-true-forces", action="store_true")
    p.add_argument("--d-step-mm", type=float, help="oracle grid step [mm]")
    p.add_argument("--d-min-mm", type=float)
    p.add_argument("--d-max-mm", type=float)
    p.add_argument("--f-min", type=float)
    p.add_argument("--theta-min-deg", type=float)
    p.add_argument("--filter-d-ref-mm", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--out")
    p.add_argument("--surface-out", help="cost surface CSV to write")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        if exc.details:
            print(json.dumps(exc.details, indent=2), file=sys.stderr)
        return 1
    except RcmAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

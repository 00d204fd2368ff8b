"""Flat ``key = value`` config files for the rig, trajectories, and CLI runs.

Values are SI throughout; angle keys may be written with a ``_deg`` suffix and
are converted to radians at load. Unknown keys are a hard error so typos never
silently fall back to defaults.
"""

from __future__ import annotations

import re
from dataclasses import fields, replace
from math import radians
from pathlib import Path

from .errors import ConfigError
from .phantom import RigConfig, TrajectorySpec

# keys naming angles; accept "<key>_deg" variants in files
ANGLE_KEYS = {"theta_star", "amp_max", "theta_min"}

_PIVOT_KEY = re.compile(r"^pivot(\d+)_(data|d_star|theta_star)$")

# key -> value kind for the full run-config namespace
RUN_SCHEMA = {
    # input paths (must exist at load)
    "data": "inpath",
    "model": "inpath",
    # output paths
    "out": "str",
    "model_out": "str",
    "report_out": "str",
    "series_out": "str",
    "rmse_out": "str",
    "surface_out": "str",
    # global seed
    "seed": "int",
    # rig ground truth
    "d_true": "float",
    "k_true": "float",
    "radial_offset_delta0": "float",
    "radial_dir": "floats3",
    "gravity_g2": "float",
    "gravity_g3": "float",
    "viscous_b": "floats3",
    "coulomb_c": "floats3",
    "coulomb_vel_scale": "float",
    "torque_noise_sigma": "floats3",
    "noise_scale": "float",
    # trajectory
    "kind": "str",
    "duration": "float",
    "sample_rate": "float",
    "q3_depth": "float",
    "theta_star": "float",
    "omega": "float",
    "amp_max": "float",
    # optimization
    "k_min": "float",
    "k_max": "float",
    "k_step": "float",
    "e": "float",
    "d_min": "float",
    "d_max": "float",
    "f_min": "float",
    "theta_min": "float",
    "filter_d_ref": "float",
    "min_samples": "int",
    "d_step": "float",
    "k_hat": "float",
    "d": "float",
    "d_star": "float",
    "use_true_forces": "bool",
    "oracle_tau0": "bool",
}

RIG_KEYS = (
    "d_true", "k_true", "radial_offset_delta0", "radial_dir", "gravity_g2",
    "gravity_g3", "viscous_b", "coulomb_c", "coulomb_vel_scale",
    "torque_noise_sigma", "seed",
)
TRAJ_KEYS = (
    "kind", "duration", "sample_rate", "q3_depth", "theta_star", "omega",
    "seed", "amp_max",
)


def parse_kv_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in mapping.items())


def _format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key: str, kind: str, raw: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "floats3":
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError("need exactly 3 comma-separated numbers")
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _canonical_key(key: str):
    """Resolve a file key to its canonical SI name, flagging _deg conversion."""
    if key.endswith("_deg"):
        base = key[:-4]
        m = _PIVOT_KEY.match(base)
        if base in ANGLE_KEYS or (m is not None and m.group(2) == "theta_star"):
            return base, True
    return key, False


def load_mapping(raw: dict, schema: dict, *, base_dir: Path | None = None) -> dict:
    """Validate and convert a parsed key/value mapping against a schema."""
    out: dict = {}
    pivots: dict = {}
    for key, value in raw.items():
        name, is_deg = _canonical_key(key)
        m = _PIVOT_KEY.match(name)
        if m is not None:
            idx, field_name = int(m.group(1)), m.group(2)
            kind = "str" if field_name == "data" else "float"
            converted = _convert(key, kind, value)
            if is_deg:
                converted = radians(converted)
            pivots.setdefault(idx, {})[field_name] = converted
            continue
        if name not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        converted = _convert(key, schema[name], value)
        if is_deg:
            converted = radians(converted)
        if schema[name] == "inpath":
            p = Path(converted)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"{key!r} references a missing path: {p}")
            converted = str(p)
        out[name] = converted
    if pivots:
        entries = []
        for idx in sorted(pivots):
            entry = pivots[idx]
            missing = {"data", "d_star", "theta_star"} - set(entry)
            if missing:
                raise ConfigError(
                    f"pivot{idx} is incomplete: missing {sorted(missing)}"
                )
            p = Path(entry["data"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"pivot{idx}_data references a missing path: {p}")
            entry["data"] = str(p)
            entries.append(entry)
        out["pivots"] = entries
    return out


def load_run_config(path) -> dict:
    """Load a CLI run config file into canonical SI keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = parse_kv_text(path.read_text())
    return load_mapping(raw, RUN_SCHEMA, base_dir=path.parent)


def _subset_schema(keys) -> dict:
    return {k: RUN_SCHEMA[k] for k in keys}


def rig_to_text(rig: RigConfig) -> str:
    return format_kv({f.name: getattr(rig, f.name) for f in fields(rig)})


def rig_from_text(text: str, base: RigConfig | None = None) -> RigConfig:
    values = load_mapping(parse_kv_text(text), _subset_schema(RIG_KEYS))
    return replace(base or RigConfig(), **values)


def traj_to_text(spec: TrajectorySpec) -> str:
    return format_kv({f.name: getattr(spec, f.name) for f in fields(spec)})


def traj_from_text(text: str, base: TrajectorySpec | None = None) -> TrajectorySpec:
    values = load_mapping(parse_kv_text(text), _subset_schema(TRAJ_KEYS))
    if base is None:
        if "kind" not in values:
            raise ConfigError("trajectory config needs a 'kind' key")
        return TrajectorySpec(**values)
    return replace(base, **values)

"""Run configuration: JSON document merged over defaults, unknown keys rejected."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .channel_sim import derive_seed
from .errors import ConfigError

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "output_dir": "run",
    "orbital": {
        "tle": None,  # path to a TLE file; None selects the synthetic scenario
        "j2": True,
        "epoch": None,  # unix seconds; None uses the first TLE epoch
    },
    "grid": {"n_x": 16, "n_y": 16, "center": [10.0, 100.0], "span_deg": 0.4},
    "rasters": {"land": None, "rain": None, "population": None},
    "channel": {
        "f_c": 12e9,
        "tx_power_dbm": 0.0,
        "noise_sigma": 0.05,
        "min_elevation": 10.0,
        "n_subcarriers": 1,
        "subcarrier_spacing": 120e3,
        "tau": 0.3,
        "dt": 0.1,
        "n_samples": 2000,
        "pilot_density": 0.05,
        "pilot_pattern": "random",
        "test_fraction": 0.2,
        "zenith_fraction": 0.55,
    },
    "diffusion": {
        "schedule": {"K": 64, "beta_min": 1e-4, "beta_max": 0.02, "rescale_to_K": True},
        "unet": {"base": 16, "multipliers": [1, 2, 4], "heads": 4, "time_embed_dim": 256},
        "loss": {"lambda_l1": 0.05, "lambda_w": 4.0, "tau_amp": 0.05},
    },
    "traffic": {
        "n_planes": 2,
        "per_plane": 10,
        "n_slots": 10000,
        "dt": 30.0,
        "phi": 0.9,
        "sigma": 5.0,
        "plane_weight": 0.3,
        "burst_rate": 0.0,
        "burst_scale": 1.0,
        "rho": 1e-4,
        "min_elevation": 25.0,
        "beam_half_width": 10.0,
        "beam_offsets": [[0.0, 0.0]],
        "mode": "integral",
        "hanning_window": 11,
        "subsample": 2,
        "graph_mode": "knn",
        "k_neighbors": 4,
        "test_fraction": 0.2,
        "clip_nonnegative": True,
    },
    "train": {
        "channel": {"lr": 1e-3, "epochs": 30, "batch": 16, "weight_decay": 1e-2, "eta_min": 1e-6},
        "traffic": {"hidden_dim": 32, "attn_dim": None, "layers": 2, "lookback": 12, "dropout": 0.2,
                    "lr": 2e-3, "t_max": None, "eta_min": 0.0, "epochs": 8, "batch": 32, "leaky_slope": 0.2},
    },
    "eval": {"target": "all", "amp_threshold": 0.1, "n_samples": 8, "max_items": None},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def resolve_config(user: dict) -> dict:
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in user:
        raise ConfigError("config lacks schema_version")
    if user["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {user['schema_version']!r}")
    cfg = _merge(DEFAULTS, user)
    if cfg["eval"]["target"] not in ("channel", "traffic", "all"):
        raise ConfigError("eval.target must be channel, traffic or all")
    return cfg


def load_config(path) -> dict:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    cfg = resolve_config(doc)
    # relative paths resolve against the config file's directory
    base = p.resolve().parent
    for section, key in (("orbital", "tle"), ("rasters", "land"), ("rasters", "rain"), ("rasters", "population")):
        v = cfg[section][key]
        if v is not None and not Path(v).is_absolute():
            cfg[section][key] = str(base / v)
    if not Path(cfg["output_dir"]).is_absolute():
        cfg["output_dir"] = str(base / cfg["output_dir"])
    return cfg


def write_resolved(cfg: dict, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "resolved_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))


def component_seed(cfg: dict, component: str) -> int:
    """Per-component stream: SHA-256 of (global seed, component name), see ``derive_seed``."""
    return derive_seed(int(cfg["seed"]), component) % (2**31)

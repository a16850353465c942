"""Command-line entry point: ``ntn-twin <subcommand>``.

Exit codes
  0  success
  2  usage, parse or config error
  3  missing input file or dataset
  4  invariant violation during generation
  5  training divergence
  6  checkpoint does not match the configured model

Diagnostics go to stderr; stdout carries only the one-line summary.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import config as C
from . import orbital
from .errors import (CheckpointMismatchError, ConfigError, DivergenceError, FileFormatError, GeometryError,
                     InvariantViolation, NonFiniteError, ShapeError, TleParseError)

log = logging.getLogger("ntn_twin")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_INVARIANT, EXIT_DIVERGED, EXIT_MISMATCH = 0, 2, 3, 4, 5, 6


class MissingInput(Exception):
    pass


# ---------------------------------------------------------------------------
# propagate
# ---------------------------------------------------------------------------

def parse_start(text: str) -> float:
    """Unix seconds, or an ISO-8601 timestamp (UTC unless an offset is given)."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ConfigError(f"--start: cannot parse {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def sample_times(duration: float, dt: float):
    """Offsets 0, dt, ..., duration (inclusive); empty for zero duration."""
    if dt <= 0 or duration < 0 or not (math.isfinite(dt) and math.isfinite(duration)):
        raise ConfigError("need dt > 0 and duration >= 0")
    if duration == 0:
        return []
    n = int(math.floor(duration / dt + 1e-9))
    return [i * dt for i in range(n + 1)]


def run_propagate(tle_path, start, duration, dt, out, j2=True) -> str:
    p = Path(tle_path)
    if not p.is_file():
        raise MissingInput(f"TLE file not found: {p}")
    tles = orbital.parse_tle(p.read_text())
    epoch = parse_start(start) if start is not None else (tles[0].epoch if tles else 0.0)
    times = sample_times(duration, dt)
    records = orbital.propagate_many(tles, times, epoch=epoch, j2=j2)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    orbital.write_ephemeris(records, out)
    return f"propagate: {len(tles)} satellites x {len(times)} samples -> {out}"


# ---------------------------------------------------------------------------
# config-driven stages
# ---------------------------------------------------------------------------

def _need(path, what):
    if path is None:
        return None
    if not Path(path).exists():
        raise MissingInput(f"{what} not found: {path}")
    return path


def _grid(cfg):
    from .physics_tensor import GridSpec
    g = cfg["grid"]
    lat0, lon0 = g["center"]
    h = g["span_deg"] / 2.0
    return GridSpec(int(g["n_x"]), int(g["n_y"]), lat0 - h, lat0 + h, lon0 - h, lon0 + h)


def _budget(cfg):
    from .channel_sim import LinkBudget
    c = cfg["channel"]
    return LinkBudget(f_c=c["f_c"], tx_power_dbm=c["tx_power_dbm"], noise_sigma=c["noise_sigma"],
                      min_elevation=c["min_elevation"], n_subcarriers=int(c["n_subcarriers"]),
                      subcarrier_spacing=c["subcarrier_spacing"])


def _load_tles(cfg):
    path = _need(cfg["orbital"]["tle"], "TLE file")
    if path is None:
        return None
    return orbital.parse_tle(Path(path).read_text())


def channel_physics(cfg):
    """Physics tensors for every slot, from a TLE file (dominant satellite per slot) or the synthetic pass."""
    from . import scenarios
    from .channel_sim import slot_delay
    from .geo_data import load_raster
    from .physics_tensor import build_physics_tensor, select_dominant

    c = cfg["channel"]
    grid = _grid(cfg)
    budget = _budget(cfg)
    n_slots = int(c["n_samples"]) + slot_delay(c["tau"], c["dt"])
    land_path = _need(cfg["rasters"]["land"], "land raster")
    rain_path = _need(cfg["rasters"]["rain"], "rain raster")
    land = load_raster(land_path) if land_path else scenarios.toy_land(grid)
    rain = load_raster(rain_path) if rain_path else scenarios.toy_rain(grid)
    tles = _load_tles(cfg)
    j2 = bool(cfg["orbital"]["j2"])
    if tles is None:
        tles = [scenarios.overhead_pass(grid.centroid(), c["zenith_fraction"] * n_slots * c["dt"])]
    epoch = cfg["orbital"]["epoch"]
    if epoch is None:
        epoch = tles[0].epoch
    out = []
    for n in range(n_slots):
        recs = [orbital.propagate(t, n * c["dt"], epoch=epoch, j2=j2) for t in tles]
        eph = select_dominant(recs, grid)
        out.append(build_physics_tensor(grid, eph, f_c=budget.f_c, land=land, rain=rain,
                                        min_elevation=budget.min_elevation, slot=n))
    return out, budget


def paths(cfg):
    root = Path(cfg["output_dir"])
    return {"root": root, "channel_data": root / "channel_data", "traffic_data": root / "traffic_data",
            "channel_model": root / "channel_model", "traffic_model": root / "traffic_model",
            "metrics": root / "metrics"}


def run_gen_channel(cfg) -> str:
    from .channel_sim import ChannelScenario, generate_channel_dataset
    from .geo_data import class_table

    physics, budget = channel_physics(cfg)
    c = cfg["channel"]
    scenario = ChannelScenario(budget, class_table(), c["tau"], c["dt"], c["pilot_density"], c["pilot_pattern"],
                               c["test_fraction"], seed=C.component_seed(cfg, "channel-data"))
    out = paths(cfg)["channel_data"]
    m = generate_channel_dataset(physics, scenario, out)
    C.write_resolved(cfg, out)
    return f"gen-channel: {m['counts']['train']} train / {m['counts']['test']} test samples -> {out}"


def traffic_scenario(cfg):
    from .traffic_dt.baseline import BeamLayout
    from .traffic_dt.training import TrafficScenario
    t = cfg["traffic"]
    layout = BeamLayout(tuple(tuple(float(v) for v in o) for o in t["beam_offsets"]),
                        t["beam_half_width"], t["min_elevation"])
    return TrafficScenario(layout, t["rho"], t["mode"], int(t["hanning_window"]), t["phi"], t["sigma"],
                           t["plane_weight"], t["burst_rate"], t["burst_scale"], bool(t["clip_nonnegative"]),
                           t["dt"], int(t["n_slots"]), t["test_fraction"], t["graph_mode"], int(t["k_neighbors"]),
                           int(t["subsample"]), seed=C.component_seed(cfg, "traffic-data"))


def run_gen_traffic(cfg) -> str:
    from . import scenarios
    from .geo_data import class_table, load_raster
    from .traffic_dt.training import generate_traffic_dataset

    t = cfg["traffic"]
    pop_path = _need(cfg["rasters"]["population"], "population raster")
    land_path = _need(cfg["rasters"]["land"], "land raster")
    pop = load_raster(pop_path) if pop_path else scenarios.toy_population()
    land = load_raster(land_path) if land_path else scenarios.toy_land_for_population(pop)
    tles = _load_tles(cfg)
    if tles is None:
        tles = scenarios.toy_constellation(int(t["n_planes"]), int(t["per_plane"]))
    out = paths(cfg)["traffic_data"]
    m = generate_traffic_dataset(tles, pop, traffic_scenario(cfg), out, land=land, classes=class_table(),
                                 epoch=cfg["orbital"]["epoch"])
    C.write_resolved(cfg, out)
    return f"gen-traffic: {m['n_slots']} slots x {m['n_sats']} satellites -> {out}"


def unet_config(cfg):
    from .channel_dt.unet import PgResUnetConfig
    u = cfg["diffusion"]["unet"]
    return PgResUnetConfig(base_channels=int(u["base"]), multipliers=tuple(u["multipliers"]),
                           levels=len(u["multipliers"]), attn_heads=int(u["heads"]),
                           time_embed_dim=int(u["time_embed_dim"]), seed=C.component_seed(cfg, "unet"))


def diffusion_config(cfg):
    from .channel_dt.schedule import scaled_beta_range
    from .channel_dt.training import DiffusionTrainConfig
    s, loss, tr = cfg["diffusion"]["schedule"], cfg["diffusion"]["loss"], cfg["train"]["channel"]
    lo, hi = s["beta_min"], s["beta_max"]
    if s["rescale_to_K"]:
        lo, hi = scaled_beta_range(int(s["K"]), lo, hi)
    return DiffusionTrainConfig(K=int(s["K"]), beta_min=lo, beta_max=hi, lambda_l1=loss["lambda_l1"],
                                lambda_w=loss["lambda_w"], tau_amp=loss["tau_amp"], lr=tr["lr"],
                                eta_min=tr["eta_min"], weight_decay=tr["weight_decay"], epochs=int(tr["epochs"]),
                                batch=int(tr["batch"]), seed=C.component_seed(cfg, "channel-train"))


def stgnn_config(cfg, n_beams):
    from .traffic_dt.model import StGnnConfig
    tr, t = cfg["train"]["traffic"], cfg["traffic"]
    return StGnnConfig(hidden_dim=int(tr["hidden_dim"]), attn_dim=tr["attn_dim"], layers=int(tr["layers"]),
                       k_neighbors=int(t["k_neighbors"]), lookback=int(tr["lookback"]), dropout=tr["dropout"],
                       lr=tr["lr"], t_max=int(tr["t_max"] or tr["epochs"]), eta_min=tr["eta_min"],
                       leaky_slope=tr["leaky_slope"], n_beams=n_beams, graph_mode=t["graph_mode"],
                       epochs=int(tr["epochs"]), batch=int(tr["batch"]), seed=C.component_seed(cfg, "stgnn"))


def _dataset_dir(p, what):
    if not (Path(p) / "manifest.json").is_file():
        raise MissingInput(f"{what} dataset not found in {p}; run the matching gen-* subcommand first")
    return p


def run_train_channel(cfg, checkpoint=None) -> str:
    from .channel_dt.training import train_channel_model
    p = paths(cfg)
    data = _dataset_dir(p["channel_data"], "channel")
    _need(checkpoint, "checkpoint")
    _, hist = train_channel_model(data, p["channel_model"], unet_config(cfg), diffusion_config(cfg),
                                  log=log.info, init=checkpoint)
    C.write_resolved(cfg, p["channel_model"])
    return f"train-channel: val loss {hist[0]:.6g} -> {hist[-1]:.6g}; checkpoint {p['channel_model'] / 'channel_model.ckpt'}"


def run_train_traffic(cfg, checkpoint=None) -> str:
    from .traffic_dt.training import load_traffic_dataset, train_traffic_model
    p = paths(cfg)
    data = load_traffic_dataset(_dataset_dir(p["traffic_data"], "traffic"))
    _need(checkpoint, "checkpoint")
    scfg = stgnn_config(cfg, int(data.manifest["n_beams"]))
    train_traffic_model(data, scfg, p["traffic_model"], log=log.info, init=checkpoint)
    C.write_resolved(cfg, p["traffic_model"])
    return f"train-traffic: {scfg.epochs} epochs; checkpoint {p['traffic_model'] / 'traffic_model.ckpt'}"


def _checkpoint_kind(path):
    from .tensor_nn.checkpoint import read_checkpoint
    header, _ = read_checkpoint(path)
    meta = header.get("meta", {})
    if "unet" in meta:
        return "channel", header
    if "stgnn" in meta:
        return "traffic", header
    raise CheckpointMismatchError(f"{path}: checkpoint carries no model description")


def _check_meta(stored: dict, current: dict, path):
    # seeds only set the initial weights, so they may differ
    diff = sorted(k for k in set(stored) | set(current) if k != "seed" and
                  json.dumps(stored.get(k)) != json.dumps(current.get(k)))
    if diff:
        raise CheckpointMismatchError(f"{path}: model config differs from checkpoint in {diff}")


def eval_channel(cfg, checkpoint=None):
    from .channel_dt.training import evaluate_channel, write_channel_metrics
    from .channel_dt.unet import PgResUnet
    from .tensor_nn.checkpoint import load_checkpoint

    p = paths(cfg)
    data = _dataset_dir(p["channel_data"], "channel")
    ucfg = unet_config(cfg)
    model = PgResUnet(ucfg)
    ckpt = checkpoint or (p["channel_model"] / "channel_model.ckpt")
    epoch = 0
    if Path(ckpt).is_file():
        kind, header = _checkpoint_kind(ckpt)
        if kind != "channel":
            raise CheckpointMismatchError(f"{ckpt} is a {kind} checkpoint")
        _check_meta(header["meta"]["unet"], asdict(ucfg), ckpt)
        load_checkpoint(ckpt, model)
        epoch = int(header["meta"].get("epoch", 0))
    elif checkpoint is not None:
        raise MissingInput(f"checkpoint not found: {checkpoint}")
    else:
        log.warning("no channel checkpoint at %s; evaluating the freshly initialised model", ckpt)
    e = cfg["eval"]
    res = evaluate_channel(model, data, diffusion_config(cfg), e["amp_threshold"], int(e["n_samples"]),
                           max_items=e["max_items"])
    p["metrics"].mkdir(parents=True, exist_ok=True)
    write_channel_metrics(p["metrics"] / "channel_metrics.csv", [(epoch, "test", res["pcdm"])])
    write_channel_metrics(p["metrics"] / "channel_baseline_metrics.csv", [(epoch, "test", res["baseline"])])
    return (f"channel amp_mse={res['pcdm']['amp_mse']:.6g} phase_mse={res['pcdm']['phase_mse']:.6g} "
            f"(baseline {res['baseline']['amp_mse']:.6g}/{res['baseline']['phase_mse']:.6g})")


def eval_traffic(cfg, checkpoint=None):
    from .tensor_nn.checkpoint import load_checkpoint
    from .traffic_dt.model import StGnn
    from .traffic_dt.training import baselines_and_metrics, load_traffic_dataset, write_traffic_metrics

    p = paths(cfg)
    data = load_traffic_dataset(_dataset_dir(p["traffic_data"], "traffic"))
    scfg = stgnn_config(cfg, int(data.manifest["n_beams"]))
    model = StGnn(scfg)
    ckpt = checkpoint or (p["traffic_model"] / "traffic_model.ckpt")
    if Path(ckpt).is_file():
        kind, header = _checkpoint_kind(ckpt)
        if kind != "traffic":
            raise CheckpointMismatchError(f"{ckpt} is a {kind} checkpoint")
        arch = ("input_dim", "hidden_dim", "attn_dim", "layers", "n_beams", "lookback")
        _check_meta({k: header["meta"]["stgnn"].get(k) for k in arch}, {k: asdict(scfg)[k] for k in arch}, ckpt)
        load_checkpoint(ckpt, model)
    elif checkpoint is not None:
        raise MissingInput(f"checkpoint not found: {checkpoint}")
    else:
        log.warning("no traffic checkpoint at %s; evaluating the freshly initialised model", ckpt)
    m = baselines_and_metrics(model, data, scfg.lookback)
    p["metrics"].mkdir(parents=True, exist_ok=True)
    write_traffic_metrics(p["metrics"] / "traffic_metrics.csv", m)
    return (f"traffic stgnn_mse={m['stgnn']['mse']:.6g} persistence_mse={m['persistence']['mse']:.6g} "
            f"ar1_mse={m['ar1_optimum']['mse']:.6g}")


def run_eval(cfg, checkpoint=None, target=None) -> str:
    target = target or cfg["eval"]["target"]
    if checkpoint is not None:
        if not Path(checkpoint).is_file():
            raise MissingInput(f"checkpoint not found: {checkpoint}")
        kind, _ = _checkpoint_kind(checkpoint)
        if target not in ("all", kind):
            raise CheckpointMismatchError(f"{checkpoint} is a {kind} checkpoint, eval target is {target}")
        target = kind
    parts = []
    if target in ("channel", "all"):
        parts.append(eval_channel(cfg, checkpoint))
    if target in ("traffic", "all"):
        parts.append(eval_traffic(cfg, checkpoint))
    C.write_resolved(cfg, paths(cfg)["metrics"])
    return "eval: " + "; ".join(parts)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="ntn-twin", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("propagate", help="TLE file -> ECEF ephemeris CSV")
    sp.add_argument("--tle", required=True, help="TLE file (2- or 3-line sets)")
    sp.add_argument("--start", default=None,
                    help="simulation epoch: unix seconds or ISO-8601 (default: first TLE epoch)")
    sp.add_argument("--duration", type=float, required=True, help="seconds; 0 writes the header only")
    sp.add_argument("--dt", type=float, required=True, help="sampling interval in seconds")
    sp.add_argument("--out", required=True, help="output CSV (rows grouped by satellite)")
    sp.add_argument("--no-j2", action="store_true", help="two-body propagation without J2 secular rates")

    for name, text in (("gen-channel", "generate the channel dataset"),
                       ("gen-traffic", "generate the traffic dataset")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="run config JSON")
    for name, text in (("train-channel", "train the diffusion denoiser"),
                       ("train-traffic", "train the ST-GNN"),
                       ("eval", "evaluate models and reference predictors")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="run config JSON")
        s.add_argument("--checkpoint", default=None,
                       help="weights to start from (train) or to evaluate (eval)")
        if name == "eval":
            s.add_argument("--target", choices=("channel", "traffic", "all"), default=None,
                           help="which model to evaluate (default: eval.target from the config)")
    return ap


def _dispatch(args) -> str:
    if args.command == "propagate":
        return run_propagate(args.tle, args.start, args.duration, args.dt, args.out, j2=not args.no_j2)
    if not Path(args.config).is_file():
        raise MissingInput(f"config not found: {args.config}")
    cfg = C.load_config(args.config)
    if args.command == "gen-channel":
        return run_gen_channel(cfg)
    if args.command == "gen-traffic":
        return run_gen_traffic(cfg)
    if args.command == "train-channel":
        return run_train_channel(cfg, args.checkpoint)
    if args.command == "train-traffic":
        return run_train_traffic(cfg, args.checkpoint)
    return run_eval(cfg, args.checkpoint, args.target)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = _dispatch(args)
    except (TleParseError, ConfigError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingInput, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DivergenceError, NonFiniteError) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (InvariantViolation, GeometryError, ShapeError) as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

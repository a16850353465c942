"""Traffic dataset generation, ST-GNN training and the persistence / AR-1 reference predictors."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import orbital
from ..channel_sim import derive_seed
from ..errors import DivergenceError, FileFormatError, NonFiniteError
from ..tensor_nn import tensor as T
from ..tensor_nn.checkpoint import load_checkpoint, save_checkpoint
from ..tensor_nn.optim import Adam, cosine_anneal
from .baseline import (BeamLayout, decompose, hanning_smooth, physics_baseline, quantize,
                       synthesize_residual)
from .graph import build_graph, cluster_planes, read_graph_csv, write_graph_csv
from .model import EdgeIndex, ScalerState, StGnn, StGnnConfig, encode_features

TRAFFIC_VERSION = 1
TRAFFIC_HEADER = ["slot", "sat_id", "beam", "total_mbps", "baseline_mbps", "residual_mbps"]


@dataclass
class TrafficScenario:
    layout: BeamLayout = field(default_factory=BeamLayout)
    rho: float = 1e-3  # Mbps per person
    mode: str = "integral"
    hanning_window: int = 11
    phi: float = 0.9
    sigma: float = 5.0  # Mbps
    plane_weight: float = 0.3
    burst_rate: float = 0.0
    burst_scale: float = 1.0
    clip_nonnegative: bool = True
    dt: float = 30.0  # s per slot
    n_slots: int = 10000
    test_fraction: float = 0.2
    graph_mode: str = "knn"
    k_neighbors: int = 4
    subsample: int = 4
    seed: int = 0


@dataclass
class TrafficData:
    total: np.ndarray  # (T, N_s, N_b)
    baseline: np.ndarray
    residual: np.ndarray
    lat: np.ndarray  # (T, N_s)
    lon: np.ndarray
    sat_ids: np.ndarray
    plane: np.ndarray
    edges: list  # EdgeIndex per slot
    manifest: dict

    @property
    def n_train(self):
        return int(self.manifest["split_boundaries"]["train"][1]) + 1


def generate_traffic_dataset(tles, pop, scenario: TrafficScenario, out_dir, land=None, classes=None,
                             epoch=None) -> dict:
    """Propagate, compute baselines, add AR-1 residuals, build graphs; write CSVs and a manifest."""
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    n_s, n_b, T_ = len(tles), scenario.layout.n_beams, scenario.n_slots
    sat_ids = np.array([t.sat_id for t in tles])
    pos = np.empty((T_, n_s, 3))
    vel = np.empty((T_, n_s, 3))
    for n in range(T_):
        for i, tle in enumerate(tles):
            rec = orbital.propagate(tle, n * scenario.dt, epoch=epoch)
            pos[n, i], vel[n, i] = rec.position, rec.velocity
    el = [orbital.plane_elements(p, v) for p, v in zip(pos[0], vel[0])]
    plane, _ = cluster_planes([e[0] for e in el], [e[1] for e in el])

    base = np.stack([physics_baseline(pos[n], vel[n], pop, scenario.layout, scenario.rho, land, classes,
                                      scenario.mode, scenario.subsample) for n in range(T_)])
    if scenario.hanning_window > 1:
        base = hanning_smooth(base, scenario.hanning_window, axis=0)
    base = quantize(base)
    resid = synthesize_residual((T_, n_s, n_b), scenario.phi, scenario.sigma,
                                derive_seed(scenario.seed, "residual"), plane, scenario.plane_weight,
                                scenario.burst_rate, scenario.burst_scale)
    total = quantize(base + resid)
    if scenario.clip_nonnegative:
        total = np.maximum(total, 0.0)
    resid = decompose(total, base)

    lat, lon, _ = orbital.ecef_to_geodetic(pos)
    n_train = int(math.floor(T_ * (1.0 - scenario.test_fraction)))

    with open(out / "traffic.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAFFIC_HEADER)
        for n in range(T_):
            for i in range(n_s):
                for b in range(n_b):
                    w.writerow([n, int(sat_ids[i]), b, repr(float(total[n, i, b])),
                                repr(float(base[n, i, b])), repr(float(resid[n, i, b]))])
    with open(out / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "sat_id", "plane", "lat_deg", "lon_deg"])
        for n in range(T_):
            for i in range(n_s):
                w.writerow([n, int(sat_ids[i]), int(plane[i]), repr(float(lat[n, i])), repr(float(lon[n, i]))])
    for n in range(T_):
        g = build_graph(pos[n], vel[n], sat_ids, scenario.graph_mode, scenario.k_neighbors, n, plane=plane)
        write_graph_csv(out / "graphs" / f"slot_{n:06d}.csv", g)

    scaler = ScalerState.fit(resid[:n_train])
    manifest = {
        "version": TRAFFIC_VERSION,
        "kind": "traffic",
        "n_slots": T_,
        "n_sats": n_s,
        "n_beams": n_b,
        "sat_ids": [int(s) for s in sat_ids],
        "plane": [int(p) for p in plane],
        "dt": scenario.dt,
        "seed": scenario.seed,
        "phi": scenario.phi,
        "sigma": scenario.sigma,
        "plane_weight": scenario.plane_weight,
        "burst": {"rate": scenario.burst_rate, "scale": scenario.burst_scale},
        "rho": scenario.rho,
        "min_elevation": scenario.layout.min_elevation,
        "beam_half_width": scenario.layout.half_width,
        "beam_offsets": [list(o) for o in scenario.layout.offsets],
        "baseline_mode": scenario.mode,
        "hanning_window": scenario.hanning_window,
        "subsample": scenario.subsample,
        "graph_mode": scenario.graph_mode,
        "k_neighbors": scenario.k_neighbors,
        "clipped_cells": int(np.sum(total == 0.0)),
        "scaler": scaler.to_dict(),
        "split_boundaries": {"train": [0, n_train - 1], "test": [n_train, T_ - 1]},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_traffic_dataset(data_dir) -> TrafficData:
    d = Path(data_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    T_, n_s, n_b = manifest["n_slots"], manifest["n_sats"], manifest["n_beams"]
    with open(d / "traffic.csv", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != TRAFFIC_HEADER:
            raise FileFormatError(f"{d / 'traffic.csv'}: unexpected header")
        rows = np.array([[float(v) for v in r] for r in reader])
    if len(rows) != T_ * n_s * n_b:
        raise FileFormatError("traffic.csv row count does not match the manifest")
    cube = rows[:, 3:].reshape(T_, n_s, n_b, 3)
    with open(d / "nodes.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        nodes = np.array([[float(v) for v in r] for r in reader]).reshape(T_, n_s, 5)
    sat_ids = np.array(manifest["sat_ids"])
    plane = np.array(manifest["plane"])
    edges = [EdgeIndex.from_graph(read_graph_csv(d / "graphs" / f"slot_{n:06d}.csv", sat_ids, plane, n))
             for n in range(T_)]
    return TrafficData(cube[..., 0], cube[..., 1], cube[..., 2], nodes[..., 3], nodes[..., 4],
                       sat_ids, plane, edges, manifest)


# ---------------------------------------------------------------------------
# windows, training, evaluation
# ---------------------------------------------------------------------------

def _batch_inputs(data: TrafficData, targets, L, scaler: ScalerState):
    """Stack windows ending just before each target slot into block-diagonal node sets."""
    n_s = data.residual.shape[1]
    feats = np.empty((L, len(targets) * n_s, 5))
    edge_seq = []
    for t in range(L):
        slots = [n - L + t for n in targets]
        f = encode_features(data.residual[slots], data.lat[slots], data.lon[slots], scaler)
        feats[t] = f.reshape(-1, 5)
        edge_seq.append(EdgeIndex.batch([data.edges[s] for s in slots]))
    return feats, edge_seq


def train_traffic_model(data: TrafficData, cfg: StGnnConfig, out_dir, log=None, init=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L = cfg.lookback
    scaler = ScalerState.from_dict(data.manifest["scaler"])
    model = StGnn(cfg)
    if init is not None:
        load_checkpoint(init, model)
    params = model.named_parameters()
    opt = Adam([p for _, p in params], lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, "traffic-train"))
    train_targets = np.arange(L, data.n_train)
    y_all = scaler.target.apply(data.residual)
    rows, step = [], 0
    for epoch in range(cfg.epochs):
        opt.lr = cosine_anneal(cfg.lr, cfg.t_max, cfg.eta_min, epoch)
        model.train()
        order = rng.permutation(train_targets)
        total = 0.0
        for s in range(0, len(order), cfg.batch):
            tgt = order[s:s + cfg.batch]
            feats, edge_seq = _batch_inputs(data, tgt, L, scaler)
            y = y_all[tgt].reshape(-1, cfg.n_beams)
            try:
                opt.zero_grad()
                loss = T.mse(model(feats, edge_seq), y)
                loss.backward()
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch} step {step}: {exc}") from exc
            v = float(loss.data)
            if not math.isfinite(v):
                raise DivergenceError(f"epoch {epoch} step {step}: loss {v}")
            opt.step()
            rows.append((epoch, step, v, opt.lr))
            total += v * len(tgt)
            step += 1
        save_checkpoint(out / f"traffic_epoch_{epoch + 1:03d}.ckpt", params, cfg.seed, step,
                        {"epoch": epoch + 1, "stgnn": asdict(cfg)})
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} train mse {total / len(order):.5g}")
    save_checkpoint(out / "traffic_model.ckpt", params, cfg.seed, step, {"epoch": cfg.epochs, "stgnn": asdict(cfg)})
    with open(out / "traffic_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "loss", "lr"])
        for e, s_, v, lr in rows:
            w.writerow([e, s_, repr(v), repr(lr)])
    return model


def predict_residuals(model: StGnn, data: TrafficData, targets, batch=64):
    """Model predictions (Mbps) for the given target slots, shape (len(targets), N_s, N_b)."""
    scaler = ScalerState.from_dict(data.manifest["scaler"])
    L, n_s = model.cfg.lookback, data.residual.shape[1]
    model.eval()
    out = []
    with T.no_grad():
        for s in range(0, len(targets), batch):
            tgt = targets[s:s + batch]
            feats, edge_seq = _batch_inputs(data, tgt, L, scaler)
            out.append(model(feats, edge_seq).data.reshape(len(tgt), n_s, -1))
    return scaler.target.invert(np.concatenate(out))


def regression_metrics(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true, dtype=float), np.asarray(y_pred, dtype=float)
    sse = float(np.sum((y_true - y_pred) ** 2))
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    return {"mse": sse / y_true.size, "r2": 1.0 - sse / sst if sst > 0 else float("nan")}


def persistence_closed_form(phi, sigma):
    """Stationary AR-1 one-step persistence MSE: sigma^2 [(1 - phi)/(1 + phi) + 1]."""
    return sigma**2 * ((1.0 - phi) / (1.0 + phi) + 1.0)


def baselines_and_metrics(model, data: TrafficData, lookback: int = 12):
    """Test-split MSE / R^2 (Mbps^2) for the model, persistence and the generator's AR-1 optimum."""
    targets = np.arange(max(data.n_train, lookback), data.manifest["n_slots"])
    y = data.residual[targets]
    prev = data.residual[targets - 1]
    out = {"persistence": regression_metrics(y, prev),
           "ar1_optimum": regression_metrics(y, data.manifest["phi"] * prev)}
    if model is not None:
        pred = predict_residuals(model, data, targets)
        out["stgnn"] = regression_metrics(y, pred)
        sc = ScalerState.from_dict(data.manifest["scaler"]).target
        out["stgnn"]["mse_scaled"] = float(np.mean((sc.apply(y) - sc.apply(pred)) ** 2))
    return out


def write_traffic_metrics(path, metrics: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mse", "r2"])
        for name in ("stgnn", "persistence", "ar1_optimum"):
            if name in metrics:
                w.writerow([name, repr(metrics[name]["mse"]), repr(metrics[name]["r2"])])

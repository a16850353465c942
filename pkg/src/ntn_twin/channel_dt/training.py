"""Hybrid loss, the training loop, channel metrics and the nearest-pilot baseline."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from ..channel_sim import derive_seed, load_channel_split
from ..errors import DivergenceError, NonFiniteError
from ..tensor_nn import tensor as T
from ..tensor_nn.checkpoint import load_checkpoint, save_checkpoint
from ..tensor_nn.optim import AdamW, cosine_anneal
from ..tensor_nn.tensor import DiffTensor
from .schedule import build_schedule, forward_noise_batch, reverse_sample, to_complex
from .unet import PgResUnet, PgResUnetConfig, predict_x0


@dataclass
class DiffusionTrainConfig:
    K: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    lambda_l1: float = 0.05
    lambda_w: float = 4.0
    tau_amp: float = 0.05
    lr: float = 1e-4
    eta_min: float = 1e-6
    weight_decay: float = 1e-2
    epochs: int = 30
    batch: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_w < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 < self.tau_amp < 1.0:
            raise ValueError("tau_amp must lie in (0, 1)")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("bad epochs/batch")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def amplitude_weight(x0, lambda_w: float, tau_amp: float):
    """M = 1 + lambda_w * 1[|x0| > tau_amp * max|x0|] per sample, shared by the re/im planes."""
    x0 = np.asarray(x0)
    amp = np.sqrt(x0[:, 0] ** 2 + x0[:, 1] ** 2)
    peak = amp.reshape(len(amp), -1).max(axis=1).reshape((-1,) + (1,) * (amp.ndim - 1))
    m = 1.0 + lambda_w * (amp > tau_amp * peak)
    return np.repeat(m[:, None], 2, axis=1)


def hybrid_loss(x0, x0_hat, weight=None, lambda_l1: float = 0.05):
    """Batch mean of sum(M (x0 - x0_hat)^2) + lambda * sum|x0 - x0_hat|.

    ``x0`` is a plain array (B, 2, H, W); ``x0_hat`` may be a DiffTensor.
    """
    x0 = np.asarray(x0, dtype=float)
    if weight is None:
        weight = np.ones_like(x0)
    weight = np.asarray(weight, dtype=float)
    if weight.shape != x0.shape or tuple(T.as_tensor(x0_hat).shape) != x0.shape:
        raise ValueError("loss operands must share a shape")
    if np.any(weight < 0):
        raise ValueError("negative loss weights")
    diff = T.sub(x0_hat, x0)
    sq = T.reduce_sum(T.mul(T.square(diff), weight))
    l1 = T.reduce_sum(T.absolute(diff))
    return T.mul(T.add(sq, T.mul(l1, lambda_l1)), 1.0 / x0.shape[0])


# ---------------------------------------------------------------------------
# metrics and baseline
# ---------------------------------------------------------------------------

def wrap_phase(d):
    return (np.asarray(d) + np.pi) % (2.0 * np.pi) - np.pi


def channel_metrics(h_true, h_pred, amp_threshold: float = 0.1):
    """Amplitude MSE over all cells; phase MSE over cells above the per-sample amplitude threshold.

    Inputs are complex (S, H, W) (a single (H, W) grid is promoted).
    """
    if not 0.0 < amp_threshold < 1.0:
        raise ValueError("amp_threshold must lie in (0, 1)")
    h_true = np.asarray(h_true)
    h_pred = np.asarray(h_pred)
    if h_true.ndim == 2:
        h_true, h_pred = h_true[None], h_pred[None]
    a_t, a_p = np.abs(h_true), np.abs(h_pred)
    amp_mse = float(np.mean((a_p - a_t) ** 2))
    peak = a_t.reshape(len(a_t), -1).max(axis=1)[:, None, None]
    sel = a_t > amp_threshold * peak
    if not sel.any():
        raise ValueError("phase mask is empty")
    dphi = wrap_phase(np.angle(h_pred) - np.angle(h_true))
    phase_mse = float(np.mean(dphi[sel] ** 2))
    return {"amp_mse": amp_mse, "phase_mse": phase_mse, "n_phase_cells": int(sel.sum())}


def baseline_interpolate(obs, mask):
    """Nearest-pilot fill of real and imaginary parts; ``obs`` complex (H, W), ``mask`` 0/1 (H, W)."""
    mask = np.asarray(mask) > 0.5
    if not mask.any():
        raise ValueError("observation has no pilots")
    _, (ix, iy) = distance_transform_edt(~mask, return_indices=True)
    obs = np.asarray(obs)
    return obs.real[ix, iy] + 1j * obs.imag[ix, iy]


def baseline_predict(conds):
    """Nearest-pilot estimates for a stack of (9, H, W) conditions."""
    return np.stack([baseline_interpolate(c[0] + 1j * c[1], c[8]) for c in conds])


def diffusion_predict(model, conds, schedule, seed, n_samples: int = 1, batch: int = 64):
    """Average of ``n_samples`` reverse-chain samples per condition, complex (S, H, W)."""
    fn = predict_x0(model)
    model.eval()
    out = np.zeros((len(conds),) + conds.shape[2:], dtype=complex)
    for start in range(0, len(conds), batch):
        c = conds[start:start + batch]
        acc = np.zeros((len(c), 2) + c.shape[2:])
        for s in range(n_samples):
            rng = np.random.default_rng(derive_seed(seed, "reverse", start, s))
            acc += reverse_sample(fn, c, schedule, rng)
        out[start:start + len(c)] = to_complex(acc / n_samples)
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def validation_loss(model, targets, conds, schedule, cfg: DiffusionTrainConfig, batch: int = 64):
    """Hybrid loss on held-out samples with fixed (seeded) steps and noise."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "validation"))
    ks = rng.integers(1, schedule.K + 1, size=len(targets))
    eps = rng.standard_normal(targets.shape)
    total = 0.0
    model.eval()
    with T.no_grad():
        for s in range(0, len(targets), batch):
            x0 = targets[s:s + batch]
            xk = forward_noise_batch(x0, ks[s:s + batch], eps[s:s + batch], schedule)
            pred = model(DiffTensor(xk), ks[s:s + batch], DiffTensor(conds[s:s + batch]))
            w = amplitude_weight(x0, cfg.lambda_w, cfg.tau_amp)
            total += float(hybrid_loss(x0, pred, w, cfg.lambda_l1).data) * len(x0)
    return total / len(targets)


def train_channel_model(data_dir, out_dir, unet_cfg: PgResUnetConfig, cfg: DiffusionTrainConfig,
                        max_train=None, log=None, init=None):
    """Train the denoiser on ``data_dir``'s train split; writes checkpoints and loss traces to ``out_dir``.

    Returns (model, history) where history holds the per-epoch validation losses
    (index 0 is the untrained model).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets, conds, _ = load_channel_split(data_dir, "train")
    if max_train is not None:
        targets, conds = targets[:max_train], conds[:max_train]
    v_targets, v_conds, _ = load_channel_split(data_dir, "test")

    schedule = build_schedule(cfg.K, cfg.beta_min, cfg.beta_max)
    model = PgResUnet(unet_cfg)
    if init is not None:
        load_checkpoint(init, model)
    params = model.named_parameters()
    opt = AdamW([p for _, p in params], lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))

    history = [validation_loss(model, v_targets, v_conds, schedule, cfg)]
    rows = []
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = cosine_anneal(cfg.lr, max(cfg.epochs, 1), cfg.eta_min, epoch)
        model.train()
        order = rng.permutation(len(targets))
        epoch_loss = 0.0
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            x0 = targets[idx]
            ks = rng.integers(1, schedule.K + 1, size=len(idx))
            eps = rng.standard_normal(x0.shape)
            xk = forward_noise_batch(x0, ks, eps, schedule)
            try:
                opt.zero_grad()
                pred = model(DiffTensor(xk), ks, DiffTensor(conds[idx]))
                loss = hybrid_loss(x0, pred, amplitude_weight(x0, cfg.lambda_w, cfg.tau_amp), cfg.lambda_l1)
                loss.backward()
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch} step {step}: {exc}") from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"epoch {epoch} step {step}: loss {value}")
            opt.step()
            rows.append((epoch, step, value, opt.lr))
            epoch_loss += value * len(idx)
            step += 1
        history.append(validation_loss(model, v_targets, v_conds, schedule, cfg))
        save_checkpoint(out / f"channel_epoch_{epoch + 1:03d}.ckpt", params, cfg.seed, step,
                        {"epoch": epoch + 1, "unet": asdict(unet_cfg)})
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} train {epoch_loss / len(order):.5g} val {history[-1]:.5g}")

    save_checkpoint(out / "channel_model.ckpt", params, cfg.seed, step,
                    {"epoch": cfg.epochs, "unet": asdict(unet_cfg)})
    with open(out / "channel_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "loss", "lr"])
        for e, s, v, lr in rows:
            w.writerow([e, s, repr(v), repr(lr)])
    with open(out / "channel_val_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "val_loss"])
        for e, v in enumerate(history):
            w.writerow([e, repr(v)])
    (out / "channel_train_config.json").write_text(
        json.dumps({"unet": asdict(unet_cfg), "train": asdict(cfg)}, indent=1, sort_keys=True))
    return model, history


def evaluate_channel(model, data_dir, cfg: DiffusionTrainConfig, amp_threshold: float = 0.1,
                     n_samples: int = 1, split: str = "test", max_items=None):
    """Metrics of the diffusion model and of the nearest-pilot baseline on one split."""
    targets, conds, _ = load_channel_split(data_dir, split)
    if max_items is not None:
        targets, conds = targets[:max_items], conds[:max_items]
    h_true = to_complex(targets)
    schedule = build_schedule(cfg.K, cfg.beta_min, cfg.beta_max)
    out = {"baseline": channel_metrics(h_true, baseline_predict(conds), amp_threshold)}
    if model is not None:
        pred = diffusion_predict(model, conds, schedule, derive_seed(cfg.seed, "eval"), n_samples)
        out["pcdm"] = channel_metrics(h_true, pred, amp_threshold)
    return out


def write_channel_metrics(path, rows):
    """rows: iterable of (epoch, split, metrics dict) -> CSV epoch,split,amp_mse,phase_mse."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "amp_mse", "phase_mse"])
        for epoch, split, m in rows:
            w.writerow([epoch, split, repr(m["amp_mse"]), repr(m["phase_mse"])])

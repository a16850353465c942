"""Small channel twin run: generate an overhead pass, train the diffusion denoiser briefly,
then compare it with nearest-pilot interpolation.

The sizes here are chosen to finish in a few minutes on one core.  The acceptance-scale
run (2000 samples, 30 epochs) lives in tests/test_acceptance.py.

Run:  python3 demos/channel_twin_small.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from ntn_twin.channel_dt.schedule import build_schedule, scaled_beta_range
from ntn_twin.channel_dt.training import DiffusionTrainConfig, evaluate_channel, train_channel_model
from ntn_twin.channel_dt.unet import PgResUnetConfig
from ntn_twin.scenarios import toy_channel_dataset

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="channel_twin_"))
data_dir, run_dir = out / "data", out / "run"

manifest = toy_channel_dataset(data_dir, n_samples=300, n=16, seed=0)
print(f"dataset: {manifest['counts']['train']} train / {manifest['counts']['test']} test samples in {data_dir}")

K = 32
bmin, bmax = scaled_beta_range(K)
print(f"K={K}, beta range [{bmin:.4g}, {bmax:.4g}], abar_K={build_schedule(K, bmin, bmax).alpha_bar[-1]:.2e}")

unet = PgResUnetConfig(base_channels=8, multipliers=(1, 2), levels=2, attn_heads=2, time_embed_dim=32, groups=4)
cfg = DiffusionTrainConfig(K=K, beta_min=bmin, beta_max=bmax, epochs=4, lr=1e-3, batch=16, seed=0)
model, hist = train_channel_model(data_dir, run_dir, unet, cfg, log=print)
print(f"validation loss {hist[0]:.4g} (untrained) -> {hist[-1]:.4g}")

res = evaluate_channel(model, data_dir, cfg, n_samples=4, max_items=32)
for name, m in res.items():
    print(f"{name:>9}: amplitude MSE {m['amp_mse']:.4f}, masked phase MSE {m['phase_mse']:.4f}")

"""Small traffic twin run: physics baseline from a population raster plus AR-1 residuals,
an ST-GNN trained on the residuals, and the persistence / AR-1 references.

Run:  python3 demos/traffic_twin_small.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

from ntn_twin.scenarios import toy_traffic_dataset
from ntn_twin.traffic_dt.model import StGnnConfig
from ntn_twin.traffic_dt.training import (TrafficScenario, baselines_and_metrics, load_traffic_dataset,
                                          persistence_closed_form, train_traffic_model)

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="traffic_twin_"))

scenario = TrafficScenario(n_slots=3000, seed=0, rho=1e-4, sigma=5.0, phi=0.9, subsample=2)
toy_traffic_dataset(out / "data", scenario=scenario, n_planes=2, per_plane=10)
data = load_traffic_dataset(out / "data")
print(f"traffic tensor {data.total.shape}, mean baseline {data.baseline.mean():.1f} Mbps, "
      f"residual std {data.residual.std():.2f} Mbps")

cfg = StGnnConfig(n_beams=data.total.shape[2], hidden_dim=16, lookback=12, epochs=4, lr=2e-3, seed=0)
model = train_traffic_model(data, cfg, out / "run", log=print)

m = baselines_and_metrics(model, data, cfg.lookback)
print(f"persistence closed form {persistence_closed_form(scenario.phi, scenario.sigma):.2f}, "
      f"AR-1 optimum {scenario.sigma ** 2:.2f}")
for name, row in m.items():
    print(f"{name:>12}: {row}")

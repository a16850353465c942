"""Ground-truth CSI synthesis, delayed sparse pilot observation, and channel dataset generation.

CSI is the complex baseband response per cell and subcarrier.  Subcarrier
frequencies are baseband offsets from the carrier (the carrier phase is
assumed recovered by the receiver), so the line-of-sight phase on subcarrier
k is ``-2 pi f_k D / c``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, InvariantViolation, ShapeError
from .geo_data import LandCoverClass
from .orbital import C_LIGHT
from .physics_tensor import ChannelNormalizer, PhysicsTensor

CONDITION_CHANNELS = ("obs_re", "obs_im", "fspl_db", "gain_dbi", "rain_db", "doppler_hz",
                      "land_class", "scint_sigma", "mask")
SAMPLE_CHANNELS = ("target_re", "target_im") + CONDITION_CHANNELS
DATASET_VERSION = 1


@dataclass(frozen=True)
class LinkBudget:
    f_c: float = 12e9
    tx_power_dbm: float = 0.0
    noise_sigma: float = 0.05
    min_elevation: float = 10.0
    n_subcarriers: int = 1
    subcarrier_spacing: float = 120e3
    # (excess delay ns, power dB relative to total diffuse power); 0.8 + 0.2 = 1
    taps: tuple = ((0.0, -0.9691), (100.0, -6.9897))

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if not 0.0 < self.min_elevation < 90.0:
            raise ValueError("min_elevation must lie in (0, 90)")
        if sum(10.0 ** (p / 10.0) for _, p in self.taps) > 1.0 + 1e-6:
            raise ValueError("tap powers must sum to at most 0 dB")

    def subcarrier_freqs(self):
        k = np.arange(self.n_subcarriers) - (self.n_subcarriers - 1) / 2.0
        return k * self.subcarrier_spacing

    def tap_arrays(self):
        delays = np.array([d for d, _ in self.taps]) * 1e-9
        powers = 10.0 ** (np.array([p for _, p in self.taps]) / 10.0)
        return delays, powers


@dataclass
class CsiTensor:
    values: np.ndarray  # complex (n_x, n_y, n_c)
    slot: int
    freqs: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise ShapeError("CSI must be (n_x, n_y, n_c) with n_c >= 1")
        if not np.all(np.isfinite(self.values)):
            raise InvariantViolation("non-finite CSI entry")


@dataclass
class PilotMask:
    values: np.ndarray  # 0/1 float, same shape as the CSI
    density: float
    pattern: str = "random"


@dataclass
class SparseObservation:
    values: np.ndarray  # complex, zero outside the mask
    mask: PilotMask
    noise_sigma: float
    source_slot: int
    delay: int = 0


def rician_k_linear(cls: LandCoverClass) -> float:
    return math.inf if cls.rician_k_db == math.inf else 10.0 ** (cls.rician_k_db / 10.0)


def los_amplitude(pt: PhysicsTensor, budget: LinkBudget):
    """Deterministic link-budget field amplitude (linear) per cell."""
    v = pt.values
    amp_db = budget.tx_power_dbm - v[..., 0] + v[..., 1] - v[..., 2]
    return 10.0 ** (amp_db / 20.0)


def slant_range_km(pt: PhysicsTensor, f_c: float):
    if pt.slant_range is not None:
        return pt.slant_range
    # invert the path-loss channel when the geometry was not carried along
    return C_LIGHT * 10.0 ** (pt.values[..., 0] / 20.0) / (4.0 * math.pi * f_c) / 1000.0


def synthesize_csi(pt: PhysicsTensor, budget: LinkBudget, classes: dict, seed, *,
                   amplitude_scale: float = 1.0, los_only: bool = False,
                   scintillation: bool = True) -> CsiTensor:
    """Link-budget amplitude x log-normal scintillation x Rician/Rayleigh two-tap small-scale fading.

    ``los_only`` drops the diffuse term entirely (the K -> infinity limit).
    """
    rng = np.random.default_rng(seed)
    n_x, n_y = pt.values.shape[:2]
    freqs = budget.subcarrier_freqs()
    delays, powers = budget.tap_arrays()

    codes = pt.values[..., 4].astype(int)
    k_lin = np.empty((n_x, n_y))
    for code in np.unique(codes):
        if int(code) not in classes:
            raise KeyError(f"land-cover code {int(code)} missing from class table")
        k_lin[codes == code] = rician_k_linear(classes[int(code)])
    if los_only:
        k_lin[:] = math.inf
    los_inf = np.isinf(k_lin)
    k_fin = np.where(los_inf, 0.0, k_lin)
    los_w = np.where(los_inf, 1.0, np.sqrt(k_fin / (k_fin + 1.0)))
    dif_w = np.where(los_inf, 0.0, np.sqrt(1.0 / (k_fin + 1.0)))

    amp = los_amplitude(pt, budget) / amplitude_scale
    s_db = rng.standard_normal((n_x, n_y)) * pt.values[..., 5] if scintillation else np.zeros((n_x, n_y))
    amp = amp * 10.0 ** (s_db / 20.0)

    g = (rng.standard_normal((n_x, n_y, len(powers))) + 1j * rng.standard_normal((n_x, n_y, len(powers)))) / math.sqrt(2.0)
    # (n_x, n_y, taps) x (taps, n_c) -> (n_x, n_y, n_c)
    tap_resp = np.sqrt(powers)[:, None] * np.exp(-2j * math.pi * delays[:, None] * freqs[None, :])
    diffuse = g @ tap_resp

    d_m = slant_range_km(pt, budget.f_c) * 1000.0
    los_phase = np.exp(-2j * math.pi * freqs[None, None, :] * d_m[..., None] / C_LIGHT)
    h = amp[..., None] * los_phase * (los_w[..., None] + dif_w[..., None] * diffuse)
    return CsiTensor(h, pt.slot, freqs)


def expected_power(pt: PhysicsTensor, budget: LinkBudget, classes: dict, amplitude_scale=1.0):
    """Closed-form E|H|^2 per cell for the model implemented by :func:`synthesize_csi`."""
    _, powers = budget.tap_arrays()
    codes = pt.values[..., 4].astype(int)
    k_lin = np.vectorize(lambda c: rician_k_linear(classes[int(c)]))(codes)
    los_frac = np.where(np.isinf(k_lin), 1.0, k_lin / (k_lin + 1.0))
    dif_frac = np.where(np.isinf(k_lin), 0.0, 1.0 / (k_lin + 1.0)) * powers.sum()
    sig = pt.values[..., 5] * math.log(10.0) / 20.0
    scint_gain = np.exp(2.0 * sig**2)
    return (los_amplitude(pt, budget) / amplitude_scale) ** 2 * scint_gain * (los_frac + dif_frac)


def make_pilot_mask(shape, density: float, pattern: str = "random", rng=None, min_pilots: int = 1) -> PilotMask:
    if not 0.0 < density <= 1.0:
        raise ValueError("pilot density must lie in (0, 1]")
    rng = np.random.default_rng(rng)
    if pattern == "random":
        m = (rng.random(shape) < density).astype(float)
    elif pattern == "lattice":
        step = max(1, int(round(1.0 / math.sqrt(density))))
        ox, oy = rng.integers(0, step, size=2)
        m = np.zeros(shape)
        m[ox::step, oy::step, ...] = 1.0
    else:
        raise ValueError(f"unknown pilot pattern {pattern!r}")
    flat = m.reshape(m.shape[0] * m.shape[1], -1)
    for k in range(flat.shape[1]):
        if flat[:, k].sum() < min_pilots:
            flat[rng.choice(flat.shape[0], size=min_pilots, replace=False), k] = 1.0
    return PilotMask(flat.reshape(shape), density, pattern)


def sample_pilots(csi: CsiTensor, density: float, noise_sigma: float, seed, pattern: str = "random",
                  delay: int = 0) -> SparseObservation:
    """Y = M * (H + N) with circular Gaussian noise of per-component std ``noise_sigma``."""
    rng = np.random.default_rng(seed)
    mask = make_pilot_mask(csi.values.shape, density, pattern, rng)
    shape = csi.values.shape
    noise = noise_sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    y = mask.values * (csi.values + noise)
    return SparseObservation(y, mask, noise_sigma, csi.slot, delay)


def make_condition(obs: SparseObservation, pt: PhysicsTensor, normalizer: ChannelNormalizer | None = None,
                   subcarrier: int = 0):
    """Channels-last (n_x, n_y, 9): [Re Y, Im Y, six normalised physics channels, mask]."""
    if obs.values.shape[:2] != pt.values.shape[:2]:
        raise ShapeError(f"observation grid {obs.values.shape[:2]} != physics grid {pt.values.shape[:2]}")
    if not 0 <= subcarrier < obs.values.shape[2]:
        raise ShapeError(f"subcarrier {subcarrier} out of range")
    phys = pt.values if normalizer is None else normalizer.apply(pt.values)
    y = obs.values[..., subcarrier]
    return np.concatenate([y.real[..., None], y.imag[..., None], phys,
                           obs.mask.values[..., subcarrier][..., None]], axis=-1)


def slot_delay(tau: float, dt: float) -> int:
    """d = ceil(tau / dt); guarded against representation error such as 0.3/0.1."""
    if tau < 0:
        raise ValueError("delay tau must be non-negative")
    if dt <= 0:
        raise ValueError("slot duration must be positive")
    ratio = tau / dt
    nearest = round(ratio)
    if abs(ratio - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(ratio))


def derive_seed(base: int, *keys) -> int:
    """Stable 63-bit seed from a base seed and labels (independent of PYTHONHASHSEED)."""
    h = hashlib.sha256(repr((int(base),) + tuple(keys)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass
class ChannelScenario:
    """Everything needed to generate a channel dataset besides the geometry per slot."""

    budget: LinkBudget
    classes: dict
    tau: float = 0.3
    dt: float = 0.1
    pilot_density: float = 0.05
    pilot_pattern: str = "random"
    test_fraction: float = 0.2
    seed: int = 0
    write_physics: bool = False
    extras: dict = field(default_factory=dict)


def generate_channel_dataset(physics: list[PhysicsTensor], scenario: ChannelScenario, out_dir) -> dict:
    """Write per-sample blobs and a JSON manifest; returns the manifest.

    ``physics[n]`` is the physics tensor of slot n (dominant satellite already
    chosen).  Sample n pairs target H_n with the condition built from the
    observation at slot n - d and the physics of slot n.  Samples are split
    into a leading train block and a trailing test block.
    """
    from .physics_tensor import save_physics_tensor

    out = Path(out_dir)
    n_slots = len(physics)
    d = slot_delay(scenario.tau, scenario.dt)
    if n_slots - d <= 1:
        raise ValueError(f"need more than {d + 1} slots for delay d={d}")
    budget = scenario.budget

    amp_all = np.concatenate([los_amplitude(pt, budget).ravel() for pt in physics])
    scale = float(np.median(amp_all))
    if not scale > 0 or not math.isfinite(scale):
        raise InvariantViolation("degenerate amplitude scale")

    csi = {}
    for n, pt in enumerate(physics):
        csi[n] = synthesize_csi(pt, budget, scenario.classes, derive_seed(scenario.seed, "csi", n),
                                amplitude_scale=scale)

    sample_slots = list(range(d, n_slots))
    n_train = int(math.floor(len(sample_slots) * (1.0 - scenario.test_fraction)))
    n_train = min(max(n_train, 1), len(sample_slots) - 1)
    splits = {"train": sample_slots[:n_train], "test": sample_slots[n_train:]}
    normalizer = ChannelNormalizer.fit([physics[n] for n in splits["train"]])

    files = []
    for split, slots in splits.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        for n in slots:
            src = n - d
            obs = sample_pilots(csi[src], scenario.pilot_density, budget.noise_sigma,
                                derive_seed(scenario.seed, "pilot", src), scenario.pilot_pattern, delay=d)
            blob = []
            for k in range(budget.n_subcarriers):
                cond = make_condition(obs, physics[n], normalizer, k)
                h = csi[n].values[..., k]
                blob.append(np.concatenate([h.real[None], h.imag[None], np.moveaxis(cond, -1, 0)], axis=0))
            arr = np.stack(blob)
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation(f"non-finite values in sample for slot {n}")
            name = f"{split}/sample_{n:06d}.bin"
            (out / name).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            files.append({"file": name, "slot": n, "source_slot": src, "split": split,
                          "sat_id": int(physics[n].sat_id), "flagged": bool(physics[n].flagged)})
            if scenario.write_physics:
                save_physics_tensor(physics[n], out / split / f"physics_{n:06d}.bin", normalizer)

    manifest = {
        "version": DATASET_VERSION,
        "kind": "channel",
        "sample_shape": [budget.n_subcarriers, len(SAMPLE_CHANNELS), *physics[0].values.shape[:2]],
        "sample_channels": list(SAMPLE_CHANNELS),
        "dtype": "<f8",
        "delay_slots": d,
        "tau": scenario.tau,
        "dt": scenario.dt,
        "n_slots": n_slots,
        "n_samples": len(files),
        "split_boundaries": {"train": [splits["train"][0], splits["train"][-1]],
                             "test": [splits["test"][0], splits["test"][-1]]},
        "counts": {k: len(v) for k, v in splits.items()},
        "amplitude_scale": scale,
        "normalization": normalizer.to_dict(),
        "seed": scenario.seed,
        "pilot": {"density": scenario.pilot_density, "pattern": scenario.pilot_pattern,
                  "noise_sigma": budget.noise_sigma},
        "subcarrier_freqs_hz": [float(f) for f in budget.subcarrier_freqs()],
        "files": files,
    }
    manifest.update(scenario.extras)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_channel_split(data_dir, split: str):
    """Return (targets (S, 2, H, W), conditions (S, 9, H, W), slots) with subcarriers flattened."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    shape = tuple(manifest["sample_shape"])
    entries = [f for f in manifest["files"] if f["split"] == split]
    if not entries:
        raise FileFormatError(f"no samples for split {split!r} in {data_dir}")
    arrays, slots = [], []
    for f in entries:
        raw = np.frombuffer((data_dir / f["file"]).read_bytes(), dtype="<f8")
        if raw.size != int(np.prod(shape)):
            raise FileFormatError(f"{f['file']}: size mismatch")
        arr = raw.reshape(shape)
        arrays.append(arr)
        slots.extend([f["slot"]] * shape[0])
    data = np.concatenate(arrays, axis=0).astype(float)
    return data[:, :2].copy(), data[:, 2:].copy(), np.array(slots)


def observation_from_condition(cond):
    """Recover (complex zero-filled observation, mask) from a (9, H, W) condition."""
    return cond[0] + 1j * cond[1], cond[8]

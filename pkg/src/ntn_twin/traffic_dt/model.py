"""Orbit-adaptive spatio-temporal GNN: dual-stream graph attention, gated fusion and a GRU per layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensor_nn import tensor as T
from ..tensor_nn.nn import Dense, Dropout, Module, Parameter, fan_in_uniform, zeros
from ..tensor_nn.tensor import DiffTensor


@dataclass
class StGnnConfig:
    input_dim: int = 5
    hidden_dim: int = 128
    attn_dim: int | None = None  # d'; defaults to hidden_dim
    layers: int = 2
    k_neighbors: int = 4
    lookback: int = 12
    dropout: float = 0.2
    lr: float = 2e-3
    t_max: int = 250
    eta_min: float = 0.0
    leaky_slope: float = 0.2
    n_beams: int = 1
    graph_mode: str = "knn"
    epochs: int = 250
    batch: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lookback < 1 or self.k_neighbors < 1 or self.layers < 1:
            raise ConfigError("lookback, k_neighbors and layers must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky slope must lie in (0, 1)")
        if self.input_dim != 5:
            raise ConfigError("node features are 1 residual + 4 trigonometric coordinates")
        if self.graph_mode not in ("plane", "knn"):
            raise ConfigError(f"unknown graph mode {self.graph_mode!r}")
        if self.attn_dim is None:
            self.attn_dim = self.hidden_dim


# ---------------------------------------------------------------------------
# scaling and features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardScaler:
    mean: float
    std: float

    @classmethod
    def fit(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(float(v.mean()), float(max(v.std(), 1e-8)))

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean"]), float(d["std"]))


@dataclass(frozen=True)
class ScalerState:
    """``feature`` scales the beam-summed node residual, ``target`` the per-beam residual."""

    feature: StandardScaler
    target: StandardScaler

    @classmethod
    def fit(cls, residuals):
        r = np.asarray(residuals, dtype=float)  # (T, N_s, N_b)
        return cls(StandardScaler.fit(r.sum(axis=-1)), StandardScaler.fit(r))

    def to_dict(self):
        return {"feature": self.feature.to_dict(), "target": self.target.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(StandardScaler.from_dict(d["feature"]), StandardScaler.from_dict(d["target"]))


def encode_features(residual, lat, lon, scaler: ScalerState | None):
    """(..., N_b) residuals and (...) coordinates in degrees -> (..., 5) node features."""
    if scaler is None:
        raise ConfigError("feature scaler has not been fitted")
    residual = np.asarray(residual, dtype=float)
    la, lo = np.radians(lat), np.radians(lon)
    x = scaler.feature.apply(residual.sum(axis=-1))
    return np.stack([x, np.sin(la), np.cos(la), np.sin(lo), np.cos(lo)], axis=-1)


# ---------------------------------------------------------------------------
# building blocks (functional, so invariants can be probed directly)
# ---------------------------------------------------------------------------

@dataclass
class EdgeIndex:
    """Directed edges j -> i over ``n`` nodes; etype 0 intra-plane, 1 inter-plane."""

    src: np.ndarray
    dst: np.ndarray
    etype: np.ndarray
    n: int

    @classmethod
    def from_graph(cls, g):
        return cls(g.src, g.dst, g.etype, g.n_nodes)

    @classmethod
    def batch(cls, parts):
        """Block-diagonal union of several edge sets (node ids offset per part)."""
        off, src, dst, et = 0, [], [], []
        for p in parts:
            src.append(p.src + off)
            dst.append(p.dst + off)
            et.append(p.etype)
            off += p.n
        return cls(np.concatenate(src), np.concatenate(dst), np.concatenate(et), off)


def dual_stream_attention(h, edges: EdgeIndex, W, a, slope=0.2):
    """Per-type attention messages.

    e_ij = LeakyReLU(a^T [W h_i || W h_j]) is normalised separately over
    intra- and inter-plane neighbours; m^phi_i = ELU(sum_j alpha^phi_ij W h_j).
    Returns (m_a, m_e, alpha) with alpha aligned to the edge arrays.
    """
    n = edges.n
    wh = T.matmul(h, W)
    s_i = T.reduce_sum(T.mul(wh, a[0]), axis=1)
    s_j = T.reduce_sum(T.mul(wh, a[1]), axis=1)
    if len(edges.src) == 0:
        zero = T.mul(wh, 0.0)
        return T.elu(zero), T.elu(zero), np.zeros(0)
    logits = T.leaky_relu(T.add(T.gather_rows(s_i, edges.dst), T.gather_rows(s_j, edges.src)), slope)
    seg = edges.dst + n * edges.etype
    alpha = T.segment_softmax(logits, seg, 2 * n)
    msg = T.mul(T.gather_rows(wh, edges.src), T.reshape(alpha, (-1, 1)))
    agg = T.segment_sum(msg, seg, 2 * n)
    return T.elu(agg[:n]), T.elu(agg[n:]), alpha.data


def gated_fusion(m_a, m_e, Wg, bg):
    """u = g * m_a + (1 - g) * m_e with g = sigmoid(Wg [m_a || m_e] + bg); returns (u, g)."""
    g = T.sigmoid(T.add(T.matmul(T.concat([m_a, m_e], axis=1), Wg), bg))
    u = T.add(T.mul(g, m_a), T.mul(T.sub(1.0, g), m_e))
    return u, g


def gru_step(x, u, h_prev, p):
    """One GRU update with input [x || u]; ``p`` maps names W_z, U_z, b_z, W_r, ..., b_h to tensors."""
    xu = T.concat([x, u], axis=1)
    z = T.sigmoid(T.matmul(xu, p["W_z"]) + T.matmul(h_prev, p["U_z"]) + p["b_z"])
    r = T.sigmoid(T.matmul(xu, p["W_r"]) + T.matmul(h_prev, p["U_r"]) + p["b_r"])
    h_tilde = T.tanh(T.matmul(xu, p["W_h"]) + T.matmul(T.mul(r, h_prev), p["U_h"]) + p["b_h"])
    return T.add(T.mul(T.sub(1.0, z), h_prev), T.mul(z, h_tilde))


class StLayer(Module):
    def __init__(self, in_dim, d_att, d_h, rng):
        self.W = fan_in_uniform(rng, (in_dim, d_att), in_dim)
        self.a = fan_in_uniform(rng, (2, d_att), 2 * d_att)
        self.W_g = fan_in_uniform(rng, (2 * d_att, d_att), 2 * d_att)
        self.b_g = zeros((d_att,))
        gin = in_dim + d_att
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", fan_in_uniform(rng, (gin, d_h), gin))
            setattr(self, f"U_{gate}", fan_in_uniform(rng, (d_h, d_h), d_h))
            setattr(self, f"b_{gate}", zeros((d_h,)))
        self.last_alpha = None
        self.last_gate = None

    def forward(self, x, edges, h_prev, slope):
        m_a, m_e, alpha = dual_stream_attention(x, edges, self.W, self.a, slope)
        u, g = gated_fusion(m_a, m_e, self.W_g, self.b_g)
        self.last_alpha, self.last_gate = alpha, g.data
        return gru_step(x, u, h_prev, vars(self))


class StGnn(Module):
    def __init__(self, cfg: StGnnConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dims = [cfg.input_dim] + [cfg.hidden_dim] * cfg.layers
        self.layers = [StLayer(dims[i], cfg.attn_dim, cfg.hidden_dim, rng) for i in range(cfg.layers)]
        self.head1 = Dense(cfg.hidden_dim, cfg.hidden_dim, rng)
        self.drop = Dropout(cfg.dropout, np.random.default_rng(cfg.seed + 1))
        self.head2 = Dense(cfg.hidden_dim, cfg.n_beams, rng)
        self.hidden_trace = None

    def forward(self, feats, edge_seq, keep_trace=False):
        """feats (L, N, 5); edge_seq: L EdgeIndex objects over N nodes -> scaled prediction (N, N_b)."""
        feats = np.asarray(feats, dtype=float)
        L, n, _ = feats.shape
        if len(edge_seq) != L:
            raise ShapeError("one graph per window slot is required")
        hs = [DiffTensor(np.zeros((n, self.cfg.hidden_dim))) for _ in self.layers]
        trace = [] if keep_trace else None
        for t in range(L):
            inp = DiffTensor(feats[t])
            for li, layer in enumerate(self.layers):
                hs[li] = layer(inp, edge_seq[t], hs[li], self.cfg.leaky_slope)
                inp = hs[li]
            if keep_trace:
                trace.append([h.data.copy() for h in hs])
        self.hidden_trace = trace
        return self.head2(self.drop(T.relu(self.head1(hs[-1]))))


def predict_window(model: StGnn, residuals, lat, lon, graphs, scaler: ScalerState):
    """Next-slot residual (N_s, N_b) in Mbps from an L-slot window (dropout off)."""
    residuals = np.asarray(residuals, dtype=float)
    L = model.cfg.lookback
    if residuals.shape[0] < L or len(graphs) < L:
        raise ShapeError(f"window has {residuals.shape[0]} slots, model needs {L}")
    feats = encode_features(residuals[-L:], np.asarray(lat)[-L:], np.asarray(lon)[-L:], scaler)
    edges = [g if isinstance(g, EdgeIndex) else EdgeIndex.from_graph(g) for g in graphs[-L:]]
    was = model.training
    model.eval()
    with T.no_grad():
        out = model(feats, edges).data
    model.train(was)
    return scaler.target.invert(out)

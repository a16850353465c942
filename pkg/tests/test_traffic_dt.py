import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntn_twin import orbital, scenarios
from ntn_twin.channel_sim import derive_seed
from ntn_twin.errors import ConfigError, InvariantViolation, ShapeError
from ntn_twin.geo_data import RasterGrid, raster_from_function, sample_nearest
from ntn_twin.tensor_nn import Parameter, check_gradients, read_checkpoint
from ntn_twin.tensor_nn import tensor as T
from ntn_twin.tensor_nn.tensor import DiffTensor
from ntn_twin.traffic_dt.baseline import (R_MEAN, BeamLayout, beam_directions, cap_area, coverage_mask, decompose,
                                          footprint_central_angle, footprint_integral, hanning_smooth,
                                          physics_baseline, quantize, recompose, synthesize_residual, unit_vectors)
from ntn_twin.traffic_dt.graph import ConstellationGraph, build_graph, read_graph_csv, write_graph_csv
from ntn_twin.traffic_dt.model import (EdgeIndex, ScalerState, StandardScaler, StGnn, StGnnConfig,
                                       dual_stream_attention, encode_features, gated_fusion, gru_step,
                                       predict_window)
from ntn_twin.traffic_dt.training import (TrafficScenario, baselines_and_metrics, generate_traffic_dataset,
                                          load_traffic_dataset, persistence_closed_form, regression_metrics,
                                          train_traffic_model)


def _sat_above(lat, lon, alt=550.0):
    pos = (R_MEAN + alt) * unit_vectors(lat, lon)
    east = np.array([-math.sin(math.radians(lon)), math.cos(math.radians(lon)), 0.0])
    return pos, 7.6 * east


# ---------------------------------------------------------------------------
# footprint quadrature
# ---------------------------------------------------------------------------

def test_uniform_density_matches_cap_area():
    pop = raster_from_function(lambda la, lo: 120.0, (0.0, 20.0), (90.0, 110.0), 0.1)
    layout = BeamLayout(half_width=10.0, min_elevation=25.0)
    pos, vel = _sat_above(10.0, 100.0)
    ang = footprint_central_angle(550.0, 10.0)
    want = 2e-3 * 120.0 * cap_area(ang)
    got = physics_baseline(pos, vel, pop, layout, 2e-3)[0, 0]
    assert got == pytest.approx(want, rel=0.01)


def test_footprint_angle_geometry():
    # the beam edge ray meets the sphere at the returned central angle (law of sines)
    alt, eta = 550.0, 10.0
    lam = footprint_central_angle(alt, eta)
    r = R_MEAN + alt
    slant = math.sqrt(r * r + R_MEAN**2 - 2 * r * R_MEAN * math.cos(lam))
    assert math.degrees(math.asin(R_MEAN * math.sin(lam) / slant)) == pytest.approx(eta, abs=1e-9)
    assert footprint_central_angle(alt, 89.0) == pytest.approx(math.acos(R_MEAN / r))


def test_zero_population_gives_zero():
    pop = raster_from_function(lambda la, lo: 0.0, (0.0, 20.0), (90.0, 110.0), 0.5)
    pos, vel = _sat_above(10.0, 100.0)
    assert np.all(physics_baseline(pos, vel, pop, BeamLayout(), 1e-3) == 0.0)
    with pytest.raises(ValueError):
        physics_baseline(pos, vel, pop, BeamLayout(), 0.0)


def _cap_samples(center, ang, n, rng):
    c = center / np.linalg.norm(center)
    e1 = np.cross(c, [0.0, 0.0, 1.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    cos_t = rng.uniform(math.cos(ang), 1.0, n)
    sin_t = np.sqrt(1 - cos_t**2)
    psi = rng.uniform(0, 2 * math.pi, n)
    return cos_t[:, None] * c + sin_t[:, None] * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)


@pytest.mark.parametrize("offset", [(0.0, 0.0), (6.0, -4.0)])
def test_random_field_quadrature_vs_monte_carlo(offset):
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 1000, size=(100, 100))
    pop = RasterGrid(100, 100, 95.0, 5.0, 0.1, -9999.0, vals)
    layout = BeamLayout(offsets=(offset,), half_width=10.0, min_elevation=25.0)
    pos, vel = _sat_above(10.0, 100.0)
    d = beam_directions(pos, vel, layout)[0]
    ang = footprint_central_angle(550.0, math.hypot(*offset) + 10.0)
    quad = footprint_integral(pos, d, ang, pop, layout, subsample=4)
    # sample a cap around the boresight ground point that contains the whole footprint
    b = float(pos @ d)
    gp = pos + (-b - math.sqrt(b * b - pos @ pos + R_MEAN**2)) * d
    big = 1.5 * ang
    pts = _cap_samples(gp, big, 1_000_000, rng)
    lat = np.degrees(np.arcsin(pts[:, 2]))
    lon = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
    inside = coverage_mask(pos, d, 10.0, 25.0, pts)
    mc = cap_area(big) * np.mean(sample_nearest(pop, lat, lon) * inside)
    assert quad == pytest.approx(mc, rel=0.01)


def test_beam_directions_unit_and_nadir():
    pos, vel = _sat_above(20.0, 30.0)
    layout = BeamLayout(offsets=((0.0, 0.0), (5.0, 0.0), (0.0, 5.0)))
    d = beam_directions(pos, vel, layout)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_allclose(d[0], -pos / np.linalg.norm(pos), atol=1e-15)
    for k in (1, 2):
        assert math.degrees(math.acos(d[0] @ d[k])) == pytest.approx(5.0, abs=1e-9)
    # orthogonal tilts: d1 . d2 = 1 / (1 + tan^2 5) = cos^2 5
    assert d[1] @ d[2] == pytest.approx(math.cos(math.radians(5)) ** 2, abs=1e-14)


def test_hanning_smooth_properties():
    x = np.full((50, 2, 1), 3.0)
    np.testing.assert_allclose(hanning_smooth(x, 11), 3.0)
    rng = np.random.default_rng(1)
    y = rng.normal(size=(200, 3))
    s = hanning_smooth(y, 11)
    assert s.shape == y.shape and s.std() < y.std()
    np.testing.assert_array_equal(hanning_smooth(y, 1), y)


# ---------------------------------------------------------------------------
# residuals and decomposition
# ---------------------------------------------------------------------------

def _lag1(x):
    x = x - x.mean()
    return float((x[1:] * x[:-1]).mean() / x.var())


def test_white_residual_when_phi_zero():
    r = synthesize_residual((100_000, 1, 1), 0.0, 2.0, 3)[:, 0, 0]
    assert abs(_lag1(r)) < 0.02


def test_stationary_variance_and_autocorrelation():
    r = synthesize_residual((100_000, 1, 1), 0.9, 5.0, 4)[:, 0, 0]
    assert r.var() == pytest.approx(25.0 / (1 - 0.81), rel=0.03)
    assert _lag1(r) == pytest.approx(0.9, abs=0.01)


def test_plane_factor_correlates_same_plane_only():
    r = synthesize_residual((50_000, 4, 1), 0.9, 5.0, 5, plane_ids=[0, 0, 1, 1], plane_weight=0.3)[..., 0]
    c = np.corrcoef(r.T)
    assert c[0, 1] == pytest.approx(0.3, abs=0.05) and c[2, 3] == pytest.approx(0.3, abs=0.05)
    assert abs(c[0, 2]) < 0.06
    # the mixture keeps the AR-1 law of each series
    assert r[:, 0].var() == pytest.approx(25.0 / 0.19, rel=0.06)
    with pytest.raises(ValueError):
        synthesize_residual((10, 2, 1), 0.9, 1.0, 0, plane_weight=0.5)
    with pytest.raises(ValueError):
        synthesize_residual((10, 2, 1), 1.0, 1.0, 0)


def test_residual_seeded():
    a = synthesize_residual((100, 3, 2), 0.5, 1.0, 9)
    assert np.array_equal(a, synthesize_residual((100, 3, 2), 0.5, 1.0, 9))
    assert not np.array_equal(a, synthesize_residual((100, 3, 2), 0.5, 1.0, 10))


def test_bursts_scale_emitted_values():
    base = synthesize_residual((1000, 2, 1), 0.5, 1.0, 11)
    burst = synthesize_residual((1000, 2, 1), 0.5, 1.0, 11, burst_rate=0.1, burst_scale=4.0)
    ratio = burst[base != 0] / base[base != 0]
    assert set(np.round(np.unique(ratio), 12)) <= {1.0, 4.0}
    assert 0.05 < np.mean(ratio == 4.0) < 0.15


def test_decompose_trivial_and_shape():
    x = np.random.default_rng(12).normal(size=(4, 3, 2))
    assert np.all(decompose(x, x) == 0)
    with pytest.raises(ShapeError):
        decompose(x, x[:, :2])
    with pytest.raises(ShapeError):
        recompose(x, x[:1])


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e5))
def test_decompose_recompose_exact(seed, scale):
    rng = np.random.default_rng(seed)
    base = quantize(rng.uniform(0, scale, size=(3, 4, 2)))
    total = quantize(base + rng.normal(size=(3, 4, 2)) * scale / 10)
    assert np.array_equal(recompose(decompose(total, base), base), total)


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def _states(tles, t=0.0):
    recs = [orbital.propagate(x, t) for x in tles]
    return np.array([r.position for r in recs]), np.array([r.velocity for r in recs])


def test_single_ring_plane_mode():
    tles = scenarios.toy_constellation(n_planes=1, per_plane=10)
    pos, vel = _states(tles)
    g = build_graph(pos, vel, mode="plane")
    assert len(g.edge_set("e")) == 0
    for i in range(10):
        assert len(g.neighbors(i, "a")) == 2 and g.neighbors(i, "e") == []


def test_two_plane_rings_and_inter_links():
    tles = scenarios.toy_constellation(n_planes=2, per_plane=10)
    pos, vel = _states(tles, 1234.0)
    g = build_graph(pos, vel, [t.sat_id for t in tles], mode="plane")
    assert sorted(set(g.plane.tolist())) == [0, 1]
    assert np.array_equal(g.plane, np.repeat([0, 1], 10))
    for i in range(20):
        assert len(g.neighbors(i, "a")) == 2
        assert all(g.plane[j] != g.plane[i] for j in g.neighbors(i, "e"))
        assert len(g.neighbors(i, "e")) >= 1


def test_knn_contains_each_nodes_k_nearest():
    tles = scenarios.toy_constellation(n_planes=2, per_plane=10)
    pos, vel = _states(tles, 500.0)
    g = build_graph(pos, vel, mode="knn", k=4)
    lat, lon, _ = orbital.ecef_to_geodetic(pos)
    u = unit_vectors(lat, lon)
    for i in range(20):
        d = np.linalg.norm(u - u[i], axis=1)
        d[i] = np.inf
        nearest = set(np.argsort(d, kind="stable")[:4].tolist())
        nbrs = set(g.neighbors(i, "a")) | set(g.neighbors(i, "e"))
        assert nearest <= nbrs
    # symmetric
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    assert all((j, i) in pairs for i, j in pairs)


def test_edge_types_disjoint_over_random_slots():
    tles = scenarios.toy_constellation(n_planes=3, per_plane=8)
    rng = np.random.default_rng(13)
    plane = None
    for t in rng.uniform(0, 86400, 100):
        pos, vel = _states(tles, t)
        for mode in ("plane", "knn"):
            g = build_graph(pos, vel, mode=mode, plane=plane)
            plane = g.plane
            assert not (g.edge_set("a") & g.edge_set("e"))
            assert len(g.edge_set("a") | g.edge_set("e")) == len(g.src)


def test_graph_invariants_and_csv(tmp_path):
    with pytest.raises(InvariantViolation):
        ConstellationGraph([1, 2], [0, 0], [0], [0], [0])
    with pytest.raises(ValueError):
        build_graph(np.zeros((1, 3)) + 7000, np.ones((1, 3)))
    tles = scenarios.toy_constellation(n_planes=2, per_plane=5)
    pos, vel = _states(tles)
    ids = [t.sat_id for t in tles]
    g = build_graph(pos, vel, ids, mode="knn")
    write_graph_csv(tmp_path / "g.csv", g)
    back = read_graph_csv(tmp_path / "g.csv", ids, g.plane)
    assert back.edge_set("a") == g.edge_set("a") and back.edge_set("e") == g.edge_set("e")


# ---------------------------------------------------------------------------
# model blocks
# ---------------------------------------------------------------------------

def test_encode_features():
    sc = ScalerState(StandardScaler(0.0, 1.0), StandardScaler(0.0, 1.0))
    f = encode_features(np.array([2.5]), 0.0, 0.0, sc)
    assert f.shape == (5,)
    np.testing.assert_allclose(f, [2.5, 0.0, 1.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(encode_features(np.zeros(1), 10.0, 180.0, sc),
                               encode_features(np.zeros(1), 10.0, -180.0, sc), atol=1e-15)
    with pytest.raises(ConfigError):
        encode_features(np.zeros(1), 0.0, 0.0, None)


def _edges(pairs, n):
    src, dst, et = zip(*pairs)
    return EdgeIndex(np.array(src), np.array(dst), np.array(et), n)


def test_attention_uniform_and_singleton():
    h = np.tile([[0.3, -1.2]], (4, 1))
    rng = np.random.default_rng(14)
    W, a = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    # node 0: three identical intra neighbours; node 1: one inter neighbour
    _, _, alpha = dual_stream_attention(DiffTensor(h), _edges([(1, 0, 0), (2, 0, 0), (3, 0, 0), (0, 1, 1)], 4),
                                        DiffTensor(W), DiffTensor(a))
    np.testing.assert_allclose(alpha[:3], 1 / 3, atol=1e-15)
    assert alpha[3] == 1.0


def test_attention_hand_case():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    W = np.array([[1.0, 0.5], [-0.5, 2.0]])
    a = np.array([[0.3, -0.7], [1.1, 0.4]])
    edges = _edges([(1, 0, 0), (2, 0, 0), (0, 2, 1), (1, 2, 1), (0, 1, 0)], 3)
    m_a, m_e, alpha = dual_stream_attention(DiffTensor(h), edges, DiffTensor(W), DiffTensor(a), 0.2)
    wh = h @ W

    def lrelu(x):
        return x if x > 0 else 0.2 * x

    def e(i, j):
        return lrelu(a[0] @ wh[i] + a[1] @ wh[j])

    z0 = math.exp(e(0, 1)) + math.exp(e(0, 2))
    z2 = math.exp(e(2, 0)) + math.exp(e(2, 1))
    want = [math.exp(e(0, 1)) / z0, math.exp(e(0, 2)) / z0, math.exp(e(2, 0)) / z2, math.exp(e(2, 1)) / z2, 1.0]
    np.testing.assert_allclose(alpha, want, rtol=0, atol=1e-12)

    def elu(x):
        return np.where(x > 0, x, np.expm1(x))
    np.testing.assert_allclose(m_a.data[0], elu(want[0] * wh[1] + want[1] * wh[2]), atol=1e-12)
    np.testing.assert_allclose(m_e.data[2], elu(want[2] * wh[0] + want[3] * wh[1]), atol=1e-12)
    # nodes without neighbours of a type receive ELU(0) = 0
    np.testing.assert_array_equal(m_e.data[0], 0.0)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    pairs = [(j, i, int(rng.integers(2))) for i in range(n) for j in range(n) if i != j and rng.random() < 0.5]
    if not pairs:
        pairs = [(0, 1, 0)]
    edges = _edges(pairs, n)
    _, _, alpha = dual_stream_attention(DiffTensor(rng.normal(size=(n, 3)) * 3), edges,
                                        DiffTensor(rng.normal(size=(3, 4))), DiffTensor(rng.normal(size=(2, 4))))
    seg = edges.dst + n * edges.etype
    sums = np.bincount(seg, weights=alpha, minlength=2 * n)
    present = np.bincount(seg, minlength=2 * n) > 0
    np.testing.assert_allclose(sums[present], 1.0, rtol=0, atol=1e-10)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_gate_is_convex_combination(seed, bias):
    rng = np.random.default_rng(seed)
    m_a, m_e = rng.normal(size=(3, 4)) * 5, rng.normal(size=(3, 4)) * 5
    u, g = gated_fusion(DiffTensor(m_a), DiffTensor(m_e), DiffTensor(rng.normal(size=(8, 4))),
                        DiffTensor(np.full(4, bias)))
    assert np.all((g.data >= 0) & (g.data <= 1))
    lo, hi = np.minimum(m_a, m_e), np.maximum(m_a, m_e)
    assert np.all((u.data >= lo - 1e-12) & (u.data <= hi + 1e-12))


def test_gate_saturation():
    rng = np.random.default_rng(15)
    m_a, m_e = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    u, _ = gated_fusion(DiffTensor(m_a), DiffTensor(m_e), DiffTensor(np.zeros((8, 4))), DiffTensor(np.full(4, 40.0)))
    np.testing.assert_allclose(u.data, m_a, atol=1e-9)


def _gru_params(rng, din, dh, bz=0.0):
    p = {}
    for gate in "zrh":
        p[f"W_{gate}"] = DiffTensor(rng.normal(size=(din, dh)))
        p[f"U_{gate}"] = DiffTensor(rng.normal(size=(dh, dh)))
        p[f"b_{gate}"] = DiffTensor(np.full(dh, bz if gate == "z" else 0.0))
    return p


def test_gru_endpoints():
    rng = np.random.default_rng(16)
    x, u, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), rng.uniform(-1, 1, (2, 4))
    p = _gru_params(rng, 5, 4, bz=-60.0)
    np.testing.assert_allclose(gru_step(DiffTensor(x), DiffTensor(u), DiffTensor(h), p).data, h, atol=1e-12)
    p["b_z"] = DiffTensor(np.full(4, 60.0))
    xu = np.concatenate([x, u], axis=1)
    r = 1 / (1 + np.exp(-(xu @ p["W_r"].data + h @ p["U_r"].data)))
    h_tilde = np.tanh(xu @ p["W_h"].data + (r * h) @ p["U_h"].data)
    np.testing.assert_allclose(gru_step(DiffTensor(x), DiffTensor(u), DiffTensor(h), p).data, h_tilde, atol=1e-12)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gru_state_bounded(seed):
    rng = np.random.default_rng(seed)
    h = DiffTensor(rng.uniform(-1, 1, (3, 4)))
    p = _gru_params(rng, 6, 4, bz=float(rng.normal()))
    for _ in range(5):
        h = gru_step(DiffTensor(rng.normal(size=(3, 2)) * 10), DiffTensor(rng.normal(size=(3, 4)) * 10), h, p)
        assert np.all(np.abs(h.data) <= 1.0)


def _tiny_cfg(**kw):
    base = dict(hidden_dim=8, attn_dim=8, layers=2, lookback=3, dropout=0.0, seed=1)
    base.update(kw)
    return StGnnConfig(**base)


def _ring_edges(n):
    pairs = [(i, (i + 1) % n, 0) for i in range(n)] + [((i + 1) % n, i, 0) for i in range(n)]
    pairs += [(0, 3, 1), (3, 0, 1)]
    return _edges(pairs, n)


def test_stgnn_gradient_check():
    rng = np.random.default_rng(17)
    model = StGnn(_tiny_cfg())
    feats = rng.normal(size=(3, 6, 5))
    edges = [_ring_edges(6)] * 3
    y = rng.normal(size=(6, 1))
    assert check_gradients(lambda: T.mse(model(feats, edges), y), model.parameters(), n_samples=10, rng=18) < 1e-4


def test_predict_window_shape_and_determinism():
    model = StGnn(_tiny_cfg(dropout=0.5, n_beams=2))
    sc = ScalerState(StandardScaler(0.0, 1.0), StandardScaler(1.0, 2.0))
    res = np.zeros((5, 6, 2))
    lat = np.zeros((5, 6))
    lon = np.tile(np.linspace(-150, 150, 6), (5, 1))
    edges = [_ring_edges(6)] * 5
    a = predict_window(model, res, lat, lon, edges, sc)
    assert a.shape == (6, 2) and model.training
    assert np.array_equal(a, predict_window(model, res, lat, lon, edges, sc))
    with pytest.raises(ShapeError):
        predict_window(model, res[:2], lat[:2], lon[:2], edges[:2], sc)


def test_stgnn_hidden_states_bounded():
    model = StGnn(_tiny_cfg())
    feats = np.random.default_rng(19).normal(size=(3, 6, 5)) * 20
    model(feats, [_ring_edges(6)] * 3, keep_trace=True)
    assert all(np.all(np.abs(h) <= 1.0) for step in model.hidden_trace for h in step)


def test_stgnn_config_validation():
    with pytest.raises(ConfigError):
        StGnnConfig(input_dim=4)
    with pytest.raises(ConfigError):
        StGnnConfig(graph_mode="ring")
    assert StGnnConfig(hidden_dim=16).attn_dim == 16


# ---------------------------------------------------------------------------
# dataset, training, metrics
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_traffic(tmp_path_factory):
    d = tmp_path_factory.mktemp("traffic")
    pop = scenarios.toy_population(cell_size=2.0)
    sc = TrafficScenario(n_slots=40, rho=1e-3, subsample=1, hanning_window=5, seed=3)
    m = generate_traffic_dataset(scenarios.toy_constellation(2, 3), pop, sc, d)
    return d, m


def test_dataset_files_and_round_trip(tiny_traffic):
    d, m = tiny_traffic
    assert m["n_sats"] == 6 and m["n_slots"] == 40
    assert len(list((d / "graphs").glob("slot_*.csv"))) == 40
    assert m["split_boundaries"] == {"train": [0, 31], "test": [32, 39]}
    data = load_traffic_dataset(d)
    assert data.total.shape == (40, 6, 1) and data.n_train == 32
    assert np.array_equal(decompose(data.total, data.baseline), data.residual)
    assert np.array_equal(recompose(data.residual, data.baseline), data.total)
    assert np.all(data.total >= 0)


def test_dataset_generation_deterministic(tiny_traffic, tmp_path):
    d, _ = tiny_traffic
    pop = scenarios.toy_population(cell_size=2.0)
    sc = TrafficScenario(n_slots=40, rho=1e-3, subsample=1, hanning_window=5, seed=3)
    generate_traffic_dataset(scenarios.toy_constellation(2, 3), pop, sc, tmp_path)
    for name in ("manifest.json", "traffic.csv", "nodes.csv", "graphs/slot_000017.csv"):
        assert (tmp_path / name).read_bytes() == (d / name).read_bytes()


def test_generator_residual_recovered_exactly(tmp_path):
    # without clipping, decomposition returns the injected (quantized) AR-1 residual
    pop = scenarios.toy_population(cell_size=2.0)
    sc = TrafficScenario(n_slots=12, rho=1e-3, subsample=1, hanning_window=1, clip_nonnegative=False,
                         plane_weight=0.0, seed=4)
    generate_traffic_dataset(scenarios.toy_constellation(2, 3), pop, sc, tmp_path)
    data = load_traffic_dataset(tmp_path)
    injected = synthesize_residual((12, 6, 1), 0.9, 5.0, derive_seed(4, "residual"), data.plane, 0.0)
    np.testing.assert_array_equal(data.residual, quantize(data.baseline + injected) - data.baseline)
    assert np.max(np.abs(data.residual - injected)) <= 2.0**-20


def test_zero_lr_and_smoke_training(tiny_traffic, tmp_path):
    d, _ = tiny_traffic
    data = load_traffic_dataset(d)
    # 29 training windows at batch 3 -> 10 steps
    cfg = _tiny_cfg(lr=0.0, epochs=1, batch=3, t_max=1)
    model = train_traffic_model(data, cfg, tmp_path / "a")
    fresh = StGnn(cfg)
    _, saved = read_checkpoint(tmp_path / "a/traffic_model.ckpt")
    assert all(np.array_equal(saved[n], p.data) for n, p in fresh.named_parameters())
    cfg = _tiny_cfg(lr=1e-2, epochs=1, batch=3, t_max=1)
    model = train_traffic_model(data, cfg, tmp_path / "b")
    rows = (tmp_path / "b/traffic_loss.csv").read_text().splitlines()[1:]
    assert len(rows) == 10 and all(math.isfinite(float(r.split(",")[2])) for r in rows)
    m = baselines_and_metrics(model, data, cfg.lookback)
    assert set(m) == {"stgnn", "persistence", "ar1_optimum"}
    assert math.isfinite(m["stgnn"]["mse"])


def test_regression_metrics_cases():
    y = np.random.default_rng(20).normal(size=(50, 3))
    assert regression_metrics(y, y) == {"mse": 0.0, "r2": 1.0}
    assert regression_metrics(y, np.full_like(y, y.mean()))["r2"] == pytest.approx(0.0, abs=1e-12)


def test_persistence_matches_closed_form():
    assert persistence_closed_form(0.9, 1.0) == pytest.approx(1.0526, abs=1e-4)
    r = synthesize_residual((100_000, 1, 1), 0.9, 5.0, 21)
    mse = regression_metrics(r[1:], r[:-1])["mse"]
    assert mse == pytest.approx(persistence_closed_form(0.9, 5.0), rel=0.03)
    opt = regression_metrics(r[1:], 0.9 * r[:-1])["mse"]
    assert opt == pytest.approx(25.0, rel=0.03)

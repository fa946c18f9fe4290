import numpy as np
import pytest

from subgns import dataio, gns
from subgns.nn import Mlp



def small_model(seed=0, d=4, stats=None, **kw):
    cfg = gns.GnsConfig(d=d, latent=8, hidden=8, **kw)
    return gns.init_model(cfg, seed, stats)


def randomize_biases(model, rng):
    p = model.params()
    return model.with_params({k: (v + rng.normal(scale=0.1, size=v.shape) if k.endswith("/b")
                                  else v) for k, v in p.items()})


def literal(model, graph):
    return gns.decode(gns.process(gns.encode(graph, model), model), model)


def test_complete_edges():
    for n in (1, 2, 5):
        s, r = gns.complete_edges(n)
        assert len(s) == n * (n - 1)
        assert np.all(s != r)
        assert len(set(zip(s.tolist(), r.tolist()))) == n * (n - 1)
        assert np.all(np.diff(r) >= 0)  # grouped by receiver


def test_static_window_has_zero_velocities():
    cfg = gns.GnsConfig(d=4)
    hist = np.repeat(np.random.default_rng(0).normal(size=(1, 3, 3)), 4, axis=0)
    g = gns.build_graph(hist, dataio.node_types(2, 1), cfg)
    assert np.all(g.node_features[:, 2:] == 0)
    np.testing.assert_array_equal(g.node_features[:, :2], [[1, 0], [1, 0], [0, 1]])


def test_two_node_edges_antisymmetric():
    cfg = gns.GnsConfig(d=2, edge_norm=True)
    hist = np.array([[[0.0, 0, 0], [1, 2, 2]], [[0.0, 0, 0], [1, 2, 2]]])
    g = gns.build_graph(hist, dataio.node_types(2, 0), cfg)
    assert g.n_edges == 2
    np.testing.assert_array_equal(g.edge_features[0, :3], -g.edge_features[1, :3])
    np.testing.assert_array_equal(g.edge_features[:, 3], [3.0, 3.0])


def test_translation_gives_identical_features():
    rng = np.random.default_rng(1)
    cfg = gns.GnsConfig(d=4)
    hist = rng.normal(size=(4, 5, 3))
    a = gns.build_graph(hist, dataio.node_types(3, 2), cfg)
    b = gns.build_graph(hist + np.array([3.0, -7.0, 0.5]), dataio.node_types(3, 2), cfg)
    np.testing.assert_allclose(a.node_features, b.node_features, atol=1e-12)
    np.testing.assert_allclose(a.edge_features, b.edge_features, atol=1e-12)


def test_d_below_two_rejected():
    with pytest.raises(ValueError):
        gns.GnsConfig(d=1)
    with pytest.raises(ValueError):
        gns.GnsConfig(message_steps=2)


def test_mlp_sizes_follow_architecture():
    sizes = gns.GnsConfig().mlp_sizes()
    assert sizes["decoder"] == [128, 128, 128, 6]
    for name in ("enc_node", "enc_edge", "proc_edge", "proc_node"):
        assert sizes[name][1:] == [128, 128, 128]
    assert sizes["proc_edge"][0] == 3 * 128 and sizes["proc_node"][0] == 2 * 128


def hand_process_fixture():
    h_v = np.array([[1.0, 2.0], [3.0, 5.0]])
    h_e = np.array([[0.5, -1.0], [2.0, 0.25]])  # edge 0: 1 -> 0, edge 1: 0 -> 1
    I = np.eye(2)
    mlps = {
        "proc_edge": Mlp([np.vstack([I, 2 * I, 3 * I])], [np.array([0.1, 0.2])]),
        "proc_node": Mlp([np.vstack([I, 0.5 * I])], [np.array([-1.0, 0.0])]),
    }
    s, r = gns.complete_edges(2)
    g0 = gns.LatentGraph(h_v, h_e, s, r, np.zeros(2, dtype=np.int64), np.zeros(2, dtype=np.int64))
    model = gns.GnsModel(gns.GnsConfig(latent=2), mlps)
    return g0, model


def test_interaction_network_hand_trace():
    g0, model = hand_process_fixture()
    g1 = gns.process(g0, model)
    # edge k: h_e + 2 h_recv + 3 h_send + (0.1, 0.2)
    #   edge 0 (1 -> 0): (0.5 + 2 + 9 + 0.1, -1 + 4 + 15 + 0.2) = (11.6, 18.2)
    #   edge 1 (0 -> 1): (2 + 6 + 3 + 0.1, 0.25 + 10 + 6 + 0.2) = (11.1, 16.45)
    np.testing.assert_allclose(g1.h_e, [[11.6, 18.2], [11.1, 16.45]], atol=1e-12)
    # node i: h_v + 0.5 * (sum of incoming edges) + (-1, 0)
    np.testing.assert_allclose(g1.h_v, [[5.8, 11.1], [7.55, 13.225]], atol=1e-12)


def test_zero_processor_gives_bias_constant():
    rng = np.random.default_rng(2)
    model = small_model()
    zero = {k: (np.zeros_like(v) if k.startswith("proc_node/") and "/W" in k else v)
            for k, v in model.params().items()}
    zero["proc_node/2/b"] = rng.normal(size=zero["proc_node/2/b"].shape)
    model = model.with_params(zero)
    g = gns.build_graph(rng.normal(size=(4, 3, 3)), dataio.node_types(3, 0), model.config)
    hv1 = gns.process(gns.encode(g, model), model).h_v
    np.testing.assert_allclose(hv1, np.tile(zero["proc_node/2/b"], (3, 1)), atol=0)


def test_process_twice_differs():
    rng = np.random.default_rng(3)
    model = randomize_biases(small_model(), rng)
    g = gns.build_graph(rng.normal(size=(4, 4, 3)), dataio.node_types(3, 1), model.config)
    once = gns.process(gns.encode(g, model), model)
    twice = gns.process(once, model)
    assert not np.allclose(once.h_v, twice.h_v)


def test_zero_decoder_and_width():
    model = small_model()
    p = model.params()
    p = {k: (np.zeros_like(v) if k.startswith("decoder/") else v) for k, v in p.items()}
    model = model.with_params(p)
    g = gns.build_graph(np.random.default_rng(4).normal(size=(4, 3, 3)),
                        dataio.node_types(2, 1), model.config)
    out = literal(model, g)
    assert np.all(out.acceleration == 0) and np.all(out.total_force == 0)
    bad = model.with_params({**p, "decoder/2/W": np.zeros((8, 5)), "decoder/2/b": np.zeros(5)})
    with pytest.raises(ValueError):
        literal(bad, g)


def test_total_force_is_sum_of_contributions():
    types = np.zeros(3, dtype=np.int64)
    out = gns._split_output(np.hstack([np.zeros((3, 3)), np.eye(3)]), types,
                            np.zeros(3, dtype=np.int64), 1, gns.GnsConfig())
    np.testing.assert_array_equal(out.total_force, [[1.0, 1.0, 1.0]])


def test_rigid_force_mask():
    types = dataio.node_types(2, 1)
    out = np.hstack([np.zeros((3, 3)), np.ones((3, 3))])
    on = gns._split_output(out, types, np.zeros(3, dtype=np.int64), 1,
                           gns.GnsConfig(mask_rigid_force=True))
    off = gns._split_output(out, types, np.zeros(3, dtype=np.int64), 1, gns.GnsConfig())
    np.testing.assert_array_equal(on.total_force, [[2, 2, 2]])
    np.testing.assert_array_equal(off.total_force, [[3, 3, 3]])


def test_fused_paths_match_literal():
    rng = np.random.default_rng(5)
    model = randomize_biases(small_model(), rng)
    g = gns.build_graph(rng.normal(size=(4, 6, 3)), dataio.node_types(4, 2), model.config)
    ref = literal(model, g)
    for out in (gns.forward(model, g), gns.FastStep(model)(g)):
        np.testing.assert_allclose(out.acceleration, ref.acceleration, atol=1e-12)
        np.testing.assert_allclose(out.total_force, ref.total_force, atol=1e-12)
    f32 = gns.FastStep(model, dtype=np.float32)(g)
    np.testing.assert_allclose(f32.acceleration, ref.acceleration, atol=1e-4)


def test_batched_graphs_match_individual():
    rng = np.random.default_rng(6)
    model = randomize_biases(small_model(), rng)
    gs = [gns.build_graph(rng.normal(size=(4, n, 3)), dataio.node_types(n - 1, 1), model.config)
          for n in (3, 5)]
    both = gns.forward(model, gns.batch_graphs(gs))
    for k, g in enumerate(gs):
        one = gns.forward(model, g)
        np.testing.assert_allclose(both.total_force[k], one.total_force[0], atol=1e-12)


def test_permutation_equivariance():
    rng = np.random.default_rng(7)
    model = randomize_biases(small_model(), rng)
    hist = rng.normal(size=(4, 6, 3))
    types = dataio.node_types(4, 2)
    perm = rng.permutation(6)
    a = literal(model, gns.build_graph(hist, types, model.config))
    b = literal(model, gns.build_graph(hist[:, perm], types[perm], model.config))
    np.testing.assert_allclose(b.acceleration, a.acceleration[perm], atol=1e-9)
    np.testing.assert_allclose(b.total_force, a.total_force, atol=1e-9)


def test_edge_order_shuffle():
    rng = np.random.default_rng(8)
    model = randomize_biases(small_model(), rng)
    g = gns.build_graph(rng.normal(size=(4, 5, 3)), dataio.node_types(4, 1), model.config)
    order = rng.permutation(g.n_edges)
    h = gns.FeaturedGraph(g.node_features, g.senders[order], g.receivers[order],
                          g.edge_features[order], g.node_types)
    a, b = literal(model, g), literal(model, h)
    np.testing.assert_allclose(b.acceleration, a.acceleration, atol=1e-9)
    for out in (gns.forward(model, h), gns.FastStep(model)(h)):
        np.testing.assert_allclose(out.acceleration, a.acceleration, atol=1e-9)


def test_integrate_inertial():
    z_prev = np.zeros((1, 3))
    z_t = z_prev + np.array([1.0, -0.5, 0.25])
    nxt = gns.integrate(z_t, z_prev, np.zeros((1, 3)))
    np.testing.assert_array_equal(nxt - z_t, z_t - z_prev)
    np.testing.assert_array_equal(gns.integrate(z_t, z_t, np.zeros((1, 3))), z_t)


def test_integrate_quadratic():
    for t in range(1, 6):
        z = lambda k: np.full((2, 3), float(k * k))  # noqa: E731
        np.testing.assert_array_equal(gns.integrate(z(t), z(t - 1), np.full((2, 3), 2.0)), z(t + 1))


def test_acceleration_normalization_round_trip(tiny_model):
    rng = np.random.default_rng(9)
    types = dataio.node_types(4, 20)
    a = rng.normal(size=(24, 3))
    back = gns.denormalize_acceleration(gns.normalize_acceleration(a, types, tiny_model.stats),
                                        types, tiny_model.stats)
    np.testing.assert_allclose(back, a, atol=1e-12)

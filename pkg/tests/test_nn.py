import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from subgns import nn


def naive_forward(mlp, x):
    """Straightforward per-sample loops, written independently of mlp_forward."""
    out = []
    for row in x:
        h = list(row)
        for li, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
            nxt = []
            for j in range(W.shape[1]):
                s = b[j]
                for i in range(W.shape[0]):
                    s += h[i] * W[i, j]
                if li < len(mlp.weights) - 1:
                    s = s if s > 0 else 0.0
                nxt.append(s)
            h = nxt
        out.append(h)
    return np.array(out)


def test_zero_params_give_zero_output():
    mlp = nn.Mlp([np.zeros((4, 5)), np.zeros((5, 5)), np.zeros((5, 3))],
                 [np.zeros(5), np.zeros(5), np.zeros(3)])
    y = nn.mlp_forward(mlp, np.ones((2, 4)))
    assert y.shape == (2, 3) and np.all(y == 0)


def test_identity_single_layer():
    mlp = nn.Mlp([np.eye(2)], [np.zeros(2)])
    np.testing.assert_array_equal(nn.mlp_forward(mlp, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_forward_matches_naive():
    rng = np.random.default_rng(0)
    mlp = nn.init_mlp([5, 7, 6, 3], rng)
    for b in mlp.biases:
        b[:] = rng.normal(size=b.shape)
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(nn.mlp_forward(mlp, x), naive_forward(mlp, x), atol=1e-12)


def test_forward_errors():
    mlp = nn.init_mlp([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.mlp_forward(mlp, np.ones((1, 4)))
    with pytest.raises(ValueError):
        nn.mlp_forward(mlp, np.array([[1.0, np.nan, 0.0]]))


def test_hand_derivative():
    # loss = 1/2 |W x|^2 with W = I, x = (3, 4) -> dL/dW = x x^T
    x = np.array([[3.0, 4.0]])
    mlp = nn.Mlp([np.eye(2)], [np.zeros(2)])
    y, cache = nn.mlp_forward(mlp, x, cache=True)
    _, g = nn.mlp_backward(mlp, cache, y)
    np.testing.assert_array_equal(g["0/W"], x.T @ x)


def test_relu_kink_subgradient_zero():
    mlp = nn.Mlp([np.array([[1.0]]), np.array([[1.0]])], [np.array([-1.0]), np.zeros(1)])
    y, cache = nn.mlp_forward(mlp, np.array([[1.0]]), cache=True)  # pre-activation exactly 0
    dx, g = nn.mlp_backward(mlp, cache, np.ones((1, 1)))
    assert dx[0, 0] == 0.0 and g["0/W"][0, 0] == 0.0 and g["1/W"][0, 0] == 0.0


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        mlp = nn.init_mlp([4, 16, 16, 3], rng)
        for b in mlp.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(5, 4))
        t = rng.normal(size=(5, 3))

        def loss(m):
            return float(((nn.mlp_forward(m, x) - t) ** 2).sum())

        y, cache = nn.mlp_forward(mlp, x, cache=True)
        _, g = nn.mlp_backward(mlp, cache, 2 * (y - t))
        P = mlp.arrays()
        dirs = {k: rng.normal(size=v.shape) for k, v in P.items()}
        norm = math.sqrt(sum((d * d).sum() for d in dirs.values()))
        h = 1e-5
        plus = nn.Mlp.from_arrays({k: P[k] + h * dirs[k] / norm for k in P})
        minus = nn.Mlp.from_arrays({k: P[k] - h * dirs[k] / norm for k in P})
        fd = (loss(plus) - loss(minus)) / (2 * h)
        an = sum((g[k] * dirs[k]).sum() for k in P) / norm
        assert abs(fd - an) / max(abs(fd), abs(an)) < 1e-4


def test_init_scale_and_determinism():
    a = nn.init_mlp([64, 32, 8], np.random.default_rng(3))
    b = nn.init_mlp([64, 32, 8], np.random.default_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert np.abs(a.weights[0]).max() <= math.sqrt(6) / 8
    assert np.abs(a.weights[1]).max() <= 1 / math.sqrt(32)
    assert all(np.all(bb == 0) for bb in a.biases)


def test_adam_zero_gradient():
    st_ = nn.AdamState(max_steps=100)
    p = {"w": np.array([1.0, -2.0])}
    q = nn.adam_step(st_, p, {"w": np.array([3.0, 3.0])})
    m1 = st_.m["w"].copy()
    r = nn.adam_step(st_, q, {"w": np.zeros(2)})
    np.testing.assert_allclose(st_.m["w"], 0.9 * m1)
    # bias-corrected moments keep moving the parameters; the gradient itself is zero
    q2 = nn.adam_step(nn.AdamState(max_steps=100), p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(q2["w"], p["w"])
    assert r["w"].shape == (2,)


def test_adam_first_step_closed_form():
    st_ = nn.AdamState(max_steps=1000)
    g = np.array([0.5, -2.0, 1e-3])
    p = nn.adam_step(st_, {"w": np.zeros(3)}, {"w": g})
    # m_hat = g, v_hat = g^2 -> update = -lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"], -1e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_schedule_endpoints():
    st_ = nn.AdamState(max_steps=5000)
    assert st_.rate(0) == 1e-4
    assert st_.rate(5000) == pytest.approx(1e-6, rel=0.011)
    assert st_.rate(5000) > 1e-6
    rates = [st_.rate(k) for k in range(0, 5001, 500)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_adam_non_finite_aborts_without_mutation():
    st_ = nn.AdamState()
    p = {"w": np.ones(2)}
    with pytest.raises(nn.NonFiniteError) as info:
        nn.adam_step(st_, p, {"w": np.array([1.0, np.inf])})
    assert info.value.path == "w"
    assert st_.step == 0 and st_.m == {}


def test_norm_two_point_and_constant():
    s = nn.FeatureStats.fit(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(s.normalize(np.array([[1.0], [3.0]])), [[-1.0], [1.0]])
    c = nn.FeatureStats.fit(np.full((5, 1), 7.0))
    assert c.std[0] == nn.NORM_EPS
    assert np.all(c.normalize(np.full((5, 1), 7.0)) == 0)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
                  elements=st.floats(-1e3, 1e3)))
def test_norm_round_trip_and_moments(x):
    s = nn.FeatureStats.fit(x)
    np.testing.assert_allclose(s.denormalize(s.normalize(x)), x, rtol=1e-12, atol=1e-9)
    z = s.normalize(x)
    live = x.std(axis=0) > 1e-3
    assert np.all(np.abs(z.mean(axis=0)[live]) < 1e-9)
    np.testing.assert_allclose(z.var(axis=0)[live], 1.0, atol=1e-6)


def test_normstats_arrays_round_trip():
    ns = nn.NormStats({"a": nn.FeatureStats(np.ones(3), np.full(3, 2.0))}, dataset="x")
    back = nn.NormStats.from_arrays(ns.arrays(), dataset="x")
    np.testing.assert_array_equal(back["a"].std, 2.0)
    assert back.source == "train"

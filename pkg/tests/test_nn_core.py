"""Forward-pass kernels against naive-loop oracles and closed forms."""

import math

import numpy as np
import pytest

from evoworld import nn
from evoworld.errors import ConfigError
from evoworld.rng import RandomSource


def naive_conv(img, w, b, stride, act):
    """Brute-force valid convolution, one window at a time."""
    out_ch, in_ch, k, _ = w.shape
    oh = (img.shape[1] - k) // stride + 1
    ow = (img.shape[2] - k) // stride + 1
    out = np.zeros((out_ch, oh, ow))
    for o in range(out_ch):
        for y in range(oh):
            for x in range(ow):
                acc = b[o]
                for c in range(in_ch):
                    for dy in range(k):
                        for dx in range(k):
                            acc += w[o, c, dy, dx] * img[c, y * stride + dy, x * stride + dx]
                out[o, y, x] = acc
    return act(out)


def naive_linear(v, w, b, act):
    out = np.zeros(w.shape[0])
    for i in range(w.shape[0]):
        acc = b[i]
        for j in range(w.shape[1]):
            acc += w[i, j] * v[j]
        out[i] = acc
    return act(out)


def scalar_lstm(x, h, c, w, b):
    """Hand-coded recurrence: gate rows ordered input, forget, cand, output."""
    hidden = h.shape[0]
    xn = np.concatenate([x, h])
    h2 = np.zeros(hidden)
    c2 = np.zeros(hidden)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for u in range(hidden):
        pre = [b[g * hidden + u] + float(w[g * hidden + u] @ xn) for g in range(4)]
        i_g, f_g = sig(pre[0]), sig(pre[1])
        g_g, o_g = math.tanh(pre[2]), sig(pre[3])
        c2[u] = f_g * c[u] + i_g * g_g
        h2[u] = o_g * math.tanh(c2[u])
    return h2, c2


ident = lambda a: a
relu = lambda a: np.maximum(a, 0.0)


def test_conv_hand_example():
    # 6x6 single-channel, k=2, stride=2, identity: nine sliding dot products
    img = np.arange(36, dtype=float).reshape(1, 6, 6)
    spec = nn.LayerSpec("conv", 1, 1, kernel=2, stride=2, activation="identity", label="t")
    w = np.array([1.0, 2.0, -1.0, 0.5])
    b = np.array([0.25])
    got = nn.conv2d_forward(img, np.concatenate([w, b]), spec)
    want = naive_conv(img, w.reshape(1, 1, 2, 2), b, 2, ident)
    assert got.shape == (1, 3, 3)
    assert np.abs(got - want).max() == 0.0


def test_conv_random_shapes_match_oracle():
    rng = np.random.default_rng(11)
    for trial in range(25):
        in_ch = int(rng.integers(1, 4))
        out_ch = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        size = int(rng.integers(k, k + 6))
        act_name = ("identity", "relu", "tanh")[trial % 3]
        act = {"identity": ident, "relu": relu, "tanh": np.tanh}[act_name]
        spec = nn.LayerSpec("conv", in_ch, out_ch, kernel=k, stride=stride,
                            activation=act_name, label="t")
        img = rng.standard_normal((in_ch, size, size))
        flat = rng.standard_normal(spec.param_count)
        w = flat[: out_ch * in_ch * k * k].reshape(out_ch, in_ch, k, k)
        b = flat[out_ch * in_ch * k * k :]
        got = nn.conv2d_forward(img, flat, spec)
        assert np.abs(got - naive_conv(img, w, b, stride, act)).max() < 1e-10


def test_linear_matches_naive_matvec():
    rng = np.random.default_rng(3)
    spec = nn.LayerSpec("linear", 5, 3, activation="identity", label="t")
    flat = rng.standard_normal(spec.param_count)
    v = rng.standard_normal(5)
    got = nn.linear_forward(v, flat, spec)
    want = naive_linear(v, flat[:15].reshape(3, 5), flat[15:], ident)
    assert np.abs(got - want).max() < 1e-12


def test_lstm_ten_steps_vs_scalar_reference():
    rng = np.random.default_rng(17)
    n_in, hidden = 3, 4
    w_count = 4 * hidden * (n_in + hidden)
    flat = rng.standard_normal(w_count + 4 * hidden) * 0.4
    w = flat[:w_count].reshape(4 * hidden, n_in + hidden)
    b = flat[w_count:]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    h_ref, c_ref = h.copy(), c.copy()
    for _ in range(10):
        x = rng.standard_normal(n_in)
        h, c = nn.lstm_cell_forward(x, h, c, flat)
        h_ref, c_ref = scalar_lstm(x, h_ref, c_ref, w, b)
        assert np.abs(h - h_ref).max() < 1e-10
        assert np.abs(c - c_ref).max() < 1e-10


def test_lstm_zero_weights_closed_form():
    # all gates at sigmoid(0)=1/2, candidate tanh(0)=0: c'=c/2, h'=tanh(c/2)/2
    hidden = 6
    c = np.linspace(-3, 3, hidden)
    h, c2 = nn.lstm_cell_forward(np.ones(2), np.zeros(hidden), c,
                                 np.zeros(4 * (hidden * (2 + hidden) + hidden)))
    assert np.abs(c2 - 0.5 * c).max() < 1e-14
    assert np.abs(h - 0.5 * np.tanh(0.5 * c)).max() < 1e-14


def test_lstm_hidden_state_bounded():
    rng = np.random.default_rng(29)
    flat = rng.standard_normal(4 * (5 * (4 + 5) + 5)) * 3.0
    h = np.zeros(5)
    c = np.zeros(5)
    for _ in range(50):
        h, c = nn.lstm_cell_forward(rng.standard_normal(4) * 5, h, c, flat)
        # h = o * tanh(c) with o in (0,1): strictly inside the unit box
        assert np.abs(h).max() < 1.0


def test_mdn_head_shapes_and_softmax():
    rng = np.random.default_rng(5)
    hidden, m, zd = 7, 3, 4
    weights = rng.standard_normal(hidden * 3 * m * zd + 3 * m * zd)
    logits, means, log_scales = nn.mdn_head_forward(
        rng.standard_normal(hidden), weights, m, zd
    )
    assert logits.shape == means.shape == log_scales.shape == (m, zd)
    pi = nn.mixture_weights(logits)
    # direct exp/sum per z-dimension
    want = np.exp(logits) / np.exp(logits).sum(axis=0, keepdims=True)
    assert np.abs(pi - want).max() < 1e-12
    assert np.abs(pi.sum(axis=0) - 1.0).max() < 1e-12


def test_he_uniform_bounds_and_spread():
    rng = RandomSource(41, 0)
    fan_in = 288
    draws = nn.he_uniform_init(fan_in, 50_000, rng)
    bound = math.sqrt(1.0 / fan_in)
    assert np.abs(draws).max() <= bound
    assert abs(draws.mean()) < bound * 0.02
    # uniform(-b, b) has std b/sqrt(3)
    assert abs(draws.std() - bound / math.sqrt(3)) < bound * 0.02


def test_activation_behaviors():
    spec_r = nn.LayerSpec("linear", 2, 2, activation="relu", label="r")
    w = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    out = nn.linear_forward(np.array([-3.0, 2.0]), w, spec_r)
    assert out.tolist() == [0.0, 2.0]
    spec_t = nn.LayerSpec("linear", 2, 2, activation="tanh", label="t")
    out = nn.linear_forward(np.array([-30.0, 30.0]), w, spec_t)
    assert np.abs(out).max() <= 1.0


def test_conv_output_size():
    assert nn.conv_output_size(64, 4, 2) == 31
    assert nn.conv_output_size(31, 4, 2) == 14
    assert nn.conv_output_size(6, 2, 2) == 3
    with pytest.raises(ConfigError):
        nn.conv_output_size(3, 4, 2)


def test_layer_spec_param_counts():
    assert nn.LayerSpec("conv", 3, 32, kernel=4, label="c").param_count == 32 * 3 * 16 + 32
    assert nn.LayerSpec("linear", 288, 3, label="l").param_count == 288 * 3 + 3
    lstm = nn.LayerSpec("lstm-cell", 35, 256, label="m")
    assert lstm.param_count == 4 * (256 * (35 + 256) + 256)
    with pytest.raises(ConfigError):
        nn.LayerSpec("pool", 3, 3, label="x")


def test_weight_length_validation():
    spec = nn.LayerSpec("linear", 4, 2, label="t")
    with pytest.raises(ConfigError):
        nn.linear_forward(np.zeros(4), np.zeros(spec.param_count - 1), spec)
    with pytest.raises(ConfigError):
        nn.lstm_cell_forward(np.zeros(3), np.zeros(4), np.zeros(4), np.zeros(10))


def test_backend_parity_and_switching():
    backends = nn.available_backends()
    assert "python" in backends
    if len(backends) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(101)
    img = rng.standard_normal((2, 9, 9))
    spec = nn.LayerSpec("conv", 2, 3, kernel=3, stride=2, activation="relu", label="t")
    wc = rng.standard_normal(spec.param_count)
    x, h, c = rng.standard_normal(4), rng.standard_normal(5), rng.standard_normal(5)
    wl = rng.standard_normal(4 * (5 * (4 + 5) + 5))
    saved = nn.backend_name()
    results = {}
    try:
        for b in backends:
            nn.set_backend(b)
            assert nn.backend_name() == b
            results[b] = (nn.conv2d_forward(img, wc, spec),
                          nn.lstm_cell_forward(x, h, c, wl))
    finally:
        nn.set_backend(saved)
    a, b = (results[k] for k in backends[:2])
    assert np.abs(a[0] - b[0]).max() < 1e-12
    assert np.abs(a[1][0] - b[1][0]).max() < 1e-12
    assert np.abs(a[1][1] - b[1][1]).max() < 1e-12


def test_set_backend_rejects_unknown():
    with pytest.raises(ConfigError):
        nn.set_backend("gpu")

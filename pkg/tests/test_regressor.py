import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from helpers import finite_difference_check, tiny_model
from mqnav.errors import ValidationError
from mqnav.regressor import (
    Conv1D,
    TrainConfig,
    WindowDataset,
    backward,
    baseline_model,
    build,
    conv1d_forward,
    forward,
    load,
    mini_model,
    mse_loss,
    oracle_regressor,
    relu,
    save,
    train,
)
from mqnav.regressor import serialize
from mqnav.regressor.training import Adam, ReduceOnPlateau

GOLDEN_MINI_SEED42 = -0.994038580756802


def conv(weights, bias=0.0, stride=1):
    w = np.asarray(weights, dtype=float)
    layer = Conv1D(1, 1, w.size, stride)
    layer.params["W"][...] = w.reshape(1, 1, -1)
    layer.params["b"][...] = bias
    return layer


def test_conv_direct_evaluation():
    assert_allclose(conv1d_forward([[1.0, 2.0, 3.0]], conv([1, 1])), [[3.0, 5.0]])


def test_conv_identity_filter(rng):
    x = rng.standard_normal((1, 9))
    assert_allclose(conv1d_forward(x, conv([1.0])), x)


def test_conv_constant_bias(rng):
    out = conv1d_forward(rng.standard_normal((1, 7)), conv([0.0, 0.0, 0.0], bias=2.5))
    assert_allclose(out, np.full((1, 5), 2.5))


@pytest.mark.parametrize("stride, expected", [(1, [6, 9, 12, 15]), (2, [6, 12]), (3, [6, 15])])
def test_conv_stride(stride, expected):
    out = conv1d_forward([[1.0, 2, 3, 4, 5, 6]], conv([1, 1, 1], stride=stride))
    assert_allclose(out[0], expected)


def test_conv_multichannel_matches_loops(rng):
    layer = Conv1D(3, 2, 4, 2)
    layer.params["W"][...] = rng.standard_normal(layer.params["W"].shape)
    layer.params["b"][...] = rng.standard_normal(2)
    x = rng.standard_normal((3, 13))
    out = conv1d_forward(x, layer)
    L_out = (13 - 4) // 2 + 1
    ref = np.empty((2, L_out))
    for c in range(2):
        for t in range(L_out):
            ref[c, t] = layer.params["b"][c] + np.sum(x[:, 2 * t : 2 * t + 4] * layer.params["W"][c])
    assert_allclose(out, ref, rtol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ValidationError):
        conv1d_forward(np.zeros((2, 5)), conv([1, 1]))
    with pytest.raises(ValidationError):
        conv1d_forward(np.zeros((1, 2)), conv([1, 1, 1]))


def test_relu_examples():
    assert_allclose(relu([-1, 0, 2]), [0, 0, 2])
    assert not relu(-np.arange(1, 6)).any()


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_relu_idempotent(xs):
    assert_allclose(relu(relu(xs)), relu(xs))


def test_forward_zero_weights(rng):
    m = mini_model(seed=1)
    for p in m.get_params():
        p[...] = 0.0
    assert forward(m, rng.standard_normal((6, 120))) == 0.0


def test_forward_mean_filter():
    m = build([("flatten",), ("fc", 1)], window=120)
    m.layers[1].params["W"][...] = 1 / 720
    assert forward(m, np.ones((6, 120))) == pytest.approx(1.0, abs=1e-9)


def test_forward_golden_value():
    m = mini_model(seed=42)
    x = np.random.default_rng(2024).standard_normal((6, 120))
    assert forward(m, x) == pytest.approx(GOLDEN_MINI_SEED42, rel=1e-9)


def test_forward_is_pure(rng):
    m = mini_model(seed=3)
    x = rng.standard_normal((6, 120))
    assert forward(m, x) == forward(m, x)


def test_mse_examples():
    assert mse_loss([1, 2, 3], [1, 2, 3]) == 0.0
    assert mse_loss([1, 1], [0, 2]) == 1.0


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_mse_homogeneous(res):
    r = np.asarray(res)
    assert mse_loss(2 * r, np.zeros_like(r)) == pytest.approx(4 * mse_loss(r, np.zeros_like(r)), rel=1e-12, abs=1e-300)


def test_mse_empty_rejected():
    with pytest.raises(ValidationError):
        mse_loss([], [])


def test_backward_zero_residual(rng):
    m = tiny_model(0, window=120, channels=6)
    x = rng.standard_normal((6, 120))
    grads = backward(m, x, forward(m, x))
    assert all(not g.any() for layer in grads for g in layer.values())


def test_backward_output_bias():
    m = build([("flatten",), ("fc", 1)], window=4, in_channels=1, seed=0)
    x = np.arange(4.0).reshape(1, 4)
    pred = forward(m, x)
    grads = backward(m, x, 0.3)
    assert grads[-1]["b"][0] == pytest.approx(2 * (pred - 0.3), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_tiny(seed):
    m = tiny_model(seed)
    rng = np.random.default_rng(seed)
    errs = finite_difference_check(m, rng.standard_normal((3, 3, 16)), rng.standard_normal(3))
    assert max(errs.values()) < 1e-4


@pytest.mark.parametrize("spec", [
    [("conv", 2, 3), ("flatten",), ("fc", 1)],
    [("conv", 2, 3, 2), ("relu",), ("flatten",), ("fc", 1)],
    [("flatten",), ("fc", 5), ("relu",), ("fc", 1)],
    [("flatten",), ("dropout", 0.3), ("fc", 1)],
])
def test_gradient_check_each_layer_type(spec):
    m = build(spec, window=10, in_channels=2, seed=7)
    for layer in m.parametric_layers():
        layer.params["b"][...] = 0.1
    rng = np.random.default_rng(1)
    errs = finite_difference_check(m, rng.standard_normal((2, 2, 10)), rng.standard_normal(2))
    assert max(errs.values()) < 1e-4


def test_parameter_reduction():
    mini, base = mini_model(), baseline_model()
    assert 1 - mini.n_params() / base.n_params() >= 0.8
    assert mini.n_params() == mini.n_params_stored()
    assert base.n_params() == base.n_params_stored()


def test_layer_counts():
    kinds = lambda m: [layer.kind for layer in m.layers]  # noqa: E731
    assert kinds(mini_model()).count("conv1d") == 5
    assert kinds(mini_model()).count("fc") == 1
    assert kinds(baseline_model()).count("conv1d") == 7
    assert kinds(baseline_model()).count("fc") == 3


def test_baseline_hidden_sizes():
    fcs = [layer for layer in baseline_model().layers if layer.kind == "fc"]
    assert [f.n_out for f in fcs] == [4096, 512, 1]


def test_bad_shapes_rejected():
    with pytest.raises(ValidationError):
        build([("conv", 4, 200), ("flatten",), ("fc", 1)], window=120)
    with pytest.raises(ValidationError):
        build([("conv", 4, 3)], window=120)
    with pytest.raises(ValidationError):
        mini_model().predict(np.zeros((2, 6, 100)))


def test_serialization_round_trip(tmp_path, rng):
    m = mini_model(target="altitude", seed=5)
    m.meta["val_rmse"] = 0.123
    path = save(m, tmp_path / "m.mqn")
    back = load(path)
    X = rng.standard_normal((3, 6, 120))
    assert np.array_equal(back.predict(X), m.predict(X))
    assert back.target == "altitude"
    assert back.seed == 5
    assert back.meta["val_rmse"] == 0.123
    assert back.descriptors() == m.descriptors()


def test_serialization_is_byte_stable():
    assert serialize.dumps(mini_model(seed=9)) == serialize.dumps(mini_model(seed=9))


def test_serialization_rejects_garbage():
    with pytest.raises(ValidationError):
        serialize.loads(b"not a model at all")
    blob = serialize.dumps(mini_model(seed=1))
    with pytest.raises(ValidationError):
        serialize.loads(blob[:-8])


def test_serialization_little_endian_magic():
    blob = serialize.dumps(mini_model(seed=1))
    assert blob.startswith(serialize.MAGIC)


def test_train_constant_label(rng):
    X = rng.standard_normal((256, 6, 24))
    ds = WindowDataset(X, np.full(256, 0.7))
    m = build([("conv", 4, 5), ("relu",), ("flatten",), ("fc", 1)], window=24, seed=0)
    m, hist = train(m, ds, TrainConfig(epochs=70, batch_size=16, window=24, seed=0))
    assert hist.val_loss[-1] < 1e-4
    assert len(hist.train_loss) == 70


def linear_task(rng, n=1024, W=24):
    X = rng.standard_normal((n, 6, W))
    return WindowDataset(X, X[:, 0].mean(axis=1) * 5)


def test_train_linear_task(rng):
    m = build([("conv", 8, 5), ("relu",), ("flatten",), ("fc", 1)], window=24, seed=1)
    _, hist = train(m, linear_task(rng), TrainConfig(epochs=30, batch_size=32, window=24, seed=1, normalize=False))
    assert hist.val_loss[0] / min(hist.val_loss) >= 10


def test_train_deterministic():
    def once():
        m = build([("conv", 4, 5), ("relu",), ("flatten",), ("dropout", 0.2), ("fc", 1)], window=24, seed=2)
        return train(m, linear_task(np.random.default_rng(0), 96), TrainConfig(epochs=4, batch_size=16, window=24, seed=3))

    (m1, h1), (m2, h2) = once(), once()
    assert h1.train_loss == h2.train_loss
    assert h1.val_loss == h2.val_loss
    assert all(np.array_equal(a, b) for a, b in zip(m1.get_params(), m2.get_params()))


def test_train_rejects_bad_data():
    m = build([("flatten",), ("fc", 1)], window=4, in_channels=6)
    with pytest.raises(ValidationError):
        train(m, WindowDataset(np.zeros((0, 6, 4)), np.zeros(0)))
    with pytest.raises(ValidationError):
        train(m, WindowDataset(np.zeros((2, 6, 4)), np.array([1.0, np.nan])))


def test_train_diverging_aborts(rng):
    from mqnav.errors import DivergenceError

    m = build([("flatten",), ("fc", 1)], window=4, in_channels=6)
    ds = WindowDataset(rng.standard_normal((32, 6, 4)) * 1e150, rng.standard_normal(32) * 1e150)
    with pytest.raises(DivergenceError):
        train(m, ds, TrainConfig(epochs=3, window=4, normalize=False, lr=1e10))


def test_plateau_schedule():
    opt = Adam([np.zeros(1)], lr=1.0)
    sched = ReduceOnPlateau(opt, factor=0.7, patience=4)
    sched.step(1.0)
    cuts = [sched.step(1.0) for _ in range(5)]
    assert cuts == [False, False, False, False, True]
    assert opt.lr == pytest.approx(0.7)


def test_train_config_defaults():
    cfg = TrainConfig()
    assert (cfg.decay, cfg.patience, cfg.epochs, cfg.batch_size) == (0.7, 4, 70, 64)
    assert (cfg.train_stride, cfg.test_stride) == (60, 120)
    with pytest.raises(ValidationError):
        TrainConfig(lr=0.0)


def test_oracle_stationary():
    assert oracle_regressor(np.zeros((5, 3))) == (0.0, 0.0)


def test_oracle_straight_east():
    t = np.linspace(0, 1, 121)
    p = np.column_stack([np.zeros_like(t), t, np.zeros_like(t)])
    d, dh = oracle_regressor(p)
    assert d == pytest.approx(1.0, abs=1e-12)
    assert dh == 0.0


def test_oracle_half_circle():
    th = np.linspace(0, math.pi, 121)
    p = np.column_stack([np.cos(th), np.sin(th), np.zeros_like(th)])
    assert oracle_regressor(p)[0] == pytest.approx(math.pi, abs=1e-3)


def test_oracle_vertical_sign():
    p = np.array([[0, 0, 1.0], [1, 0, 0.5], [2, 0, -0.25]])
    assert oracle_regressor(p) == pytest.approx((2.0, -1.25))

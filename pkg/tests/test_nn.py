import numpy as np
import pytest

from casvae.errors import BatchSizeError, ConfigError, DimensionError
from casvae.nn import (AdamState, BatchNorm, Dense, Stack, activation_backward,
                       activation_forward, adam_step, batchnorm_backward, batchnorm_forward,
                       dense_backward, dense_forward, grad_check)
from casvae.rng import Rng

F64 = np.float64


def triple_loop_dense(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for o in range(w.shape[0]):
            acc = b[o]
            for k in range(x.shape[1]):
                acc += w[o, k] * x[i, k]
            out[i, o] = acc
    return out


# -- dense -------------------------------------------------------------------

def test_dense_identity_and_affine():
    layer = Dense(np.eye(2), np.zeros(2))
    assert dense_forward(np.array([[3.0, -1.0]]), layer).tolist() == [[3.0, -1.0]]
    layer = Dense(np.array([[2.0]]), np.array([1.0]))
    assert dense_forward(np.array([[3.0]]), layer).tolist() == [[7.0]]


def test_dense_matches_triple_loop(rng):
    layer = Dense.init(3, 4, rng)
    layer.bias[:] = rng.normal(size=4)
    x = rng.normal(size=(8, 3)).astype(np.float32)
    np.testing.assert_allclose(dense_forward(x, layer),
                               triple_loop_dense(x, layer.weight, layer.bias), atol=1e-6)


def test_dense_shape_errors(rng):
    layer = Dense.init(3, 2, rng)
    with pytest.raises(DimensionError):
        dense_forward(np.zeros((2, 4)), layer)
    with pytest.raises(DimensionError):
        dense_backward(np.zeros((2, 3)), layer, np.zeros((2, 5)))
    with pytest.raises(DimensionError):
        Dense(np.zeros((2, 3)), np.zeros(3))


def test_dense_backward_simple():
    layer = Dense(np.array([[2.0]]), np.array([0.0]))
    gw, gb, gx = dense_backward(np.array([[3.0]]), layer, np.array([[1.0]]))
    assert (gw.item(), gb.item(), gx.item()) == (3.0, 1.0, 2.0)
    gw, gb, gx = dense_backward(np.array([[3.0]]), layer, np.zeros((1, 1)))
    assert not gw.any() and not gb.any() and not gx.any()


def test_init_bounds(rng):
    layer = Dense.init(30, 10, rng)
    assert np.abs(layer.weight).max() <= np.sqrt(6 / 40)
    assert layer.weight.dtype == np.float32


def _dense_check(seed):
    r = Rng(seed)
    i, o, b = r.integers(1, 6), r.integers(1, 6), r.integers(1, 6)
    layer = Dense.init(i, o, r, F64)
    layer.bias[:] = r.normal(size=o)
    x = r.normal(size=(b, i))
    up = r.normal(size=(b, o))
    loss = lambda: float(np.sum(up * dense_forward(x, layer)))
    def grads():
        gw, gb, gx = dense_backward(x, layer, up)
        return [gw, gb, gx]
    return grad_check(loss, grads, [layer.weight, layer.bias, x])


def test_dense_gradients_100_configs():
    worst = max(_dense_check(s).max_rel_error for s in range(100))
    assert worst < 1e-3


# -- batch norm ----------------------------------------------------------------

def test_batchnorm_constant_column_is_zero():
    layer = BatchNorm.create(2, F64)
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
    y = batchnorm_forward(x, layer)
    assert np.all(y[:, 0] == 0)


def test_batchnorm_two_values_standardize():
    layer = BatchNorm.create(1, F64, eps=1e-12)
    y = batchnorm_forward(np.array([[0.0], [2.0]]), layer)
    np.testing.assert_allclose(y.ravel(), [-1.0, 1.0], atol=1e-9)


def test_batchnorm_inference_fixed_point(rng):
    layer = BatchNorm.create(3, F64)
    layer.running_mean[:] = [1.0, -2.0, 0.5]
    layer.running_var[:] = [4.0, 0.3, 2.0]
    layer.beta[:] = [0.1, 0.2, 0.3]
    layer.gamma[:] = [3.0, -1.0, 2.0]
    y = batchnorm_forward(layer.running_mean[None, :].copy(), layer, "inference")
    np.testing.assert_allclose(y.ravel(), layer.beta)


def test_batchnorm_single_row_train_mode_errors():
    with pytest.raises(BatchSizeError):
        batchnorm_forward(np.zeros((1, 3)), BatchNorm.create(3))


def test_batchnorm_train_output_statistics(rng):
    layer = BatchNorm.create(5)
    x = (rng.normal(size=(64, 5)) * 7 + 3).astype(np.float32)
    y = batchnorm_forward(x, layer)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-5)
    assert np.all(np.abs(y.var(axis=0) - 1) < 1e-3)


def test_batchnorm_running_stats_update(rng):
    layer = BatchNorm.create(2, F64, momentum=0.5)
    x = np.array([[1.0, 0.0], [3.0, 4.0]])
    batchnorm_forward(x, layer)
    np.testing.assert_allclose(layer.running_mean, [1.0, 1.0])
    # unbiased batch variance folded in: (2, 8) with B = 2
    np.testing.assert_allclose(layer.running_var, [0.5 + 0.5 * 2.0, 0.5 + 0.5 * 8.0])
    assert np.all(layer.running_var >= 0)


def test_batchnorm_backward_trivial(rng):
    layer = BatchNorm.create(3, F64)
    x = rng.normal(size=(4, 3))
    gg, gb, gx = batchnorm_backward(x, layer, np.zeros((4, 3)))
    assert not gg.any() and not gb.any() and not gx.any()
    layer.gamma[:] = 0
    _, _, gx = batchnorm_backward(x, layer, rng.normal(size=(4, 3)))
    assert not gx.any()


def _bn_check(seed, mode):
    r = Rng(seed)
    b, f = r.integers(4, 9), r.integers(1, 5)
    layer = BatchNorm.create(f, F64)
    layer.gamma[:] = r.normal(size=f)
    layer.beta[:] = r.normal(size=f)
    layer.running_mean[:] = r.normal(size=f)
    layer.running_var[:] = r.uniform(0.5, 2.0, size=f)
    x = r.normal(size=(b, f)) * r.uniform(0.5, 3.0)
    # near-constant columns make the map too curved for a 1e-3 central difference
    while x.std(axis=0).min() < 0.1:
        x = r.normal(size=(b, f)) * r.uniform(0.5, 3.0)
    up = r.normal(size=(b, f))
    loss = lambda: float(np.sum(up * batchnorm_forward(x, layer, mode, update_stats=False)))
    grads = lambda: list(batchnorm_backward(x, layer, up, mode))
    return grad_check(loss, grads, [layer.gamma, layer.beta, x])


@pytest.mark.parametrize("mode", ["train", "inference"])
def test_batchnorm_gradients_100_configs(mode):
    worst = max(_bn_check(s, mode).max_rel_error for s in range(100))
    assert worst < 1e-3


# -- activations -------------------------------------------------------------

def test_activation_values():
    assert activation_forward("relu", np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert activation_forward("tanh", np.array([0.0])).item() == 0.0
    assert activation_backward("tanh", np.array([0.0])).item() == 1.0
    assert activation_backward("sigmoid", np.array([0.0])).item() == 0.25


def test_sigmoid_is_stable_for_large_inputs():
    y = activation_forward("sigmoid", np.array([-1000.0, 1000.0]))
    assert y.tolist() == [0.0, 1.0]


def test_unknown_activation():
    with pytest.raises(ConfigError):
        activation_forward("gelu", np.zeros(2))
    with pytest.raises(ConfigError):
        activation_backward("gelu", np.zeros(2))


@pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid"])
def test_activation_gradients_100_configs(kind):
    worst = 0.0
    for seed in range(100):
        r = Rng(seed)
        x = r.normal(size=(3, 4)) * 2
        if kind == "relu":
            # keep probes away from the kink
            x = np.where(np.abs(x) < 0.01, 0.5, x)
        up = r.normal(size=x.shape)
        rep = grad_check(lambda: float(np.sum(up * activation_forward(kind, x))),
                         lambda: [activation_backward(kind, x, up)], [x])
        worst = max(worst, rep.max_rel_error)
    assert worst < 1e-3


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_is_noop(rng):
    p = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    before = [q.copy() for q in p]
    for steps in (0, 1, 17, 10_000):
        state = AdamState.for_params(p, step_count=steps)
        adam_step(p, [np.zeros_like(q) for q in p], state)
        assert all(np.array_equal(a, b) for a, b in zip(p, before))
        assert state.step_count == steps + 1


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, 1.0, 1.0])]
    state = AdamState.for_params(p, lr=0.01, eps=1e-12)
    adam_step(p, [np.array([0.3, -5.0, 2e-3])], state)
    np.testing.assert_allclose(p[0], [0.99, 1.01, 0.99], rtol=1e-9)


def test_adam_converges_on_quadratic():
    w = [np.array([0.0])]
    state = AdamState.for_params(w, lr=0.1)
    for _ in range(500):
        adam_step(w, [2 * (w[0] - 3)], state)
    assert abs(w[0].item() - 3) < 0.05


def test_adam_second_moment_nonnegative(rng):
    p = [rng.normal(size=5)]
    state = AdamState.for_params(p)
    for _ in range(10):
        adam_step(p, [rng.normal(size=5)], state)
    assert np.all(state.second_moment[0] >= 0)


def test_adam_shape_mismatch(rng):
    p = [np.zeros(3)]
    with pytest.raises(DimensionError):
        adam_step(p, [np.zeros(4)], AdamState.for_params(p))


# -- grad_check and stacks -----------------------------------------------------

def _mlp_loss(net, x, target):
    return lambda: float(0.5 * np.sum((net(x) - target) ** 2))


def _mlp_grads(net, x, target):
    def grads():
        out = net(x)
        _, g = net.backward(out - target)
        return g
    return grads


def test_grad_check_linear_model_is_exact(rng):
    net = Stack.mlp([3, 2], rng, dtype=F64)
    x = rng.normal(size=(4, 3))
    loss = lambda: float(np.sum(net(x)))
    def grads():
        net(x)
        return net.backward(np.ones((4, 2)))[1]
    rep = grad_check(loss, grads, net.params())
    assert rep.passed and rep.max_rel_error < 1e-9


def test_grad_check_tanh_mlp_100_seeds():
    worst = 0.0
    for seed in range(100):
        r = Rng(seed)
        net = Stack.mlp([4, 5, 3], r, "tanh", dtype=F64)
        x, t = r.normal(size=(6, 4)), r.normal(size=(6, 3))
        rep = grad_check(_mlp_loss(net, x, t), _mlp_grads(net, x, t), net.params())
        worst = max(worst, rep.max_rel_error)
    assert worst < 1e-3


def test_grad_check_catches_flipped_sign(rng):
    net = Stack.mlp([3, 4, 2], rng, "tanh", dtype=F64)
    x, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    good = _mlp_grads(net, x, t)
    bad = lambda: [-g for g in good()]
    rep = grad_check(_mlp_loss(net, x, t), bad, net.params())
    assert not rep.passed


def test_stack_with_batchnorm_gradients():
    worst = 0.0
    for seed in range(20):
        r = Rng(seed)
        net = Stack.mlp([4, 6, 3], r, "tanh", batch_norm=True, final_activation="tanh", dtype=F64)
        x, t = r.normal(size=(8, 4)), r.normal(size=(8, 3))
        loss = lambda: float(0.5 * np.sum((net.forward(x, train=True, update_stats=False) - t) ** 2))
        def grads():
            out = net.forward(x, train=True, update_stats=False)
            return net.backward(out - t)[1]
        worst = max(worst, grad_check(loss, grads, net.params()).max_rel_error)
    assert worst < 1e-3


def test_stack_astype_and_modes(rng):
    net = Stack.mlp([3, 4, 2], rng, batch_norm=True)
    net64 = net.astype(F64)
    assert all(p.dtype == F64 for p in net64.params())
    assert all(p.dtype == np.float32 for p in net.params())
    net.set_mode("inference")
    x = rng.normal(size=(5, 3)).astype(np.float32)
    np.testing.assert_allclose(net(x)[:1], net(x[:1]), atol=1e-6)

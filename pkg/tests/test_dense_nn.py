import json
import math

import numpy as np
import pytest

from graspvae import dense_nn
from graspvae.dense_nn import AdamState, DenseNetwork, LayerSpec, adam_step, backward, forward
from graspvae.errors import NonFiniteError, ShapeError, UsageError
from graspvae.hgg_vae import build_hgg

ACTS = ["linear", "tanh", "sigmoid", "quaternion_normalizer"]


def test_identity_linear_layer():
    net = DenseNetwork([LayerSpec(2, 2, "linear")])
    net.weights(0)[...] = np.eye(2)
    np.testing.assert_array_equal(forward(net, [1.0, 2.0])[0], [1.0, 2.0])


def test_zero_tanh_layer():
    net = DenseNetwork([LayerSpec(3, 5, "tanh")])
    np.testing.assert_array_equal(forward(net, [4.0, -1.0, 9.0])[0], np.zeros(5))


def test_normalizer_divides_by_norm():
    net = DenseNetwork([LayerSpec(4, 4, "quaternion_normalizer")])
    net.biases(0)[...] = 1.0
    np.testing.assert_allclose(forward(net, np.zeros(4))[0], [0.5] * 4, atol=1e-15)


def test_normalizer_guard_counts():
    net = DenseNetwork([LayerSpec(4, 4, "quaternion_normalizer")])
    y, _ = forward(net, np.zeros(4))
    np.testing.assert_allclose(y, [0, 0, 0, 1])
    assert net.guard_count == 1


def test_width_mismatch():
    net = DenseNetwork([LayerSpec(3, 2, "tanh")])
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))
    with pytest.raises(ShapeError):
        DenseNetwork([LayerSpec(3, 2), LayerSpec(3, 1)])
    with pytest.raises(ShapeError):
        LayerSpec(3, 3, "quaternion_normalizer")


def test_linear_gradient_closed_form():
    rng = np.random.default_rng(0)
    net = DenseNetwork.build([3, 2], ["linear"], rng)
    x = rng.standard_normal(3)
    g = rng.standard_normal(2)
    _, cache = forward(net, x)
    grads, gin = backward(net, cache, g)
    np.testing.assert_allclose(grads[:6].reshape(2, 3), np.outer(g, x), atol=1e-15)
    np.testing.assert_allclose(grads[6:], g, atol=1e-15)
    np.testing.assert_allclose(gin, net.weights(0).T @ g, atol=1e-15)


def test_normalizer_projects_out_radial_direction():
    net = DenseNetwork([LayerSpec(4, 4, "quaternion_normalizer")])
    net.weights(0)[...] = np.eye(4)
    _, cache = forward(net, [0.0, 0.0, 0.0, 1.0])
    _, gin = backward(net, cache, [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(gin, [1, 0, 0, 0], atol=1e-15)
    _, gin = backward(net, cache, [0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(gin, [0, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("act", ACTS)
@pytest.mark.parametrize("seed", range(20))
def test_gradient_check(act, seed):
    rng = np.random.default_rng(seed)
    last = 4 if act == "quaternion_normalizer" else 3
    net = DenseNetwork.build([5, 6, last], ["tanh", act], rng)
    net.biases(0)[...] = rng.standard_normal(6) * 0.1
    net.biases(1)[...] = rng.standard_normal(last) * 0.1
    p_err, x_err = dense_nn.gradient_check(net, rng.standard_normal((3, 5)), rng)
    assert p_err < 1e-6 and x_err < 1e-6


def test_adam_zero_gradient_keeps_params():
    net = DenseNetwork.build([2, 3], ["tanh"], np.random.default_rng(0))
    before = net.params.copy()
    state = AdamState.for_params(net.params)
    adam_step(net, np.zeros_like(net.params), state)
    np.testing.assert_array_equal(net.params, before)
    assert state.step == 1


def test_adam_first_step_is_lr():
    net = DenseNetwork([LayerSpec(1, 1, "linear")])
    net.params[...] = [0.5, 0.0]
    state = AdamState.for_params(net.params, lr=0.001)
    adam_step(net, np.array([1.0, 0.0]), state)
    assert net.params[0] == pytest.approx(0.499, abs=1e-10)


def _scalar_adam(p, lr, steps):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2.0 * (p - 3.0)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= lr * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    return p


def test_adam_quadratic_matches_scalar_descent():
    net = DenseNetwork([LayerSpec(1, 1, "linear")])
    state = AdamState.for_params(net.params, lr=0.1)
    for _ in range(200):
        grads = np.array([2.0 * (net.params[0] - 3.0), 0.0])
        adam_step(net, grads, state)
    assert abs(net.params[0] - 3.0) < 0.1
    assert net.params[0] == pytest.approx(_scalar_adam(0.0, 0.1, 200), abs=1e-12)


def test_adam_rejects_non_finite_and_names_layer():
    net = DenseNetwork.build([2, 3, 1], ["tanh", "linear"], np.random.default_rng(0))
    grads = np.zeros_like(net.params)
    grads[-1] = np.nan
    with pytest.raises(NonFiniteError, match="layer 1 bias"):
        adam_step(net, grads, AdamState.for_params(net.params))


def test_parameter_counts():
    assert dense_nn.count_parameters(DenseNetwork([LayerSpec(4, 8)])) == 40
    assert dense_nn.count_parameters(DenseNetwork([])) == 0
    assert 29_000 <= build_hgg().parameter_count <= 31_000


def test_stale_cache_is_refused():
    net = DenseNetwork.build([2, 2], ["tanh"], np.random.default_rng(0))
    _, cache = forward(net, [1.0, 2.0])
    adam_step(net, np.ones_like(net.params), AdamState.for_params(net.params))
    with pytest.raises(UsageError):
        backward(net, cache, [1.0, 1.0])
    other = DenseNetwork.build([2, 2], ["tanh"], np.random.default_rng(0))
    _, cache = forward(other, [1.0, 2.0])
    with pytest.raises(UsageError):
        backward(net, cache, [1.0, 1.0])


def test_build_and_train_are_deterministic():
    def run():
        net = DenseNetwork.build([3, 8, 4], ["tanh", "quaternion_normalizer"], np.random.default_rng(7))
        state = AdamState.for_params(net.params)
        x = np.random.default_rng(8).standard_normal((5, 3))
        for _ in range(10):
            _, cache = forward(net, x)
            grads, _ = backward(net, cache, np.ones((5, 4)))
            adam_step(net, grads, state)
        return net.params.tobytes()

    assert run() == run()


def test_normalizer_outputs_unit_norm():
    rng = np.random.default_rng(4)
    net = DenseNetwork.build([6, 4], ["quaternion_normalizer"], rng)
    y, _ = forward(net, rng.standard_normal((100, 6)) * 10)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)


def test_json_round_trip_is_exact():
    net = DenseNetwork.build([3, 5, 2], ["tanh", "sigmoid"], np.random.default_rng(1))
    back = DenseNetwork.from_dict(json.loads(json.dumps(net.to_dict())))
    assert back.params.tobytes() == net.params.tobytes()
    assert back.specs == net.specs

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargerec.errors import CheckpointError, ShapeError
from chargerec.nn import (
    SGD, Adam, Gradients, MLPParams, backward, check_gradients, dueling_combine, forward, gradcheck_suite, init_mlp,
    load_checkpoint, predict, save_checkpoint, sgd_step,
)


def linear(w, b):
    w = np.asarray(w, dtype=float)
    return MLPParams([w.shape[0], w.shape[1]], [w], [np.asarray(b, dtype=float)])


def test_zero_net_outputs_zero():
    p = init_mlp([3, 4, 2], np.random.default_rng(0), zero=True)
    assert np.all(predict(p, np.ones(3)) == 0)


def test_identity_layer():
    p = linear(np.eye(3), np.zeros(3))
    x = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(predict(p, x), x)


def test_forward_snapshot():
    p = init_mlp([4, 5, 3], np.random.default_rng(0))
    y = predict(p, np.array([0.1, -0.2, 0.3, 0.5]))
    assert y == pytest.approx([0.016318896815094987, 0.015441453781241083, 0.006093117268608771], rel=1e-12)


def test_leaky_activation():
    # one hidden unit: -2 -> -0.02, then identity output
    p = MLPParams([1, 1, 1], [np.array([[1.0]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)], slope=0.01)
    assert predict(p, np.array([-2.0]))[0] == pytest.approx(-0.02)
    assert predict(p, np.array([3.0]))[0] == 3.0


def test_forward_shape_error():
    p = init_mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(p, np.ones(4))


def test_params_validate_dims():
    with pytest.raises(ShapeError):
        MLPParams([2, 3], [np.zeros((3, 2))], [np.zeros(3)])


def test_backward_zero_grad():
    p = init_mlp([3, 4, 2], np.random.default_rng(1))
    _, cache = forward(p, np.ones(3))
    g, dx = backward(p, cache, np.zeros(2))
    assert all(np.all(a == 0) for a in g.arrays()) and np.all(dx == 0)


def test_linear_weight_gradient_is_outer_product():
    p = linear(np.random.default_rng(2).normal(size=(3, 2)), np.zeros(2))
    x = np.array([1.0, 2.0, -1.0])
    _, cache = forward(p, x)
    g, _ = backward(p, cache, np.ones(2))
    assert np.array_equal(g.weights[0], np.outer(x, np.ones(2)))
    assert np.array_equal(g.biases[0], np.ones(2))


def test_stale_cache_rejected():
    a = init_mlp([3, 4, 2], np.random.default_rng(0))
    b = init_mlp([3, 5, 6, 2], np.random.default_rng(0))
    _, cache = forward(a, np.ones(3))
    with pytest.raises(ShapeError):
        backward(b, cache, np.ones(2))
    with pytest.raises(ShapeError):
        backward(a, cache, np.ones(3))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=2, max_size=5), st.integers(0, 2**31 - 1))
def test_gradients_match_finite_differences(dims, seed):
    rng = np.random.default_rng(seed)
    p = init_mlp(dims, rng)
    for b in p.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    x = rng.normal(size=(2, dims[0]))
    errs = check_gradients(p, x, rng.normal(size=(2, dims[-1])))
    assert max(errs.values()) < 1e-4


def test_gradcheck_catches_broken_backward():
    def broken(params, cache, grad_out):
        g, dx = backward(params, cache, grad_out)
        g.weights[0] = g.weights[0] * 1.01
        return g, dx

    assert gradcheck_suite(n_configs=5, seed=0).passed()
    assert not gradcheck_suite(n_configs=5, seed=0, backward_fn=broken).passed()


def test_float32_networks_compute_in_float32():
    p = init_mlp([3, 4, 2], np.random.default_rng(0)).astype(np.float32)
    y, cache = forward(p, np.ones((5, 3)))
    assert y.dtype == np.float32
    g, _ = backward(p, cache, np.ones((5, 2)))
    assert all(a.dtype == np.float32 for a in g.arrays())


# -- optimizers ------------------------------------------------------------------


def test_sgd_examples():
    p = MLPParams([1, 1], [np.array([[1.0]])], [np.array([0.0])])
    g = Gradients([np.array([[0.5]])], [np.array([0.0])])
    assert sgd_step(p, g, 0.0).equals(p)
    assert sgd_step(p, g, 0.1).weights[0][0, 0] == pytest.approx(0.95)


def _quadratic_problem():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    return x, y


@pytest.mark.parametrize("opt", [SGD(0.05), Adam(0.05)])
def test_optimizer_reduces_convex_loss(opt):
    x, y = _quadratic_problem()
    nets = {"q": init_mlp([3, 1], np.random.default_rng(1))}
    losses = []
    for _ in range(60):
        out, cache = forward(nets["q"], x)
        err = out - y
        losses.append(float(np.mean(err ** 2)))
        g, _ = backward(nets["q"], cache, 2 * err / len(x))
        opt.step(nets, {"q": g})
    if isinstance(opt, SGD):
        assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.1 * losses[0]


# -- dueling ---------------------------------------------------------------------


def test_dueling_examples():
    assert np.array_equal(dueling_combine(4.0, [2.0, 2.0, 2.0]), [4.0, 4.0, 4.0])
    assert np.array_equal(dueling_combine(2.0, [1.0, 3.0]), [1.0, 3.0])
    with pytest.raises(ShapeError):
        dueling_combine(1.0, [])


@given(st.floats(-100, 100), st.lists(st.floats(-100, 100), min_size=1, max_size=10), st.floats(-10, 10))
def test_dueling_properties(v, a, c):
    q = dueling_combine(v, a)
    assert int(np.argmax(q)) == int(np.argmax(a)) or q[int(np.argmax(q))] == q[int(np.argmax(a))]
    assert np.allclose(dueling_combine(v + c, a), q + c, atol=1e-9)
    assert np.allclose(dueling_combine(v, np.asarray(a) + c), q, atol=1e-9)


def test_dueling_is_order_independent():
    a = np.random.default_rng(0).normal(size=9) * 1e3
    perm = np.random.default_rng(1).permutation(9)
    assert np.array_equal(dueling_combine(0.3, a)[perm], dueling_combine(0.3, a[perm]))


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    nets = {"q": init_mlp([5, 7, 1], np.random.default_rng(3)), "value": init_mlp([4, 2, 1], np.random.default_rng(4))}
    path = tmp_path / "ck.json"
    save_checkpoint(path, "conv", nets, {"k": 8})
    kind, back, hyper = load_checkpoint(path)
    assert kind == "conv" and hyper == {"k": 8}
    assert all(back[n].equals(nets[n]) for n in nets)
    doc = json.loads(path.read_text())
    assert {"format_version", "model_kind", "layer_dims", "weights", "biases", "hyperparameters"} <= set(doc)


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "ck.json"
    save_checkpoint(path, "conv", {"q": init_mlp([2, 1], np.random.default_rng(0))})
    text = path.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["format_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "v.json")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.json")

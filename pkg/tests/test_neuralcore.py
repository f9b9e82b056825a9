import numpy as np
import pytest

from ltc import neuralcore
from ltc.neuralcore import (
    DegenerateEmbeddingError,
    ModelParams,
    OptimizerState,
    adamw_step,
    backprop_params,
    forward,
    grad_wrt_input,
    init_params,
    params_from_arrays,
    params_to_arrays,
    read_checkpoint,
    write_checkpoint,
)

FD_H = 1e-5


def finite_diff(f, x, h=FD_H):
    """Central finite differences of a scalar function over a flat array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def small_net(rng, input_dim=5, hidden=(7, 6), feature_dim=4, n_classes=3):
    return init_params(input_dim, list(hidden), feature_dim, n_classes, rng)


def test_forward_identity_normalizes():
    params = ModelParams(layers=[(np.eye(2), np.zeros(2))],
                         head_w=np.zeros((2, 2)), head_b=np.zeros(2))
    trace = forward(params, np.array([3.0, 4.0]))
    assert np.allclose(trace.features[0], [0.6, 0.8])


def test_forward_zero_embedding_errors():
    params = ModelParams(layers=[(np.zeros((2, 2)), np.zeros(2))],
                         head_w=np.zeros((2, 2)), head_b=np.zeros(2))
    with pytest.raises(DegenerateEmbeddingError):
        forward(params, np.array([1.0, 2.0]))


def test_forward_unit_features():
    rng = np.random.default_rng(0)
    params = small_net(rng)
    x = rng.standard_normal((20, 5))
    trace = forward(params, x)
    norms = np.linalg.norm(trace.features, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


def test_forward_dim_mismatch():
    rng = np.random.default_rng(1)
    params = small_net(rng)
    with pytest.raises(ValueError, match="dim"):
        forward(params, np.zeros(4))


def test_forward_deterministic():
    rng = np.random.default_rng(2)
    params = small_net(rng)
    x = rng.standard_normal((4, 5))
    t1 = forward(params, x)
    t2 = forward(params, x)
    assert np.array_equal(t1.features, t2.features)
    assert np.array_equal(t1.logits, t2.logits)


def test_single_linear_layer_analytic_gradient():
    # squared-error loss on a linear head over an identity encoder:
    # d/dW ||Wx - t||^2 = 2 (Wx - t) x^T
    rng = np.random.default_rng(3)
    w = rng.standard_normal((3, 4))
    params = ModelParams(layers=[(np.eye(4), np.zeros(4))],
                         head_w=w.copy(), head_b=np.zeros(3))
    x = rng.standard_normal(4)
    t = rng.standard_normal(3)
    trace = forward(params, x)
    resid = trace.logits[0] - t
    grads = backprop_params(params, trace, grad_logits=(2 * resid)[None, :])
    assert np.allclose(grads.head_w, 2 * np.outer(resid, x))


def test_zero_loss_grad_gives_zero_param_grads():
    rng = np.random.default_rng(4)
    params = small_net(rng)
    trace = forward(params, rng.standard_normal((3, 5)))
    grads = backprop_params(params, trace,
                            grad_features=np.zeros_like(trace.features),
                            grad_logits=np.zeros_like(trace.logits))
    for gw, gb in grads.layers:
        assert not gw.any() and not gb.any()
    assert not grads.head_w.any() and not grads.head_b.any()


def _loss_and_grads(params, x, w_f, w_l):
    """Test objective: w_f . f(x) + w_l . logits(x), summed over the batch."""
    trace = forward(params, x)
    value = float((trace.features * w_f).sum() + (trace.logits * w_l).sum())
    return value, trace


def test_param_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    params = small_net(rng)
    x = rng.standard_normal((4, 5))
    w_f = rng.standard_normal((4, 4))
    w_l = rng.standard_normal((4, 3))
    _, trace = _loss_and_grads(params, x, w_f, w_l)
    grads = backprop_params(params, trace, grad_features=w_f, grad_logits=w_l)

    def value():
        return _loss_and_grads(params, x, w_f, w_l)[0]

    analytic = neuralcore._param_arrays(grads)
    for arr, g in zip(neuralcore._param_arrays(params), analytic):
        fd = finite_diff(value, arr)
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(fd - g) / denom) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    params = small_net(rng)
    x = rng.standard_normal(5)
    w_f = rng.standard_normal(4)
    w_l = rng.standard_normal(3)

    def objective(f, logits):
        value = float((f @ w_f).sum() + (logits @ w_l).sum())
        return value, np.atleast_2d(w_f), np.atleast_2d(w_l)

    g = grad_wrt_input(params, x, objective)

    def value():
        t = forward(params, x)
        return float(t.features[0] @ w_f + t.logits[0] @ w_l)

    fd = finite_diff(value, x)
    assert np.max(np.abs(fd - g) / np.maximum(np.abs(fd), 1e-6)) < 1e-4


def test_input_gradient_linear_head_is_weight_row():
    # identity encoder feeding a pure linear head: d logits_c / dx = W_head[c]
    rng = np.random.default_rng(7)
    w = rng.standard_normal((3, 4))
    params = ModelParams(layers=[(np.eye(4), np.zeros(4))],
                         head_w=w.copy(), head_b=np.zeros(3))
    c = 1

    def objective(f, logits):
        gl = np.zeros_like(logits)
        gl[:, c] = 1.0
        return float(logits[0, c]), None, gl

    g = grad_wrt_input(params, rng.standard_normal(4), objective)
    assert np.allclose(g, w[c])


def test_input_gradient_constant_objective_is_zero():
    rng = np.random.default_rng(8)
    params = small_net(rng)

    def objective(f, logits):
        return 1.0, np.zeros_like(f), np.zeros_like(logits)

    g = grad_wrt_input(params, rng.standard_normal(5), objective)
    assert not g.any()


def test_input_gradient_leaves_params_untouched():
    rng = np.random.default_rng(9)
    params = small_net(rng)
    before = params_to_arrays(params)
    snapshot = {k: v.copy() for k, v in before.items()}

    def objective(f, logits):
        return 0.0, np.ones_like(f), np.ones_like(logits)

    grad_wrt_input(params, rng.standard_normal(5), objective)
    for k, v in params_to_arrays(params).items():
        assert np.array_equal(v, snapshot[k])


# -- AdamW ------------------------------------------------------------------


def scalar_params(w):
    return ModelParams(layers=[(np.array([[w]]), np.zeros(1))],
                       head_w=np.zeros((1, 1)), head_b=np.zeros(1))


def zero_grads(params):
    return neuralcore._zeros_like_params(params)


def test_adamw_zero_grad_no_decay_keeps_params():
    params = scalar_params(1.0)
    state = OptimizerState(lr=0.1, weight_decay=0.0)
    adamw_step(params, zero_grads(params), state)
    assert params.layers[0][0][0, 0] == 1.0
    assert state.step == 1


def test_adamw_single_step_bias_corrected():
    # w=1, g=1, lr=0.1, defaults: bias-corrected mhat=1, vhat=1 -> w ~ 0.9
    params = scalar_params(1.0)
    grads = zero_grads(params)
    grads.layers[0][0][0, 0] = 1.0
    state = OptimizerState(lr=0.1, weight_decay=0.0)
    adamw_step(params, grads, state)
    assert abs(params.layers[0][0][0, 0] - 0.9) < 1e-7


def test_adamw_decoupled_decay_only():
    params = scalar_params(1.0)
    state = OptimizerState(lr=0.1, weight_decay=0.05)
    adamw_step(params, zero_grads(params), state)
    assert np.isclose(params.layers[0][0][0, 0], 0.995)


def test_adamw_rejects_nonfinite_gradients():
    params = scalar_params(1.0)
    grads = zero_grads(params)
    grads.layers[0][0][0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        adamw_step(params, grads, OptimizerState())


def test_adamw_deterministic():
    def run():
        rng = np.random.default_rng(10)
        params = small_net(rng)
        state = OptimizerState(lr=0.01)
        for _ in range(5):
            x = rng.standard_normal((3, 5))
            trace = forward(params, x)
            grads = backprop_params(params, trace,
                                    grad_features=np.ones_like(trace.features),
                                    grad_logits=np.ones_like(trace.logits))
            adamw_step(params, grads, state)
        return params_to_arrays(params)

    a, b = run(), run()
    for k in a:
        assert np.array_equal(a[k], b[k])


# -- checkpoint io ----------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    params = small_net(rng)
    arrays = params_to_arrays(params)
    path = tmp_path / "ckpt.txt"
    write_checkpoint(path, arrays, floats={"tau": 0.1 + 0.2}, ints={"k": 5})
    arrays2, floats2, ints2 = read_checkpoint(path)
    for k, v in arrays.items():
        assert np.array_equal(v, arrays2[k])
        assert v.dtype == arrays2[k].dtype
    assert floats2["tau"] == 0.1 + 0.2  # bit-exact, not approximately
    assert ints2["k"] == 5
    restored = params_from_arrays(arrays2)
    x = rng.standard_normal((2, 5))
    assert np.array_equal(forward(params, x).logits, forward(restored, x).logits)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ValueError):
        read_checkpoint(path)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynavg.errors import ConfigurationError, DataError, NumericError
from dynavg.learners import (LabeledBatch, Learner, LossSpec, OptimizerState, PredictorSpec,
                             adam_step, glorot_init, local_round, loss_and_grad, optimizer_step,
                             outputs, perturb_init, predict, rmsprop_step, sgd_step)
from dynavg.verify import GRADCHECK_CASES, numeric_grad


def hand_adam(f, g, lr, b1=0.9, b2=0.999, eps=1e-8):
    """One Adam step from zero moments, traced for a scalar."""
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat, v_hat = m / (1 - b1), v / (1 - b2)
    return f - lr * m_hat / (v_hat ** 0.5 + eps)


def test_param_counts():
    assert PredictorSpec("linear", 3).num_params == 4
    assert PredictorSpec("linear", 3, outputs=4).num_params == 16
    assert PredictorSpec("mlp", 3, hidden_units=5).num_params == 3 * 5 + 5 + 5 + 1
    assert PredictorSpec("mlp", 20, hidden_units=16, outputs=10).num_params == 20 * 16 + 16 + 16 * 10 + 10


def test_predict_examples():
    spec = PredictorSpec("linear", 2)
    assert predict(spec, np.zeros(3), [5.0, -7.0]) == 0.0
    assert predict(spec, [1.0, 2.0, 0.0], [3.0, 4.0]) == 11.0
    mlp = PredictorSpec("mlp", 3, hidden_units=4)
    f = glorot_init(mlp, np.random.default_rng(0))
    f[-5:] = [0, 0, 0, 0, 0.7]  # zero output weights, output bias 0.7
    X = np.random.default_rng(1).standard_normal((6, 3))
    np.testing.assert_array_equal(predict(mlp, f, X), np.full(6, 0.7))


def test_predict_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        predict(PredictorSpec("linear", 2), np.zeros(3), [1.0, 2.0, 3.0])
    with pytest.raises(ConfigurationError):
        predict(PredictorSpec("linear", 2), np.zeros(4), [1.0, 2.0])


def test_predict_softmax_head_sums_to_one():
    spec = PredictorSpec("mlp", 4, hidden_units=3, outputs=5)
    f = glorot_init(spec, np.random.default_rng(2))
    p = predict(spec, f, np.ones(4))
    assert p.shape == (5,) and p.sum() == pytest.approx(1.0)


def test_squared_loss_example():
    value, grad = loss_and_grad(PredictorSpec("linear", 1), LossSpec("squared"),
                                [0.0, 0.0], LabeledBatch([[1.0]], [1.0]))
    assert value == 0.5
    np.testing.assert_array_equal(grad, [-1.0, -1.0])  # weight, then bias


def test_l2_added_once_per_batch():
    spec, f = PredictorSpec("linear", 1), np.array([2.0, 0.0])
    batch = LabeledBatch([[0.0], [0.0], [0.0]], [0.0, 0.0, 0.0])
    value, grad = loss_and_grad(spec, LossSpec("squared", 0.5), f, batch)
    assert value == pytest.approx(0.5 * 0.5 * 4.0)
    np.testing.assert_allclose(grad, [1.0, 0.0])


@pytest.mark.parametrize("spec,kind", GRADCHECK_CASES)
def test_duplicated_batch_scales_loss_and_grad(spec, kind):
    rng = np.random.default_rng(3)
    loss = LossSpec(kind)
    f = glorot_init(spec, rng)
    X = rng.uniform(-1, 1, (4, spec.input_dim))
    y = rng.integers(0, max(spec.outputs, 2), 4).astype(float)
    v1, g1 = loss_and_grad(spec, loss, f, LabeledBatch(X, y))
    v3, g3 = loss_and_grad(spec, loss, f, LabeledBatch(np.tile(X, (3, 1)), np.tile(y, 3)))
    assert v3 == pytest.approx(3 * v1, rel=1e-12)
    np.testing.assert_allclose(g3, 3 * g1, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("spec,kind", GRADCHECK_CASES)
def test_gradient_matches_finite_differences(spec, kind):
    rng = np.random.default_rng(4)
    loss = LossSpec(kind, 0.1)
    for _ in range(10):
        f = glorot_init(spec, rng) + rng.normal(0, 0.3, spec.num_params)
        X = rng.uniform(-1, 1, (3, spec.input_dim))
        y = rng.integers(0, 2, 3).astype(float) if kind == "logistic" else \
            rng.integers(0, spec.outputs, 3) if kind == "cross_entropy" else rng.standard_normal(3)
        batch = LabeledBatch(X, y)
        g = loss_and_grad(spec, loss, f, batch)[1]
        g_fd = numeric_grad(spec, loss, f, batch)
        assert np.linalg.norm(g - g_fd) <= 1e-5 * max(np.linalg.norm(g), np.linalg.norm(g_fd), 1e-8)


def test_label_validation():
    spec = PredictorSpec("linear", 2, outputs=3)
    f = np.zeros(spec.num_params)
    with pytest.raises(DataError):
        loss_and_grad(spec, LossSpec("cross_entropy"), f, LabeledBatch([[0.0, 0.0]], [3]))
    with pytest.raises(DataError):
        loss_and_grad(spec, LossSpec("cross_entropy"), f, LabeledBatch([[0.0, 0.0]], [-1]))
    with pytest.raises(DataError):
        loss_and_grad(PredictorSpec("linear", 2), LossSpec("logistic"), np.zeros(3),
                      LabeledBatch([[0.0, 0.0]], [0.5]))
    with pytest.raises(DataError):
        LabeledBatch(np.zeros((0, 2)), [])


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(GRADCHECK_CASES), st.integers(0, 2**32 - 1), st.floats(0, 2))
def test_loss_nonnegative(case, seed, l2):
    spec, kind = case
    rng = np.random.default_rng(seed)
    f = rng.normal(0, 3, spec.num_params)
    X = rng.uniform(-5, 5, (4, spec.input_dim))
    y = rng.integers(0, 2, 4).astype(float) if kind == "logistic" else \
        rng.integers(0, spec.outputs, 4) if kind == "cross_entropy" else rng.normal(0, 3, 4)
    assert loss_and_grad(spec, LossSpec(kind, l2), f, LabeledBatch(X, y))[0] >= 0


def test_sgd_examples():
    opt = OptimizerState("sgd", 0.5)
    f = np.array([1.0, -2.0])
    np.testing.assert_array_equal(sgd_step(opt, f, np.zeros(2)), f)
    np.testing.assert_array_equal(sgd_step(opt, [0.0], [-1.0]), [0.5])
    assert opt.step == 2
    g = np.array([0.3, -0.7])
    half = OptimizerState("sgd", 0.25)
    two_half = sgd_step(half, sgd_step(half, f, g), g)
    np.testing.assert_allclose(two_half, sgd_step(OptimizerState("sgd", 0.5), f, g), rtol=1e-15)


def test_optimizers_reject_non_finite_and_wrong_kind():
    for kind, step in (("sgd", sgd_step), ("adam", adam_step), ("rmsprop", rmsprop_step)):
        with pytest.raises(NumericError):
            step(OptimizerState(kind, 0.1), [0.0], [float("nan")])
    with pytest.raises(ConfigurationError):
        adam_step(OptimizerState("sgd", 0.1), [0.0], [1.0])
    with pytest.raises(ConfigurationError):
        OptimizerState("sgd", 0.0)


def test_adam_zero_grad_and_first_step():
    opt = OptimizerState("adam", 0.01)
    f = np.array([1.0, 2.0])
    np.testing.assert_array_equal(adam_step(opt, f, np.zeros(2)), f)
    opt = OptimizerState("adam", 0.01)
    g = np.array([0.5, -3.0, 1e-3])
    out = adam_step(opt, np.zeros(3), g)
    np.testing.assert_array_equal(np.sign(out), -np.sign(g))
    np.testing.assert_allclose(out, [hand_adam(0.0, gi, 0.01) for gi in g], rtol=1e-14)
    np.testing.assert_allclose(np.abs(out), 0.01 / (1 + 1e-8 / np.abs(g)), rtol=1e-12)
    assert opt.step == 1 and opt.first_moment.shape == (3,)


def test_rmsprop_constant_gradient_converges_to_lr():
    opt = OptimizerState("rmsprop", 0.01, eps=1e-12)
    f = np.zeros(2)
    g = np.array([1.0, -1.0])
    for _ in range(300):
        prev, f = f, rmsprop_step(opt, f, g)
    np.testing.assert_allclose(np.abs(f - prev), 0.01, rtol=1e-9)
    assert opt.step == 300
    np.testing.assert_array_equal(rmsprop_step(OptimizerState("rmsprop", 0.1), [3.0], [0.0]), [3.0])


def test_optimizer_trajectories_are_deterministic():
    def trajectory(kind):
        rng = np.random.default_rng(5)
        opt = OptimizerState(kind, 0.05)
        f = np.zeros(4)
        for _ in range(20):
            f = optimizer_step(opt, f, rng.standard_normal(4))
        return f
    for kind in ("sgd", "adam", "rmsprop"):
        assert trajectory(kind).tobytes() == trajectory(kind).tobytes()


def test_local_round_examples():
    spec = PredictorSpec("linear", 1)
    lr = Learner(spec, LossSpec("squared"), OptimizerState("sgd", 0.1), [2.0, 0.0])
    assert local_round(lr, LabeledBatch([[1.0]], [2.0])) == 0.0
    np.testing.assert_array_equal(lr.model, [2.0, 0.0])

    rng = np.random.default_rng(6)
    lr = Learner(spec, LossSpec("logistic"), OptimizerState("sgd", 0.1), rng.standard_normal(2))
    batch = LabeledBatch(rng.uniform(-1, 1, (5, 1)), rng.integers(0, 2, 5))
    value, grad = loss_and_grad(spec, lr.loss, lr.model, batch)
    expected = sgd_step(OptimizerState("sgd", 0.1), lr.model, grad)
    assert local_round(lr, batch) == value
    assert lr.model.tobytes() == expected.tobytes()


def test_cumulative_loss_sublinear_on_separable_task():
    rng = np.random.default_rng(7)
    spec = PredictorSpec("linear", 2)
    lr = Learner(spec, LossSpec("logistic"), OptimizerState("sgd", 0.5), np.zeros(3))
    losses = []
    for _ in range(2000):
        X = rng.uniform(-1, 1, (10, 2))
        losses.append(local_round(lr, LabeledBatch(X, (X[:, 0] + X[:, 1] > 0).astype(float))))
    cum = np.cumsum(losses)
    # average loss per round keeps falling
    assert cum[-1] / 2000 < cum[999] / 1000 < cum[499] / 500
    assert np.mean(losses[-500:]) < 0.5 * np.mean(losses[:500])


def test_glorot_and_perturbation():
    spec = PredictorSpec("mlp", 6, hidden_units=4)
    base = glorot_init(spec, np.random.default_rng(8))
    limit1 = np.sqrt(6 / 10)
    assert np.all(np.abs(base[:24]) <= limit1) and np.all(base[24:28] == 0)
    assert np.all(base[-1:] == 0)
    same = perturb_init(spec, base, 0.0, np.random.default_rng(9))
    assert same.tobytes() == base.tobytes() and same is not base
    noisy = perturb_init(spec, base, 0.5, np.random.default_rng(9))
    assert np.all(np.abs(noisy[:28] - base[:28]) <= 0.5 * limit1)
    assert np.all(np.abs(noisy[28:] - base[28:]) <= 0.5 * np.sqrt(6 / 5))
    assert not np.array_equal(noisy, base)


def test_outputs_shape():
    spec = PredictorSpec("mlp", 3, hidden_units=2, outputs=4, activation="relu")
    f = glorot_init(spec, np.random.default_rng(10))
    assert outputs(spec, f, np.ones((7, 3))).shape == (7, 4)

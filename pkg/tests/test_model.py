import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imprecise_em.errors import ContractError, ScheduleExhaustedError, ShapeError
from imprecise_em.model import (OptimizerState, cosine_lr, entropy_balance_loss,
                                finite_difference_check, forward, init_classifier, softmax,
                                softmax_backward, soft_cross_entropy, sgd_step)


def test_zero_weights_give_uniform(rng):
    clf = init_classifier(5, 4, "linear", seed=0)
    out = forward(clf, rng.normal(size=(3, 5)))
    np.testing.assert_array_equal(out, np.full((3, 4), 0.25))


def test_identical_rows_identical_outputs(rng):
    clf = init_classifier(6, 3, "mlp", hidden=8, seed=1, zero_head=False)
    x = rng.normal(size=6)
    out = forward(clf, np.stack([x, x, x]))
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_softmax_two_logits():
    expected = math.exp(2) / (math.exp(2) + 1)
    clf = init_classifier(1, 2, "linear", seed=0)
    clf.params["W"][:] = [[2.0, 0.0]]
    out = forward(clf, [[1.0]])[0]
    assert out[0] == pytest.approx(expected, abs=1e-15)
    assert out == pytest.approx([0.8808, 0.1192], abs=1e-4)


def test_shape_error_names_dimensions():
    clf = init_classifier(4, 3, "linear")
    with pytest.raises(ShapeError, match="5.*4"):
        forward(clf, np.zeros((2, 5)))


@given(arrays(np.float64, (7,), elements=st.floats(-500, 500)))
def test_softmax_sums_to_one_for_large_logits(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_soft_cross_entropy_values():
    loss, _ = soft_cross_entropy([0.5, 0.5], [1.0, 0.0])
    assert loss == pytest.approx(0.693147, abs=1e-6)
    loss, _ = soft_cross_entropy(np.full(4, 0.25), [0.1, 0.2, 0.3, 0.4])
    assert loss == pytest.approx(1.386294, abs=1e-6)
    entropy = -(0.7 * math.log(0.7) + 0.3 * math.log(0.3))
    loss, _ = soft_cross_entropy([0.7, 0.3], [0.7, 0.3])
    assert loss == pytest.approx(entropy, abs=1e-10)
    assert loss == pytest.approx(0.610864, abs=1e-6)


def test_soft_cross_entropy_rejects_off_simplex():
    with pytest.raises(ContractError):
        soft_cross_entropy([0.5, 0.6], [1.0, 0.0])


def test_soft_cross_entropy_gradient_is_pred_minus_target(rng):
    z = rng.normal(size=(5, 4))
    p = softmax(z)
    t = rng.dirichlet(np.ones(4), size=5)
    _, g = soft_cross_entropy(p, t)
    np.testing.assert_allclose(g, p - t, atol=1e-10)


def test_entropy_balance_values():
    loss, _ = entropy_balance_loss(np.full((3, 10), 0.1))
    assert loss == pytest.approx(-math.log(10), abs=1e-9)
    loss, _ = entropy_balance_loss([[1.0, 0.0], [0.0, 1.0]])
    assert loss == pytest.approx(-math.log(2), abs=1e-9)
    loss, _ = entropy_balance_loss([[0.0, 1.0, 0.0]])
    assert loss == pytest.approx(0.0, abs=1e-10)


def test_entropy_balance_empty():
    with pytest.raises(ContractError):
        entropy_balance_loss(np.zeros((0, 3)))


def test_cosine_schedule():
    assert cosine_lr(0.1, 0, 100) == 0.1
    assert cosine_lr(0.1, 100, 100) == pytest.approx(0.1 * 0.19509, abs=1e-6)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(math.cos(7 * math.pi / 16), abs=1e-15)
    assert all(cosine_lr(0.1, k, 100) > 0 for k in range(100))


def test_sgd_fixed_point():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = OptimizerState(0.1, 10, momentum=0.0, weight_decay=0.0)
    sgd_step(params, state, {"w": np.zeros(3)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0, 3.0])
    assert state.step == 1


def test_sgd_first_step_uses_base_rate():
    params = {"w": np.array([1.0])}
    state = OptimizerState(0.5, 10, momentum=0.9, weight_decay=0.0)
    sgd_step(params, state, {"w": np.array([2.0])})
    assert params["w"][0] == pytest.approx(0.0)


def test_sgd_momentum_and_decay():
    params = {"w": np.array([1.0])}
    state = OptimizerState(0.1, 4, momentum=0.5, weight_decay=0.1)
    sgd_step(params, state, {"w": np.array([1.0])})
    # w = 1 - 0.1*0.1*1 - 0.1*1
    assert params["w"][0] == pytest.approx(0.89)
    lr1 = 0.1 * math.cos(7 * math.pi / 64)
    sgd_step(params, state, {"w": np.array([1.0])})
    expected = 0.89 - lr1 * 0.1 * 0.89 - lr1 * 1.5
    assert params["w"][0] == pytest.approx(expected)


def test_schedule_exhausted():
    state = OptimizerState(0.1, 1)
    params = {"w": np.zeros(1)}
    sgd_step(params, state, {"w": np.ones(1)})
    with pytest.raises(ScheduleExhaustedError):
        sgd_step(params, state, {"w": np.ones(1)})


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step({"w": np.zeros(2)}, OptimizerState(0.1, 3), {"w": np.zeros(3)})


def _ce_closure(clf, X, t):
    def loss_fn():
        z, cache = clf.logits(X)
        p = softmax(z)
        loss, g = soft_cross_entropy(p, t, check=False)
        return float(loss.mean()), clf.backward(cache, g / len(X))
    return loss_fn


@pytest.mark.parametrize("arch", ["linear", "mlp"])
def test_finite_difference_soft_ce(rng, arch):
    clf = init_classifier(6, 4, arch, hidden=7, seed=3, zero_head=False)
    X = rng.normal(size=(8, 6))
    t = rng.dirichlet(np.ones(4), size=8)
    assert finite_difference_check(clf, _ce_closure(clf, X, t)) <= 1e-4


def test_finite_difference_entropy_balance(rng):
    clf = init_classifier(5, 6, "mlp", hidden=9, seed=4, zero_head=False)
    X = rng.normal(size=(10, 5))

    def loss_fn():
        z, cache = clf.logits(X)
        p = softmax(z)
        loss, dp = entropy_balance_loss(p)
        return loss, clf.backward(cache, softmax_backward(p, dp))

    assert finite_difference_check(clf, loss_fn) <= 1e-4


def test_finite_difference_constant_loss():
    clf = init_classifier(3, 2, "linear", seed=0)
    zero = {k: np.zeros_like(v) for k, v in clf.params.items()}
    assert finite_difference_check(clf, lambda: (1.5, zero)) == 0.0


def test_finite_difference_detects_wrong_gradient(rng):
    clf = init_classifier(4, 3, "linear", seed=0, zero_head=False)
    X = rng.normal(size=(5, 4))
    t = rng.dirichlet(np.ones(3), size=5)
    good = _ce_closure(clf, X, t)

    def bad():
        loss, grads = good()
        return loss, {k: 2 * v for k, v in grads.items()}

    assert finite_difference_check(clf, bad) > 0.5


def test_finite_difference_eps_range():
    clf = init_classifier(2, 2, "linear")
    with pytest.raises(ContractError):
        finite_difference_check(clf, lambda: (0.0, {}), eps=1e-2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_forward_is_deterministic(seed):
    clf = init_classifier(4, 3, "mlp", hidden=5, seed=seed, zero_head=False)
    X = np.random.default_rng(seed).normal(size=(6, 4))
    assert np.array_equal(forward(clf, X), forward(clf.copy(), X.copy()))

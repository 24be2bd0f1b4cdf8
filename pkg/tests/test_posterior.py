import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from imprecise_em.errors import ContractError
from imprecise_em.labels import Kind
from imprecise_em.posterior import (posterior_exact, posterior_noisy, posterior_noisy_partial,
                                    posterior_partial, posterior_targets, posterior_unlabeled)


def test_partial_example():
    t = posterior_partial(np.array([0.5, 0.3, 0.2]), {0, 2})
    np.testing.assert_allclose(t.probs, [0.5 / 0.7, 0.0, 0.2 / 0.7])
    assert t.support.tolist() == [True, False, True]


def test_partial_full_and_singleton():
    p = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(posterior_partial(p, range(3)).probs, p)
    np.testing.assert_array_equal(posterior_partial(p, [1]).probs, [0, 1, 0])


def test_partial_zero_mass_falls_back_to_uniform():
    t = posterior_partial(np.array([1.0, 0.0, 0.0]), [1, 2])
    np.testing.assert_allclose(t.probs, [0, 0.5, 0.5])


def test_partial_errors():
    with pytest.raises(ContractError):
        posterior_partial(np.ones(3) / 3, [])
    with pytest.raises(ContractError):
        posterior_partial(np.ones(3) / 3, [3])


def test_unlabeled_is_identity():
    p = np.array([0.2, 0.8])
    t = posterior_unlabeled(p)
    np.testing.assert_array_equal(t.probs, p)
    t.probs[0] = 9
    assert p[0] == 0.2


def test_noisy_example():
    T = np.array([[0.8, 0.2], [0.2, 0.8]])
    t = posterior_noisy(np.array([0.5, 0.5]), 0, T)
    np.testing.assert_allclose(t.probs, [0.8, 0.2])


def test_noisy_identity_transition_is_one_hot():
    p = np.array([0.3, 0.3, 0.4])
    np.testing.assert_allclose(posterior_noisy(p, 1, np.eye(3)).probs, [0, 1, 0])


def test_noisy_partial_example():
    T = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    p = np.full(3, 1 / 3)
    t = posterior_noisy_partial(p, {0}, T)
    np.testing.assert_allclose(t.probs, [0.8, 0.1, 0.1])
    p = np.array([0.5, 0.3, 0.2])
    t = posterior_noisy_partial(p, {0, 1}, T)
    w = np.array([0.5 * 0.9, 0.3 * 0.9, 0.2 * 0.2])
    np.testing.assert_allclose(t.probs, w / w.sum())
    assert t.support.all()


def test_noisy_partial_full_set_is_prediction():
    T = np.array([[0.7, 0.3], [0.4, 0.6]])
    p = np.array([0.35, 0.65])
    np.testing.assert_allclose(posterior_noisy_partial(p, [0, 1], T).probs, p)


def test_exact():
    np.testing.assert_array_equal(posterior_exact(2, 4).probs, [0, 0, 1, 0])
    assert posterior_exact([0, 1], 2).probs.shape == (2, 2)
    with pytest.raises(ContractError):
        posterior_exact(4, 4)


def test_collapse_to_exact():
    p = np.array([0.25, 0.5, 0.25])
    ex = posterior_exact(1, 3).probs
    np.testing.assert_array_equal(posterior_partial(p, [1]).probs, ex)
    np.testing.assert_array_equal(posterior_noisy(p, 1, np.eye(3)).probs, ex)
    np.testing.assert_array_equal(posterior_noisy_partial(p, [1], np.eye(3)).probs, ex)


def _rowstoch(draw, C):
    m = draw(hnp.arrays(np.float64, (C, C), elements=st.floats(0.01, 1.0)))
    return m / m.sum(axis=1, keepdims=True)


@st.composite
def instance(draw):
    C = draw(st.integers(2, 8))
    logits = draw(hnp.arrays(np.float64, C, elements=st.floats(-30, 30)))
    p = np.exp(logits - logits.max())
    p /= p.sum()
    mask = draw(hnp.arrays(bool, C))
    mask[draw(st.integers(0, C - 1))] = True
    return p, mask, _rowstoch(draw, C), draw(st.integers(0, C - 1))


@settings(max_examples=200, deadline=None)
@given(instance())
def test_targets_on_simplex_and_supported(inst):
    p, mask, T, y = inst
    for t in (posterior_partial(p, mask), posterior_unlabeled(p), posterior_noisy(p, y, T),
              posterior_noisy_partial(p, mask, T), posterior_exact(y, len(p))):
        assert np.all(np.isfinite(t.probs))
        assert np.all(t.probs >= 0)
        assert abs(t.probs.sum() - 1) < 1e-12
        assert np.all(t.probs[~t.support] == 0)


@settings(max_examples=100, deadline=None)
@given(instance(), st.floats(0.01, 100))
def test_invariant_to_rescaling_prediction(inst, c):
    p, mask, T, y = inst
    # below the floor the uniform fallback takes over, which is not scale-free
    assume(min(c, 1.0) * p[mask].sum() > 1e-9)
    assume(min(c, 1.0) * (p * T[:, y]).sum() > 1e-9)
    np.testing.assert_allclose(posterior_partial(p * c, mask).probs,
                               posterior_partial(p, mask).probs, atol=1e-12)
    np.testing.assert_allclose(posterior_noisy(p * c, y, T).probs,
                               posterior_noisy(p, y, T).probs, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(instance())
def test_batch_matches_single(inst):
    p, mask, T, y = inst
    C = len(p)
    P = np.stack([p, np.roll(p, 1)])
    M = np.stack([mask, np.roll(mask, 1)])
    kinds = np.array([Kind.NOISY_PARTIAL, Kind.PARTIAL])
    out = posterior_targets(P, kinds, np.array([-1, -1]), M, T)
    np.testing.assert_allclose(out[0], posterior_noisy_partial(p, mask, T).probs)
    np.testing.assert_allclose(out[1], posterior_partial(P[1], M[1]).probs)
    kinds = np.array([Kind.EXACT, Kind.UNLABELED])
    out = posterior_targets(P, kinds, np.array([y, -1]), np.zeros((2, C), bool))
    np.testing.assert_array_equal(out[0], np.eye(C)[y])
    np.testing.assert_array_equal(out[1], P[1])


def test_targets_need_transition_for_noise():
    with pytest.raises(ContractError):
        posterior_targets(np.full((1, 2), 0.5), np.array([Kind.NOISY]), np.array([0]),
                          np.zeros((1, 2), bool))

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ckil.errors import NumericError
from ckil.policy import (
    PROB_FLOOR,
    PolicyParams,
    action_probs,
    argmax_action,
    entropy,
    forward,
    grad_logits,
    init_params,
    probs_from_logits,
    sample_action,
)


def test_init_deterministic():
    a, b = init_params(4, 2, seed=3), init_params(4, 2, seed=3)
    np.testing.assert_array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, init_params(4, 2, seed=4).flat)


def test_init_scale_and_zero_biases():
    params = init_params(6, 3, width=64, seed=0)
    w1, b1, w2, b2, w3, b3 = params.layers()
    assert params.width == 64
    assert w1.shape == (6, 64) and w3.shape == (64, 3)
    assert np.abs(w1).max() <= 1 / math.sqrt(6) and np.abs(w2).max() <= 1 / 8
    assert not (b1.any() or b2.any() or b3.any())


def test_zero_params_uniform():
    params = init_params(4, 3, zero=True)
    probs = action_probs(params, np.random.default_rng(0).normal(size=(10, 4)))
    np.testing.assert_allclose(probs, 1 / 3)


def test_outputs_on_simplex():
    params = init_params(5, 4, seed=1)
    params = params.with_flat(params.flat * 5)
    probs = action_probs(params, np.random.default_rng(0).normal(size=(1000, 5)) * 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    # renormalizing after the clamp can shave a relative ~1e-8 off the floor
    assert probs.min() >= PROB_FLOOR * (1 - 1e-6)


def test_single_state_gives_vector():
    params = init_params(2, 3, seed=0)
    assert action_probs(params, np.zeros(2)).shape == (3,)


def test_saturation_clamped():
    probs = probs_from_logits(np.array([[50.0, -50.0]]))[0]
    assert probs[0] == pytest.approx(1.0)
    assert probs[1] == pytest.approx(PROB_FLOOR, rel=1e-6)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=5), st.floats(-100, 100))
def test_softmax_shift_invariance(logits, c):
    logits = np.array([logits])
    np.testing.assert_allclose(probs_from_logits(logits + c), probs_from_logits(logits), atol=1e-12)


def test_entropy_values():
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2))
    assert entropy(np.full(3, 1 / 3)) == pytest.approx(math.log(3))
    assert entropy([1.0, 0.0]) == pytest.approx(0.0, abs=1e-6)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6).filter(lambda p: sum(p) > 0.1))
def test_entropy_bounds(p):
    p = np.array(p) / sum(p)
    h = entropy(p)
    assert -1e-6 <= h <= math.log(len(p)) + 1e-12


def test_grad_zero_upstream():
    params = init_params(3, 2, width=8, seed=0)
    g = grad_logits(params, np.ones((4, 3)), np.zeros((4, 2)))
    assert g.shape == params.flat.shape and not g.any()


def _fd_check(params, states, upstream, eps=1e-5):
    analytic = grad_logits(params, states, upstream)
    numeric = np.empty_like(params.flat)
    for k in range(len(params.flat)):
        plus, minus = params.flat.copy(), params.flat.copy()
        plus[k] += eps
        minus[k] -= eps
        f_plus = (forward(params, states, plus)[0] * upstream).sum()
        f_minus = (forward(params, states, minus)[0] * upstream).sum()
        numeric[k] = (f_plus - f_minus) / (2 * eps)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_grad_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = init_params(4, 3, width=10, seed=seed)
    params = params.with_flat(params.flat + rng.normal(scale=0.1, size=params.flat.shape))
    states = rng.normal(size=(3, 4))
    upstream = rng.normal(size=(3, 3))
    assert _fd_check(params, states, upstream) < 1e-4


def test_dead_unit_has_no_gradient():
    params = init_params(2, 2, width=4, seed=0)
    w1, b1, *_ = params.layers()
    b1[0] = -1e3  # first hidden unit never fires for bounded inputs
    states = np.random.default_rng(0).uniform(-1, 1, size=(5, 2))
    g = params.with_flat(grad_logits(params, states, np.ones((5, 2))))
    g_w1, g_b1, g_w2, *_ = g.layers()
    assert not g_w1[:, 0].any() and g_b1[0] == 0 and not g_w2[0, :].any()


def test_non_finite_activation_reports_state():
    params = init_params(2, 2, width=4, seed=0)
    with pytest.raises(NumericError, match="state"):
        action_probs(params, np.array([np.inf, 0.0]))


def test_sample_deterministic_distribution():
    rng = np.random.default_rng(0)
    assert {sample_action([0.0, 1.0, 0.0], rng) for _ in range(200)} == {1}


def test_sample_uniform_frequencies():
    rng = np.random.default_rng(1)
    n = 100_000
    draws = np.array([sample_action([0.25] * 4, rng) for _ in range(n)])
    freq = np.bincount(draws, minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(freq - n / 4) < 3 * sigma)


def test_argmax_tie_break():
    assert argmax_action([0.5, 0.5]) == 0
    assert argmax_action([0.2, 0.4, 0.4]) == 1
    np.testing.assert_array_equal(argmax_action(np.array([[0.5, 0.5], [0.1, 0.9]])), [0, 1])


def test_params_dict_round_trip():
    params = init_params(3, 2, width=5, seed=2)
    back = PolicyParams.from_dict(params.to_dict())
    np.testing.assert_array_equal(back.flat, params.flat)
    bad = params.to_dict()
    bad["shapes"][0] = [9, 9]
    with pytest.raises(ValueError):
        PolicyParams.from_dict(bad)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_grad_fd_randomized(seed):
    rng = np.random.default_rng(seed)
    params = init_params(3, 2, width=6, seed=seed)
    states = rng.normal(size=(3, 3))
    _, (_, pre1, _, pre2, _) = forward(params, states)
    # central differences are meaningless across a ReLU kink
    assume(min(np.abs(pre1).min(), np.abs(pre2).min()) > 1e-3)
    assert _fd_check(params, states, rng.normal(size=(3, 2))) < 1e-4

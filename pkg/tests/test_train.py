import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ckil.demos import Trajectory, generate_dataset, to_buffer
from ckil.density import DensityCache, KernelConfig, precompute_densities
from ckil.errors import ConfigError, IntegrityError, NumericError
from ckil.policy import action_probs, forward, init_params
from ckil.train import (
    OptimizerState,
    TrainConfig,
    adam_step,
    batch_loss,
    bc_loss,
    train_bc,
    train_ckil,
)

from synth import DETERMINISTIC_PI, STOCHASTIC_PI, TRANSITIONS, grid_minimizer, two_state_instance


def _random_instance(seed, n=12, state_dim=3, actions=3, width=8):
    rng = np.random.default_rng(seed)
    traj_states = rng.normal(size=(n + 1, state_dim))
    buffer = to_buffer([Trajectory(0, traj_states, rng.integers(0, actions, n + 1))])
    cache = DensityCache(rng.uniform(0.0, 2.0, n), rng.uniform(0.1, 3.0, n))
    params = init_params(state_dim, actions, width, seed=seed)
    params = params.with_flat(params.flat + rng.normal(scale=0.3, size=params.flat.shape))
    batch = rng.integers(0, n, size=7)
    lam = float(rng.uniform(0.0, 2.0))
    return params, batch, cache, buffer, lam


def _fd_error(params, batch, cache, buffer, lam, eps=1e-5):
    _, analytic = batch_loss(params, batch, cache, buffer, lam)
    numeric = np.empty_like(params.flat)
    for k in range(len(params.flat)):
        up, down = params.flat.copy(), params.flat.copy()
        up[k] += eps
        down[k] -= eps
        f_up = batch_loss(params.with_flat(up), batch, cache, buffer, lam)[0].total
        f_down = batch_loss(params.with_flat(down), batch, cache, buffer, lam)[0].total
        numeric[k] = (f_up - f_down) / (2 * eps)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


def _far_from_kinks(params, buffer):
    _, (_, pre1, _, pre2, _) = forward(params, buffer.z_next)
    return min(np.abs(pre1).min(), np.abs(pre2).min()) > 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(seed):
    params, batch, cache, buffer, lam = _random_instance(seed)
    assume(_far_from_kinks(params, buffer))
    assert _fd_error(params, batch, cache, buffer, lam) < 1e-4


def test_zero_residual():
    buffer, cache = two_state_instance(STOCHASTIC_PI)
    # hand-set weights so that logits at each state equal log pi_D
    params = init_params(1, 2, width=4, zero=True)
    flat = params.flat.copy()
    w1, b1, w2, b2, w3, b3 = params.with_flat(flat).layers(flat)
    w1[0, 0], w1[0, 1] = -1.0, 1.0  # unit 0 fires at s'=-1, unit 1 at s'=+1
    w2[0, 0], w2[1, 1] = 1.0, 1.0
    w3[0, :] = np.log(STOCHASTIC_PI[0])
    w3[1, :] = np.log(STOCHASTIC_PI[1])
    params = params.with_flat(flat)
    loss, _ = batch_loss(params, np.arange(len(buffer)), cache, buffer, 0.0)
    assert loss.balance_term == pytest.approx(0.0, abs=1e-24)


def test_lambda_zero_total_is_balance():
    params, batch, cache, buffer, _ = _random_instance(1)
    loss, _ = batch_loss(params, batch, cache, buffer, 0.0)
    assert loss.total == loss.balance_term


def test_decomposition_and_sign():
    params, batch, cache, buffer, lam = _random_instance(2)
    loss, _ = batch_loss(params, batch, cache, buffer, lam)
    assert loss.total == loss.balance_term + lam * loss.entropy_term
    assert loss.balance_term >= 0 and loss.entropy_term <= 0


def test_entropy_term_counts_duplicates():
    params, _, cache, buffer, _ = _random_instance(3)
    once = batch_loss(params, [4], cache, buffer, 1.0)[0]
    twice = batch_loss(params, [4, 4], cache, buffer, 1.0)[0]
    assert twice.entropy_term == pytest.approx(2 * once.entropy_term)
    assert twice.balance_term == pytest.approx(2 * once.balance_term)


def test_entropy_uses_full_action_set():
    params = init_params(3, 3, width=8, zero=True)
    _, batch, cache, buffer, _ = _random_instance(4)
    loss = batch_loss(params, [0], cache, buffer, 1.0)[0]
    assert loss.entropy_term == pytest.approx(-math.log(3))


def test_misaligned_cache():
    params, batch, cache, buffer, lam = _random_instance(5)
    with pytest.raises(IntegrityError):
        batch_loss(params, batch, DensityCache(cache.p_hat[:-1], cache.t_hat[:-1]), buffer, lam)
    with pytest.raises(IntegrityError):
        batch_loss(params, batch, DensityCache(cache.p_hat, cache.t_hat, "0" * 16), buffer, lam)


def test_adam_zero_gradient():
    params = init_params(2, 2, width=4, seed=0)
    state, new = adam_step(OptimizerState.zeros_like(params), params, np.zeros_like(params.flat), 1e-3)
    np.testing.assert_array_equal(new.flat, params.flat)
    assert state.step == 1


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_adam_first_step_magnitude(g):
    params = init_params(2, 2, width=4, seed=0)
    lr = 1e-2
    _, new = adam_step(OptimizerState.zeros_like(params), params, np.full_like(params.flat, g), lr)
    # bias correction makes the first step lr * g / (|g| + eps)
    np.testing.assert_allclose(params.flat - new.flat, lr * g / (abs(g) + 1e-8), rtol=1e-12)


def test_adam_rejects_non_finite():
    params = init_params(2, 2, width=4, seed=0)
    grad = np.zeros_like(params.flat)
    grad[3] = np.nan
    with pytest.raises(NumericError):
        adam_step(OptimizerState.zeros_like(params), params, grad, 1e-3)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


@pytest.fixture(scope="module")
def cartpole_setup():
    buffer = to_buffer(generate_dataset("cartpole", "cartpole", 1, seed=0))
    cache = precompute_densities(buffer, KernelConfig(), 2)
    return buffer, cache


def test_training_deterministic(cartpole_setup):
    buffer, cache = cartpole_setup
    config = TrainConfig(max_iters=60, batch_size=32, seed=4)
    a, ha = train_ckil(buffer, cache, config, 2)
    b, hb = train_ckil(buffer, cache, config, 2)
    np.testing.assert_array_equal(a.flat, b.flat)
    assert ha.total == hb.total


def test_history_identities(cartpole_setup):
    buffer, cache = cartpole_setup
    config = TrainConfig(lam=0.3, max_iters=200, batch_size=32)
    _, hist = train_ckil(buffer, cache, config, 2)
    for total, bal, ent in zip(hist.total, hist.balance, hist.entropy):
        assert abs(total - (bal + config.lam * ent)) <= 1e-12 * max(1.0, abs(total))
    assert all(b2 <= b1 for b1, b2 in zip(hist.best, hist.best[1:]))
    assert hist.best[-1] == min(hist.smoothed)


def test_plateau_stops_early():
    buffer, cache = two_state_instance(STOCHASTIC_PI)
    config = TrainConfig(lam=0.0, max_iters=20000, patience=50, learning_rate=1e-2, batch_size=64)
    _, hist = train_ckil(buffer, cache, config, 2)
    assert hist.stopped_early and len(hist.total) < 20000


def test_rejects_non_finite_cache(cartpole_setup):
    buffer, cache = cartpole_setup
    bad = cache.p_hat.copy()
    bad[0] = np.inf
    with pytest.raises(NumericError):
        train_ckil(buffer, DensityCache(bad, cache.t_hat, cache.fingerprint), TrainConfig(max_iters=5), 2)


def test_large_lambda_gives_uniform(cartpole_setup):
    buffer, cache = cartpole_setup
    init = init_params(4, 2, seed=0)
    initial = batch_loss(init, np.arange(len(buffer)), cache, buffer, 0.0)[0].balance_term / len(buffer)
    config = TrainConfig(lam=1e3 * max(initial, 1e-12), max_iters=1500, patience=500, batch_size=64)
    params, _ = train_ckil(buffer, cache, config, 2)
    probes = np.random.default_rng(0).normal(size=(100, 4))
    tv = 0.5 * np.abs(action_probs(params, probes) - 0.5).sum(axis=1)
    assert tv.max() <= 0.05


@pytest.mark.parametrize("pi_d", [STOCHASTIC_PI, DETERMINISTIC_PI], ids=["stochastic", "deterministic"])
def test_two_state_recovery(pi_d):
    buffer, cache = two_state_instance(pi_d)
    np.testing.assert_allclose(grid_minimizer(buffer, cache), pi_d[:, 0], atol=1e-12)
    config = TrainConfig(lam=0.0, learning_rate=1e-2, max_iters=4000, patience=1000, batch_size=128)
    params, _ = train_ckil(buffer, cache, config, 2)
    probs = action_probs(params, np.array([[-1.0], [1.0]]))
    tv = 0.5 * np.abs(probs - pi_d).sum(axis=1)
    assert tv.max() <= 0.05


def test_two_state_cache_is_exact():
    buffer, cache = two_state_instance(STOCHASTIC_PI)
    cells = (buffer.s[:, 0] > 0).astype(int)
    cells_next = (buffer.s_next[:, 0] > 0).astype(int)
    t = TRANSITIONS[cells, buffer.a, cells_next]
    np.testing.assert_allclose(cache.t_hat, t, rtol=1e-15)
    np.testing.assert_allclose(cache.p_hat, t * STOCHASTIC_PI[cells_next, buffer.a_next], rtol=1e-15)


@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_scaling_densities(c):
    buffer, cache = two_state_instance(STOCHASTIC_PI)
    params = init_params(1, 2, width=6, seed=1)
    batch = np.arange(len(buffer))
    base = batch_loss(params, batch, cache, buffer, 0.0)[0].balance_term
    scaled = batch_loss(params, batch, cache.scaled(c), buffer, 0.0)[0].balance_term
    assert scaled == pytest.approx(c * c * base, rel=1e-12)
    np.testing.assert_array_equal(grid_minimizer(buffer, cache.scaled(c)), grid_minimizer(buffer, cache))


def test_bc_initial_loss_is_log_actions(cartpole_setup):
    buffer, _ = cartpole_setup
    params = init_params(4, 2, zero=True)
    loss, _ = bc_loss(params, np.arange(len(buffer)), buffer)
    assert loss.total / len(buffer) == pytest.approx(math.log(2), rel=1e-12)


def test_bc_concentrates_on_single_pair():
    traj = Trajectory(0, np.tile([[0.3, -0.2]], (20, 1)), np.full(20, 2))
    buffer = to_buffer([traj], standardize=False)
    params, _ = train_bc(buffer, TrainConfig(learning_rate=1e-2, max_iters=3000, patience=3000, batch_size=16), 3)
    assert action_probs(params, np.array([0.3, -0.2]))[2] > 0.999


def test_bc_gradient_finite_differences():
    params, batch, _, buffer, _ = _random_instance(6)
    _, analytic = bc_loss(params, batch, buffer)
    eps = 1e-5
    numeric = np.empty_like(params.flat)
    for k in range(len(params.flat)):
        up, down = params.flat.copy(), params.flat.copy()
        up[k] += eps
        down[k] -= eps
        numeric[k] = (bc_loss(params.with_flat(up), batch, buffer)[0].total
                      - bc_loss(params.with_flat(down), batch, buffer)[0].total) / (2 * eps)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4

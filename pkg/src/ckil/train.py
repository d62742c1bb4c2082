"""Policy fitting: the balance-equation objective (CKIL) and behavioral cloning.

The CKIL minibatch objective over tuples ``i`` in a batch is

    sum_i (P_i - pi(a'_i | s'_i) * T_i)^2  +  lam * sum_i sum_a pi(a | s'_i) log pi(a | s'_i)

where ``P_i`` and ``T_i`` come from a precomputed :class:`DensityCache`. The
entropy sum runs over the whole action set at every batch ``s'``, counting
repeated tuples once per occurrence.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .demos import TupleBuffer
from .density import DensityCache
from .errors import ConfigError, NumericError
from .policy import DEFAULT_WIDTH, PolicyParams, forward, grad_logits, init_params, log_softmax

REL_IMPROVEMENT = 1e-4
SMOOTHING = 0.99


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_iters: int = 20000
    patience: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError("lambda must be a non-negative number")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        for name in ("batch_size", "max_iters", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("optimizer moments need 0 <= beta < 1 and eps > 0")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    balance_term: float
    entropy_term: float
    total: float


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> OptimizerState:
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat))


def adam_step(state: OptimizerState, params: PolicyParams, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns new ``(state, params)``; inputs are untouched."""
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at optimizer step {state.step + 1}")
    t = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    flat = params.flat - lr * m_hat / (np.sqrt(v_hat) + eps)
    return OptimizerState(m, v, t), params.with_flat(flat)


def _balance_objective(params, z_next, a_next, p_hat, t_hat, lam, flat=None, need_grad=True):
    logits, acts = forward(params, z_next, flat)
    logp = log_softmax(logits)
    pi = np.exp(logp)
    rows = np.arange(len(a_next))
    pi_obs = pi[rows, a_next]
    resid = p_hat - pi_obs * t_hat
    plogp = (pi * logp).sum(axis=1)
    balance = float(resid @ resid)
    ent = float(plogp.sum())
    loss = LossBreakdown(balance, ent, balance + lam * ent)
    if not need_grad:
        return loss, None
    # d/dlogits of the squared residuals, through the softmax
    onehot = np.zeros_like(pi)
    onehot[rows, a_next] = 1.0
    g_pi_obs = -2.0 * resid * t_hat
    d_logits = (g_pi_obs * pi_obs)[:, None] * (onehot - pi)
    if lam:
        d_logits += lam * pi * (logp - plogp[:, None])
    return loss, grad_logits(params, None, d_logits, acts)


def batch_loss(params: PolicyParams, batch, cache: DensityCache, buffer: TupleBuffer, lam: float,
               inputs: np.ndarray | None = None):
    """Loss breakdown and flat gradient of the CKIL objective on ``batch`` (tuple indices).

    ``inputs`` overrides the policy inputs at ``s'`` (defaults to the
    standardized ``buffer.z_next``).
    """
    cache.check_aligned(buffer)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ConfigError("batch must not be empty")
    z_next = buffer.z_next if inputs is None else inputs
    return _balance_objective(params, z_next[batch], buffer.a_next[batch],
                              cache.p_hat[batch], cache.t_hat[batch], lam)


def _bc_objective(params, z, a, flat=None, need_grad=True):
    logits, acts = forward(params, z, flat)
    logp = log_softmax(logits)
    rows = np.arange(len(a))
    nll = float(-logp[rows, a].sum())
    loss = LossBreakdown(nll, 0.0, nll)
    if not need_grad:
        return loss, None
    d_logits = np.exp(logp)
    d_logits[rows, a] -= 1.0
    return loss, grad_logits(params, None, d_logits, acts)


def bc_loss(params: PolicyParams, batch, buffer: TupleBuffer, inputs=None):
    """Negative log-likelihood of the demonstrated actions at ``s`` on ``batch``."""
    z = buffer.z if inputs is None else inputs
    batch = np.asarray(batch, dtype=np.int64)
    return _bc_objective(params, z[batch], buffer.a[batch])


@dataclass
class TrainHistory:
    total: list = field(default_factory=list)
    balance: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    smoothed: list = field(default_factory=list)
    best: list = field(default_factory=list)
    best_iter: int = 0
    stopped_early: bool = False

    def to_dict(self):
        return asdict(self)


class TrainingDiverged(NumericError):
    def __init__(self, message, params, history):
        super().__init__(message)
        self.params = params
        self.history = history


def _optimize(objective, n: int, state_dim: int, action_count: int, config: TrainConfig):
    rng = np.random.default_rng(config.seed)
    params = init_params(state_dim, action_count, config.width, seed=config.seed)
    opt = OptimizerState.zeros_like(params)
    hist = TrainHistory()
    best_params = params
    best_value = np.inf
    plateau_ref = np.inf
    since_improvement = 0
    smoothed = None
    for it in range(config.max_iters):
        batch = rng.integers(0, n, size=config.batch_size)
        loss, grad = objective(params, batch)
        if not np.isfinite(loss.total):
            raise TrainingDiverged(f"loss became non-finite at iteration {it}", best_params, hist)
        smoothed = loss.total if smoothed is None else SMOOTHING * smoothed + (1 - SMOOTHING) * loss.total
        if smoothed < best_value:
            best_value = smoothed
            best_params = params
            hist.best_iter = it
        if it == 0 or smoothed < plateau_ref - REL_IMPROVEMENT * abs(plateau_ref):
            plateau_ref = smoothed
            since_improvement = 0
        else:
            since_improvement += 1
        hist.total.append(loss.total)
        hist.balance.append(loss.balance_term)
        hist.entropy.append(loss.entropy_term)
        hist.smoothed.append(smoothed)
        hist.best.append(best_value)
        if since_improvement >= config.patience:
            hist.stopped_early = True
            break
        try:
            opt, params = adam_step(opt, params, grad, config.learning_rate,
                                    config.beta1, config.beta2, config.eps)
        except NumericError as exc:
            raise TrainingDiverged(str(exc), best_params, hist) from None
    return best_params, hist


def train_ckil(buffer: TupleBuffer, cache: DensityCache, config: TrainConfig,
               action_count: int | None = None, inputs: np.ndarray | None = None):
    """Fit a policy to the balance equation. Returns ``(params, history)``."""
    cache.check_aligned(buffer)
    if not (np.all(np.isfinite(cache.p_hat)) and np.all(np.isfinite(cache.t_hat))):
        raise NumericError("density cache holds non-finite values")
    z_next = buffer.z_next if inputs is None else inputs
    a_next = buffer.a_next
    p_hat, t_hat = cache.p_hat, cache.t_hat
    if action_count is None:
        action_count = int(max(buffer.a.max(), a_next.max())) + 1

    def objective(params, batch):
        return _balance_objective(params, z_next[batch], a_next[batch], p_hat[batch], t_hat[batch], config.lam)

    return _optimize(objective, len(buffer), z_next.shape[1], action_count, config)


def train_bc(buffer: TupleBuffer, config: TrainConfig, action_count: int | None = None,
             inputs: np.ndarray | None = None):
    """Behavioral cloning with the same network, optimizer and stopping rule."""
    z = buffer.z if inputs is None else inputs
    a = buffer.a
    if action_count is None:
        action_count = int(max(a.max(), buffer.a_next.max())) + 1

    def objective(params, batch):
        return _bc_objective(params, z[batch], a[batch])

    return _optimize(objective, len(buffer), z.shape[1], action_count, config)

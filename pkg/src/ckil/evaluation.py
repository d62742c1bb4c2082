"""Seeded policy rollouts, evaluation reports and the estimator consistency probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demos import Standardizer, TupleBuffer, expert_actions
from .density import KernelConfig, ckde_T_batch
from .envs import GridSpec, cell_centers, make
from .errors import ConfigError
from .policy import PolicyParams, argmax_action, forward, probs_from_logits, sample_from_uniform

MODES = ("sampled", "argmax")
DEFAULT_EPISODES = 300


@dataclass(eq=False)
class LearnedPolicy:
    """A trained network plus the input pipeline it was trained with."""

    params: PolicyParams
    standardizer: Standardizer
    grid: GridSpec | None = None

    def inputs(self, states: np.ndarray) -> np.ndarray:
        if self.grid is not None:
            states = cell_centers(states, self.grid)
        return self.standardizer.transform(states)

    def probs(self, states: np.ndarray) -> np.ndarray:
        return probs_from_logits(forward(self.params, self.inputs(states))[0])

    def act(self, states, u, mode="sampled"):
        probs = self.probs(states)
        if mode == "argmax":
            return argmax_action(probs)
        return sample_from_uniform(probs, u)


@dataclass(frozen=True)
class ExpertPolicy:
    expert_id: str

    def act(self, states, u, mode="sampled"):
        return expert_actions(self.expert_id, states)


@dataclass(frozen=True)
class RandomPolicy:
    action_count: int

    def act(self, states, u, mode="sampled"):
        return np.minimum((u * self.action_count).astype(np.int64), self.action_count - 1)


def _episode_setup(env, seeds):
    init, uniforms = [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        init.append(env.initial_states(rng, 1)[0])
        uniforms.append(rng.random(env.spec.max_episode_steps))
    return np.array(init), np.array(uniforms)


def run_episodes(env_id: str, policy, seeds, mode: str = "sampled") -> np.ndarray:
    """Undiscounted returns of one episode per seed.

    Each seed drives its own generator: the initial state is drawn first, then
    one uniform per step for action sampling.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    env = make(env_id)
    params = getattr(policy, "params", None)
    if params is not None and (params.state_dim, params.action_count) != (env.spec.state_dim, env.spec.action_count):
        raise ConfigError(
            f"policy expects {params.state_dim} state dims and {params.action_count} actions; "
            f"{env_id} has {env.spec.state_dim} and {env.spec.action_count}"
        )
    states, uniforms = _episode_setup(env, seeds)
    returns = np.zeros(len(states))
    done = np.zeros(len(states), dtype=bool)
    for t in range(env.spec.max_episode_steps):
        live = np.flatnonzero(~done)
        actions = np.asarray(policy.act(states[live], uniforms[live, t], mode), dtype=np.int64)
        nxt, rewards, terminated = env.dynamics(states[live], actions)
        returns[live] += rewards
        states[live] = nxt
        done[live] = terminated
        if done.all():
            break
    return returns


def rollout(env_id: str, policy, mode: str = "sampled", seed: int = 0) -> float:
    return float(run_episodes(env_id, policy, [seed], mode)[0])


@dataclass
class EvalReport:
    mean_return: float
    std_return: float
    n_episodes: int
    returns: list = field(repr=False)
    policy_mode: str

    def to_dict(self):
        return {
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "n_episodes": self.n_episodes,
            "policy_mode": self.policy_mode,
            "returns": self.returns,
        }


def evaluate(env_id: str, policy, n_episodes: int = DEFAULT_EPISODES, base_seed: int = 0,
             mode: str = "sampled") -> EvalReport:
    if n_episodes < 1:
        raise ConfigError("n_episodes must be at least 1")
    returns = run_episodes(env_id, policy, range(base_seed, base_seed + n_episodes), mode)
    return EvalReport(float(returns.mean()), float(returns.std()), n_episodes, returns.tolist(), mode)


# --- consistency probe ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticMDP:
    """1-D state, two actions: ``s' = s + shift[a] + N(0, noise_sd^2)``, ``s ~ N(0, state_sd^2)``."""

    shifts: tuple[float, float] = (-0.5, 0.5)
    noise_sd: float = 1.0
    state_sd: float = 1.0

    def __post_init__(self):
        if not self.noise_sd > 0:
            raise ConfigError("noise_sd must be positive; the transition density is unbounded otherwise")

    def density(self, s, a, s_next):
        mu = np.asarray(s) + np.asarray(self.shifts)[np.asarray(a)]
        z = (np.asarray(s_next) - mu) / self.noise_sd
        return np.exp(-0.5 * z * z) / (self.noise_sd * np.sqrt(2 * np.pi))

    def sample_buffer(self, n: int, rng: np.random.Generator) -> TupleBuffer:
        s = rng.normal(0.0, self.state_sd, n)
        a = rng.integers(0, 2, n)
        s_next = s + np.asarray(self.shifts)[a] + rng.normal(0.0, self.noise_sd, n)
        a_next = rng.integers(0, 2, n)
        return TupleBuffer(
            s[:, None], a, s_next[:, None], a_next, np.arange(n),
            Standardizer.identity(1), np.concatenate([s, s_next])[:, None],
        )

    def probe_grid(self, n_s: int = 20, n_next: int = 20):
        """``(s, a, s')`` points: ``s`` within two state sds, ``s'`` within two noise sds of its mean."""
        s_vals = np.linspace(-2 * self.state_sd, 2 * self.state_sd, n_s)
        offsets = np.linspace(-2 * self.noise_sd, 2 * self.noise_sd, n_next)
        s, a, off = np.meshgrid(s_vals, [0, 1], offsets, indexing="ij")
        s, a, off = s.ravel(), a.ravel(), off.ravel()
        return s, a, s + np.asarray(self.shifts)[a] + off


@dataclass(frozen=True)
class BandwidthRule:
    """``h(n) = scale * n^(-exponent)`` for both ``h2`` and ``h3``."""

    scale: float = 0.2
    exponent: float = 1.0 / 3.0

    def __call__(self, n: int) -> float:
        return self.scale * n ** (-self.exponent)


@dataclass
class ConsistencyReport:
    rows: list  # dicts with n, bandwidth, mean_abs_error


def consistency_probe(mdp: SyntheticMDP = SyntheticMDP(), n_values=(100, 1000, 10000),
                      rule: BandwidthRule = BandwidthRule(), seed: int = 0,
                      replicates: int = 4) -> ConsistencyReport:
    """Mean absolute error of the CKDE transition estimate against the true density.

    The error at each ``n`` is averaged over ``replicates`` independent buffers.
    """
    n_values = list(n_values)
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ConfigError("n values must be strictly increasing")
    s, a, s_next = mdp.probe_grid()
    truth = mdp.density(s, a, s_next)
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    rows = []
    for n in n_values:
        h = rule(n)
        config = KernelConfig(h1=h, h2=h, h3=h)
        errors = []
        for r in range(replicates):
            buffer = mdp.sample_buffer(n, np.random.default_rng([seed, n, r]))
            est = ckde_T_batch(buffer, s[:, None], a, s_next[:, None], config, action_count=2)
            errors.append(np.abs(est - truth).mean())
        rows.append({"n": n, "bandwidth": h, "mean_abs_error": float(np.mean(errors))})
    return ConsistencyReport(rows)

"""Scripted demonstrators, demonstration datasets and the transition-tuple buffer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import GridSpec, cell_centers, make
from .errors import ConfigError, InputError, ParseError

SCALE_FLOOR = 1e-6

CARTPOLE_GAINS = np.array([0.05, 0.2, 1.0, 0.3])


def _mountaincar_expert(states):
    # push with the velocity; standing still counts as moving right
    return np.where(states[:, 1] >= 0, 2, 0)


def _cartpole_expert(states):
    return (states @ CARTPOLE_GAINS > 0).astype(np.int64)


def _acrobot_expert(states):
    # torque along the actuated joint's velocity: joint power is never negative
    return np.where(states[:, 5] > 0, 2, 0)


EXPERTS = {
    "mountaincar": _mountaincar_expert,
    "cartpole": _cartpole_expert,
    "acrobot": _acrobot_expert,
}


def _expert_fn(expert_id, env_id=None):
    if expert_id not in EXPERTS:
        raise ConfigError(f"unknown expert {expert_id!r}; expected one of {', '.join(EXPERTS)}")
    if env_id is not None and expert_id != env_id:
        raise ConfigError(f"expert {expert_id!r} cannot drive environment {env_id!r}")
    return EXPERTS[expert_id]


def expert_actions(expert_id: str, states: np.ndarray) -> np.ndarray:
    """Greedy expert actions for a batch of states."""
    return _expert_fn(expert_id)(np.atleast_2d(states)).astype(np.int64)


def expert_action(expert_id: str, state, rng: np.random.Generator, epsilon: float = 0.0) -> int:
    """One expert decision; with probability ``epsilon`` a uniform random action instead.

    Always consumes two draws from ``rng`` so episodes stay aligned whatever
    ``epsilon`` is.
    """
    n_actions = make(expert_id).spec.action_count
    greedy = int(expert_actions(expert_id, np.asarray(state, dtype=float))[0])
    u = rng.random()
    random_action = int(rng.integers(0, n_actions))
    return random_action if u < epsilon else greedy


@dataclass(eq=False)
class Trajectory:
    episode_id: int
    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T,)
    terminal: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(len(self.actions), -1)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if len(self.actions) == 0:
            raise InputError(f"episode {self.episode_id} is empty")

    def __len__(self):
        return len(self.actions)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.episode_id == other.episode_id
            and self.terminal == other.terminal
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )

    @property
    def steps(self):
        return list(zip(self.states, self.actions.tolist()))


def generate_dataset(
    env_id: str,
    expert_id: str,
    n_trajectories: int,
    seed: int,
    epsilon: float = 0.0,
) -> list[Trajectory]:
    """Roll out the scripted expert for ``n_trajectories`` episodes.

    Episode ``k`` gets its own generator spawned from ``seed``; it draws the
    initial state first, then one uniform and one random action per step for
    the epsilon mixing. All episodes advance together as one batch.
    """
    if n_trajectories < 1:
        raise ConfigError("n_trajectories must be at least 1")
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    policy = _expert_fn(expert_id, env_id)
    env = make(env_id)
    horizon = env.spec.max_episode_steps
    n_actions = env.spec.action_count

    children = np.random.SeedSequence(seed).spawn(n_trajectories)
    init, coin, rand = [], [], []
    for child in children:
        rng = np.random.default_rng(child)
        init.append(env.initial_states(rng, 1)[0])
        coin.append(rng.random(horizon))
        rand.append(rng.integers(0, n_actions, horizon))
    coin = np.array(coin)
    rand = np.array(rand)

    states = np.array(init)
    record_s = np.empty((horizon, n_trajectories, env.spec.state_dim))
    record_a = np.empty((horizon, n_trajectories), dtype=np.int64)
    lengths = np.full(n_trajectories, horizon)
    terminal = np.zeros(n_trajectories, dtype=bool)
    done = np.zeros(n_trajectories, dtype=bool)
    for t in range(horizon):
        actions = np.where(coin[:, t] < epsilon, rand[:, t], policy(states))
        record_s[t] = states
        record_a[t] = actions
        nxt, _, term = env.dynamics(states, actions)
        newly = term & ~done
        lengths[newly] = t + 1
        terminal |= newly
        done |= term
        states = np.where(done[:, None], states, nxt)
        if done.all():
            break

    return [
        Trajectory(k, record_s[: lengths[k], k].copy(), record_a[: lengths[k], k].copy(), bool(terminal[k]))
        for k in range(n_trajectories)
    ]


def snap_to_grid(trajectories: list[Trajectory], grid: GridSpec) -> list[Trajectory]:
    """Replace every state by its grid-cell center (the discrete-state view)."""
    return [
        Trajectory(t.episode_id, cell_centers(t.states, grid), t.actions.copy(), t.terminal)
        for t in trajectories
    ]


def draw_trajectories(pool: list[Trajectory], count: int, rng: np.random.Generator) -> list[Trajectory]:
    if count > len(pool):
        raise ConfigError(f"cannot draw {count} trajectories from a pool of {len(pool)}")
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in picks]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, states):
        return (np.asarray(states, dtype=float) - self.mean) / self.scale

    @classmethod
    def fit(cls, states: np.ndarray) -> Standardizer:
        return cls(states.mean(axis=0), np.maximum(states.std(axis=0), SCALE_FLOOR))

    @classmethod
    def identity(cls, dim: int) -> Standardizer:
        return cls(np.zeros(dim), np.ones(dim))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float))


@dataclass(eq=False)
class TupleBuffer:
    """Consecutive ``(s, a, s', a')`` tuples from demonstration episodes.

    ``s`` and ``s_next`` hold raw states; ``z``/``z_next`` are their
    standardized versions, which every distance computation uses.
    """

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    episode: np.ndarray
    standardizer: Standardizer
    all_states: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.a)

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]

    @property
    def z(self) -> np.ndarray:
        return self.standardizer.transform(self.s)

    @property
    def z_next(self) -> np.ndarray:
        return self.standardizer.transform(self.s_next)

    def subset(self, index) -> TupleBuffer:
        index = np.asarray(index)
        return TupleBuffer(
            self.s[index], self.a[index], self.s_next[index], self.a_next[index],
            self.episode[index], self.standardizer, self.all_states,
        )


def to_buffer(trajectories: list[Trajectory], standardize: bool = True) -> TupleBuffer:
    s, a, s2, a2, ep, seen = [], [], [], [], [], []
    for traj in trajectories:
        if len(traj) < 2:
            continue
        s.append(traj.states[:-1])
        a.append(traj.actions[:-1])
        s2.append(traj.states[1:])
        a2.append(traj.actions[1:])
        ep.append(np.full(len(traj) - 1, traj.episode_id))
        seen.append(traj.states)
    if not s:
        raise InputError("no transition tuples: every episode has fewer than two steps")
    all_states = np.concatenate(seen)
    std = Standardizer.fit(all_states) if standardize else Standardizer.identity(all_states.shape[1])
    return TupleBuffer(
        np.concatenate(s), np.concatenate(a), np.concatenate(s2), np.concatenate(a2),
        np.concatenate(ep), std, all_states,
    )


# --- dataset files -----------------------------------------------------------
#
# One JSON object per line, one line per step:
#   {"episode_id": 0, "step": 0, "state": [..], "action": 1, "terminal": false}

REQUIRED_FIELDS = ("episode_id", "step", "state", "action")


def dumps_dataset(trajectories: list[Trajectory]) -> str:
    lines = []
    for traj in trajectories:
        for t, (state, action) in enumerate(zip(traj.states, traj.actions)):
            record = {
                "episode_id": int(traj.episode_id),
                "step": t,
                "state": [float(x) for x in state],
                "action": int(action),
                "terminal": bool(traj.terminal),
            }
            lines.append(json.dumps(record))
    return "\n".join(lines) + "\n"


def save_dataset(trajectories: list[Trajectory], path) -> None:
    Path(path).write_text(dumps_dataset(trajectories))


def loads_dataset(text: str) -> list[Trajectory]:
    episodes: dict[int, dict] = {}
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(record, dict):
            raise ParseError("record must be a JSON object", line=lineno)
        for name in REQUIRED_FIELDS:
            if name not in record:
                raise ParseError(f"missing field {name!r}", line=lineno, field=name)
        ep_id, step_idx, state, action = (record[k] for k in REQUIRED_FIELDS)
        if not isinstance(ep_id, int) or not isinstance(step_idx, int):
            raise ParseError("episode_id and step must be integers", line=lineno, field="step")
        if not isinstance(action, int) or action < 0:
            raise ParseError("action must be a non-negative integer", line=lineno, field="action")
        if not isinstance(state, list) or not state or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in state
        ):
            raise ParseError("state must be a non-empty list of numbers", line=lineno, field="state")
        if not all(math.isfinite(x) for x in state):
            raise ParseError("state components must be finite", line=lineno, field="state")
        if dim is None:
            dim = len(state)
        elif len(state) != dim:
            raise ParseError(f"state has {len(state)} components, expected {dim}", line=lineno, field="state")
        ep = episodes.setdefault(ep_id, {"states": [], "actions": [], "terminal": False})
        if step_idx != len(ep["actions"]):
            raise ParseError(
                f"episode {ep_id}: expected step {len(ep['actions'])}, got {step_idx}",
                line=lineno, field="step",
            )
        ep["states"].append([float(x) for x in state])
        ep["actions"].append(action)
        ep["terminal"] = bool(record.get("terminal", False))
    if not episodes:
        raise ParseError("dataset contains no steps")
    return [
        Trajectory(ep_id, np.array(e["states"]), np.array(e["actions"]), e["terminal"])
        for ep_id, e in episodes.items()
    ]


def load_dataset(path) -> list[Trajectory]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc.strerror}") from None
    return loads_dataset(text)

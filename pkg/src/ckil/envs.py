"""Classic-control environments: MountainCar, CartPole and Acrobot.

The dynamics follow the published equations of motion and physical constants
of the standard benchmark versions (MountainCar-v0, CartPole-v1, Acrobot-v1).
All environments are stateless: a state vector goes in, the next one comes out.
Dynamics are written over batches of shape ``(B, state_dim)`` so that many
episodes can be advanced at once; the single-state API is a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

ENV_IDS = ("mountaincar", "cartpole", "acrobot")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_count: int
    state_bounds: tuple[tuple[float, float], ...]
    max_episode_steps: int

    @property
    def low(self) -> np.ndarray:
        return np.array([b[0] for b in self.state_bounds])

    @property
    def high(self) -> np.ndarray:
        return np.array([b[1] for b in self.state_bounds])


@dataclass(frozen=True)
class GridSpec:
    cells_per_dim: tuple[int, ...]
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.cells_per_dim) != len(self.bounds):
            raise ConfigError("grid cells_per_dim and bounds differ in length")
        if any(c < 1 for c in self.cells_per_dim):
            raise ConfigError("grid needs at least one cell per dimension")
        if any(lo >= hi for lo, hi in self.bounds):
            raise ConfigError("grid bounds must satisfy low < high")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @classmethod
    def for_env(cls, spec: EnvSpec, cells: int) -> GridSpec:
        return cls((cells,) * spec.state_dim, spec.state_bounds)


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class Environment:
    spec: EnvSpec

    def initial_states(self, rng: np.random.Generator, count: int = 1) -> np.ndarray:
        raise NotImplementedError

    def dynamics(self, states: np.ndarray, actions: np.ndarray):
        """Advance a batch one step. Returns ``(next_states, rewards, terminated)``."""
        raise NotImplementedError

    def check_actions(self, actions) -> np.ndarray:
        actions = np.asarray(actions)
        if actions.size and (actions.min() < 0 or actions.max() >= self.spec.action_count):
            raise InputError(
                f"{self.spec.name}: action out of range [0, {self.spec.action_count})"
            )
        return actions.astype(np.int64)


class MountainCar(Environment):
    force = 0.001
    gravity = 0.0025
    min_position, max_position = -1.2, 0.6
    max_speed = 0.07
    goal_position = 0.5

    spec = EnvSpec(
        name="mountaincar",
        state_dim=2,
        action_count=3,
        state_bounds=((-1.2, 0.6), (-0.07, 0.07)),
        max_episode_steps=200,
    )

    def initial_states(self, rng, count=1):
        states = np.zeros((count, 2))
        states[:, 0] = rng.uniform(-0.6, -0.4, size=count)
        return states

    def dynamics(self, states, actions):
        position = states[:, 0]
        velocity = states[:, 1] + (actions - 1) * self.force + np.cos(3 * position) * (-self.gravity)
        velocity = np.clip(velocity, -self.max_speed, self.max_speed)
        position = np.clip(position + velocity, self.min_position, self.max_position)
        velocity = np.where((position == self.min_position) & (velocity < 0), 0.0, velocity)
        terminated = (position >= self.goal_position) & (velocity >= 0)
        rewards = np.full(len(states), -1.0)
        return np.stack([position, velocity], axis=1), rewards, terminated


class CartPole(Environment):
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masspole + masscart
    length = 0.5  # half the pole length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * np.pi / 360
    x_threshold = 2.4

    # Velocity bounds are surrogates; the dynamics never clip them.
    spec = EnvSpec(
        name="cartpole",
        state_dim=4,
        action_count=2,
        state_bounds=((-4.8, 4.8), (-5.0, 5.0), (-0.418879, 0.418879), (-5.0, 5.0)),
        max_episode_steps=500,
    )

    def initial_states(self, rng, count=1):
        return rng.uniform(-0.05, 0.05, size=(count, 4))

    def dynamics(self, states, actions):
        x, x_dot, theta, theta_dot = states.T
        force = np.where(actions == 1, self.force_mag, -self.force_mag)
        costheta = np.cos(theta)
        sintheta = np.sin(theta)
        temp = (force + self.polemass_length * theta_dot**2 * sintheta) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        terminated = (
            (x < -self.x_threshold)
            | (x > self.x_threshold)
            | (theta < -self.theta_threshold)
            | (theta > self.theta_threshold)
        )
        rewards = np.ones(len(states))
        return np.stack([x, x_dot, theta, theta_dot], axis=1), rewards, terminated


class Acrobot(Environment):
    """Two-link underactuated pendulum, torque on the middle joint.

    The observation ``(cos t1, sin t1, cos t2, sin t2, dt1, dt2)`` is a complete
    state; angles are recovered with ``arctan2``. Integration is a single
    fourth-order Runge-Kutta step of length ``dt`` per action, as in the
    reference implementation.
    """

    dt = 0.2
    link_length_1 = 1.0
    link_mass_1 = 1.0
    link_mass_2 = 1.0
    link_com_pos_1 = 0.5
    link_com_pos_2 = 0.5
    link_moi = 1.0
    max_vel_1 = 4 * np.pi
    max_vel_2 = 9 * np.pi
    torques = np.array([-1.0, 0.0, 1.0])
    g = 9.8

    spec = EnvSpec(
        name="acrobot",
        state_dim=6,
        action_count=3,
        state_bounds=((-1.0, 1.0),) * 4 + ((-4 * np.pi, 4 * np.pi), (-9 * np.pi, 9 * np.pi)),
        max_episode_steps=500,
    )

    @staticmethod
    def to_angles(obs: np.ndarray) -> np.ndarray:
        """Observation batch -> internal ``(t1, t2, dt1, dt2)`` batch."""
        return np.stack(
            [np.arctan2(obs[:, 1], obs[:, 0]), np.arctan2(obs[:, 3], obs[:, 2]), obs[:, 4], obs[:, 5]],
            axis=1,
        )

    @staticmethod
    def to_observation(internal: np.ndarray) -> np.ndarray:
        t1, t2, dt1, dt2 = internal.T
        return np.stack([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), dt1, dt2], axis=1)

    def initial_states(self, rng, count=1):
        return self.to_observation(rng.uniform(-0.1, 0.1, size=(count, 4)))

    def _dsdt(self, s, torque):
        m1, m2 = self.link_mass_1, self.link_mass_2
        l1 = self.link_length_1
        lc1, lc2 = self.link_com_pos_1, self.link_com_pos_2
        i1 = i2 = self.link_moi
        g = self.g
        theta1, theta2, dtheta1, dtheta2 = s.T
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - np.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - np.pi / 2)
            + phi2
        )
        ddtheta2 = (
            torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2) - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.stack([dtheta1, dtheta2, ddtheta1, ddtheta2], axis=1)

    def dynamics(self, states, actions):
        s = self.to_angles(states)
        torque = self.torques[actions]
        dt = self.dt
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(s + dt / 2 * k1, torque)
        k3 = self._dsdt(s + dt / 2 * k2, torque)
        k4 = self._dsdt(s + dt * k3, torque)
        ns = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ns[:, 0] = _wrap(ns[:, 0])
        ns[:, 1] = _wrap(ns[:, 1])
        ns[:, 2] = np.clip(ns[:, 2], -self.max_vel_1, self.max_vel_1)
        ns[:, 3] = np.clip(ns[:, 3], -self.max_vel_2, self.max_vel_2)
        terminated = -np.cos(ns[:, 0]) - np.cos(ns[:, 1] + ns[:, 0]) > 1.0
        rewards = np.where(terminated, 0.0, -1.0)
        return self.to_observation(ns), rewards, terminated


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


_ENVS = {"mountaincar": MountainCar(), "cartpole": CartPole(), "acrobot": Acrobot()}


def make(env_id: str) -> Environment:
    try:
        return _ENVS[env_id]
    except KeyError:
        raise ConfigError(f"unknown environment {env_id!r}; expected one of {', '.join(ENV_IDS)}") from None


def env_spec(env_id: str) -> EnvSpec:
    return make(env_id).spec


def reset(env_id: str, seed: int) -> np.ndarray:
    """Initial state drawn from the canonical start distribution with ``seed``."""
    env = make(env_id)
    return env.initial_states(np.random.default_rng(seed), 1)[0]


def step(env_id: str, state, action: int, step_index: int) -> StepResult:
    env = make(env_id)
    state = np.asarray(state, dtype=float)
    if state.shape != (env.spec.state_dim,) or not np.all(np.isfinite(state)):
        raise InputError(f"{env_id}: state must be a finite vector of length {env.spec.state_dim}")
    actions = env.check_actions([action])
    nxt, reward, terminated = env.dynamics(state[None, :], actions)
    truncated = step_index + 1 >= env.spec.max_episode_steps
    return StepResult(nxt[0], float(reward[0]), bool(terminated[0]), bool(truncated))


def cell_indices(states: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Per-dimension cell indices of a batch; boundaries go to the upper cell."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    low = np.array([b[0] for b in grid.bounds])
    high = np.array([b[1] for b in grid.bounds])
    cells = np.array(grid.cells_per_dim)
    clipped = np.clip(states, low, high)
    idx = np.floor((clipped - low) / (high - low) * cells).astype(np.int64)
    return np.minimum(idx, cells - 1)


def discretize_batch(states: np.ndarray, grid: GridSpec) -> np.ndarray:
    idx = cell_indices(states, grid)
    return np.ravel_multi_index(tuple(idx.T), grid.cells_per_dim)


def discretize(state, grid: GridSpec) -> int:
    """Row-major cell index of one state; states are clipped to the grid first."""
    return int(discretize_batch(np.asarray(state, dtype=float)[None, :], grid)[0])


def cell_centers(states: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Replace each state by the center of its grid cell."""
    idx = cell_indices(states, grid)
    low = np.array([b[0] for b in grid.bounds])
    width = (np.array([b[1] for b in grid.bounds]) - low) / np.array(grid.cells_per_dim)
    return low + (idx + 0.5) * width

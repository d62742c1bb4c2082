"""Per-environment experiment presets, the fit pipeline and sample-complexity sweeps."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .demos import Trajectory, draw_trajectories, generate_dataset, snap_to_grid, to_buffer
from .density import DensityCache, KernelConfig, discrete_cache, precompute_densities
from .envs import GridSpec, env_spec
from .errors import ConfigError
from .evaluation import DEFAULT_EPISODES, ExpertPolicy, LearnedPolicy, RandomPolicy, evaluate
from .train import TrainConfig, train_bc, train_ckil

ALGORITHMS = ("ckil", "bc")


@dataclass(frozen=True)
class Preset:
    env_id: str
    kernel: KernelConfig
    train: TrainConfig
    ladder: tuple[int, ...]
    grid_cells: int | None = None
    repeats: int = 10
    n_eval: int = DEFAULT_EPISODES
    pool_size: int = 1000
    epsilon: float = 0.0

    def grid(self) -> GridSpec | None:
        if self.grid_cells is None:
            return None
        return GridSpec.for_env(env_spec(self.env_id), self.grid_cells)

    def replace(self, **changes) -> Preset:
        return dataclasses.replace(self, **changes)


PRESETS = {
    "mountaincar": Preset(
        env_id="mountaincar",
        kernel=KernelConfig(),
        train=TrainConfig(lam=1e-3, max_iters=5000, patience=1000),
        ladder=(1, 3, 10, 30, 50),
        grid_cells=15,
    ),
    "cartpole": Preset(
        env_id="cartpole",
        kernel=KernelConfig(),
        train=TrainConfig(lam=1e-3, max_iters=5000, patience=1000),
        ladder=(1, 3, 7, 10, 15),
    ),
    # a single Acrobot episode is short, so narrow kernels and a longer run pay off
    "acrobot": Preset(
        env_id="acrobot",
        kernel=KernelConfig(h1=0.05, h2=0.05, h3=0.05),
        train=TrainConfig(lam=1e-4, max_iters=20000, patience=2000),
        ladder=(1, 3, 7, 10, 15),
    ),
}


def preset(env_id: str) -> Preset:
    try:
        return PRESETS[env_id]
    except KeyError:
        raise ConfigError(f"no preset for environment {env_id!r}") from None


@dataclass(eq=False)
class FitResult:
    policy: LearnedPolicy
    history: object
    cache: DensityCache | None


def build_buffer(trajectories: list[Trajectory], grid: GridSpec | None = None):
    if grid is not None:
        trajectories = snap_to_grid(trajectories, grid)
    return to_buffer(trajectories, standardize=True)


def build_cache(buffer, env_id: str, kernel: KernelConfig, grid: GridSpec | None = None) -> DensityCache:
    count = env_spec(env_id).action_count
    if grid is not None:
        return discrete_cache(buffer, grid, count)
    return precompute_densities(buffer, kernel, count)


def fit(algo: str, trajectories, env_id: str, kernel: KernelConfig, train: TrainConfig,
        grid: GridSpec | None = None) -> FitResult:
    """Dataset -> buffer -> (densities) -> trained policy."""
    if algo not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
    count = env_spec(env_id).action_count
    buffer = build_buffer(trajectories, grid)
    if algo == "ckil":
        cache = build_cache(buffer, env_id, kernel, grid)
        params, hist = train_ckil(buffer, cache, train, action_count=count)
    else:
        cache = None
        params, hist = train_bc(buffer, train, action_count=count)
    return FitResult(LearnedPolicy(params, buffer.standardizer, grid), hist, cache)


@dataclass
class SweepReport:
    rows: list  # dicts: traj_count, repeat, algorithm, mode, mean_return, std_return

    def summary(self):
        """Across-repeat aggregates per (traj_count, algorithm, mode)."""
        groups: dict = {}
        for row in self.rows:
            groups.setdefault((row["traj_count"], row["algorithm"], row["mode"]), []).append(row["mean_return"])
        out = []
        for (count, algo, mode), values in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            v = np.array(values)
            out.append({
                "traj_count": count,
                "algorithm": algo,
                "mode": mode,
                "repeats": len(v),
                "mean": float(v.mean()),
                "median": float(np.median(v)),
                "std": float(v.std()),
                "stderr": float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0,
            })
        return out


def sweep_cell(pool, env_id, count, repeat, kernel, train, grid, n_eval, seed, algorithms, modes):
    rng = np.random.default_rng([seed, count, repeat])
    trajectories = draw_trajectories(pool, count, rng)
    cell_train = dataclasses.replace(train, seed=int(np.random.default_rng([seed, count, repeat, 1]).integers(2**31)))
    rows = []
    for algo in algorithms:
        result = fit(algo, trajectories, env_id, kernel, cell_train, grid)
        for mode in modes:
            rep = evaluate(env_id, result.policy, n_eval, base_seed=_eval_seed(seed, repeat), mode=mode)
            rows.append({
                "traj_count": count, "repeat": repeat, "algorithm": algo, "mode": mode,
                "mean_return": rep.mean_return, "std_return": rep.std_return,
            })
    return rows


def _eval_seed(seed, repeat):
    # evaluation episodes are shared by every algorithm within a repeat
    return 1_000_000 * (repeat + 1) + seed


def sweep(env_id: str, pool: list[Trajectory], traj_counts, repeats: int, kernel: KernelConfig,
          train: TrainConfig, grid: GridSpec | None = None, n_eval: int = DEFAULT_EPISODES,
          seed: int = 0, algorithms=ALGORITHMS, modes=("sampled", "argmax"), workers: int = 1,
          include_references: bool = True) -> SweepReport:
    """Train and evaluate every algorithm on ``repeats`` random draws per trajectory count."""
    traj_counts = list(traj_counts)
    if not traj_counts or min(traj_counts) < 1:
        raise ConfigError("trajectory counts must be positive")
    if len(pool) < max(traj_counts):
        raise ConfigError(f"pool of {len(pool)} trajectories is smaller than the largest count {max(traj_counts)}")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    jobs = [(count, r) for count in traj_counts for r in range(repeats)]
    args = [(pool, env_id, c, r, kernel, train, grid, n_eval, seed, tuple(algorithms), tuple(modes)) for c, r in jobs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(sweep_cell, *zip(*args)))
    else:
        results = [sweep_cell(*a) for a in args]
    rows = [row for cell in results for row in cell]
    if include_references:
        spec = env_spec(env_id)
        for name, pol in (("expert", ExpertPolicy(env_id)), ("random", RandomPolicy(spec.action_count))):
            rep = evaluate(env_id, pol, n_eval, base_seed=_eval_seed(seed, 0), mode="sampled")
            rows.append({
                "traj_count": 0, "repeat": 0, "algorithm": name, "mode": "sampled",
                "mean_return": rep.mean_return, "std_return": rep.std_return,
            })
    return SweepReport(rows)


def make_pool(p: Preset, seed: int = 0, size: int | None = None) -> list[Trajectory]:
    return generate_dataset(p.env_id, p.env_id, size or p.pool_size, seed, p.epsilon)

"""Transition-density estimators for the balance equation.

Two conditionals are needed at every buffer tuple ``(s, a, s', a')``:

* ``P(s', a' | s, a)`` -- the state-action chain induced by the demonstrator
* ``T(s' | s, a)``     -- the environment transition density

Discrete state spaces use plain counting ratios. Continuous ones use conditional
kernel density estimates: a ratio of a product-kernel sum over the buffer to the
kernel sum on the conditioning pair alone. Kernels are Gaussian with bandwidth
matrix ``h * I``, evaluated on a scalar distance ``d`` as
``(2 pi h)^(-m/2) exp(-d^2 / (2 h))``.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .demos import TupleBuffer
from .envs import GridSpec, discretize_batch
from .errors import ConfigError, IntegrityError, ParseError

ACTION_MODES = ("exact_match", "one_hot")


def kernel_value(distance, bandwidth: float, dim: int):
    """Gaussian kernel with bandwidth matrix ``bandwidth * I_dim`` at a scalar distance."""
    d = np.asarray(distance, dtype=float)
    return (2 * np.pi * bandwidth) ** (-dim / 2) * np.exp(-(d * d) / (2 * bandwidth))


@dataclass(frozen=True)
class KernelConfig:
    h1: float = 0.25
    h2: float = 0.25
    h3: float = 0.25
    action_distance: str = "exact_match"
    denominator_floor: float = 1e-12
    one_hot_scale: float = 1.0

    def __post_init__(self):
        for name in ("h1", "h2", "h3", "denominator_floor", "one_hot_scale"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value}")
        if self.action_distance not in ACTION_MODES:
            raise ConfigError(f"action_distance must be one of {ACTION_MODES}")

    def dims(self, state_dim: int, action_count: int) -> tuple[int, int, int]:
        """Kernel dimensions ``(m1, m2, m3)`` for ``(s',a')``, ``(s,a)`` and ``s'``."""
        width = action_count if self.action_distance == "one_hot" else 0
        return state_dim + width, state_dim + width, state_dim

    def kernel(self, distance, which: int, state_dim: int, action_count: int):
        h = (self.h1, self.h2, self.h3)[which - 1]
        return kernel_value(distance, h, self.dims(state_dim, action_count)[which - 1])

    def to_dict(self):
        return asdict(self)


# --- discrete regime -------------------------------------------------------------


@dataclass
class DiscreteDensityTable:
    """Counting estimates over grid cells. Unvisited ``(s, a)`` fall back to uniform."""

    n_cells: int
    action_count: int
    count_sa: Counter
    count_sas: Counter
    count_sasa: Counter

    def T_ratio(self, s: int, a: int, s_next: int) -> Fraction:
        n = self.count_sa.get((s, a), 0)
        if n == 0:
            return Fraction(1, self.n_cells)
        return Fraction(self.count_sas.get((s, a, s_next), 0), n)

    def P_ratio(self, s: int, a: int, s_next: int, a_next: int) -> Fraction:
        n = self.count_sa.get((s, a), 0)
        if n == 0:
            return Fraction(1, self.n_cells * self.action_count)
        return Fraction(self.count_sasa.get((s, a, s_next, a_next), 0), n)

    # float() of a Fraction is correctly rounded, the same as int / int
    def T(self, s: int, a: int, s_next: int) -> float:
        return float(self.T_ratio(s, a, s_next))

    def P(self, s: int, a: int, s_next: int, a_next: int) -> float:
        return float(self.P_ratio(s, a, s_next, a_next))


def count_estimates(buffer: TupleBuffer, grid: GridSpec, action_count: int | None = None) -> DiscreteDensityTable:
    cells = discretize_batch(buffer.s, grid).tolist()
    cells_next = discretize_batch(buffer.s_next, grid).tolist()
    a = buffer.a.tolist()
    a2 = buffer.a_next.tolist()
    if action_count is None:
        action_count = int(max(max(a), max(a2))) + 1
    return DiscreteDensityTable(
        n_cells=grid.n_cells,
        action_count=action_count,
        count_sa=Counter(zip(cells, a)),
        count_sas=Counter(zip(cells, a, cells_next)),
        count_sasa=Counter(zip(cells, a, cells_next, a2)),
    )


# --- continuous regime -------------------------------------------------------


def _sq_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # per-dimension accumulation keeps each pair's value independent of its position
    out = np.zeros((len(x), len(y)))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - y[None, :, k]
        out += diff * diff
    return out


def _row_sum(terms: np.ndarray) -> np.ndarray:
    # summing sorted terms makes the result independent of buffer order
    return np.sort(terms, axis=1).sum(axis=1)


def _ckde_block(z, a, z_next, a_next, buffer: TupleBuffer, config: KernelConfig, action_count: int):
    """``(P_hat, T_hat)`` for a block of query rows. ``a_next=None`` skips ``P_hat``."""
    m1, m2, m3 = config.dims(buffer.state_dim, action_count)
    bz, bz_next = buffer.z, buffer.z_next
    same_a = a[:, None] == buffer.a[None, :]
    sq2 = _sq_dist(z, bz)
    if config.action_distance == "one_hot":
        sq2 = sq2 + 2 * config.one_hot_scale**2 * ~same_a
        k2 = kernel_value(np.sqrt(sq2), config.h2, m2)
    else:
        k2 = np.where(same_a, kernel_value(np.sqrt(sq2), config.h2, m2), 0.0)
    denom = np.maximum(_row_sum(k2), config.denominator_floor)

    sq3 = _sq_dist(z_next, bz_next)
    t_hat = _row_sum(kernel_value(np.sqrt(sq3), config.h3, m3) * k2) / denom
    if a_next is None:
        return None, t_hat
    same_a2 = a_next[:, None] == buffer.a_next[None, :]
    if config.action_distance == "one_hot":
        k1 = kernel_value(np.sqrt(sq3 + 2 * config.one_hot_scale**2 * ~same_a2), config.h1, m1)
    else:
        k1 = np.where(same_a2, kernel_value(np.sqrt(sq3), config.h1, m1), 0.0)
    p_hat = _row_sum(k1 * k2) / denom
    return p_hat, t_hat


def _query_arrays(buffer, s, a, s_next):
    std = buffer.standardizer
    z = std.transform(np.atleast_2d(s))
    z_next = std.transform(np.atleast_2d(s_next))
    return z, np.atleast_1d(np.asarray(a, dtype=np.int64)), z_next


def _action_count(buffer, config_count):
    if config_count is not None:
        return config_count
    return int(max(buffer.a.max(), buffer.a_next.max())) + 1


def ckde_T(buffer: TupleBuffer, s, a, s_next, config: KernelConfig, action_count: int | None = None) -> float:
    """CKDE estimate of ``T(s'|s,a)`` at one query (raw, unstandardized coordinates)."""
    z, a, z_next = _query_arrays(buffer, s, a, s_next)
    _, t = _ckde_block(z, a, z_next, None, buffer, config, _action_count(buffer, action_count))
    return float(t[0])


def ckde_P(buffer: TupleBuffer, s, a, s_next, a_next, config: KernelConfig, action_count: int | None = None) -> float:
    """CKDE estimate of ``P(s',a'|s,a)`` at one query."""
    z, a, z_next = _query_arrays(buffer, s, a, s_next)
    a_next = np.atleast_1d(np.asarray(a_next, dtype=np.int64))
    p, _ = _ckde_block(z, a, z_next, a_next, buffer, config, _action_count(buffer, action_count))
    return float(p[0])


def ckde_T_batch(buffer, s, a, s_next, config, action_count=None, chunk=256) -> np.ndarray:
    z, a, z_next = _query_arrays(buffer, s, a, s_next)
    count = _action_count(buffer, action_count)
    out = [
        _ckde_block(z[i:i + chunk], a[i:i + chunk], z_next[i:i + chunk], None, buffer, config, count)[1]
        for i in range(0, len(z), chunk)
    ]
    return np.concatenate(out)


# --- cache -------------------------------------------------------------------


def buffer_fingerprint(buffer: TupleBuffer) -> str:
    h = hashlib.sha256()
    for arr in (buffer.s, buffer.a, buffer.s_next, buffer.a_next):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


@dataclass(eq=False)
class DensityCache:
    p_hat: np.ndarray
    t_hat: np.ndarray
    fingerprint: str = ""

    def __len__(self):
        return len(self.p_hat)

    def check_aligned(self, buffer: TupleBuffer):
        if len(self) != len(buffer):
            raise IntegrityError(f"density cache has {len(self)} entries but buffer has {len(buffer)}")
        if self.fingerprint and self.fingerprint != buffer_fingerprint(buffer):
            raise IntegrityError("density cache was computed for a different buffer")

    def scaled(self, c: float) -> DensityCache:
        return DensityCache(self.p_hat * c, self.t_hat * c, self.fingerprint)


def precompute_densities(buffer: TupleBuffer, config: KernelConfig, action_count: int | None = None,
                         chunk: int = 256) -> DensityCache:
    """Evaluate both CKDE ratios at every buffer tuple. O(n^2) kernel evaluations."""
    count = _action_count(buffer, action_count)
    z, z_next = buffer.z, buffer.z_next
    p_parts, t_parts = [], []
    for i in range(0, len(buffer), chunk):
        sl = slice(i, i + chunk)
        p, t = _ckde_block(z[sl], buffer.a[sl], z_next[sl], buffer.a_next[sl], buffer, config, count)
        p_parts.append(p)
        t_parts.append(t)
    return DensityCache(np.concatenate(p_parts), np.concatenate(t_parts), buffer_fingerprint(buffer))


def discrete_cache(buffer: TupleBuffer, grid: GridSpec, action_count: int | None = None) -> DensityCache:
    table = count_estimates(buffer, grid, action_count)
    cells = discretize_batch(buffer.s, grid)
    cells_next = discretize_batch(buffer.s_next, grid)
    p = [table.P(int(s), int(a), int(s2), int(a2)) for s, a, s2, a2 in zip(cells, buffer.a, cells_next, buffer.a_next)]
    t = [table.T(int(s), int(a), int(s2)) for s, a, s2 in zip(cells, buffer.a, cells_next)]
    return DensityCache(np.array(p), np.array(t), buffer_fingerprint(buffer))


def save_cache(cache: DensityCache, path) -> None:
    lines = [f"# fingerprint={cache.fingerprint}", "p_hat,t_hat"]
    lines += [f"{float(p)!r},{float(t)!r}" for p, t in zip(cache.p_hat, cache.t_hat)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_cache(path) -> DensityCache:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# fingerprint=") or lines[1] != "p_hat,t_hat":
        raise ParseError("density cache header missing", line=1)
    p, t = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        try:
            a, b = line.split(",")
            p.append(float(a))
            t.append(float(b))
        except ValueError:
            raise ParseError("expected two comma-separated numbers", line=lineno) from None
    return DensityCache(np.array(p), np.array(t), lines[0].split("=", 1)[1])

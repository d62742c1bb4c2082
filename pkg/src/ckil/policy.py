"""Softmax policy network with two ReLU hidden layers, written against numpy.

Parameters live in one flat vector so the optimizer and the checkpoint format
can treat them uniformly; ``layers()`` hands out reshaped views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

PROB_FLOOR = 1e-8
DEFAULT_WIDTH = 64


def layer_shapes(state_dim: int, action_count: int, width: int = DEFAULT_WIDTH):
    return [
        (state_dim, width), (width,),
        (width, width), (width,),
        (width, action_count), (action_count,),
    ]


@dataclass(eq=False)
class PolicyParams:
    flat: np.ndarray
    state_dim: int
    action_count: int
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if self.flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {self.flat.shape}")

    @property
    def shapes(self):
        return layer_shapes(self.state_dim, self.action_count, self.width)

    def layers(self, flat=None):
        flat = self.flat if flat is None else flat
        out, i = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(flat[i:i + size].reshape(shape))
            i += size
        return out

    def with_flat(self, flat) -> PolicyParams:
        return PolicyParams(np.array(flat, dtype=float), self.state_dim, self.action_count, self.width)

    def copy(self) -> PolicyParams:
        return self.with_flat(self.flat.copy())

    def to_dict(self):
        return {
            "state_dim": self.state_dim,
            "action_count": self.action_count,
            "width": self.width,
            "shapes": [list(s) for s in self.shapes],
            "values": [float(x) for x in self.flat],
        }

    @classmethod
    def from_dict(cls, d) -> PolicyParams:
        params = cls(np.array(d["values"], dtype=float), int(d["state_dim"]), int(d["action_count"]), int(d["width"]))
        if [list(s) for s in params.shapes] != [list(s) for s in d["shapes"]]:
            raise ValueError("shape header does not match the declared dimensions")
        return params


def init_params(state_dim: int, action_count: int, width: int = DEFAULT_WIDTH, seed: int = 0,
                zero: bool = False) -> PolicyParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    shapes = layer_shapes(state_dim, action_count, width)
    if zero:
        return PolicyParams(np.zeros(sum(int(np.prod(s)) for s in shapes)), state_dim, action_count, width)
    rng = np.random.default_rng(seed)
    parts = []
    for shape in shapes:
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            parts.append(rng.uniform(-bound, bound, size=shape).ravel())
        else:
            parts.append(np.zeros(shape))
    return PolicyParams(np.concatenate(parts), state_dim, action_count, width)


def forward(params: PolicyParams, states: np.ndarray, flat=None):
    """Logits for a batch plus the activations backprop needs."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
        raise NumericError(f"non-finite policy input at state {x[bad].tolist()}")
    w1, b1, w2, b2, w3, b3 = params.layers(flat)
    with np.errstate(over="ignore", invalid="ignore"):
        pre1 = x @ w1 + b1
        h1 = np.maximum(pre1, 0.0)
        pre2 = h1 @ w2 + b2
        h2 = np.maximum(pre2, 0.0)
        logits = h2 @ w3 + b3
    if not np.all(np.isfinite(logits)):
        bad = int(np.argmax(~np.all(np.isfinite(logits), axis=1)))
        raise NumericError(f"non-finite policy logits at state {x[bad].tolist()}")
    return logits, (x, pre1, h1, pre2, h2)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def clamp_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.maximum(probs, PROB_FLOOR)
    return probs / probs.sum(axis=-1, keepdims=True)


def probs_from_logits(logits: np.ndarray) -> np.ndarray:
    return clamp_probs(np.exp(log_softmax(logits)))


def action_probs(params: PolicyParams, states) -> np.ndarray:
    """Action distribution(s), floored at ``PROB_FLOOR`` and renormalized.

    A single state gives a vector; a batch gives one row per state.
    """
    states = np.asarray(states, dtype=float)
    probs = probs_from_logits(forward(params, states)[0])
    return probs[0] if states.ndim == 1 else probs


def entropy(probs) -> float | np.ndarray:
    p = np.maximum(np.asarray(probs, dtype=float), PROB_FLOOR)
    return -(p * np.log(p)).sum(axis=-1)


def grad_logits(params: PolicyParams, states, upstream, cache=None) -> np.ndarray:
    """Gradient of ``sum(upstream * logits)`` with respect to the flat parameters."""
    if cache is None:
        _, cache = forward(params, states)
    x, pre1, h1, pre2, h2 = cache
    _, _, w2, _, w3, _ = params.layers()
    d_logits = np.atleast_2d(upstream)
    g_w3 = h2.T @ d_logits
    g_b3 = d_logits.sum(axis=0)
    d_h2 = (d_logits @ w3.T) * (pre2 > 0)
    g_w2 = h1.T @ d_h2
    g_b2 = d_h2.sum(axis=0)
    d_h1 = (d_h2 @ w2.T) * (pre1 > 0)
    g_w1 = x.T @ d_h1
    g_b1 = d_h1.sum(axis=0)
    return np.concatenate([g.ravel() for g in (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)])


def sample_action(probs, rng: np.random.Generator) -> int:
    return int(sample_from_uniform(np.atleast_2d(probs), np.array([rng.random()]))[0])


def sample_from_uniform(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one action per row given uniforms ``u``."""
    cdf = np.cumsum(probs, axis=1)
    picks = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(picks, probs.shape[1] - 1)


def argmax_action(probs) -> int | np.ndarray:
    """Greedy action; ties go to the lowest index."""
    probs = np.asarray(probs)
    return int(np.argmax(probs)) if probs.ndim == 1 else np.argmax(probs, axis=1)

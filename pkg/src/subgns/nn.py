"""Dense MLPs with hand-written reverse mode, Adam with exponential learning
rate decay, and feature normalization statistics.

Everything runs in float64. Weight matrices are stored ``(fan_in, fan_out)``
so a layer is ``x @ W + b`` on row-stacked inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-8


class NonFiniteError(FloatingPointError):
    """A gradient or update contained NaN/inf; ``path`` names the parameter."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


# ---------------------------------------------------------------------------
# MLP


@dataclass
class Mlp:
    """Affine layers with ReLU between them and an identity output."""

    weights: list
    biases: list

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{i}/W"] = W
            out[f"{i}/b"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "Mlp":
        n = len(arrays) // 2
        return cls([arrays[f"{i}/W"] for i in range(n)], [arrays[f"{i}/b"] for i in range(n)])

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(sizes, rng: np.random.Generator, hidden_gain: float = math.sqrt(6.0),
             output_gain: float = 1.0) -> Mlp:
    """Uniform weights with limit ``gain / sqrt(fan_in)``, zero biases.

    Layers followed by a ReLU use ``hidden_gain`` (variance preserving by
    default); the identity output layer uses ``output_gain``.
    """
    Ws, bs = [], []
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = (output_gain if i == last else hidden_gain) / math.sqrt(fan_in)
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(Ws, bs)


def relu(x):
    return np.maximum(x, 0.0)


def mlp_forward(mlp: Mlp, x: np.ndarray, cache: bool = False):
    """Forward pass on row-stacked inputs ``x`` of shape ``(B, fan_in)``.

    With ``cache=True`` also returns the per-layer inputs needed by
    :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} != {mlp.weights[0].shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite MLP input")
    inputs = []
    h = x
    last = len(mlp.weights) - 1
    for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        h = h @ W + b
        if i < last:
            h = relu(h)
    return (h, inputs) if cache else h


def mlp_backward(mlp: Mlp, inputs: list, dy: np.ndarray, need_dx: bool = True):
    """Reverse pass. ``inputs`` comes from ``mlp_forward(..., cache=True)``.

    ReLU uses the subgradient 0 at exactly 0 (derivative mask is ``x > 0``
    on the post-activation value). Returns ``(dx, grads)`` with ``grads``
    keyed like :meth:`Mlp.arrays`.
    """
    grads = {}
    g = dy
    for i in range(len(mlp.weights) - 1, -1, -1):
        x = inputs[i]
        grads[f"{i}/W"] = x.T @ g
        grads[f"{i}/b"] = g.sum(axis=0)
        if i == 0 and not need_dx:
            return None, grads
        g = g @ mlp.weights[i].T
        if i > 0:
            # inputs[i] is relu output of layer i-1
            g = g * (x > 0.0)
    return g, grads


# ---------------------------------------------------------------------------
# Adam


def decay_constant(base: float, final: float, max_steps: int) -> float:
    """Time constant putting the rate within 1% of ``final`` at ``max_steps``."""
    if max_steps <= 0:
        return 1.0
    ratio = (base - final) / (0.01 * final)
    if ratio <= 1.0:
        return float(max_steps)
    return max_steps / math.log(ratio)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    base_lr: float = 1e-4
    final_lr: float = 1e-6
    max_steps: int = 20_000_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def tau(self) -> float:
        return decay_constant(self.base_lr, self.final_lr, self.max_steps)

    def rate(self, k: int | None = None) -> float:
        k = self.step if k is None else k
        return self.final_lr + (self.base_lr - self.final_lr) * math.exp(-k / self.tau)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam update; returns new parameter arrays and advances ``state``.

    Nothing is modified if any gradient or resulting parameter is
    non-finite.
    """
    lr = state.rate()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}", path=name)
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        q = p - lr * mhat / (np.sqrt(vhat) + state.eps)
        if not np.all(np.isfinite(q)):
            raise NonFiniteError(f"non-finite update for {name}", path=name)
        new_params[name], new_m[name], new_v[name] = q, m, v
    state.m, state.v = new_m, new_v
    state.step = t
    return new_params


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, extra_std: float = 0.0) -> "FeatureStats":
        """Per-column statistics of ``x`` (rows are samples).

        ``extra_std`` is added in quadrature, for features that will carry
        injected noise of that scale.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            raise ValueError("cannot fit statistics on zero samples")
        mean = x.mean(axis=0)
        std = np.sqrt(x.var(axis=0) + extra_std**2)
        return cls(mean, np.maximum(std, NORM_EPS))

    def normalize(self, x):
        return (x - self.mean) / self.std

    def denormalize(self, x):
        return x * self.std + self.mean


@dataclass(frozen=True)
class NormStats:
    """Named feature statistics plus the provenance of the data they came from."""

    entries: dict
    source: str = "train"
    dataset: str = ""

    def __getitem__(self, key) -> FeatureStats:
        return self.entries[key]

    def __contains__(self, key):
        return key in self.entries

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, s in self.entries.items():
            out[f"{k}/mean"] = s.mean
            out[f"{k}/std"] = s.std
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, source="train", dataset="") -> "NormStats":
        keys = sorted({k.rsplit("/", 1)[0] for k in arrays})
        return cls({k: FeatureStats(arrays[f"{k}/mean"], arrays[f"{k}/std"]) for k in keys},
                   source, dataset)

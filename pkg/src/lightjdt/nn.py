"""Small module system on top of :mod:`lightjdt.tensor`."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Collects every Tensor / Module / list-of-Modules attribute as a parameter tree."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise T.DimensionError(f"{name}: stored {state[name].shape}, model {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, bias: bool = True) -> None:
        self.weight = xavier(rng, c_in, c_out)
        self.bias = zeros(c_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int) -> None:
        self.gamma = ones(channels)
        self.beta = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate q/k/v/output projections.

    Inputs are [B, N, C]; queries and keys/values may come from different
    sequences (cross-attention).
    """

    def __init__(self, rng: np.random.Generator, channels: int, heads: int) -> None:
        if channels % heads:
            raise T.UnsupportedConfigError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.q = Linear(rng, channels, channels)
        self.k = Linear(rng, channels, channels)
        self.v = Linear(rng, channels, channels)
        self.out = Linear(rng, channels, channels)
        self._last_weights: np.ndarray | None = None

    @property
    def channels(self) -> int:
        return self.q.weight.shape[0]

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        d = c // self.heads
        return T.permute(T.reshape(x, (b, n, self.heads, d)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        """key_mask: optional bool [B, Nk]; False entries receive no attention."""
        if query.ndim != 3 or key.shape != value.shape or key.ndim != 3 or query.shape[0] != key.shape[0]:
            raise T.DimensionError(f"attention: q {query.shape}, k {key.shape}, v {value.shape}")
        b, nq, c = query.shape
        nk = key.shape[1]
        d = c // self.heads
        q = self._split(self.q(query))
        k = self._split(self.k(key))
        v = self._split(self.v(value))
        scores = T.scale(T.bmm(q, T.transpose(k)), 1.0 / math.sqrt(d))
        if key_mask is not None:
            penalty = np.where(np.asarray(key_mask, bool), 0.0, -1e30)[:, None, None, :]
            scores = T.add_const(scores, np.broadcast_to(penalty, scores.shape))
        attn = T.softmax_rows(scores)
        self._last_weights = attn.data
        out = T.bmm(attn, v)
        out = T.reshape(T.permute(out, (0, 2, 1, 3)), (b, nq, c))
        return self.out(out)


class FeedForward(Module):
    """Standard two-layer FFN: Linear(C, e*C) -> ReLU -> Linear(e*C, C)."""

    def __init__(self, rng: np.random.Generator, channels: int, expansion: int) -> None:
        self.fc1 = Linear(rng, channels, expansion * channels)
        self.fc2 = Linear(rng, expansion * channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class Adam:
    """Adam with optional global-norm gradient clipping."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, clip_norm: float | None = None) -> None:
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.weight_decay:
                p.data *= 1 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

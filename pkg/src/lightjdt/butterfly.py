"""Butterfly Transform channel fusion.

A dense N x N channel-mixing matrix is replaced by log2(N) sparse stages.
At stage ``s`` output channel ``i`` mixes input channels ``i`` and
``i XOR 2**s`` with two learned weights, so each stage costs 2N
multiply-accumulates per spatial position instead of N**2 for the whole
dense mix. After all stages every output depends on every input.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Tensor


def is_power_of_two(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


def num_stages(n: int) -> int:
    if not is_power_of_two(n):
        raise T.UnsupportedConfigError(f"butterfly needs a power-of-two channel count >= 2, got {n}")
    return n.bit_length() - 1


def butterfly_stage(x: Tensor, weights: Tensor, stage: int, axis: int = 1) -> Tensor:
    """One mixing stage along ``axis``.

    ``weights`` is [N, 2]: column 0 scales the channel itself, column 1 its
    partner ``i XOR 2**stage``.
    """
    axis = axis % x.ndim
    n = x.shape[axis]
    if weights.shape != (n, 2):
        raise T.DimensionError(f"butterfly stage weights {weights.shape} for {n} channels")
    partner = np.arange(n) ^ (1 << stage)
    bshape = [1] * x.ndim
    bshape[axis] = n
    w_self = weights.data[:, 0].reshape(bshape)
    w_cross = weights.data[:, 1].reshape(bshape)
    xp = np.take(x.data, partner, axis=axis)
    T._macs(2 * x.data.size)
    y = w_self * x.data + w_cross * xp
    red = tuple(i for i in range(x.ndim) if i != axis)

    def back(g):
        gc = g * w_cross
        gx = g * w_self + np.take(gc, partner, axis=axis)
        gw = np.stack([(g * x.data).sum(axis=red), (g * xp).sum(axis=red)], axis=1)
        return gx, gw

    return T._result(y, (x, weights), back)


class ButterflyLayer(Module):
    """log2(N) butterfly stages plus an optional per-channel bias.

    ``stages`` is a list of [N, 2] weight tensors; stage ``s`` pairs channel
    ``i`` with ``i XOR 2**s``.
    """

    def __init__(self, channels: int, rng: np.random.Generator | None = None,
                 bias: bool = False, noise: float = 0.02) -> None:
        s = num_stages(channels)
        self.channels = channels
        rng = np.random.default_rng(0) if rng is None else rng
        self.stages = []
        for _ in range(s):
            w = np.zeros((channels, 2))
            w[:, 0] = 1.0
            w += noise * rng.standard_normal((channels, 2))
            self.stages.append(Tensor(w, requires_grad=True))
        self.bias = Tensor(np.zeros(channels), requires_grad=True) if bias else None

    @classmethod
    def identity(cls, channels: int, bias: bool = False) -> ButterflyLayer:
        return cls(channels, bias=bias, noise=0.0)

    @classmethod
    def from_stage_weights(cls, weights, bias=None) -> ButterflyLayer:
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        n = weights[0].shape[0]
        layer = cls(n, bias=bias is not None, noise=0.0)
        if len(weights) != len(layer.stages):
            raise T.DimensionError(f"expected {len(layer.stages)} stages, got {len(weights)}")
        for stage, w in zip(layer.stages, weights):
            if w.shape != (n, 2):
                raise T.DimensionError(f"stage weights must be [{n}, 2], got {w.shape}")
            stage.data = w.copy()
        if bias is not None:
            layer.bias.data = np.asarray(bias, dtype=np.float64).copy()
        return layer

    def __call__(self, x: Tensor, axis: int = 1) -> Tensor:
        return bt_forward(self, x, axis=axis)


def bt_forward(layer: ButterflyLayer, x: Tensor, axis: int = 1) -> Tensor:
    """Apply the stages in order along the channel ``axis`` (default: [B, N, H, W])."""
    if x.shape[axis] != layer.channels:
        raise T.DimensionError(f"butterfly expects {layer.channels} channels on axis {axis}, got {x.shape}")
    y = x
    for s, w in enumerate(layer.stages):
        y = butterfly_stage(y, w, s, axis=axis)
    if layer.bias is not None:
        if axis % x.ndim == x.ndim - 1:
            y = T.add_bias(y, layer.bias)
        else:
            perm = [i for i in range(x.ndim) if i != axis % x.ndim] + [axis % x.ndim]
            inv = list(np.argsort(perm))
            y = T.permute(T.add_bias(T.permute(y, perm), layer.bias), inv)
    return y


def to_dense(layer: ButterflyLayer) -> np.ndarray:
    """Materialise the N x N matrix W with y = W x, column by column from basis forwards."""
    n = layer.channels
    basis = Tensor(np.eye(n).reshape(n, n, 1, 1))
    out = bt_forward(layer, basis).data[:, :, 0, 0]
    if layer.bias is not None:
        out = out - layer.bias.data[None, :]
    return out.T.copy()


def bt_macs(layer_or_channels, h: int = 1, w: int = 1) -> int:
    n = layer_or_channels.channels if isinstance(layer_or_channels, ButterflyLayer) else int(layer_or_channels)
    if h < 1 or w < 1:
        raise ValueError("spatial dims must be positive")
    return 2 * n * num_stages(n) * h * w


def bt_param_count(layer: ButterflyLayer) -> int:
    n = layer.channels
    return 2 * n * num_stages(n) + (n if layer.bias is not None else 0)


def dense_pointwise_macs(n: int, h: int = 1, w: int = 1) -> int:
    return n * n * h * w

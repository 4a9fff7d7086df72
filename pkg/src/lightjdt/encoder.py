"""Multi-scale transformer encoder with the spatially-aware FFN.

Tokens from four feature maps are concatenated into one [B, N, C]
sequence for global self-attention. The FFN replacement restores the
tokens to their four maps, mixes channels with a butterfly layer, applies
a 3x3 depthwise convolution per map, mixes channels again, flattens back,
and finishes with a square linear projection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .butterfly import ButterflyLayer, is_power_of_two, num_stages
from .nn import LayerNorm, Linear, Module, MultiHeadAttention, zeros
from .tensor import Tensor

NUM_SCALES = 4


@dataclass(frozen=True)
class ScaleLayout:
    scales: tuple[tuple[int, int], ...]
    channels: int

    def __post_init__(self):
        scales = tuple((int(h), int(w)) for h, w in self.scales)
        object.__setattr__(self, "scales", scales)
        if len(scales) != NUM_SCALES:
            raise T.DimensionError(f"layout needs {NUM_SCALES} scales, got {len(scales)}")
        if any(h < 1 or w < 1 for h, w in scales) or self.channels < 1:
            raise T.DimensionError(f"bad layout {scales} x {self.channels}")

    @property
    def num_tokens(self) -> int:
        return sum(h * w for h, w in self.scales)

    @property
    def offsets(self) -> list[int]:
        out = [0]
        for h, w in self.scales:
            out.append(out[-1] + h * w)
        return out


@dataclass
class TokenSequence:
    data: Tensor
    layout: ScaleLayout

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1] != self.layout.num_tokens or self.data.shape[2] != self.layout.channels:
            raise T.DimensionError(
                f"tokens {self.data.shape} do not fit layout with N={self.layout.num_tokens}, C={self.layout.channels}")

    def with_data(self, data: Tensor) -> TokenSequence:
        return TokenSequence(data, self.layout)


def maps_to_tokens(maps, layout: ScaleLayout) -> TokenSequence:
    if len(maps) != NUM_SCALES:
        raise T.DimensionError(f"expected {NUM_SCALES} maps, got {len(maps)}")
    b = maps[0].shape[0]
    parts = []
    for m, (h, w) in zip(maps, layout.scales):
        if m.shape != (b, layout.channels, h, w):
            raise T.DimensionError(f"map {m.shape} does not match layout scale {(h, w)} x {layout.channels}")
        parts.append(T.reshape(T.permute(m, (0, 2, 3, 1)), (b, h * w, layout.channels)))
    return TokenSequence(T.concat(parts, axis=1), layout)


def tokens_to_maps(tokens: TokenSequence) -> list[Tensor]:
    layout = tokens.layout
    x = tokens.data
    if x.shape[1] != layout.num_tokens:
        raise T.DimensionError(f"{x.shape[1]} tokens vs layout total {layout.num_tokens}")
    b, _, c = x.shape
    off = layout.offsets
    maps = []
    for i, (h, w) in enumerate(layout.scales):
        part = T.take(x, 1, off[i], off[i + 1])
        maps.append(T.permute(T.reshape(part, (b, h, w, c)), (0, 3, 1, 2)))
    return maps


def sine_embedding(points: np.ndarray, channels: int) -> np.ndarray:
    """Fixed 2-D sinusoidal embedding of normalised (x, y) points -> [..., channels].

    Half the channels encode x, half y; each half is sin/cos pairs over a
    geometric frequency ladder, so embeddings of nearby points have large
    dot products.
    """
    if channels % 4:
        raise T.UnsupportedConfigError("sine embedding needs channels divisible by 4")
    nf = channels // 4
    freqs = 2 * math.pi * np.geomspace(0.5, 8.0, nf)
    parts = []
    for axis in range(2):
        ang = points[..., axis, None] * freqs
        parts.append(np.concatenate([np.sin(ang), np.cos(ang)], axis=-1))
    return np.concatenate(parts, axis=-1) / math.sqrt(nf)


def layout_positions(layout: ScaleLayout) -> np.ndarray:
    """Normalised (x, y) centre of every token, in token order -> [N, 2]."""
    pts = []
    for h, w in layout.scales:
        ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
        pts.append(np.stack([xs.ravel(), ys.ravel()], axis=1))
    return np.concatenate(pts, axis=0)


def positional_encoding(layout: ScaleLayout) -> np.ndarray:
    return sine_embedding(layout_positions(layout), layout.channels)


class SpatialFFN(Module):
    """BT -> depthwise 3x3 -> ReLU -> BT on each restored map, then a C x C projection."""

    def __init__(self, rng: np.random.Generator, channels: int, kernel: int = 3) -> None:
        if not is_power_of_two(channels):
            raise T.UnsupportedConfigError(f"spatial FFN needs power-of-two channels, got {channels}")
        self.bt1 = ButterflyLayer(channels, rng)
        self.dw_kernel = Tensor(rng.normal(0.0, math.sqrt(2.0 / (kernel * kernel)), (channels, kernel, kernel)),
                                requires_grad=True)
        self.dw_bias = zeros(channels)
        self.bt2 = ButterflyLayer(channels, rng)
        self.proj = Linear(rng, channels, channels)

    def __call__(self, tokens: TokenSequence) -> TokenSequence:
        maps = []
        for m in tokens_to_maps(tokens):
            m = self.bt1(m)
            m = T.relu(T.conv2d_depthwise(m, self.dw_kernel, self.dw_bias))
            maps.append(self.bt2(m))
        flat = maps_to_tokens(maps, tokens.layout)
        return flat.with_data(self.proj(flat.data))


class EncoderLayer(Module):
    """Pre-norm layer: x + MHSA(LN(x)), then y + SpatialFFN(LN(y))."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int) -> None:
        self.norm1 = LayerNorm(channels)
        self.attn = MultiHeadAttention(rng, channels, heads)
        self.norm2 = LayerNorm(channels)
        self.ffn = SpatialFFN(rng, channels)

    def __call__(self, tokens: TokenSequence) -> TokenSequence:
        return encoder_layer_forward(self, tokens)


def mhsa_forward(attn: MultiHeadAttention, tokens: TokenSequence) -> TokenSequence:
    x = tokens.data
    return tokens.with_data(attn(x, x, x))


def spatial_ffn_forward(ffn: SpatialFFN, tokens: TokenSequence) -> TokenSequence:
    return ffn(tokens)


def encoder_layer_forward(layer: EncoderLayer, tokens: TokenSequence) -> TokenSequence:
    x = tokens.data
    h = layer.norm1(x)
    x = T.add(x, layer.attn(h, h, h))
    y = tokens.with_data(layer.norm2(x))
    x = T.add(x, layer.ffn(y).data)
    return tokens.with_data(x)


class Encoder(Module):
    """Positional encoding added once, then ``num_layers`` encoder layers."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int, num_layers: int) -> None:
        self.layers = [EncoderLayer(rng, channels, heads) for _ in range(num_layers)]

    def __call__(self, tokens: TokenSequence, add_position: bool = True) -> TokenSequence:
        if add_position:
            pos = positional_encoding(tokens.layout)
            tokens = tokens.with_data(T.add_const(tokens.data, np.broadcast_to(pos, tokens.data.shape)))
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens


# ---------------------------------------------------------------- MAC formulas

def standard_ffn_macs(num_tokens: int, channels: int, expansion: int) -> int:
    return 2 * num_tokens * channels * expansion * channels


def spatial_ffn_macs(num_tokens: int, channels: int, kernel: int = 3) -> int:
    bt = 2 * 2 * channels * num_stages(channels)
    return num_tokens * (bt + kernel * kernel * channels) + num_tokens * channels * channels


def mhsa_macs(num_tokens: int, channels: int, num_keys: int | None = None) -> int:
    nk = num_tokens if num_keys is None else num_keys
    return 2 * num_tokens * channels**2 + 2 * nk * channels**2 + 2 * num_tokens * nk * channels


def encoder_layer_macs(layout: ScaleLayout) -> int:
    n, c = layout.num_tokens, layout.channels
    return 2 * n * c + mhsa_macs(n, c) + spatial_ffn_macs(n, c)


def ffn_macs_comparison(channels: int, expansion: int, layout: ScaleLayout | None = None):
    """(standard FFN MACs, spatial FFN MACs, spatial / standard) for one layer.

    Without a layout the figures are per token.
    """
    if not is_power_of_two(channels):
        raise T.UnsupportedConfigError(f"channels must be a power of two, got {channels}")
    if expansion < 1:
        raise ValueError("expansion must be >= 1")
    n = 1 if layout is None else layout.num_tokens
    std = standard_ffn_macs(n, channels, expansion)
    sp = spatial_ffn_macs(n, channels)
    return std, sp, sp / std


class StandardFFNTokens(Module):
    """Reference expansion FFN acting on a TokenSequence, for MAC comparisons."""

    def __init__(self, rng: np.random.Generator, channels: int, expansion: int) -> None:
        self.fc1 = Linear(rng, channels, expansion * channels)
        self.fc2 = Linear(rng, expansion * channels, channels)

    def __call__(self, tokens: TokenSequence) -> TokenSequence:
        return tokens.with_data(self.fc2(T.relu(self.fc1(tokens.data))))

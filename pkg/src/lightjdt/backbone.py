"""Toy four-stage pyramid backbone, previous-frame cache and feature aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ScaleLayout
from .nn import Module, xavier, zeros
from .tensor import Tensor

STRIDES = (8, 16, 32, 64)


@dataclass
class FeaturePyramid:
    maps: list[Tensor]
    frame_index: int

    def __post_init__(self):
        if len(self.maps) != 4:
            raise T.DimensionError(f"pyramid needs 4 maps, got {len(self.maps)}")
        c = self.maps[0].shape[1]
        for a, b in zip(self.maps, self.maps[1:]):
            if b.shape[1] != c:
                raise T.DimensionError("pyramid maps must share the channel count")
            if b.shape[2] != math.ceil(a.shape[2] / 2) or b.shape[3] != math.ceil(a.shape[3] / 2):
                raise T.DimensionError(f"pyramid levels must halve: {a.shape} -> {b.shape}")

    @property
    def layout(self) -> ScaleLayout:
        return ScaleLayout(tuple(m.shape[2:] for m in self.maps), self.maps[0].shape[1])

    def detached(self) -> FeaturePyramid:
        return FeaturePyramid([m.detach() for m in self.maps], self.frame_index)


class Stage(Module):
    """Strided patch embedding followed by a residual depthwise/pointwise mixing block."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, patch: int) -> None:
        self.patch = patch
        w = xavier(rng, c_in * patch * patch, c_out).data.T.reshape(c_out, c_in, patch, patch)
        # contiguous, so a reloaded checkpoint takes the same BLAS path bit for bit
        self.embed_w = Tensor(np.ascontiguousarray(w), requires_grad=True)
        self.embed_b = zeros(c_out)
        self.dw_kernel = Tensor(rng.normal(0.0, 1.0 / 3.0, (c_out, 3, 3)), requires_grad=True)
        self.dw_bias = zeros(c_out)
        self.pw_w = Tensor(xavier(rng, c_out, c_out).data.reshape(c_out, c_out, 1, 1), requires_grad=True)
        self.pw_b = zeros(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.conv2d(x, self.embed_w, self.embed_b, stride=self.patch)
        h = T.relu(T.conv2d_depthwise(x, self.dw_kernel, self.dw_bias))
        return T.add(x, T.conv2d(h, self.pw_w, self.pw_b))


class ToyBackbone(Module):
    """Four stages with strides 8, 16, 32, 64: an 8x8 patchify, then three 2x2 merges."""

    def __init__(self, rng: np.random.Generator, channels: int, in_channels: int = 3) -> None:
        self.channels = channels
        self.stages = [Stage(rng, in_channels, channels, 8)] + [Stage(rng, channels, channels, 2) for _ in range(3)]

    def __call__(self, image: Tensor, frame_index: int = 0) -> FeaturePyramid:
        return extract(self, image, frame_index)


def extract(backbone: ToyBackbone, image: Tensor, frame_index: int = 0) -> FeaturePyramid:
    if image.ndim != 4 or image.shape[1] != 3:
        raise T.DimensionError(f"expected [B, 3, H, W] image, got {image.shape}")
    if image.shape[2] % 64 or image.shape[3] % 64:
        raise T.DimensionError(f"image size {image.shape[2:]} must be divisible by 64")
    maps = []
    x = image
    for stage in backbone.stages:
        x = stage(x)
        maps.append(x)
    return FeaturePyramid(maps, frame_index)


class Aggregator(Module):
    """Per scale: concat(current, previous) on channels, then a shared 1x1 fusion 2C -> C."""

    def __init__(self, rng: np.random.Generator, channels: int, noise: float = 0.02) -> None:
        w = np.concatenate([0.5 * np.eye(channels), 0.5 * np.eye(channels)], axis=1)
        w = w + noise * rng.standard_normal(w.shape)
        self.weight = Tensor(w.reshape(channels, 2 * channels, 1, 1), requires_grad=True)
        self.bias = zeros(channels)

    def __call__(self, current: FeaturePyramid, previous: FeaturePyramid) -> FeaturePyramid:
        return aggregate(self, current, previous)


def aggregate(agg: Aggregator, current: FeaturePyramid, previous: FeaturePyramid) -> FeaturePyramid:
    out = []
    for cur, prev in zip(current.maps, previous.maps):
        if cur.shape != prev.shape:
            raise T.DimensionError(f"cannot aggregate {cur.shape} with {prev.shape}")
        out.append(T.conv2d(T.concat([cur, prev], axis=1), agg.weight, agg.bias))
    return FeaturePyramid(out, current.frame_index)


class FrameCache:
    """Holds the last frame's pyramid; indices must strictly increase."""

    def __init__(self) -> None:
        self.pyramid: FeaturePyramid | None = None

    @property
    def empty(self) -> bool:
        return self.pyramid is None

    def previous_for(self, current: FeaturePyramid) -> FeaturePyramid:
        """Previous pyramid, or the current one itself at sequence start."""
        return current if self.pyramid is None else self.pyramid

    def update(self, pyramid: FeaturePyramid) -> None:
        if self.pyramid is not None and pyramid.frame_index <= self.pyramid.frame_index:
            raise ValueError(
                f"frame {pyramid.frame_index} is not after cached frame {self.pyramid.frame_index}")
        self.pyramid = pyramid.detached()

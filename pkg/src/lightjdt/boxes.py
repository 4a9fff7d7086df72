"""Boxes in normalised centre format and their IoU / GIoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive size, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> Box:
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.stack([b[..., 0] - b[..., 2] / 2, b[..., 1] - b[..., 3] / 2,
                     b[..., 0] + b[..., 2] / 2, b[..., 1] + b[..., 3] / 2], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return np.stack([(b[..., 0] + b[..., 2]) / 2, (b[..., 1] + b[..., 3]) / 2,
                     b[..., 2] - b[..., 0], b[..., 3] - b[..., 1]], axis=-1)


def _pairwise(a: np.ndarray, b: np.ndarray):
    a = a[:, None, :]
    b = b[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    enc = ((np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0]))
           * (np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])))
    return inter, union, enc


def pairwise_iou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between corner-format box arrays [n, 4] and [m, 4]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    inter, union, _ = _pairwise(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def pairwise_giou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    inter, union, enc = _pairwise(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
        return iou - np.where(enc > 0, (enc - union) / enc, 0.0)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix for centre-format arrays."""
    return pairwise_iou_xyxy(cxcywh_to_xyxy(np.reshape(a, (-1, 4))), cxcywh_to_xyxy(np.reshape(b, (-1, 4))))


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return pairwise_giou_xyxy(cxcywh_to_xyxy(np.reshape(a, (-1, 4))), cxcywh_to_xyxy(np.reshape(b, (-1, 4))))


def iou(a: Box, b: Box) -> float:
    return float(pairwise_iou_xyxy(np.array(a.corners()), np.array(b.corners()))[0, 0])


def giou(a: Box, b: Box) -> float:
    return float(pairwise_giou_xyxy(np.array(a.corners()), np.array(b.corners()))[0, 0])


def giou_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """Differentiable GIoU between matched rows: pred [K, 4] (cxcywh) vs constant target [K, 4]."""
    k = pred.shape[0]
    tgt = cxcywh_to_xyxy(target)

    def col(t: Tensor, i: int) -> Tensor:
        return T.reshape(T.take(t, 1, i, i + 1), (k,))

    cx, cy, w, h = (col(pred, i) for i in range(4))
    x1 = cx - T.scale(w, 0.5)
    y1 = cy - T.scale(h, 0.5)
    x2 = cx + T.scale(w, 0.5)
    y2 = cy + T.scale(h, 0.5)
    tx1, ty1, tx2, ty2 = (Tensor(tgt[:, i]) for i in range(4))
    iw = T.relu(T.minimum(x2, tx2) - T.maximum(x1, tx1))
    ih = T.relu(T.minimum(y2, ty2) - T.maximum(y1, ty1))
    inter = T.mul(iw, ih)
    area_p = T.mul(w, h)
    area_t = (tgt[:, 2] - tgt[:, 0]) * (tgt[:, 3] - tgt[:, 1])
    union = T.add_const(area_p - inter, area_t)
    enc = T.mul(T.maximum(x2, tx2) - T.minimum(x1, tx1), T.maximum(y2, ty2) - T.minimum(y1, ty1))
    return T.div(inter, union) - T.div(enc - union, enc)

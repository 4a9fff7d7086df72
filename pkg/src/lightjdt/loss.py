"""Set-prediction matching cost and training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import giou_tensor, pairwise_giou
from .hungarian import Assignment, hungarian
from .tensor import Tensor

OBJECT, BACKGROUND = 0, 1


@dataclass(frozen=True)
class LossWeights:
    lambda_class: float = 2.0
    lambda_iou: float = 5.0
    lambda_giou: float = 2.0

    def __post_init__(self):
        ws = (self.lambda_class, self.lambda_iou, self.lambda_giou)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError(f"loss weights must be nonnegative with one positive, got {ws}")

    def scaled(self, k: float) -> LossWeights:
        return LossWeights(self.lambda_class * k, self.lambda_iou * k, self.lambda_giou * k)


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def match_cost(logits, boxes, gt_classes, gt_boxes, w: LossWeights) -> np.ndarray:
    """[Q, G] cost: -lc * p(class) + li * L1 + lg * (1 - GIoU)."""
    logits = np.asarray(logits, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    if gt_boxes.shape[0] == 0:
        return np.zeros((boxes.shape[0], 0))
    prob = class_probabilities(logits)[:, gt_classes]
    l1 = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
    g = pairwise_giou(boxes, gt_boxes)
    return -w.lambda_class * prob + w.lambda_iou * l1 + w.lambda_giou * (1.0 - g)


@dataclass
class LossBreakdown:
    total: Tensor
    matches: list[Assignment]
    num_targets: int
    classification: float
    l1: float
    giou: float


def training_loss(logits: Tensor, boxes: Tensor, targets, w: LossWeights, *,
                  query_mask: np.ndarray | None = None, background_weight: float = 1.0,
                  focal_gamma: float = 0.0, num_targets: int | None = None) -> LossBreakdown:
    """Hungarian-matched set loss over a batch.

    logits [B, Q, 2] (object, background), boxes [B, Q, 4] in cxcywh.
    ``targets`` is a list of B ``(classes [G], boxes [G, 4])`` pairs.
    Matched queries are pushed towards their target class and box,
    unmatched ones towards background; the sum is divided by the number of
    targets in the batch (at least 1). ``query_mask`` marks padded queries
    to ignore.
    """
    b, q, _ = logits.shape
    if boxes.shape != (b, q, 4) or len(targets) != b:
        raise T.DimensionError(f"logits {logits.shape}, boxes {boxes.shape}, {len(targets)} targets")
    mask = np.ones((b, q), bool) if query_mask is None else np.asarray(query_mask, bool)
    cls_target = np.full((b, q), BACKGROUND)
    cls_weight = np.where(mask, background_weight, 0.0)
    rows, tgt_boxes, matches = [], [], []
    total_gt = 0
    for i, (gcls, gbox) in enumerate(targets):
        gcls = np.asarray(gcls, dtype=np.int64).reshape(-1)
        gbox = np.asarray(gbox, dtype=np.float64).reshape(-1, 4)
        total_gt += len(gcls)
        valid = np.flatnonzero(mask[i])
        cost = match_cost(logits.data[i, valid], boxes.data[i, valid], gcls, gbox, w)
        res = hungarian(cost)
        res = Assignment([(int(valid[r]), c) for r, c in res.pairs],
                         [int(valid[r]) for r in res.unmatched_rows], res.unmatched_cols)
        matches.append(res)
        for r, c in res.pairs:
            cls_target[i, r] = gcls[c]
            cls_weight[i, r] = 1.0
            rows.append(i * q + r)
            tgt_boxes.append(gbox[c])
    norm = max(1, total_gt if num_targets is None else num_targets)

    logp = T.log_softmax_rows(logits)
    onehot = np.zeros((b, q, 2))
    np.put_along_axis(onehot, cls_target[..., None], 1.0, axis=-1)
    picked = T.sum_axis(T.mul_const(logp, onehot), -1)  # log p(target) [B, Q]
    if focal_gamma:
        p = T.exp(picked)
        modulate = T.exp(T.scale(T.log(T.shift(T.scale(p, -1.0), 1.0 + 1e-12)), focal_gamma))
        picked = T.mul(picked, modulate)
    cls_loss = T.scale(T.sum_all(T.mul_const(picked, cls_weight)), -1.0)
    total = T.scale(cls_loss, w.lambda_class)
    l1_val = giou_val = 0.0
    if rows:
        pred = T.gather_rows(T.reshape(boxes, (b * q, 4)), rows)
        tgt = np.array(tgt_boxes)
        l1 = T.sum_all(T.absolute(T.add_const(pred, -tgt)))
        gl = T.sum_all(T.shift(T.scale(giou_tensor(pred, tgt), -1.0), 1.0))
        total = total + T.scale(l1, w.lambda_iou) + T.scale(gl, w.lambda_giou)
        l1_val, giou_val = l1.item() / norm, gl.item() / norm
    total = T.scale(total, 1.0 / norm)
    return LossBreakdown(total, matches, total_gt, cls_loss.item() / norm, l1_val, giou_val)

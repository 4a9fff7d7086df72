"""Online association, track rebirth and the per-frame tracking loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import FrameCache
from .boxes import Box, pairwise_iou
from .hungarian import hungarian
from .model import JDTModel
from .moteval import MotRecord
from .tensor import Tensor

REBIRTH_WINDOW = 32


@dataclass
class DetBox:
    box: Box
    score: float
    class_logits: np.ndarray | None = None
    feature: np.ndarray | None = None


@dataclass
class Track:
    id: int
    box: Box
    query_feature: np.ndarray | None = None
    unmatched_streak: int = 0
    alive: bool = True
    score: float = 1.0


@dataclass
class AssociationResult:
    tracks: list[Track]
    matched: list[tuple[int, int]]  # (detection index, track id)
    new_tracks: list[Track]
    unmatched_track_ids: list[int]


class IdCounter:
    def __init__(self, start: int = 1) -> None:
        self.next = start

    def __call__(self) -> int:
        out = self.next
        self.next += 1
        return out


def associate(detections: list[DetBox], tracks: list[Track], iou_threshold: float = 0.5,
              new_id: IdCounter | None = None) -> AssociationResult:
    """Hungarian matching on 1 - IoU between detections and live tracks.

    Pairs below ``iou_threshold`` are rejected. Matched tracks take the
    detection box and feature, unmatched detections start new tracks and
    unmatched tracks have their streak increased.
    """
    new_id = IdCounter(max((t.id for t in tracks), default=0) + 1) if new_id is None else new_id
    live = [t for t in tracks if t.alive]
    matched: list[tuple[int, int]] = []
    det_used: set[int] = set()
    track_used: set[int] = set()
    if detections and live:
        iou = pairwise_iou(np.array([d.box.as_array() for d in detections]),
                           np.array([t.box.as_array() for t in live]))
        res = hungarian(1.0 - iou)
        for di, ti in res.pairs:
            if iou[di, ti] >= iou_threshold:
                det = detections[di]
                trk = live[ti]
                trk.box = det.box
                trk.score = det.score
                if det.feature is not None:
                    trk.query_feature = det.feature
                trk.unmatched_streak = 0
                matched.append((di, trk.id))
                det_used.add(di)
                track_used.add(ti)
    unmatched_ids = []
    for ti, trk in enumerate(live):
        if ti not in track_used:
            trk.unmatched_streak += 1
            unmatched_ids.append(trk.id)
    new_tracks = []
    for di, det in enumerate(detections):
        if di not in det_used:
            new_tracks.append(Track(new_id(), det.box, det.feature, 0, True, det.score))
    return AssociationResult(list(tracks) + new_tracks, matched, new_tracks, unmatched_ids)


def rebirth_step(tracks: list[Track], window: int = REBIRTH_WINDOW) -> list[Track]:
    """Kill tracks unmatched for more than ``window`` consecutive frames."""
    for t in tracks:
        if t.alive and t.unmatched_streak > window:
            t.alive = False
    return tracks


def suppress_duplicates(detections: list[DetBox], iou_threshold: float) -> list[DetBox]:
    """Greedy non-maximum suppression, highest score first; ties keep input order."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    if len(order) < 2:
        return [detections[i] for i in order]
    iou = pairwise_iou(np.array([detections[i].box.as_array() for i in order]),
                       np.array([detections[i].box.as_array() for i in order]))
    keep: list[int] = []
    for k in range(len(order)):
        if all(iou[k, j] < iou_threshold for j in keep):
            keep.append(k)
    return [detections[order[k]] for k in keep]


@dataclass
class TrackerConfig:
    score_threshold: float = 0.4
    iou_threshold: float = 0.5
    rebirth_window: int = REBIRTH_WINDOW
    track_score_threshold: float = 0.4
    # detections overlapping a higher-scoring one by at least this IoU are dropped; None disables
    nms_iou: float | None = 0.5


@dataclass
class TrackingSession:
    """State of one sequence: live tracks, id counter, last frame index and feature cache."""

    config: TrackerConfig = field(default_factory=TrackerConfig)
    tracks: list[Track] = field(default_factory=list)
    ids: IdCounter = field(default_factory=IdCounter)
    cache: FrameCache = field(default_factory=FrameCache)
    last_frame: int | None = None

    def _check_order(self, frame_index: int) -> None:
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise ValueError(f"frame {frame_index} arrives after frame {self.last_frame}")
        self.last_frame = frame_index

    def alive(self) -> list[Track]:
        return [t for t in self.tracks if t.alive]

    def update(self, frame_index: int, detections: list[DetBox]) -> list[tuple[int, Box, float]]:
        """Associate detections for one frame; return (id, box, score) of tracks seen this frame."""
        self._check_order(frame_index)
        if self.config.nms_iou is not None:
            detections = suppress_duplicates(detections, self.config.nms_iou)
        res = associate(detections, self.tracks, self.config.iou_threshold, self.ids)
        self.tracks = rebirth_step(res.tracks, self.config.rebirth_window)
        # dead tracks are never matched again; drop them from the working set
        self.tracks = [t for t in self.tracks if t.alive]
        return [(t.id, t.box, t.score) for t in self.tracks if t.unmatched_streak == 0]

    def step_model(self, model: JDTModel, frame_index: int, image: np.ndarray) -> list[tuple[int, Box, float]]:
        """Full model step: features, aggregation with the cache, encoding, both decoders, association."""
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise ValueError(f"frame {frame_index} arrives after frame {self.last_frame}")
        img = Tensor(np.asarray(image, dtype=np.float64)[None])
        cur = model.features(img, frame_index)
        prev = self.cache.previous_for(cur)
        memory = model.encode(cur, prev)
        self.cache.update(cur)
        det = model.detect(memory)
        scores = det.scores()[0]
        keep = np.flatnonzero(scores > self.config.score_threshold)
        detections = [DetBox(Box(*det.boxes.data[0, q]), float(scores[q]), det.class_logits.data[0, q].copy(),
                             det.hidden.data[0, q].copy()) for q in keep]
        live = [t for t in self.alive() if t.query_feature is not None]
        if live:
            feats = Tensor(np.stack([t.query_feature for t in live])[None])
            boxes = np.stack([t.box.as_array() for t in live])[None]
            out = model.track(memory, feats, boxes)
            tscores = out.scores()[0]
            for k, t in enumerate(live):
                if tscores[k] > self.config.track_score_threshold:
                    t.box = Box(*out.boxes.data[0, k])
                    t.query_feature = out.hidden.data[0, k].copy()
        return self.update(frame_index, detections)


def track_sequence(model: JDTModel, frames, config: TrackerConfig | None = None):
    """Run a fresh session over ``(frame_index, image[3, H, W])`` pairs in temporal order.

    Returns ``{frame_index: [(id, Box, score), ...]}``.
    """
    session = TrackingSession(config or TrackerConfig())
    out = {}
    for index, image in frames:
        out[index] = session.step_model(model, index, image)
    return out


def to_mot_records(results, width: int, height: int) -> list[MotRecord]:
    """Normalised tracker output -> pixel MOTChallenge rows."""
    rows = []
    for frame, items in sorted(results.items()):
        for tid, box, score in items:
            x1, y1, x2, y2 = box.corners()
            rows.append(MotRecord(frame, tid, x1 * width, y1 * height, (x2 - x1) * width, (y2 - y1) * height,
                                  score, -1.0, -1.0, -1.0))
    return rows

"""MOTChallenge files, CLEAR-MOT accounting and MOTA."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import pairwise_iou_xyxy
from .hungarian import masked_hungarian


class MotParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str) -> None:
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class UndefinedMetricError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class MotRecord:
    """One CSV row: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`` (pixels, 1-based frames)."""

    frame: int
    id: int
    left: float
    top: float
    width: float
    height: float
    conf: float = 1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.left + self.width, self.top + self.height)


@dataclass
class FrameBoxes:
    ids: list[int] = field(default_factory=list)
    boxes: list[tuple[float, float, float, float]] = field(default_factory=list)  # x1, y1, x2, y2

    def add(self, rec: MotRecord) -> None:
        self.ids.append(rec.id)
        self.boxes.append(rec.corners)

    def array(self) -> np.ndarray:
        return np.array(self.boxes, dtype=np.float64).reshape(-1, 4)


def _fmt(v: float) -> str:
    return repr(float(v)) if float(v) != int(v) else str(int(v))


def format_records(records) -> str:
    out = io.StringIO()
    for r in records:
        out.write(",".join([str(r.frame), str(r.id)] + [_fmt(v) for v in (
            r.left, r.top, r.width, r.height, r.conf, r.x, r.y, r.z)]) + "\n")
    return out.getvalue()


def write_mot_file(path, records) -> None:
    Path(path).write_text(format_records(records), encoding="utf-8")


def read_mot_records(path) -> list[MotRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 6:
                raise MotParseError(path, lineno, f"expected at least 6 fields, got {len(row)}")
            try:
                frame, tid = int(float(row[0])), int(float(row[1]))
                vals = [float(c) for c in row[2:10]]
            except ValueError as exc:
                raise MotParseError(path, lineno, str(exc)) from None
            if frame < 1:
                raise MotParseError(path, lineno, f"frames are 1-indexed, got {frame}")
            if vals[2] < 0 or vals[3] < 0:
                raise MotParseError(path, lineno, "negative box size")
            vals += [1.0, -1.0, -1.0, -1.0][len(vals) - 4:]
            records.append(MotRecord(frame, tid, *vals[:8]))
    return records


def parse_mot_file(path, ignore_zero_conf: bool = False) -> dict[int, FrameBoxes]:
    """Boxes grouped by frame in corner format. With ``ignore_zero_conf``
    rows whose conf is <= 0 are dropped (the ground-truth "ignore" flag)."""
    return group_by_frame(read_mot_records(path), ignore_zero_conf)


def group_by_frame(records, ignore_zero_conf: bool = False) -> dict[int, FrameBoxes]:
    frames: dict[int, FrameBoxes] = defaultdict(FrameBoxes)
    for r in records:
        if ignore_zero_conf and r.conf <= 0:
            continue
        frames[r.frame].add(r)
    return dict(sorted(frames.items()))


@dataclass(frozen=True)
class FrameCounts:
    frame: int
    gt: int
    fp: int
    fn: int
    ids: int
    matches: int = 0

    def __post_init__(self):
        if min(self.gt, self.fp, self.fn, self.ids) < 0 or self.fn > self.gt:
            raise ValueError(f"inconsistent counts {self}")


def clear_mot(gt: dict[int, FrameBoxes], pred: dict[int, FrameBoxes], iou_threshold: float = 0.5) -> list[FrameCounts]:
    """Per-frame CLEAR-MOT counts.

    Correspondences from the previous frame are kept while their IoU stays
    at or above the threshold; the remaining objects are matched by
    maximising the number of valid pairs, then minimising 1 - IoU. A ground
    truth id whose matched hypothesis differs from the last one it was
    matched to (even after a gap) is an identity switch.
    """
    frames = sorted(set(gt) | set(pred))
    last_match: dict[int, int] = {}  # gt id -> most recent hypothesis id
    prev_pairs: dict[int, int] = {}  # correspondences of the previous frame
    out = []
    for f in frames:
        g = gt.get(f, FrameBoxes())
        p = pred.get(f, FrameBoxes())
        iou = pairwise_iou_xyxy(g.array(), p.array())
        matched: dict[int, int] = {}  # gt index -> pred index
        gi_of = {tid: i for i, tid in enumerate(g.ids)}
        pi_of = {tid: j for j, tid in enumerate(p.ids)}
        for gid, hid in prev_pairs.items():
            i, j = gi_of.get(gid), pi_of.get(hid)
            if i is not None and j is not None and iou[i, j] >= iou_threshold:
                matched[i] = j
        free_g = [i for i in range(len(g.ids)) if i not in matched]
        used_p = set(matched.values())
        free_p = [j for j in range(len(p.ids)) if j not in used_p]
        if free_g and free_p:
            sub = iou[np.ix_(free_g, free_p)]
            res = masked_hungarian(1.0 - sub, sub >= iou_threshold)
            for r, c in res.pairs:
                matched[free_g[r]] = free_p[c]
        switches = 0
        pairs = {}
        for i, j in matched.items():
            gid, hid = g.ids[i], p.ids[j]
            if gid in last_match and last_match[gid] != hid:
                switches += 1
            last_match[gid] = hid
            pairs[gid] = hid
        prev_pairs = pairs
        m = len(matched)
        out.append(FrameCounts(f, len(g.ids), len(p.ids) - m, len(g.ids) - m, switches, m))
    return out


@dataclass
class MotaReport:
    mota: float
    gt: int
    fp: int
    fn: int
    ids: int
    sequences: dict[str, MotaReport] = field(default_factory=dict)

    def to_csv(self) -> str:
        rows = ["sequence,gt,fp,fn,ids,mota"]
        for name, r in self.sequences.items():
            rows.append(f"{name},{r.gt},{r.fp},{r.fn},{r.ids},{r.mota:.6f}")
        rows.append(f"OVERALL,{self.gt},{self.fp},{self.fn},{self.ids},{self.mota:.6f}")
        return "\n".join(rows) + "\n"

    def to_table(self) -> str:
        items = list(self.sequences.items()) + [("OVERALL", self)]
        head = ("sequence", "GT", "FP", "FN", "IDS", "MOTA %")
        body = [(n, str(r.gt), str(r.fp), str(r.fn), str(r.ids), f"{100 * r.mota:.2f}") for n, r in items]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.rjust(wd) if i else c.ljust(wd) for i, (c, wd) in enumerate(zip(row, widths)))
                 for row in [head] + body]
        return "\n".join(lines) + "\n"


def mota_from_totals(gt: int, fp: int, fn: int, ids: int) -> float:
    if gt <= 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth objects")
    return 1.0 - (fn + fp + ids) / gt


def mota(counts, sequences: dict[str, list[FrameCounts]] | None = None) -> MotaReport:
    """MOTA = 1 - sum(FN + FP + IDS) / sum(GT) over all frames given."""
    counts = list(counts)
    gt = sum(c.gt for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    ids = sum(c.ids for c in counts)
    report = MotaReport(mota_from_totals(gt, fp, fn, ids), gt, fp, fn, ids)
    for name, seq in (sequences or {}).items():
        report.sequences[name] = mota(seq)
    return report


def evaluate_files(gt_path, result_path, iou_threshold: float = 0.5) -> MotaReport:
    gt = parse_mot_file(gt_path, ignore_zero_conf=True)
    pred = parse_mot_file(result_path)
    counts = clear_mot(gt, pred, iou_threshold)
    return mota(counts, {Path(gt_path).stem: counts})

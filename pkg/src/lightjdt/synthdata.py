"""Seeded synthetic multi-object sequences: coloured rectangles on a dark background.

Frame files use a small raw tensor layout (little-endian):

    4 bytes   magic b"LJT1"
    uint32    number of dimensions d
    d uint64  dimensions
    float64   values, row-major
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .moteval import MotRecord, write_mot_file

MAGIC = b"LJT1"
BACKGROUND_LEVEL = 0.1


class SceneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    min_objects: int = 1
    max_objects: int = 5
    min_size: int = 10
    max_size: int = 20
    min_speed: float = 0.0
    max_speed: float = 1.0
    occlusion_prob: float = 0.0
    occlusion_length: tuple[int, int] = (3, 10)
    avoid_overlap: bool = True
    length: int = 50
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise SceneConfigError("image size must be positive")
        if self.height % 64 or self.width % 64:
            raise SceneConfigError("image size must be divisible by 64")
        if not 0 <= self.min_objects <= self.max_objects:
            raise SceneConfigError("bad object count range")
        if not 1 <= self.min_size <= self.max_size:
            raise SceneConfigError("bad object size range")
        if self.length < 1:
            raise SceneConfigError("sequence needs at least one frame")
        if not 0 <= self.occlusion_prob <= 1:
            raise SceneConfigError("occlusion probability must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> SceneConfig:
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "occlusion_length" in d:
            d["occlusion_length"] = tuple(d["occlusion_length"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObjectTrack:
    """Linear motion from an initial top-left corner; hidden frames are occluded."""

    id: int
    x0: float
    y0: float
    vx: float
    vy: float
    w: int
    h: int
    colour: np.ndarray
    hidden: frozenset = frozenset()

    def raw_box(self, t: int) -> tuple[float, float, float, float]:
        x, y = self.x0 + self.vx * t, self.y0 + self.vy * t
        return x, y, x + self.w, y + self.h


@dataclass
class Sequence:
    frames: list[np.ndarray]  # each [3, H, W]
    records: list[MotRecord]
    objects: list[ObjectTrack]
    config: SceneConfig

    def images(self) -> np.ndarray:
        return np.stack(self.frames)


def _clip(box, w: int, h: int):
    x1, y1, x2, y2 = box
    cx1, cy1, cx2, cy2 = max(0.0, x1), max(0.0, y1), min(float(w), x2), min(float(h), y2)
    if cx2 <= cx1 or cy2 <= cy1:
        return None
    return cx1, cy1, cx2, cy2


def _overlap(a, b) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])


def _sample_objects(cfg: SceneConfig, rng: np.random.Generator) -> list[ObjectTrack]:
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objs: list[ObjectTrack] = []
    hues = rng.permutation(6)
    for k in range(n):
        for _attempt in range(200):
            w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
            x0 = float(rng.integers(0, cfg.width - w + 1))
            y0 = float(rng.integers(0, cfg.height - h + 1))
            speed = rng.uniform(cfg.min_speed, cfg.max_speed)
            ang = rng.uniform(0, 2 * np.pi)
            vx, vy = speed * np.cos(ang), speed * np.sin(ang)
            base = np.full(3, 0.35)
            base[hues[k % 6] % 3] = 1.0
            if hues[k % 6] >= 3:
                base[(hues[k % 6] + 1) % 3] = 1.0
            colour = np.clip(base + rng.uniform(-0.1, 0.1, 3), 0, 1)
            cand = ObjectTrack(k + 1, x0, y0, vx, vy, w, h, colour)
            if not cfg.avoid_overlap or all(
                not _overlap(cand.raw_box(t), o.raw_box(t)) for o in objs for t in range(cfg.length)
            ):
                objs.append(cand)
                break
    if cfg.occlusion_prob > 0:
        for o in objs:
            hidden = set()
            t = 1
            while t < cfg.length:
                if rng.random() < cfg.occlusion_prob:
                    span = int(rng.integers(cfg.occlusion_length[0], cfg.occlusion_length[1] + 1))
                    hidden.update(range(t, min(cfg.length, t + span)))
                    t += span + 1
                else:
                    t += 1
            o.hidden = frozenset(hidden)
    return objs


def render(objects, t: int, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    img = np.full((3, cfg.height, cfg.width), BACKGROUND_LEVEL)
    if cfg.noise:
        img = img + cfg.noise * rng.standard_normal(img.shape)
    for o in objects:
        if t in o.hidden:
            continue
        box = _clip(o.raw_box(t), cfg.width, cfg.height)
        if box is None:
            continue
        x1, y1, x2, y2 = (int(round(v)) for v in box)
        if x2 > x1 and y2 > y1:
            img[:, y1:y2, x1:x2] = o.colour[:, None, None]
    return img


def generate(cfg: SceneConfig, objects: list[ObjectTrack] | None = None) -> Sequence:
    """Frames and MOTChallenge ground truth for one sequence.

    GT rows carry ``conf=1``, ``x=1`` (class) and ``y`` = visibility (1 or
    0 while occluded); occluded objects keep their records. Passing
    ``objects`` replaces the sampled scene with a scripted one.
    """
    rng = np.random.default_rng(cfg.seed)
    sampled = _sample_objects(cfg, rng)
    objects = sampled if objects is None else objects
    frames, records = [], []
    for t in range(cfg.length):
        frames.append(render(objects, t, cfg, rng))
        for o in objects:
            box = _clip(o.raw_box(t), cfg.width, cfg.height)
            if box is None:
                continue
            x1, y1, x2, y2 = box
            vis = 0.0 if t in o.hidden else 1.0
            records.append(MotRecord(t + 1, o.id, x1, y1, x2 - x1, y2 - y1, 1.0, 1.0, vis, -1.0))
    return Sequence(frames, records, objects, cfg)


def targets_for_frame(seq: Sequence, frame: int, visible_only: bool = True):
    """(classes, normalised cxcywh boxes, ids) for a 1-based frame."""
    cfg = seq.config
    rows = [r for r in seq.records if r.frame == frame and (r.y > 0 or not visible_only)]
    boxes = np.array([[(r.left + r.width / 2) / cfg.width, (r.top + r.height / 2) / cfg.height,
                       r.width / cfg.width, r.height / cfg.height] for r in rows]).reshape(-1, 4)
    return np.zeros(len(rows), dtype=np.int64), boxes, [r.id for r in rows]


# ---------------------------------------------------------------- raw tensors

def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a raw tensor file")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{ndim}Q", blob, 8)
    start = 8 + 8 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(blob) - start != 8 * count:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(blob, dtype="<f8", offset=start, count=count).reshape(dims).astype(np.float64)


def write_sequence(seq: Sequence, out_dir) -> None:
    """``frames/000001.ljt`` ... plus ``gt.txt`` in MOTChallenge CSV."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_tensor(out / "frames" / f"{i:06d}.ljt", frame)
    write_mot_file(out / "gt.txt", seq.records)


def read_frames(frames_dir) -> list[tuple[int, np.ndarray]]:
    paths = sorted(Path(frames_dir).glob("*.ljt"))
    return [(int(p.stem), read_tensor(p)) for p in paths]

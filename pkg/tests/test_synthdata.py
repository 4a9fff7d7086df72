import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightjdt.moteval import read_mot_records
from lightjdt.synthdata import (ObjectTrack, SceneConfig, SceneConfigError, generate, read_frames, read_tensor,
                                targets_for_frame, write_sequence, write_tensor)


def scripted(vx=0.0, vy=0.0, x0=10.0, y0=12.0, w=8, h=6):
    return [ObjectTrack(1, x0, y0, vx, vy, w, h, np.array([1.0, 0.35, 0.35]))]


def test_static_object():
    seq = generate(SceneConfig(length=3, seed=0), objects=scripted())
    assert [(r.frame, r.id, r.left, r.top, r.width, r.height) for r in seq.records] == [
        (f, 1, 10.0, 12.0, 8.0, 6.0) for f in (1, 2, 3)]


def test_same_seed_bit_identical():
    a = generate(SceneConfig(length=5, seed=11))
    b = generate(SceneConfig(length=5, seed=11))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.frames, b.frames))
    assert a.records == b.records
    c = generate(SceneConfig(length=5, seed=12))
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a.frames, c.frames))


def test_velocity_two_pixels_per_frame():
    seq = generate(SceneConfig(length=10, seed=0), objects=scripted(vx=2.0, x0=44.0))
    lefts = [r.left for r in seq.records]
    assert lefts[:7] == [44.0 + 2 * t for t in range(7)]
    # from frame 8 on the box crosses the right edge and is clipped
    assert all(r.left + r.width <= 64 for r in seq.records)
    assert [r.width for r in seq.records[7:]] == [6.0, 4.0, 2.0]


def test_rendered_pixels_follow_box():
    seq = generate(SceneConfig(length=1, seed=0, noise=0.0), objects=scripted())
    img = seq.frames[0]
    assert np.all(img[0, 12:18, 10:18] == 1.0)
    assert img[0, 11, 10] == pytest.approx(0.1) and img[0, 12, 18] == pytest.approx(0.1)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0, 4))
def test_boxes_inside_image(seed, speed):
    cfg = SceneConfig(length=15, seed=seed, max_speed=speed, min_speed=0.0)
    seq = generate(cfg)
    for r in seq.records:
        assert r.left >= 0 and r.top >= 0 and r.width > 0 and r.height > 0
        assert r.left + r.width <= cfg.width and r.top + r.height <= cfg.height
    for f in range(1, cfg.length + 1):
        ids = [r.id for r in seq.records if r.frame == f]
        assert len(ids) == len(set(ids))
    assert cfg.min_objects <= len(seq.objects) <= cfg.max_objects


def test_occlusion_keeps_records():
    cfg = SceneConfig(length=30, seed=3, occlusion_prob=0.3, max_speed=0.0)
    seq = generate(cfg)
    hidden = [r for r in seq.records if r.y == 0.0]
    assert hidden, "expected some occluded frames"
    per_object = {o.id: sum(r.id == o.id for r in seq.records) for o in seq.objects}
    assert set(per_object.values()) == {30}
    cls, boxes, ids = targets_for_frame(seq, hidden[0].frame)
    assert hidden[0].id not in ids
    assert hidden[0].id in targets_for_frame(seq, hidden[0].frame, visible_only=False)[2]


def test_targets_normalised():
    seq = generate(SceneConfig(length=1, seed=0), objects=scripted())
    cls, boxes, ids = targets_for_frame(seq, 1)
    np.testing.assert_allclose(boxes, [[14 / 64, 15 / 64, 8 / 64, 6 / 64]])
    assert cls.tolist() == [0] and ids == [1]


@given(st.lists(st.integers(0, 4), min_size=0, max_size=3), st.integers(0, 1000))
def test_raw_tensor_round_trip(tmp_path_factory, dims, seed):
    arr = np.random.default_rng(seed).standard_normal(dims)
    p = tmp_path_factory.mktemp("t") / "x.ljt"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()


def test_raw_tensor_errors(tmp_path):
    p = tmp_path / "bad.ljt"
    p.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_tensor(p)
    write_tensor(p, np.zeros(3))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_tensor(p)


def test_write_sequence(tmp_path):
    seq = generate(SceneConfig(length=4, seed=5))
    write_sequence(seq, tmp_path)
    frames = read_frames(tmp_path / "frames")
    assert [i for i, _ in frames] == [1, 2, 3, 4]
    assert all(a.tobytes() == b.tobytes() for (_, a), b in zip(frames, seq.frames))
    assert read_mot_records(tmp_path / "gt.txt") == seq.records


@pytest.mark.parametrize("kw", [
    {"height": 0}, {"width": 100}, {"min_objects": 3, "max_objects": 2}, {"min_size": 0},
    {"length": 0}, {"occlusion_prob": 1.5},
])
def test_config_errors(kw):
    with pytest.raises(SceneConfigError):
        SceneConfig(**kw)


def test_config_dict_round_trip():
    cfg = SceneConfig(length=7, seed=2, occlusion_length=(2, 4))
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg

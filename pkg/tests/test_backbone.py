import numpy as np
import pytest

from lightjdt import tensor as T
from lightjdt.backbone import Aggregator, FeaturePyramid, FrameCache, ToyBackbone, aggregate, extract
from lightjdt.graphs import toy_backbone
from lightjdt.profiler import analytic_profile
from lightjdt.tensor import Tensor

from gradutil import projected, worst_error


def pyramid(rng, c=4, frame=0, size=(4, 4)):
    h, w = size
    maps = []
    for _ in range(4):
        maps.append(Tensor(rng.standard_normal((1, c, h, w))))
        h, w = -(-h // 2), -(-w // 2)
    return FeaturePyramid(maps, frame)


def test_extract_shapes():
    bb = ToyBackbone(np.random.default_rng(0), 8)
    p = extract(bb, Tensor(np.zeros((1, 3, 64, 64))))
    assert [m.shape[2:] for m in p.maps] == [(8, 8), (4, 4), (2, 2), (1, 1)]
    p = extract(bb, Tensor(np.zeros((2, 3, 64, 128))))
    assert [m.shape[2:] for m in p.maps] == [(8, 16), (4, 8), (2, 4), (1, 2)]


def test_zero_image_zero_bias_gives_zero_pyramid():
    bb = ToyBackbone(np.random.default_rng(0), 8)
    for p in extract(bb, Tensor(np.zeros((1, 3, 64, 64)))).maps:
        assert not p.data.any()


def test_extract_rejects_indivisible():
    with pytest.raises(T.DimensionError):
        extract(ToyBackbone(np.random.default_rng(0), 8), Tensor(np.zeros((1, 3, 64, 96))))


def test_extract_deterministic():
    img = np.random.default_rng(1).standard_normal((1, 3, 64, 64))
    a = extract(ToyBackbone(np.random.default_rng(0), 8), Tensor(img))
    b = extract(ToyBackbone(np.random.default_rng(0), 8), Tensor(img))
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.maps, b.maps))


@pytest.mark.parametrize("c,h,w", [(8, 64, 64), (16, 128, 64), (32, 64, 192)])
def test_counter_equals_profiler(c, h, w):
    bb = ToyBackbone(np.random.default_rng(0), c)
    with T.count_macs() as counter:
        extract(bb, Tensor(np.zeros((1, 3, h, w))))
    report = analytic_profile(toy_backbone(c), (3, h, w))
    assert counter.total == report.total_macs
    assert bb.num_parameters() == report.total_params


def test_pyramid_must_halve(rng):
    maps = [Tensor(rng.standard_normal((1, 4, s, s))) for s in (8, 4, 3, 1)]
    with pytest.raises(T.DimensionError):
        FeaturePyramid(maps, 0)


def test_aggregate_of_identical_frames_is_identity(rng):
    agg = Aggregator(rng, 4, noise=0.0)
    p = pyramid(rng)
    out = aggregate(agg, p, p)
    for a, b in zip(out.maps, p.maps):
        np.testing.assert_allclose(a.data, b.data, atol=1e-15)


def test_aggregate_shapes_and_mismatch(rng):
    agg = Aggregator(rng, 4)
    out = agg(pyramid(rng), pyramid(rng))
    assert [m.shape[1] for m in out.maps] == [4] * 4
    with pytest.raises(T.DimensionError):
        agg(pyramid(rng), pyramid(rng, size=(6, 6)))


def test_aggregate_gradients():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        agg = Aggregator(rng, 4)
        a, b = pyramid(rng, size=(2, 2)), pyramid(rng, size=(2, 2))
        params = [*agg.parameters(), a.maps[0], b.maps[1]]
        f = projected(lambda: T.concat([T.reshape(m, (1, m.data.size)) for m in agg(a, b).maps],
                                       axis=1), seed)
        assert worst_error(f, params) < 1e-4


def test_cache_start_and_order(rng):
    cache = FrameCache()
    p0 = pyramid(rng, frame=0)
    assert cache.previous_for(p0) is p0
    cache.update(p0)
    p1 = pyramid(rng, frame=1)
    assert cache.previous_for(p1).frame_index == 0
    cache.update(p1)
    with pytest.raises(ValueError):
        cache.update(pyramid(rng, frame=1))
    with pytest.raises(ValueError):
        cache.update(pyramid(rng, frame=0))


def test_cache_holds_detached_copy(rng):
    cache = FrameCache()
    p = pyramid(rng)
    p.maps[0].requires_grad = True
    cache.update(p)
    assert not cache.pyramid.maps[0].requires_grad

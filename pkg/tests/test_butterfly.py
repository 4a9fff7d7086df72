import numpy as np
import pytest
from hypothesis import given, strategies as st

from lightjdt import tensor as T
from lightjdt.butterfly import (ButterflyLayer, bt_forward, bt_macs, bt_param_count, dense_pointwise_macs,
                                num_stages, to_dense)
from lightjdt.tensor import Tensor, grad_check


def stage_matrix(w: np.ndarray, s: int) -> np.ndarray:
    """Independent oracle: the sparse N x N matrix of one stage."""
    n = w.shape[0]
    m = np.zeros((n, n))
    for i in range(n):
        m[i, i] += w[i, 0]
        m[i, i ^ (1 << s)] += w[i, 1]
    return m


def product_of_stages(layer: ButterflyLayer) -> np.ndarray:
    out = np.eye(layer.channels)
    for s, w in enumerate(layer.stages):
        out = stage_matrix(w.data, s) @ out
    return out


def random_layer(n, seed):
    rng = np.random.default_rng(seed)
    return ButterflyLayer.from_stage_weights([rng.standard_normal((n, 2)) for _ in range(num_stages(n))])


def test_identity_stages_pass_through(rng):
    x = Tensor(rng.standard_normal((2, 8, 3, 3)))
    np.testing.assert_array_equal(bt_forward(ButterflyLayer.identity(8), x).data, x.data)
    np.testing.assert_array_equal(to_dense(ButterflyLayer.identity(8)), np.eye(8))


def test_two_channel_explicit_mix():
    a, b, c, d = 2.0, 3.0, 5.0, 7.0
    layer = ButterflyLayer.from_stage_weights([[[a, b], [d, c]]])
    y = bt_forward(layer, Tensor(np.array([1.0, 10.0]).reshape(1, 2, 1, 1))).data.ravel()
    np.testing.assert_array_equal(y, [a * 1 + b * 10, c * 1 + d * 10])
    np.testing.assert_array_equal(to_dense(layer), [[a, b], [c, d]])


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32])
def test_dense_equivalence_100_seeds(n):
    for seed in range(100):
        layer = random_layer(n, seed)
        x = np.random.default_rng(seed + 7).standard_normal((2, n, 3, 2))
        y = bt_forward(layer, Tensor(x)).data
        ref = np.einsum("ij,bjhw->bihw", to_dense(layer), x)
        assert np.max(np.abs(y - ref)) < 1e-10


@pytest.mark.parametrize("n", [2, 8, 16, 64])
def test_to_dense_matches_independent_stage_product(n):
    for seed in range(10):
        layer = random_layer(n, seed)
        np.testing.assert_allclose(to_dense(layer), product_of_stages(layer), atol=1e-12)


def test_to_dense_columns_are_basis_forwards():
    layer = random_layer(16, 3)
    dense = to_dense(layer)
    for j in range(16):
        e = np.zeros((1, 16, 1, 1))
        e[0, j] = 1
        np.testing.assert_array_equal(dense[:, j], bt_forward(layer, Tensor(e)).data.ravel())


@pytest.mark.parametrize("n", [4, 8, 32])
def test_full_mixing(n):
    assert np.all(to_dense(random_layer(n, 0)) != 0)


def test_errors():
    with pytest.raises(T.UnsupportedConfigError):
        ButterflyLayer(12)
    with pytest.raises(T.DimensionError):
        bt_forward(ButterflyLayer(8), Tensor(np.zeros((1, 4, 2, 2))))


@pytest.mark.parametrize("n,h,w,expected", [(256, 1, 1, 4096), (2, 1, 1, 4), (64, 3, 5, 11_520)])
def test_bt_macs_examples_match_counter(n, h, w, expected):
    layer = ButterflyLayer(n, np.random.default_rng(0))
    with T.count_macs() as c:
        bt_forward(layer, Tensor(np.ones((1, n, h, w))))
    assert bt_macs(layer, h, w) == c.total == expected


def test_dense_vs_butterfly_at_256():
    assert dense_pointwise_macs(256) == 65_536
    assert 1 - bt_macs(256) / dense_pointwise_macs(256) == pytest.approx(0.9375)


@given(st.sampled_from([2, 4, 8, 16, 32, 64]), st.integers(1, 4), st.integers(1, 4))
def test_mac_scaling_law(n, h, w):
    assert bt_macs(n, h, w) / (n * h * w) == 2 * num_stages(n)
    assert bt_macs(n, h, w) / dense_pointwise_macs(n, h, w) == pytest.approx(2 * num_stages(n) / n)


def test_ratio_strictly_decreasing_from_8():
    ratios = [bt_macs(n) / dense_pointwise_macs(n) for n in (8, 16, 32, 64, 128, 256)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


@pytest.mark.parametrize("n,bias,expected", [(256, False, 4096), (2, True, 6), (1024, False, 20_480)])
def test_param_count(n, bias, expected):
    layer = ButterflyLayer(n, bias=bias)
    assert bt_param_count(layer) == expected == layer.num_parameters()


def test_gradients_20_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        layer = ButterflyLayer.from_stage_weights([rng.standard_normal((8, 2)) for _ in range(3)],
                                                  bias=rng.standard_normal(8))
        x = Tensor(rng.standard_normal((1, 8, 2, 2)))
        r = rng.standard_normal((1, 8, 2, 2))
        err = grad_check(lambda: T.sum_all(T.mul_const(bt_forward(layer, x), r)), [x, *layer.parameters()])
        assert err < 1e-4


def test_token_axis_matches_map_axis(rng):
    layer = random_layer(8, 1)
    x = rng.standard_normal((1, 8, 3, 3))
    y_map = bt_forward(layer, Tensor(x)).data
    tokens = x.transpose(0, 2, 3, 1).reshape(1, 9, 8)
    y_tok = bt_forward(layer, Tensor(tokens), axis=2).data
    np.testing.assert_allclose(y_tok, y_map.transpose(0, 2, 3, 1).reshape(1, 9, 8), atol=1e-14)


def test_init_is_near_identity():
    layer = ButterflyLayer(64, np.random.default_rng(0))
    assert np.max(np.abs(to_dense(layer) - np.eye(64))) < 0.5

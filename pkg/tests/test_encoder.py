import numpy as np
import pytest
from hypothesis import given, strategies as st

from lightjdt import tensor as T
from lightjdt.butterfly import ButterflyLayer
from lightjdt.encoder import (Encoder, EncoderLayer, ScaleLayout, SpatialFFN, StandardFFNTokens, TokenSequence,
                              encoder_layer_forward, encoder_layer_macs, ffn_macs_comparison, maps_to_tokens,
                              mhsa_forward, spatial_ffn_forward, spatial_ffn_macs, standard_ffn_macs,
                              tokens_to_maps)
from lightjdt.nn import MultiHeadAttention
from lightjdt.tensor import Tensor

from gradutil import projected, worst_error

LAYOUT_23 = ScaleLayout(((4, 4), (2, 2), (1, 2), (1, 1)), 8)


def random_tokens(layout, seed=0, batch=1):
    data = np.random.default_rng(seed).standard_normal((batch, layout.num_tokens, layout.channels))
    return TokenSequence(Tensor(data), layout)


layouts = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=4, max_size=4).map(
    lambda s: ScaleLayout(tuple(s), 8))


def test_layout_counts():
    assert ScaleLayout(((2, 2), (1, 2), (1, 1), (1, 1)), 4).num_tokens == 8
    assert LAYOUT_23.num_tokens == 23
    assert LAYOUT_23.offsets == [0, 16, 20, 22, 23]


def test_layout_needs_four_scales():
    with pytest.raises(T.DimensionError):
        ScaleLayout(((1, 1),) * 3, 4)


def test_single_pixel_maps_in_scale_order():
    layout = ScaleLayout(((1, 1),) * 4, 2)
    maps = [Tensor(np.full((1, 2, 1, 1), float(i))) for i in range(4)]
    tok = maps_to_tokens(maps, layout)
    np.testing.assert_array_equal(tok.data.data[0, :, 0], [0, 1, 2, 3])


@given(layouts, st.integers(0, 1000))
def test_round_trip_bit_exact(layout, seed):
    rng = np.random.default_rng(seed)
    maps = [Tensor(rng.standard_normal((2, 8, h, w))) for h, w in layout.scales]
    back = tokens_to_maps(maps_to_tokens(maps, layout))
    for a, b in zip(maps, back):
        assert a.data.tobytes() == b.data.tobytes()
    tok = random_tokens(layout, seed, batch=2)
    again = maps_to_tokens(tokens_to_maps(tok), layout)
    assert again.data.data.tobytes() == tok.data.data.tobytes()


def test_scale_slices_at_offsets():
    tok = random_tokens(LAYOUT_23)
    maps = tokens_to_maps(tok)
    off = LAYOUT_23.offsets
    for i, (h, w) in enumerate(LAYOUT_23.scales):
        flat = maps[i].data[0].transpose(1, 2, 0).reshape(h * w, 8)
        np.testing.assert_array_equal(flat, tok.data.data[0, off[i]:off[i + 1]])


def test_layout_mismatch_errors():
    with pytest.raises(T.DimensionError):
        maps_to_tokens([Tensor(np.zeros((1, 8, 2, 2)))] * 4, LAYOUT_23)
    with pytest.raises(T.DimensionError):
        TokenSequence(Tensor(np.zeros((1, 22, 8))), LAYOUT_23)


def test_mhsa_single_token(rng):
    attn = MultiHeadAttention(rng, 8, 2)
    layout = ScaleLayout(((1, 1),) * 4, 8)
    x = Tensor(rng.standard_normal((1, 1, 8)))
    out = attn(x, x, x)
    np.testing.assert_array_equal(attn._last_weights, np.ones((1, 2, 1, 1)))
    ref = attn.out(attn.v(x))
    np.testing.assert_allclose(out.data, ref.data, atol=1e-15)
    assert mhsa_forward(attn, random_tokens(layout)).data.shape == (1, 4, 8)


def test_mhsa_identical_tokens_identical_rows(rng):
    attn = MultiHeadAttention(rng, 8, 2)
    row = rng.standard_normal(8)
    x = Tensor(np.stack([row, row, rng.standard_normal(8)])[None])
    out = attn(x, x, x).data[0]
    np.testing.assert_allclose(out[0], out[1], atol=1e-15)


def test_mhsa_rows_sum_to_one_and_gradients():
    rng = np.random.default_rng(0)
    attn = MultiHeadAttention(rng, 8, 2)
    x = Tensor(rng.standard_normal((1, 6, 8)))
    attn(x, x, x)
    np.testing.assert_allclose(attn._last_weights.sum(-1), 1.0, atol=1e-12)
    assert worst_error(projected(lambda: attn(x, x, x)), [x, *attn.parameters()]) < 1e-4


@given(st.integers(0, 10_000))
def test_mhsa_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    attn = MultiHeadAttention(rng, 8, 2)
    x = rng.standard_normal((1, 7, 8))
    perm = rng.permutation(7)
    base = attn(Tensor(x), Tensor(x), Tensor(x)).data
    xp = Tensor(x[:, perm])
    out = attn(xp, xp, xp).data
    np.testing.assert_allclose(out[:, np.argsort(perm)], base, atol=1e-10)


def _identity_ffn(c):
    ffn = SpatialFFN(np.random.default_rng(0), c)
    ffn.bt1 = ButterflyLayer.identity(c)
    ffn.bt2 = ButterflyLayer.identity(c)
    k = np.zeros((c, 3, 3))
    k[:, 1, 1] = 1
    ffn.dw_kernel.data = k
    ffn.dw_bias.data = np.zeros(c)
    ffn.proj.weight.data = np.eye(c)
    ffn.proj.bias.data = np.zeros(c)
    return ffn


def test_spatial_ffn_composed_identity(rng):
    ffn = _identity_ffn(8)
    tok = TokenSequence(Tensor(np.abs(rng.standard_normal((2, 23, 8)))), LAYOUT_23)
    np.testing.assert_array_equal(spatial_ffn_forward(ffn, tok).data.data, tok.data.data)


def test_spatial_ffn_shape():
    ffn = SpatialFFN(np.random.default_rng(0), 8)
    assert spatial_ffn_forward(ffn, random_tokens(LAYOUT_23, batch=3)).data.shape == (3, 23, 8)


def test_spatial_ffn_locality():
    ffn = _identity_ffn(8)
    ffn.dw_kernel.data = np.random.default_rng(1).uniform(0.5, 1.0, (8, 3, 3))
    layout = ScaleLayout(((5, 5), (3, 3), (2, 2), (1, 1)), 8)
    base = np.abs(np.random.default_rng(2).standard_normal((1, layout.num_tokens, 8))) + 1.0
    y0 = ffn(TokenSequence(Tensor(base), layout)).data.data
    bumped = base.copy()
    y, x = 2, 2
    bumped[0, y * 5 + x, 3] += 5.0
    y1 = ffn(TokenSequence(Tensor(bumped), layout)).data.data
    changed = np.argwhere(np.abs(y1 - y0) > 0)
    for _, tok, ch in changed:
        assert ch == 3 and tok < 25
        ty, tx = divmod(tok, 5)
        assert abs(ty - y) <= 1 and abs(tx - x) <= 1


def test_spatial_ffn_rejects_non_power_of_two():
    with pytest.raises(T.UnsupportedConfigError):
        SpatialFFN(np.random.default_rng(0), 12)


def test_spatial_ffn_gradients():
    rng = np.random.default_rng(3)
    ffn = SpatialFFN(rng, 8)
    tok = random_tokens(LAYOUT_23, 5)
    assert worst_error(projected(lambda: ffn(tok).data), [tok.data, *ffn.parameters()]) < 1e-4


def test_layer_with_zero_output_projections_is_identity():
    layer = EncoderLayer(np.random.default_rng(0), 8, 2)
    layer.attn.out.weight.data[:] = 0
    layer.ffn.proj.weight.data[:] = 0
    tok = random_tokens(LAYOUT_23)
    np.testing.assert_array_equal(encoder_layer_forward(layer, tok).data.data, tok.data.data)


def test_stack_of_six_preserves_shape():
    enc = Encoder(np.random.default_rng(0), 8, 2, 6)
    assert enc(random_tokens(LAYOUT_23, batch=2)).data.shape == (2, 23, 8)


@given(layouts)
def test_layer_counter_equals_formula(layout):
    layer = EncoderLayer(np.random.default_rng(0), 8, 2)
    with T.count_macs() as c:
        layer(random_tokens(layout))
    assert c.total == encoder_layer_macs(layout)


def test_encoder_gradient_stack_l2():
    rng = np.random.default_rng(4)
    enc = Encoder(rng, 8, 2, 2)
    tok = random_tokens(LAYOUT_23, 9)
    assert worst_error(projected(lambda: enc(tok).data), [tok.data, *enc.parameters()]) < 1e-4


def test_ffn_comparison_examples():
    std, sp, ratio = ffn_macs_comparison(256, 8)
    assert (std, sp) == (1_048_576, 76_032)
    assert ratio == pytest.approx(0.0725, abs=1e-4)
    std, sp, ratio = ffn_macs_comparison(2, 1)
    assert (std, sp) == (8, 30) and ratio > 1


def test_ffn_ratio_decreasing_in_expansion():
    ratios = [ffn_macs_comparison(16, e)[2] for e in range(1, 10)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


@pytest.mark.parametrize("layout", [LAYOUT_23, ScaleLayout(((3, 5), (2, 3), (1, 2), (1, 1)), 8)])
def test_ffn_counters_equal_formulas(layout):
    rng = np.random.default_rng(0)
    tok = random_tokens(layout)
    with T.count_macs() as a:
        SpatialFFN(rng, 8)(tok)
    with T.count_macs() as b:
        StandardFFNTokens(rng, 8, 8)(tok)
    assert a.total == spatial_ffn_macs(layout.num_tokens, 8)
    assert b.total == standard_ffn_macs(layout.num_tokens, 8, 8)
    assert ffn_macs_comparison(8, 8, layout)[:2] == (b.total, a.total)

"""Builders for the bundled layer graphs.

The residual-CNN and pyramid-transformer backbones follow their public
layer definitions closely enough for resolution-scaling trends; batch
norm is folded into conv biases and classifier heads are dropped. The
JSON files under ``lightjdt/graphs/`` are generated from these builders
(see :func:`write_bundled`) and may be edited by hand.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .profiler import LayerSpec, layer, load_graph, save_graph

GRAPH_DIR = "graphs"


def resnet50(group: str = "backbone") -> list[LayerSpec]:
    g: list[LayerSpec] = [
        layer("conv2d", "stem.conv", group, out_channels=64, kernel=7, stride=2, padding=3),
        layer("pool", "stem.pool", group, kernel=3, stride=2, padding=1),
    ]
    prev = "stem.pool"
    for li, (blocks, width) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512)), start=1):
        for bi in range(blocks):
            stride = 2 if (bi == 0 and li > 1) else 1
            p = f"layer{li}.{bi}"
            g.append(layer("pointwise_conv2d", f"{p}.conv1", group, [prev], out_channels=width))
            g.append(layer("conv2d", f"{p}.conv2", group, out_channels=width, kernel=3, stride=stride, padding=1))
            g.append(layer("pointwise_conv2d", f"{p}.conv3", group, out_channels=4 * width))
            skip = prev
            if bi == 0:
                g.append(layer("conv2d", f"{p}.downsample", group, [prev], out_channels=4 * width, kernel=1,
                               stride=stride))
                skip = f"{p}.downsample"
            g.append(layer("add", f"{p}.add", group, [f"{p}.conv3", skip]))
            prev = f"{p}.add"
    return g


def pvt_v2(dims=(64, 128, 320, 512), heads=(1, 2, 5, 8), mlp_ratios=(8, 8, 4, 4), depths=(2, 2, 2, 2),
           sr_ratios=(8, 4, 2, 1), linear: bool = True, group: str = "backbone") -> list[LayerSpec]:
    """Pyramid vision transformer v2 (b1 sizes by default).

    ``linear=True`` pools keys/values to 7x7 before attention, which keeps
    attention linear in the number of pixels.
    """
    g: list[LayerSpec] = []
    prev = "input"
    for s, (c, h, r, d, sr) in enumerate(zip(dims, heads, mlp_ratios, depths, sr_ratios), start=1):
        k, st, pad = (7, 4, 3) if s == 1 else (3, 2, 1)
        g.append(layer("conv2d", f"stage{s}.patch_embed", group, [prev], out_channels=c, kernel=k, stride=st,
                       padding=pad))
        g.append(layer("layer_norm", f"stage{s}.patch_norm", group))
        prev = f"stage{s}.patch_norm"
        for b in range(d):
            p = f"stage{s}.block{b}"
            g.append(layer("layer_norm", f"{p}.norm1", group, [prev]))
            attn_hp = {"heads": h, "pool_size": 7} if linear else {"heads": h, "sr_ratio": sr}
            g.append(layer("spatial_reduction_attention", f"{p}.attn", group, **attn_hp))
            g.append(layer("add", f"{p}.add1", group, [prev, f"{p}.attn"]))
            g.append(layer("layer_norm", f"{p}.norm2", group))
            g.append(layer("linear", f"{p}.fc1", group, out_features=r * c))
            g.append(layer("depthwise_conv2d", f"{p}.dwconv", group, kernel=3))
            g.append(layer("linear", f"{p}.fc2", group, out_features=c))
            g.append(layer("add", f"{p}.add2", group, [f"{p}.add1", f"{p}.fc2"]))
            prev = f"{p}.add2"
        g.append(layer("layer_norm", f"stage{s}.norm", group, [prev]))
        prev = f"stage{s}.norm"
    return g


def toy_backbone(channels: int, group: str = "backbone") -> list[LayerSpec]:
    """Graph of :class:`lightjdt.backbone.ToyBackbone`."""
    g: list[LayerSpec] = []
    prev = "input"
    for s, patch in enumerate((8, 2, 2, 2), start=1):
        g.append(layer("conv2d", f"stage{s}.embed", group, [prev], out_channels=channels, kernel=patch, stride=patch))
        g.append(layer("depthwise_conv2d", f"stage{s}.dw", group, kernel=3))
        g.append(layer("pointwise_conv2d", f"stage{s}.pw", group, out_channels=channels))
        g.append(layer("add", f"stage{s}.out", group, [f"stage{s}.embed", f"stage{s}.pw"]))
        prev = f"stage{s}.out"
    return g


def spatial_encoder_layer(prefix: str, scale_inputs: list[str], channels: int, heads: int,
                          group: str = "encoder") -> list[LayerSpec]:
    """One encoder layer with the spatially-aware FFN over four scale maps.

    Scale maps are named by ``scale_inputs``; the attention and projection
    act on their concatenated tokens. The butterfly and depthwise weights
    are shared by all scales.
    """
    g = [
        layer("layer_norm", f"{prefix}.norm1", group, scale_inputs),
        layer("mhsa", f"{prefix}.attn", group, heads=heads),
        layer("layer_norm", f"{prefix}.norm2", group, [f"{prefix}.attn"]),
    ]
    for i, src in enumerate(scale_inputs):
        share = {} if i == 0 else {"shared_with": f"{prefix}.s0.bt1"}
        g.append(layer("butterfly", f"{prefix}.s{i}.bt1", group, [src], **share))
        share = {} if i == 0 else {"shared_with": f"{prefix}.s0.dw"}
        g.append(layer("depthwise_conv2d", f"{prefix}.s{i}.dw", group, kernel=3, **share))
        share = {} if i == 0 else {"shared_with": f"{prefix}.s0.bt2"}
        g.append(layer("butterfly", f"{prefix}.s{i}.bt2", group, **share))
    g.append(layer("linear", f"{prefix}.proj", group, [f"{prefix}.s{i}.bt2" for i in range(len(scale_inputs))],
                   out_features=channels))
    return g


def standard_encoder_layer(prefix: str, scale_inputs: list[str], channels: int, heads: int, expansion: int = 8,
                           group: str = "encoder") -> list[LayerSpec]:
    return [
        layer("layer_norm", f"{prefix}.norm1", group, scale_inputs),
        layer("mhsa", f"{prefix}.attn", group, heads=heads),
        layer("layer_norm", f"{prefix}.norm2", group),
        layer("linear", f"{prefix}.fc1", group, out_features=expansion * channels),
        layer("linear", f"{prefix}.fc2", group, out_features=channels),
    ]


def decoder_layer(prefix: str, prev: str, memory: list[str], channels: int, heads: int, expansion: int = 4,
                  group: str = "decoder") -> list[LayerSpec]:
    return [
        layer("layer_norm", f"{prefix}.norm1", group, [prev]),
        layer("mhsa", f"{prefix}.self_attn", group, heads=heads),
        layer("layer_norm", f"{prefix}.norm2", group),
        layer("mhsa", f"{prefix}.cross_attn", group, heads=heads, memory=memory),
        layer("layer_norm", f"{prefix}.norm3", group),
        layer("linear", f"{prefix}.fc1", group, out_features=expansion * channels),
        layer("linear", f"{prefix}.fc2", group, out_features=channels),
    ]


def jdt_model(backbone: list[LayerSpec], stage_names: list[str], channels: int = 256, heads: int = 8,
              encoder_layers: int = 6, decoder_layers: int = 6, queries: int = 500, spatial_ffn: bool = True,
              ffn_expansion: int = 8) -> list[LayerSpec]:
    """Backbone -> per-scale projection to ``channels`` -> current/previous aggregation ->
    encoder -> decoder -> heads. The previous frame's maps come from the cache, so
    the backbone runs once."""
    g = list(backbone)
    scales = []
    for i, src in enumerate(stage_names):
        g.append(layer("pointwise_conv2d", f"proj{i}", "aggregation", [src], out_channels=channels))
        g.append(layer("pointwise_conv2d", f"agg{i}", "aggregation", [f"proj{i}", f"proj{i}"], out_channels=channels))
        scales.append(f"agg{i}")
    for li in range(encoder_layers):
        p = f"enc{li}"
        # every layer sees the same four token maps; costs are per token so the shapes carry over
        if spatial_ffn:
            g += spatial_encoder_layer(p, scales, channels, heads)
        else:
            g += standard_encoder_layer(p, scales, channels, heads, ffn_expansion)
    memory = scales
    g.append(layer("embedding", "object_queries", "decoder", num=queries, dim=channels))
    prev = "object_queries"
    for li in range(decoder_layers):
        g += decoder_layer(f"dec{li}", prev, memory, channels, heads)
        prev = f"dec{li}.fc2"
    g.append(layer("layer_norm", "dec_norm", "decoder", [prev]))
    g.append(layer("linear", "class_head", "output", ["dec_norm"], out_features=2))
    g.append(layer("linear", "box_hidden", "output", ["dec_norm"], out_features=channels))
    g.append(layer("linear", "box_out", "output", out_features=4))
    return g


def pvt_detection_backbone(group: str = "backbone") -> tuple[list[LayerSpec], list[str]]:
    """PVT v2 b1 plus one extra stride-2 conv, giving four levels at strides 8 to 64."""
    g = pvt_v2(group=group)
    g.append(layer("conv2d", "extra.conv", group, ["stage4.norm"], out_channels=256, kernel=3, stride=2, padding=1))
    return g, ["stage2.norm", "stage3.norm", "stage4.norm", "extra.conv"]


def resnet_detection_backbone(group: str = "backbone") -> tuple[list[LayerSpec], list[str]]:
    """ResNet-50 stages 2-4 plus one extra stride-2 conv (strides 8 to 64)."""
    g = resnet50(group=group)
    g.append(layer("conv2d", "extra.conv", group, ["layer4.2.add"], out_channels=256, kernel=3, stride=2, padding=1))
    return g, ["layer2.3.add", "layer3.5.add", "layer4.2.add", "extra.conv"]


def toy_model(channels: int = 32, heads: int = 4, encoder_layers: int = 2, decoder_layers: int = 2,
              queries: int = 20) -> list[LayerSpec]:
    """Graph of the desk-scale JDT model (detection path, one frame).

    Its params and MACs equal those of ``JDTModel(ModelConfig())`` with
    shared decoders.
    """
    g = toy_backbone(channels)
    scales = []
    for i in range(4):
        share = {} if i == 0 else {"shared_with": "agg0"}
        g.append(layer("pointwise_conv2d", f"agg{i}", "aggregation", [f"stage{i + 1}.out", f"stage{i + 1}.out"],
                       out_channels=channels, **share))
        scales.append(f"agg{i}")
    for li in range(encoder_layers):
        g += spatial_encoder_layer(f"enc{li}", scales, channels, heads)
    g.append(layer("embedding", "reference_boxes", "decoder", num=queries, dim=4))
    g.append(layer("embedding", "object_queries", "decoder", num=queries, dim=channels))
    prev = "object_queries"
    for li in range(decoder_layers):
        g += decoder_layer(f"dec{li}", prev, scales, channels, heads)
        prev = f"dec{li}.fc2"
    g.append(layer("layer_norm", "dec_norm", "decoder", [prev]))
    g.append(layer("linear", "class_head", "output", ["dec_norm"], out_features=2))
    g.append(layer("linear", "box_hidden", "output", ["dec_norm"], out_features=channels))
    g.append(layer("linear", "box_out", "output", out_features=4))
    return g


BUNDLED = {
    "resnet50": (lambda: resnet50(), (3, 800, 1333)),
    "pvt_v2_b1": (lambda: pvt_v2(), (3, 800, 1333)),
    "toy_backbone": (lambda: toy_backbone(32), (3, 64, 64)),
    "toy_model": (lambda: toy_model(), (3, 64, 64)),
    "baseline_model": (lambda: jdt_model(*resnet_detection_backbone(), spatial_ffn=False), (3, 800, 1333)),
    "proposed_model": (lambda: jdt_model(*pvt_detection_backbone()), (3, 800, 1333)),
}


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("lightjdt").joinpath(GRAPH_DIR).joinpath(f"{name}.json")))


def load_bundled(name: str):
    """(graph, name, default input shape) of a bundled config file."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled graph {name!r}; have {sorted(BUNDLED)}")
    return load_graph(bundled_path(name))


def write_bundled(directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, (build, shape) in BUNDLED.items():
        save_graph(d / f"{name}.json", build(), name, shape)

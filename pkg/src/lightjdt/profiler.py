"""Layer-wise parameter and MAC accounting.

A graph is a list of :class:`LayerSpec`. Each layer reads the outputs of
the layers named in ``inputs`` (default: the previous layer; the graph
input is called ``"input"``). Shapes are ``(C, H, W)`` for feature maps
and ``(N, C)`` for token sequences.

Counting convention: one MAC is one multiply-accumulate. Bias adds,
residual adds, activations, pooling and softmax cost nothing. Layer norm
costs one MAC per element (the affine step). Attention costs its four
projections plus ``2 * Nq * Nk * C`` for scores and value aggregation.

The closed forms here are checked against :func:`instrumented_count`,
which executes the same layer with the counted kernels of
:mod:`lightjdt.tensor`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .butterfly import ButterflyLayer, num_stages
from .nn import LayerNorm, Linear, MultiHeadAttention
from .tensor import Tensor, conv_out_size

KINDS = (
    "conv2d", "depthwise_conv2d", "pointwise_conv2d", "linear", "mhsa",
    "spatial_reduction_attention", "butterfly", "layer_norm", "embedding",
    # structural, zero cost
    "pool", "add",
)
GROUPS = ("backbone", "aggregation", "encoder", "decoder", "output")


class GraphError(ValueError):
    pass


@dataclass
class LayerSpec:
    kind: str
    name: str
    group: str
    inputs: list[str] | None = None
    hp: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.group not in GROUPS:
            raise GraphError(f"{self.name}: unknown group {self.group!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name, "group": self.group}
        if self.inputs is not None:
            d["inputs"] = list(self.inputs)
        d.update(self.hp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        d = dict(d)
        try:
            kind, name, group = d.pop("kind"), d.pop("name"), d.pop("group")
        except KeyError as exc:
            raise GraphError(f"layer entry missing {exc}") from None
        inputs = d.pop("inputs", None)
        return cls(kind, name, group, inputs, d)


def layer(kind: str, name: str, group: str, inputs=None, **hp) -> LayerSpec:
    return LayerSpec(kind, name, group, None if inputs is None else list(inputs), hp)


# ---------------------------------------------------------------- config files

def graph_to_json(graph: list[LayerSpec], name: str = "graph", input_shape=(3, 224, 224)) -> str:
    """One layer per line, stable key order, so save(load(text)) == text."""
    lines = ["{", f'  "name": {json.dumps(name)},', f'  "input": {json.dumps(list(input_shape))},', '  "layers": [']
    body = [f"    {json.dumps(spec.to_dict())}" for spec in graph]
    lines.append(",\n".join(body))
    lines += ["  ]", "}"]
    return "\n".join(lines) + "\n"


def graph_from_json(text: str) -> tuple[list[LayerSpec], str, tuple[int, ...]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph file is not valid JSON: {exc}") from None
    graph = [LayerSpec.from_dict(d) for d in doc.get("layers", [])]
    return graph, doc.get("name", "graph"), tuple(doc.get("input", (3, 224, 224)))


def save_graph(path, graph, name="graph", input_shape=(3, 224, 224)) -> None:
    Path(path).write_text(graph_to_json(graph, name, input_shape), encoding="utf-8")


def load_graph(path) -> tuple[list[LayerSpec], str, tuple[int, ...]]:
    return graph_from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- closed forms

def _tokens(shape) -> tuple[int, int]:
    """(positions, channels) of a map or token shape."""
    if len(shape) == 3:
        c, h, w = shape
        return h * w, c
    return shape


def _as_tokens(shapes) -> tuple[int, int]:
    n, c = 0, None
    for s in shapes:
        sn, sc = _tokens(s)
        if c is not None and sc != c:
            raise GraphError(f"cannot join token inputs with {c} and {sc} channels")
        n, c = n + sn, sc
    return n, c


def _is_map(shape) -> bool:
    return len(shape) == 3


def _need_map(spec: LayerSpec, shape) -> None:
    if not _is_map(shape):
        raise GraphError(f"{spec.name}: {spec.kind} needs a feature map input, got {shape}")


def _sra_reduced(spec: LayerSpec, h: int, w: int) -> tuple[int, int]:
    if "pool_size" in spec.hp:
        p = int(spec.hp["pool_size"])
        return p, p
    r = int(spec.hp.get("sr_ratio", 1))
    if r <= 1:
        return h, w
    hr, wr = conv_out_size(h, r, r, 0), conv_out_size(w, r, r, 0)
    if hr < 1 or wr < 1:
        raise GraphError(f"{spec.name}: map {h}x{w} smaller than reduction ratio {r}")
    return hr, wr


def layer_cost(spec: LayerSpec, in_shapes: list) -> tuple[int, int, tuple]:
    """(params, macs, output shape) for one layer."""
    hp = spec.hp
    k = spec.kind
    if k == "embedding":
        num, dim = int(hp["num"]), int(hp["dim"])
        return num * dim, 0, (num, dim)
    if not in_shapes:
        raise GraphError(f"{spec.name}: no input")
    s = in_shapes[0]
    bias = bool(hp.get("bias", True))
    if k == "conv2d":
        _need_map(spec, s)
        c, h, w = s
        co, kk = int(hp["out_channels"]), int(hp["kernel"])
        st, pad = int(hp.get("stride", 1)), int(hp.get("padding", 0))
        ho, wo = conv_out_size(h, kk, st, pad), conv_out_size(w, kk, st, pad)
        if ho < 1 or wo < 1:
            raise GraphError(f"{spec.name}: {h}x{w} input too small for kernel {kk}")
        return kk * kk * c * co + (co if bias else 0), kk * kk * c * co * ho * wo, (co, ho, wo)
    if k == "depthwise_conv2d":
        _need_map(spec, s)
        c, h, w = s
        kk = int(hp.get("kernel", 3))
        if kk % 2 == 0:
            raise GraphError(f"{spec.name}: depthwise kernel must be odd")
        return kk * kk * c + (c if bias else 0), kk * kk * c * h * w, s
    if k == "pointwise_conv2d":
        _need_map(spec, s)
        c, h, w = (sum(x[0] for x in in_shapes),) + tuple(s[1:])
        for x in in_shapes:
            if not _is_map(x) or x[1:] != s[1:]:
                raise GraphError(f"{spec.name}: pointwise inputs must be maps of equal size")
        co = int(hp["out_channels"])
        return c * co + (co if bias else 0), c * co * h * w, (co, h, w)
    if k == "linear":
        co = int(hp["out_features"])
        if len(in_shapes) == 1 and _is_map(s):
            c, h, w = s
            return c * co + (co if bias else 0), c * co * h * w, (co, h, w)
        n, c = _as_tokens(in_shapes)
        return c * co + (co if bias else 0), n * c * co, (n, co)
    if k == "layer_norm":
        if len(in_shapes) == 1 and _is_map(s):
            return 2 * s[0], math.prod(s), s
        n, c = _as_tokens(in_shapes)
        return 2 * c, n * c, (n, c)
    if k == "butterfly":
        n, c = _as_tokens(in_shapes) if not (len(in_shapes) == 1 and _is_map(s)) else _tokens(s)
        try:
            st = num_stages(c)
        except T.UnsupportedConfigError as exc:
            raise GraphError(f"{spec.name}: {exc}") from None
        out = s if len(in_shapes) == 1 else (n, c)
        return 2 * c * st + (c if hp.get("bias", False) else 0), 2 * c * st * n, out
    if k == "mhsa":
        nq, c = _as_tokens(in_shapes)
        if "memory" in hp:
            raise GraphError(f"{spec.name}: resolve memory before costing")
        heads = int(hp.get("heads", 1))
        if c % heads:
            raise GraphError(f"{spec.name}: {heads} heads do not divide {c}")
        nk = hp.get("_num_keys", nq)
        params = 4 * c * c + (4 * c if bias else 0)
        macs = 2 * nq * c * c + 2 * nk * c * c + 2 * nq * nk * c
        out = s if len(in_shapes) == 1 else (nq, c)
        return params, macs, out
    if k == "spatial_reduction_attention":
        _need_map(spec, s)
        c, h, w = s
        heads = int(hp.get("heads", 1))
        if c % heads:
            raise GraphError(f"{spec.name}: {heads} heads do not divide {c}")
        n = h * w
        hr, wr = _sra_reduced(spec, h, w)
        nr = hr * wr
        params = 4 * c * c + 4 * c
        macs = 2 * n * c * c + 2 * nr * c * c + 2 * n * nr * c
        if "pool_size" in spec.hp:
            params += c * c + c + 2 * c
            macs += nr * c * c + nr * c
        elif int(hp.get("sr_ratio", 1)) > 1:
            r = int(hp["sr_ratio"])
            params += r * r * c * c + c + 2 * c
            macs += r * r * c * c * nr + nr * c
        return params, macs, s
    if k == "pool":
        _need_map(spec, s)
        c, h, w = s
        kk, st, pad = int(hp["kernel"]), int(hp.get("stride", hp["kernel"])), int(hp.get("padding", 0))
        return 0, 0, (c, conv_out_size(h, kk, st, pad), conv_out_size(w, kk, st, pad))
    if k == "add":
        if len(in_shapes) < 2 or any(x != s for x in in_shapes):
            raise GraphError(f"{spec.name}: add needs >= 2 equal shapes, got {in_shapes}")
        return 0, 0, s
    raise GraphError(f"{spec.name}: no cost rule for {k}")


@dataclass
class LayerProfile:
    name: str
    kind: str
    group: str
    params: int
    macs: int
    output_shape: tuple


@dataclass
class ProfileReport:
    layers: list[LayerProfile]
    group_params: dict[str, int]
    group_macs: dict[str, int]

    @property
    def total_params(self) -> int:
        return sum(self.group_params.values())

    @property
    def total_macs(self) -> int:
        return sum(self.group_macs.values())

    @classmethod
    def from_layers(cls, layers: list[LayerProfile]) -> ProfileReport:
        gp = {g: 0 for g in GROUPS}
        gm = {g: 0 for g in GROUPS}
        for lp in layers:
            gp[lp.group] += lp.params
            gm[lp.group] += lp.macs
        return cls(layers, gp, gm)

    @classmethod
    def from_totals(cls, params: float, macs: float, groups: dict | None = None) -> ProfileReport:
        """Report built from published totals. ``groups`` maps group -> (params, macs);
        whatever the groups do not cover is put in ``"output"``."""
        gp = {g: 0 for g in GROUPS}
        gm = {g: 0 for g in GROUPS}
        for g, (p, m) in (groups or {}).items():
            gp[g], gm[g] = p, m
        gp["output"] += params - sum(gp.values())
        gm["output"] += macs - sum(gm.values())
        return cls([], gp, gm)

    def shares(self) -> dict[str, tuple[float, float]]:
        tp, tm = self.total_params or 1, self.total_macs or 1
        return {g: (100.0 * self.group_params[g] / tp, 100.0 * self.group_macs[g] / tm) for g in GROUPS}

    def to_csv(self) -> str:
        tp, tm = self.total_params or 1, self.total_macs or 1
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["layer", "group", "params", "macs", "params_pct", "macs_pct"])
        for lp in self.layers:
            wr.writerow([lp.name, lp.group, lp.params, lp.macs,
                         f"{100 * lp.params / tp:.4f}", f"{100 * lp.macs / tm:.4f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = ("layer", "group", "params", "MACs", "params %", "MACs %")
        tp, tm = self.total_params or 1, self.total_macs or 1
        rows = [(lp.name, lp.group, f"{lp.params:,}", f"{lp.macs:,}",
                 f"{100 * lp.params / tp:.2f}", f"{100 * lp.macs / tm:.2f}") for lp in self.layers]
        rows.append(("", "", "", "", "", ""))
        for g in GROUPS:
            if self.group_params[g] or self.group_macs[g]:
                rows.append((f"[{g}]", g, f"{self.group_params[g]:,}", f"{self.group_macs[g]:,}",
                             f"{100 * self.group_params[g] / tp:.2f}", f"{100 * self.group_macs[g] / tm:.2f}"))
        rows.append(("TOTAL", "", f"{self.total_params:,}", f"{self.total_macs:,}", "100.00", "100.00"))
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(6)]
        out = []
        for r in [head] + rows:
            out.append("  ".join(c.ljust(wd) if i < 2 else c.rjust(wd) for i, (c, wd) in enumerate(zip(r, widths))))
        return "\n".join(out) + "\n"


def _resolve(spec: LayerSpec, idx: int, graph, shapes: dict) -> list:
    names = spec.inputs
    if names is None:
        if spec.kind == "embedding":
            names = []
        else:
            names = ["input"] if idx == 0 else [graph[idx - 1].name]
    out = []
    for n in names:
        if n not in shapes:
            raise GraphError(f"{spec.name}: unknown input {n!r}")
        out.append(shapes[n])
    return out


def analytic_profile(graph: list[LayerSpec], input_shape) -> ProfileReport:
    """Closed-form params/MACs per layer for ``input_shape`` = (C, H, W)."""
    if not graph:
        raise GraphError("empty graph")
    shapes: dict[str, tuple] = {"input": tuple(int(v) for v in input_shape)}
    layers = []
    for i, spec in enumerate(graph):
        if spec.name in shapes:
            raise GraphError(f"duplicate layer name {spec.name!r}")
        ins = _resolve(spec, i, graph, shapes)
        if spec.kind == "mhsa" and "memory" in spec.hp:
            mem = spec.hp["memory"]
            mems = [shapes[m] for m in (mem if isinstance(mem, list) else [mem]) if m in shapes]
            if not mems:
                raise GraphError(f"{spec.name}: unknown memory {mem!r}")
            nk, ck = _as_tokens(mems)
            if ck != _as_tokens(ins)[1]:
                raise GraphError(f"{spec.name}: memory channels {ck} differ from query channels")
            costed = LayerSpec(spec.kind, spec.name, spec.group, spec.inputs,
                               {**{k: v for k, v in spec.hp.items() if k != "memory"}, "_num_keys": nk})
            p, m, out = layer_cost(costed, ins)
        else:
            p, m, out = layer_cost(spec, ins)
        if "shared_with" in spec.hp:
            # reuses the weights of an earlier layer: costs MACs, adds no parameters
            if spec.hp["shared_with"] not in shapes:
                raise GraphError(f"{spec.name}: shares weights with unknown layer {spec.hp['shared_with']!r}")
            p = 0
        shapes[spec.name] = out
        layers.append(LayerProfile(spec.name, spec.kind, spec.group, p, m, out))
    return ProfileReport.from_layers(layers)


def reduction_report(baseline: ProfileReport, proposed: ProfileReport) -> dict:
    """Percent reductions 100 * (1 - proposed / baseline), totals and per group."""
    if baseline.total_params <= 0 or baseline.total_macs <= 0:
        raise ValueError("baseline totals must be positive")

    def pct(b, p):
        return None if b == 0 else 100.0 * (1.0 - p / b)

    out = {"params": pct(baseline.total_params, proposed.total_params),
           "macs": pct(baseline.total_macs, proposed.total_macs), "groups": {}}
    for g in GROUPS:
        out["groups"][g] = {"params": pct(baseline.group_params[g], proposed.group_params[g]),
                            "macs": pct(baseline.group_macs[g], proposed.group_macs[g])}
    return out


def resolution_sweep(graph: list[LayerSpec], resolutions, channels: int = 3) -> list[tuple[int, int, int]]:
    """(H, W, total MACs) for each resolution."""
    return [(int(h), int(w), analytic_profile(graph, (channels, h, w)).total_macs) for h, w in resolutions]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["graph", "H", "W", "macs", "ratio"])
    for r in rows:
        wr.writerow([r[0], r[1], r[2], r[3], f"{r[4]:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------- instrumented

def instrumented_count(forward: Callable, *args, **kwargs) -> int:
    """Run ``forward`` and return the MACs its kernels executed."""
    with T.count_macs() as counter:
        forward(*args, **kwargs)
    return counter.total


def _map_to_tokens(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return T.reshape(T.permute(x, (0, 2, 3, 1)), (b, h * w, c))


def _tokens_to_map(x: Tensor, h: int, w: int) -> Tensor:
    b, n, c = x.shape
    return T.permute(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


def execute_layer(spec: LayerSpec, inputs: list[Tensor], rng: np.random.Generator,
                  memory: list[Tensor] | None = None) -> Tensor:
    """Run one layer with random weights on batched inputs ([B,C,H,W] maps or [B,N,C] tokens)."""
    hp = spec.hp
    k = spec.kind
    bias = bool(hp.get("bias", True))

    def param(*shape):
        return Tensor(rng.standard_normal(shape) * 0.1)

    def joined_tokens():
        return T.concat([_map_to_tokens(t) if t.ndim == 4 else t for t in inputs], axis=1)

    if k == "embedding":
        return T.expand(param(int(hp["num"]), int(hp["dim"])), 1)
    x = inputs[0]
    if k == "conv2d":
        co, kk = int(hp["out_channels"]), int(hp["kernel"])
        return T.conv2d(x, param(co, x.shape[1], kk, kk), param(co) if bias else None,
                        int(hp.get("stride", 1)), int(hp.get("padding", 0)))
    if k == "depthwise_conv2d":
        kk = int(hp.get("kernel", 3))
        return T.conv2d_depthwise(x, param(x.shape[1], kk, kk), param(x.shape[1]) if bias else None)
    if k == "pointwise_conv2d":
        x = T.concat(inputs, axis=1) if len(inputs) > 1 else x
        co = int(hp["out_channels"])
        return T.conv2d(x, param(co, x.shape[1], 1, 1), param(co) if bias else None)
    if k == "linear":
        co = int(hp["out_features"])
        if len(inputs) == 1 and x.ndim == 4:
            _, c, h, w = x.shape
            return _tokens_to_map(T.linear(_map_to_tokens(x), param(c, co), param(co) if bias else None), h, w)
        t = joined_tokens()
        return T.linear(t, param(t.shape[2], co), param(co) if bias else None)
    if k == "layer_norm":
        if len(inputs) == 1 and x.ndim == 4:
            _, c, h, w = x.shape
            return _tokens_to_map(T.layer_norm(_map_to_tokens(x), param(c), param(c)), h, w)
        t = joined_tokens()
        return T.layer_norm(t, param(t.shape[2]), param(t.shape[2]))
    if k == "butterfly":
        if len(inputs) == 1 and x.ndim == 4:
            return ButterflyLayer(x.shape[1], rng, bias=bool(hp.get("bias", False)))(x, axis=1)
        t = joined_tokens()
        return ButterflyLayer(t.shape[2], rng, bias=bool(hp.get("bias", False)))(t, axis=2)
    if k == "mhsa":
        t = joined_tokens()
        att = MultiHeadAttention(rng, t.shape[2], int(hp.get("heads", 1)))
        kv = t
        if memory:
            kv = T.concat([_map_to_tokens(m) if m.ndim == 4 else m for m in memory], axis=1)
        out = att(t, kv, kv)
        if len(inputs) == 1 and x.ndim == 4:
            return _tokens_to_map(out, x.shape[2], x.shape[3])
        return out
    if k == "spatial_reduction_attention":
        b, c, h, w = x.shape
        heads = int(hp.get("heads", 1))
        att = MultiHeadAttention(rng, c, heads)
        q_in = _map_to_tokens(x)
        if "pool_size" in hp:
            red = T.adaptive_avg_pool2d(x, int(hp["pool_size"]))
            red = T.conv2d(red, param(c, c, 1, 1), param(c))
            kv = LayerNorm(c)(_map_to_tokens(red))
        elif int(hp.get("sr_ratio", 1)) > 1:
            r = int(hp["sr_ratio"])
            red = T.conv2d(x, param(c, c, r, r), param(c), stride=r)
            kv = LayerNorm(c)(_map_to_tokens(red))
        else:
            kv = q_in
        return _tokens_to_map(att(q_in, kv, kv), h, w)
    if k == "pool":
        b, c, h, w = x.shape
        kk, st, pad = int(hp["kernel"]), int(hp.get("stride", hp["kernel"])), int(hp.get("padding", 0))
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
        ho, wo = conv_out_size(h, kk, st, pad), conv_out_size(w, kk, st, pad)
        win = np.lib.stride_tricks.sliding_window_view(xp, (kk, kk), axis=(2, 3))[:, :, ::st, ::st][:, :, :ho, :wo]
        return Tensor(win.max(axis=(4, 5)))
    if k == "add":
        out = inputs[0]
        for t in inputs[1:]:
            out = T.add(out, t)
        return out
    raise GraphError(f"cannot execute {k}")


def instrumented_profile(graph: list[LayerSpec], input_shape, seed: int = 0) -> list[int]:
    """Executed MACs per layer, in graph order."""
    rng = np.random.default_rng(seed)
    outs: dict[str, Tensor] = {"input": Tensor(rng.standard_normal((1,) + tuple(input_shape)))}
    counts = []
    for i, spec in enumerate(graph):
        names = spec.inputs
        if names is None:
            names = [] if spec.kind == "embedding" else (["input"] if i == 0 else [graph[i - 1].name])
        mem = None
        if spec.kind == "mhsa" and "memory" in spec.hp:
            m = spec.hp["memory"]
            mem = [outs[n] for n in (m if isinstance(m, list) else [m])]
        with T.count_macs() as c:
            outs[spec.name] = execute_layer(spec, [outs[n] for n in names], rng, mem)
        counts.append(c.total)
    return counts

"""Query decoder shared by the detection and tracking stages.

Each query carries a reference box. Its centre is sine-embedded as the
query's positional term (detached: gradients reach the reference only
through the box output), and the box head predicts a correction to the
reference in inverse-sigmoid space, so outputs stay inside [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import TokenSequence, positional_encoding, sine_embedding
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor

REF_EPS = 1e-4


def inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, REF_EPS, 1 - REF_EPS)
    return np.log(p / (1 - p))


class DecoderLayer(Module):
    def __init__(self, rng: np.random.Generator, channels: int, heads: int, expansion: int = 4) -> None:
        self.norm1 = LayerNorm(channels)
        self.self_attn = MultiHeadAttention(rng, channels, heads)
        self.norm2 = LayerNorm(channels)
        self.cross_attn = MultiHeadAttention(rng, channels, heads)
        self.norm3 = LayerNorm(channels)
        self.ffn = FeedForward(rng, channels, expansion)

    def __call__(self, tgt: Tensor, query_pos: np.ndarray, memory: Tensor, memory_key: Tensor,
                 query_mask: np.ndarray | None = None) -> Tensor:
        h = self.norm1(tgt)
        qk = T.add_const(h, query_pos)
        tgt = T.add(tgt, self.self_attn(qk, qk, h, key_mask=query_mask))
        h = self.norm2(tgt)
        tgt = T.add(tgt, self.cross_attn(T.add_const(h, query_pos), memory_key, memory))
        return T.add(tgt, self.ffn(self.norm3(tgt)))


@dataclass
class DecoderOutput:
    class_logits: Tensor  # [B, Q, 2]
    boxes: Tensor  # [B, Q, 4] cxcywh in [0, 1]
    hidden: Tensor  # [B, Q, C]

    def scores(self) -> np.ndarray:
        z = self.class_logits.data
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=-1, keepdims=True))[..., 0]


class Decoder(Module):
    """``num_layers`` of self-attention, cross-attention into memory and a 4x FFN."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int, num_layers: int,
                 expansion: int = 4) -> None:
        self.layers = [DecoderLayer(rng, channels, heads, expansion) for _ in range(num_layers)]
        self.norm = LayerNorm(channels)
        self.class_head = Linear(rng, channels, 2)
        self.box_hidden = Linear(rng, channels, channels)
        self.box_out = Linear(rng, channels, 4)
        self.box_out.weight.data *= 0.1

    def __call__(self, queries: Tensor, ref_logits, memory, query_mask: np.ndarray | None = None,
                 memory_pos: np.ndarray | None = None) -> DecoderOutput:
        return decoder_forward(self, queries, ref_logits, memory, query_mask, memory_pos)


def decoder_forward(dec: Decoder, queries: Tensor, ref_logits, memory,
                    query_mask: np.ndarray | None = None, memory_pos: np.ndarray | None = None) -> DecoderOutput:
    """Decode ``queries`` [B, Q, C] against ``memory``.

    ``ref_logits`` [B, Q, 4] are reference boxes in inverse-sigmoid space
    (a Tensor when learned, an array when fixed). ``memory`` is a
    TokenSequence, or a bare [B, N, C] tensor with optional ``memory_pos``.
    """
    if isinstance(memory, TokenSequence):
        mem = memory.data
        if memory_pos is None:
            memory_pos = positional_encoding(memory.layout)
    else:
        mem = memory
    b, nq, c = queries.shape
    if nq < 1 or mem.ndim != 3 or mem.shape[0] != b or mem.shape[2] != c:
        raise T.DimensionError(f"queries {queries.shape} vs memory {mem.shape}")
    ref = ref_logits if isinstance(ref_logits, Tensor) else Tensor(np.asarray(ref_logits, dtype=np.float64))
    if ref.shape != (b, nq, 4):
        raise T.DimensionError(f"reference boxes {ref.shape}, expected {(b, nq, 4)}")
    centres = 1.0 / (1.0 + np.exp(-ref.data[..., :2]))
    query_pos = sine_embedding(centres, c)
    mem_key = mem if memory_pos is None else T.add_const(mem, np.broadcast_to(memory_pos, mem.shape))
    tgt = queries
    for layer in dec.layers:
        tgt = layer(tgt, query_pos, mem, mem_key, query_mask)
    hidden = dec.norm(tgt)
    logits = dec.class_head(hidden)
    delta = dec.box_out(T.relu(dec.box_hidden(hidden)))
    boxes = T.sigmoid(T.add(delta, ref))
    return DecoderOutput(logits, boxes, hidden)

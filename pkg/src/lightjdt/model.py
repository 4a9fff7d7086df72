"""The joint detection-and-tracking model and its checkpoint format.

Checkpoint layout (a NumPy ``.npz`` archive, version 1):

    __format__   int64 scalar, checkpoint format version
    __config__   uint8 bytes of the UTF-8 JSON model config
    __seed__     int64 scalar, seed used to initialise/train
    param/<name> float64 array per parameter, name from ``named_parameters``
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .backbone import Aggregator, FeaturePyramid, ToyBackbone
from .decoder import Decoder, DecoderOutput, inverse_sigmoid
from .encoder import Encoder, TokenSequence, maps_to_tokens
from .nn import Module
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    num_queries: int = 20
    decoder_expansion: int = 4
    share_decoders: bool = True
    aggregation: str = "concat"  # or "sum"

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class JDTModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        if config.aggregation not in ("concat", "sum"):
            raise ValueError(f"unknown aggregation {config.aggregation!r}")
        self._config = config
        rng = np.random.default_rng(seed)
        c = config.channels
        self.backbone = ToyBackbone(rng, c)
        self.aggregator = Aggregator(rng, c) if config.aggregation == "concat" else None
        self.encoder = Encoder(rng, c, config.heads, config.encoder_layers)
        self.detect_decoder = Decoder(rng, c, config.heads, config.decoder_layers, config.decoder_expansion)
        self.track_decoder = None if config.share_decoders else Decoder(
            rng, c, config.heads, config.decoder_layers, config.decoder_expansion)
        self.query_embed = Tensor(rng.normal(0.0, 1.0, (config.num_queries, c)), requires_grad=True)
        centres = rng.uniform(0.1, 0.9, (config.num_queries, 2))
        sizes = np.full((config.num_queries, 2), 0.2)
        self.query_ref = Tensor(inverse_sigmoid(np.concatenate([centres, sizes], axis=1)), requires_grad=True)

    @property
    def config(self) -> ModelConfig:
        return self._config

    def features(self, images: Tensor, frame_index: int = 0) -> FeaturePyramid:
        return self.backbone(images, frame_index)

    def fuse(self, current: FeaturePyramid, previous: FeaturePyramid) -> FeaturePyramid:
        if self.aggregator is not None:
            return self.aggregator(current, previous)
        return FeaturePyramid([T.scale(T.add(a, b), 0.5) for a, b in zip(current.maps, previous.maps)],
                              current.frame_index)

    def encode(self, current: FeaturePyramid, previous: FeaturePyramid) -> TokenSequence:
        fused = self.fuse(current, previous)
        return self.encoder(maps_to_tokens(fused.maps, fused.layout))

    def detect(self, memory: TokenSequence) -> DecoderOutput:
        b = memory.data.shape[0]
        return self.detect_decoder(T.expand(self.query_embed, b), T.expand(self.query_ref, b), memory)

    def track(self, memory: TokenSequence, track_features: Tensor, track_boxes: np.ndarray,
              mask: np.ndarray | None = None) -> DecoderOutput:
        dec = self.detect_decoder if self.track_decoder is None else self.track_decoder
        return dec(track_features, inverse_sigmoid(np.asarray(track_boxes)), memory, query_mask=mask)


def save_checkpoint(path, model: JDTModel, seed: int = 0) -> None:
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["__format__"] = np.array(CHECKPOINT_VERSION, dtype=np.int64)
    arrays["__config__"] = np.frombuffer(json.dumps(asdict(model.config), sort_keys=True).encode(), dtype=np.uint8)
    arrays["__seed__"] = np.array(seed, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[JDTModel, int]:
    with np.load(path) as z:
        version = int(z["__format__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format {version}")
        config = ModelConfig.from_dict(json.loads(bytes(z["__config__"]).decode()))
        seed = int(z["__seed__"])
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    model = JDTModel(config, seed)
    model.load_state_dict(state)
    return model, seed

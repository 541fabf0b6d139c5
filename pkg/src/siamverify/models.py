"""Model construction: baseline CNN classifier and the Siamese network.

Both architectures share a VGG16-style convolutional stack: blocks of 3x3
same-padded convolutions (each followed by batch normalization, ReLU and
dropout) with 2x2 max pooling between blocks.  The classifier ends in a
dense feature layer and a single sigmoid unit emitting P(correct); the
Siamese variant runs two inputs through the *same* tower (shared
parameter storage) and maps the L1 distance of the feature vectors to a
similarity score.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError
from .layers import (
    BatchNorm, Conv2d, Dense, Dropout, Flatten, L1Head, Layer, LayerSpec, MaxPool, Relu, Sigmoid,
)
from .tensor import Tape, Tensor

SUPPORTED_RESOLUTIONS = (64, 128, 256)

VGG16_BLOCK_FILTERS = (64, 128, 256, 512, 512)
VGG16_CONVS_PER_BLOCK = (2, 2, 3, 3, 3)

FREEZE_LAST_BLOCK_ONLY = "all-but-last-block"
FREEZE_NONE = "none"


@dataclass
class ModelConfig:
    """Architecture knobs shared by both builders.

    The defaults reproduce the full VGG16-style stack; desk-scale runs
    shrink ``block_filters``/``convs_per_block`` for CPU tractability.
    """

    block_filters: tuple = VGG16_BLOCK_FILTERS
    convs_per_block: tuple = VGG16_CONVS_PER_BLOCK
    kernel_size: int = 3
    conv_dropout: float = 0.3
    feature_units: int = 128
    feature_dropout: float = 0.0
    head_mode: str = "scalar-l1"
    seed: int = 0

    def __post_init__(self):
        self.block_filters = tuple(self.block_filters)
        self.convs_per_block = tuple(self.convs_per_block)
        if len(self.block_filters) != len(self.convs_per_block):
            raise ConfigError("block_filters and convs_per_block must have equal length")
        if not self.block_filters:
            raise ConfigError("at least one convolutional block is required")

    @classmethod
    def vgg16_classifier(cls, seed: int = 0) -> "ModelConfig":
        return cls(seed=seed)

    @classmethod
    def vgg16_transfer_classifier(cls, seed: int = 0) -> "ModelConfig":
        # imported backbone with a fresh 128-unit head under 50% dropout
        return cls(feature_units=128, feature_dropout=0.5, seed=seed)

    @classmethod
    def vgg16_siamese(cls, seed: int = 0) -> "ModelConfig":
        return cls(feature_units=128, feature_dropout=0.3, seed=seed)

    @classmethod
    def vgg16_transfer_siamese(cls, seed: int = 0) -> "ModelConfig":
        # per-tower 1024-unit feature layer with 30% dropout
        return cls(feature_units=1024, feature_dropout=0.3, seed=seed)


@dataclass
class FeatureVector:
    """A tower output: D finite values plus the id of the source image."""

    values: np.ndarray
    source_id: str = ""


def _check_input_shape(input_shape) -> tuple:
    if len(input_shape) != 3 or input_shape[2] != 3:
        raise ConfigError(f"input shape must be (H, W, 3), got {tuple(input_shape)}")
    h, w, _ = input_shape
    if h != w or h not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(
            f"input resolution must be square and one of {SUPPORTED_RESOLUTIONS}, got {h}x{w}")
    return tuple(input_shape)


def _as_batch(batch) -> Tensor:
    if isinstance(batch, Tensor):
        return batch
    return Tensor(np.asarray(batch, dtype=np.float32))


class ModelGraph:
    """Ordered layer stack with static shapes and a shared parameter store.

    For ``kind == "siamese"`` the layer list is the twin tower; both
    inputs flow through the very same layer objects, so tower parameters
    are one storage and stay bit-identical under any training step.
    """

    def __init__(self, kind: str, input_shape: tuple, layers: Sequence[Layer],
                 head: Optional[L1Head], config: ModelConfig):
        self.kind = kind
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.head = head
        self.config = config
        self.layer_shapes = self._infer_shapes()

    # -- construction-time shape audit ---------------------------------

    def _infer_shapes(self) -> list[tuple]:
        shape = self.input_shape
        shapes = []
        for layer in self.layers:
            shape = layer.out_shape(shape)
            shapes.append(shape)
        if self.head is not None:
            self.head.out_shape(shape)
        return shapes

    # -- parameter access -----------------------------------------------

    def all_layers(self) -> list[Layer]:
        extra = [self.head] if self.head is not None else []
        return self.layers + extra

    def named_parameters(self) -> list[tuple[str, str, Tensor]]:
        out = []
        for layer in self.all_layers():
            for pname, tensor in layer.params().items():
                out.append((layer.layer_id, pname, tensor))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, _, t in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        out = []
        for layer in self.all_layers():
            if layer.trainable:
                out.extend(layer.params().values())
        return out

    def parameter_count(self) -> int:
        return sum(layer.param_count() for layer in self.all_layers())

    def layer_specs(self) -> list[LayerSpec]:
        return [layer.spec() for layer in self.all_layers()]

    def conv_block_ids(self) -> list[list[str]]:
        """Layer ids grouped by convolutional block, in block order."""
        blocks: dict[int, list[str]] = {}
        for layer in self.layers:
            if layer.layer_id.startswith("block"):
                b = int(layer.layer_id.split("_")[0][len("block"):])
                blocks.setdefault(b, []).append(layer.layer_id)
        return [blocks[b] for b in sorted(blocks)]

    # -- forward passes ---------------------------------------------------

    def _run_tower(self, x: Tensor, mode: str, rng) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def forward(self, batch, mode: str = "infer", rng=None) -> Tensor:
        """Classifier scores, shape (N, 1), strictly inside (0, 1)."""
        if self.kind != "classifier":
            raise ConfigError("forward() is for classifier graphs; use forward_pair()")
        return self._run_tower(_as_batch(batch), mode, rng)

    def features(self, batch, mode: str = "infer", rng=None) -> Tensor:
        """Siamese tower output: one feature vector per sample."""
        if self.kind != "siamese":
            raise ConfigError("features() is only defined for siamese graphs")
        return self._run_tower(_as_batch(batch), mode, rng)

    def forward_pair(self, batch_a, batch_b, mode: str = "infer", rng=None) -> Tensor:
        """Similarity scores for paired batches, shape (N, 1)."""
        if self.kind != "siamese":
            raise ConfigError("forward_pair() is only defined for siamese graphs")
        p = self._run_tower(_as_batch(batch_a), mode, rng)
        q = self._run_tower(_as_batch(batch_b), mode, rng)
        return self.head.forward_pair(p, q)

    def head_scores(self, feat_a: np.ndarray, feat_b: np.ndarray) -> np.ndarray:
        """Similarity from precomputed feature vectors (infer-mode math)."""
        sim = self.head.forward_pair(Tensor(feat_a), Tensor(feat_b))
        return sim.data.reshape(-1)

    # -- inference conveniences -------------------------------------------

    def scores(self, batch) -> np.ndarray:
        """Deterministic infer-mode classifier scores as a flat array."""
        return self.forward(batch, mode="infer").data.reshape(-1)

    def pair_scores(self, batch_a, batch_b) -> np.ndarray:
        """Deterministic infer-mode similarity scores as a flat array."""
        fa = self.features(batch_a, mode="infer").data
        fb = self.features(batch_b, mode="infer").data
        return self.head_scores(fa, fb)

    def calibrate(self, batch) -> None:
        """Populate batchnorm running statistics without any optimizer step.

        Runs one forward pass in ``calibrate`` mode (batch statistics for
        normalization, dropout inactive).  Useful before inference on a
        freshly built or freshly imported model.
        """
        x = _as_batch(batch)
        for layer in self.layers:
            x = layer.forward(x, "calibrate", None)

    # -- serialization support ---------------------------------------------

    def builder_meta(self) -> dict:
        cfg = asdict(self.config)
        cfg["block_filters"] = list(self.config.block_filters)
        cfg["convs_per_block"] = list(self.config.convs_per_block)
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "config": cfg,
            "trainable": {layer.layer_id: layer.trainable for layer in self.all_layers()},
        }


def _conv_stack(input_shape: tuple, config: ModelConfig, rng: np.random.Generator) -> list[Layer]:
    layers: list[Layer] = []
    channels = input_shape[2]
    for b, (filters, n_convs) in enumerate(zip(config.block_filters, config.convs_per_block), start=1):
        for i in range(1, n_convs + 1):
            layers.append(Conv2d(f"block{b}_conv{i}", channels, filters, rng,
                                 kernel_size=config.kernel_size))
            layers.append(BatchNorm(f"block{b}_bn{i}", filters))
            layers.append(Relu(f"block{b}_relu{i}"))
            if config.conv_dropout > 0:
                layers.append(Dropout(f"block{b}_drop{i}", config.conv_dropout))
            channels = filters
        layers.append(MaxPool(f"block{b}_pool"))
    return layers


def _flat_features(input_shape: tuple, layers: list[Layer]) -> int:
    shape = input_shape
    for layer in layers:
        shape = layer.out_shape(shape)
    n = 1
    for d in shape:
        n *= d
    return n


def build_baseline_cnn(input_shape, config: Optional[ModelConfig] = None) -> ModelGraph:
    """Binary classifier: conv stack -> dense feature layer -> sigmoid unit."""
    config = config or ModelConfig.vgg16_classifier()
    input_shape = _check_input_shape(input_shape)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 101)))
    layers = _conv_stack(input_shape, config, rng)
    flat = _flat_features(input_shape, layers)
    layers.append(Flatten("flatten"))
    layers.append(Dense("feature_dense", flat, config.feature_units, rng))
    layers.append(Relu("feature_relu"))
    if config.feature_dropout > 0:
        layers.append(Dropout("feature_drop", config.feature_dropout))
    layers.append(Dense("output_dense", config.feature_units, 1, rng))
    layers.append(Sigmoid("output_sigmoid"))
    return ModelGraph("classifier", input_shape, layers, head=None, config=config)


def build_snn(input_shape, config: Optional[ModelConfig] = None) -> ModelGraph:
    """Siamese verifier: shared twin tower -> L1 distance head -> sigmoid."""
    config = config or ModelConfig.vgg16_siamese()
    input_shape = _check_input_shape(input_shape)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 202)))
    layers = _conv_stack(input_shape, config, rng)
    flat = _flat_features(input_shape, layers)
    layers.append(Flatten("flatten"))
    layers.append(Dense("feature_dense", flat, config.feature_units, rng))
    layers.append(Relu("feature_relu"))
    if config.feature_dropout > 0:
        layers.append(Dropout("feature_drop", config.feature_dropout))
    head = L1Head("head", config.feature_units, config.head_mode, rng)
    return ModelGraph("siamese", input_shape, layers, head=head, config=config)


def build_from_meta(meta: dict) -> ModelGraph:
    """Rebuild a graph from :meth:`ModelGraph.builder_meta` output."""
    cfg_fields = dict(meta["config"])
    config = ModelConfig(**cfg_fields)
    builder = build_baseline_cnn if meta["kind"] == "classifier" else build_snn
    graph = builder(tuple(meta["input_shape"]), config)
    flags = meta.get("trainable", {})
    for layer in graph.all_layers():
        if layer.layer_id in flags:
            layer.trainable = bool(flags[layer.layer_id])
    return graph

"""Weight files: saving, loading, backbone import with layer freezing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import ContainerEntry, read_container, write_container
from .errors import ConfigError, WeightFormatError, WeightLoadError
from .layers import BatchNorm, Conv2d
from .models import FREEZE_LAST_BLOCK_ONLY, FREEZE_NONE, ModelGraph, build_from_meta

WEIGHTS_KIND = "weights"


@dataclass
class WeightFile:
    """Verified weight container: parameter arrays keyed by entry id."""

    arrays: dict[str, np.ndarray]
    kinds: dict[str, str]
    meta: dict

    def require(self, entry_id: str, shape: tuple, owner: str) -> np.ndarray:
        if entry_id not in self.arrays:
            raise WeightLoadError(f"weight file is missing layer entry {entry_id!r} for layer {owner!r}")
        arr = self.arrays[entry_id]
        if arr.shape != tuple(shape):
            raise WeightLoadError(
                f"layer {owner!r}: stored shape {arr.shape} != expected {tuple(shape)} for {entry_id!r}")
        return arr


def _graph_entries(graph: ModelGraph) -> list[ContainerEntry]:
    entries = []
    for layer in graph.all_layers():
        for pname, tensor in layer.params().items():
            entries.append(ContainerEntry(f"{layer.layer_id}.{pname}", layer.kind, tensor.data))
        for sname, arr in layer.state_arrays().items():
            entries.append(ContainerEntry(f"{layer.layer_id}.{sname}", f"{layer.kind}-state", arr))
    return entries


def save_weights(graph: ModelGraph, path) -> None:
    """Write every parameter and running statistic; round trip is bit-exact."""
    meta = graph.builder_meta()
    meta["bn_populated"] = {
        layer.layer_id: layer.stats.populated
        for layer in graph.all_layers() if isinstance(layer, BatchNorm)
    }
    write_container(path, WEIGHTS_KIND, _graph_entries(graph), meta)


def load_weights(path) -> WeightFile:
    """Read and verify a weight container (checksums, shapes, version)."""
    kind, entries, meta = read_container(path)
    if kind != WEIGHTS_KIND:
        raise WeightFormatError(f"{path}: container kind {kind!r} is not a weight file")
    return WeightFile(
        arrays={e.entry_id: e.array for e in entries},
        kinds={e.entry_id: e.kind for e in entries},
        meta=meta,
    )


def load_into_graph(graph: ModelGraph, wf: WeightFile) -> ModelGraph:
    """Load every parameter (and batchnorm stats when present) by layer id."""
    populated = wf.meta.get("bn_populated", {})
    for layer in graph.all_layers():
        for pname, tensor in layer.params().items():
            arr = wf.require(f"{layer.layer_id}.{pname}", tensor.shape, layer.layer_id)
            tensor.data = arr.astype(np.float32).copy()
        if isinstance(layer, BatchNorm):
            mean_id = f"{layer.layer_id}.running_mean"
            var_id = f"{layer.layer_id}.running_var"
            if mean_id in wf.arrays and var_id in wf.arrays:
                layer.stats.mean = wf.require(mean_id, (layer.channels,), layer.layer_id).copy()
                layer.stats.var = wf.require(var_id, (layer.channels,), layer.layer_id).copy()
                layer.stats.populated = bool(populated.get(layer.layer_id, True))
    return graph


def load_model(path) -> ModelGraph:
    """Rebuild the graph recorded in a weight file and load its parameters."""
    wf = load_weights(path)
    if not wf.meta.get("kind"):
        raise WeightFormatError(f"{path}: weight file carries no model description")
    graph = build_from_meta(wf.meta)
    return load_into_graph(graph, wf)


def export_backbone(graph: ModelGraph, path) -> None:
    """Write a portable backbone file: convolution parameters only.

    Batchnorm statistics and head parameters are deliberately omitted so
    the file matches what an externally pretrained backbone provides.
    """
    entries = []
    for layer in graph.layers:
        if isinstance(layer, Conv2d):
            entries.append(ContainerEntry(f"{layer.layer_id}.kernel", layer.kind, layer.kernel.data))
            entries.append(ContainerEntry(f"{layer.layer_id}.bias", layer.kind, layer.bias.data))
    write_container(path, WEIGHTS_KIND, entries, {"backbone_only": True})


def apply_transfer(graph: ModelGraph, weights: WeightFile,
                   freeze_policy: str = FREEZE_LAST_BLOCK_ONLY) -> ModelGraph:
    """Load backbone convolution weights and set the freeze policy.

    Every convolution layer must be present in the file at its exact
    shape.  Batchnorm parameters/statistics absent from the file are left
    at their fresh initialization.  Under the default policy all
    convolutional blocks except the last are frozen; dense feature and
    head layers stay randomly initialized and trainable.
    """
    for layer in graph.layers:
        if isinstance(layer, Conv2d):
            layer.kernel.data = weights.require(
                f"{layer.layer_id}.kernel", layer.kernel.shape, layer.layer_id).copy()
            layer.bias.data = weights.require(
                f"{layer.layer_id}.bias", layer.bias.shape, layer.layer_id).copy()
        elif isinstance(layer, BatchNorm):
            gid = f"{layer.layer_id}.gamma"
            bid = f"{layer.layer_id}.beta"
            if gid in weights.arrays and bid in weights.arrays:
                layer.gamma.data = weights.require(gid, layer.gamma.shape, layer.layer_id).copy()
                layer.beta.data = weights.require(bid, layer.beta.shape, layer.layer_id).copy()

    if freeze_policy == FREEZE_NONE:
        for layer in graph.all_layers():
            layer.trainable = True
    elif freeze_policy == FREEZE_LAST_BLOCK_ONLY:
        blocks = graph.conv_block_ids()
        frozen_ids = {lid for block in blocks[:-1] for lid in block}
        for layer in graph.all_layers():
            layer.trainable = layer.layer_id not in frozen_ids
    else:
        raise ConfigError(f"unknown freeze policy {freeze_policy!r}")
    return graph

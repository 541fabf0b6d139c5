"""Network layers: parameter ownership, shape inference, forward dispatch.

Layers wrap the primitives in :mod:`siamverify.ops` and hold their
parameters as :class:`~siamverify.tensor.Tensor` objects.  A layer marked
``trainable=False`` still runs forward/backward but is excluded from
optimizer updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class LayerSpec:
    """Declarative description of one layer, used for manifests and rebuilds."""

    kind: str
    layer_id: str
    trainable: bool = True
    hyper: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "layer_id": self.layer_id,
                "trainable": self.trainable, "hyper": dict(self.hyper)}


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Layer:
    kind = "base"

    def __init__(self, layer_id: str):
        self.layer_id = layer_id
        self.trainable = True

    def params(self) -> dict[str, Tensor]:
        """Learnable parameters, keyed by short name."""
        return {}

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Non-learnable persistent state (running statistics)."""
        return {}

    def param_count(self) -> int:
        return sum(t.size for t in self.params().values())

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: Tensor, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
        raise NotImplementedError

    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind, self.layer_id, self.trainable, self._hyper())

    def _hyper(self) -> dict:
        return {}


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, layer_id: str, in_channels: int, filters: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 1, padding: str = "same"):
        super().__init__(layer_id)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        k = kernel_size
        fan_in = k * k * in_channels
        fan_out = k * k * filters
        self.kernel = Tensor(glorot_uniform(rng, (k, k, in_channels, filters), fan_in, fan_out),
                             requires_grad=True, name=f"{layer_id}.kernel")
        self.bias = Tensor(np.zeros(filters, dtype=np.float32),
                           requires_grad=True, name=f"{layer_id}.bias")

    def params(self):
        return {"kernel": self.kernel, "bias": self.bias}

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise DimensionError(
                f"{self.layer_id}: expects {self.in_channels} input channels, got {c}")
        k, s = self.kernel_size, self.stride
        if self.padding == "same":
            oh, ow = -(-h // s), -(-w // s)
        else:
            if k > h or k > w:
                raise DimensionError(f"{self.layer_id}: kernel {k} exceeds input {h}x{w}")
            oh, ow = (h - k) // s + 1, (w - k) // s + 1
        return (oh, ow, self.filters)

    def forward(self, x, mode, rng):
        return ops.conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)

    def _hyper(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size,
                "stride": self.stride, "padding": self.padding, "in_channels": self.in_channels}


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, layer_id: str, channels: int):
        super().__init__(layer_id)
        self.channels = channels
        self.gamma = Tensor(np.ones(channels, dtype=np.float32),
                            requires_grad=True, name=f"{layer_id}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=np.float32),
                           requires_grad=True, name=f"{layer_id}.beta")
        self.stats = ops.BatchNormStats(channels)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def state_arrays(self):
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def out_shape(self, in_shape):
        if in_shape[-1] != self.channels:
            raise DimensionError(f"{self.layer_id}: expects {self.channels} channels, got {in_shape[-1]}")
        return in_shape

    def forward(self, x, mode, rng):
        return ops.batchnorm(x, self.gamma, self.beta, self.stats, mode)

    def _hyper(self):
        return {"channels": self.channels}


class Relu(Layer):
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, mode, rng):
        return ops.relu(x)


class MaxPool(Layer):
    kind = "maxpool"

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise DimensionError(f"{self.layer_id}: input {h}x{w} smaller than 2x2 window")
        return (h // 2, w // 2, c)

    def forward(self, x, mode, rng):
        return ops.maxpool2d(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, layer_id: str, rate: float):
        super().__init__(layer_id)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"{layer_id}: dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, mode, rng):
        return ops.dropout(x, self.rate, mode, rng)

    def _hyper(self):
        return {"rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)

    def forward(self, x, mode, rng):
        return ops.flatten(x)


class Dense(Layer):
    kind = "dense"

    def __init__(self, layer_id: str, in_features: int, units: int, rng: np.random.Generator):
        super().__init__(layer_id)
        self.in_features = in_features
        self.units = units
        self.weight = Tensor(glorot_uniform(rng, (in_features, units), in_features, units),
                             requires_grad=True, name=f"{layer_id}.weight")
        self.bias = Tensor(np.zeros(units, dtype=np.float32),
                           requires_grad=True, name=f"{layer_id}.bias")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise DimensionError(
                f"{self.layer_id}: expects flat input of {self.in_features} features, got {in_shape}")
        return (self.units,)

    def forward(self, x, mode, rng):
        return ops.dense(x, self.weight, self.bias)

    def _hyper(self):
        return {"units": self.units, "in_features": self.in_features}


class Sigmoid(Layer):
    kind = "sigmoid"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, mode, rng):
        return ops.sigmoid(x)


class L1Head(Layer):
    """Distance head: maps twin feature vectors to a similarity in (0, 1).

    ``scalar-l1`` applies a learned affine to the summed L1 distance
    (weight initialized to -1 so similarity decreases with distance);
    ``weighted-l1`` learns a sign-unconstrained weight per feature
    dimension over the elementwise distances.  Both are symmetric in the
    two feature vectors.
    """

    kind = "l1-head"

    def __init__(self, layer_id: str, feature_dim: int, mode: str, rng: np.random.Generator):
        super().__init__(layer_id)
        if mode not in ("scalar-l1", "weighted-l1"):
            raise ConfigError(f"{layer_id}: unknown head mode {mode!r}")
        self.mode = mode
        self.feature_dim = feature_dim
        if mode == "scalar-l1":
            self.weight = Tensor(np.full((1, 1), -1.0, dtype=np.float32),
                                 requires_grad=True, name=f"{layer_id}.weight")
        else:
            self.weight = Tensor(glorot_uniform(rng, (feature_dim, 1), feature_dim, 1),
                                 requires_grad=True, name=f"{layer_id}.weight")
        self.bias = Tensor(np.zeros(1, dtype=np.float32),
                           requires_grad=True, name=f"{layer_id}.bias")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.feature_dim:
            raise DimensionError(
                f"{self.layer_id}: expects feature vectors of {self.feature_dim}, got {in_shape}")
        return (1,)

    def forward_pair(self, p: Tensor, q: Tensor) -> Tensor:
        elem, total = ops.l1_distance(p, q)
        z = ops.dense(total if self.mode == "scalar-l1" else elem, self.weight, self.bias)
        return ops.sigmoid(z)

    def forward(self, x, mode, rng):
        raise ConfigError(f"{self.layer_id}: l1-head requires a pair of inputs")

    def _hyper(self):
        return {"mode": self.mode, "feature_dim": self.feature_dim}

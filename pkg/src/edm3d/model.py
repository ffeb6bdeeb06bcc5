from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import ModelStateError, ShapeError
from .layers import ConvLayer, FcLayer
from .tensor import DEFAULT_DTYPE, Rng

TASKS = ("binary", "multi")
CLASS_NAMES = {
    "binary": ("normal", "fault"),
    "multi": ("layer_shift", "strings", "under_extrusion", "warping"),
}
CHANNEL_SCHEDULE = (8, 16, 32, 64, 128, 128, 128, 128, 128, 128)
MAX_DEPTH = len(CHANNEL_SCHEDULE)
DEFAULT_INPUT_SIZE = 256
DEFAULT_DEPTH = 5


def pool_count(depth: int, input_size: int) -> int:
    """Number of leading conv layers followed by a 2x2 pool."""
    return max(0, min(depth, int(math.floor(math.log2(input_size / 8))))) if input_size >= 8 else 0


@dataclass(frozen=True)
class ModelConfig:
    task: str
    input_size: int
    depth: int
    channels: tuple
    pool_after: tuple
    class_names: tuple

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must be in 1..{MAX_DEPTH}, got {self.depth}")
        if len(self.channels) != self.depth or len(self.pool_after) != self.depth:
            raise ValueError("channels and pool_after must have one entry per conv layer")
        if len(self.class_names) != len(CLASS_NAMES[self.task]):
            raise ValueError(f"{self.task} task needs {len(CLASS_NAMES[self.task])} class names")
        if any(c < 1 for c in self.channels):
            raise ValueError("channel counts must be positive")
        side = self.input_size
        for pooled in self.pool_after:
            if pooled:
                if side % 2:
                    raise ValueError(f"input size {self.input_size} cannot be pooled to an odd side")
                side //= 2
        if side < 4:
            raise ValueError(f"input size {self.input_size} pools below 4x4")

    @classmethod
    def for_depth(cls, task: str, depth: int, input_size: int = DEFAULT_INPUT_SIZE) -> "ModelConfig":
        p = pool_count(depth, input_size)
        return cls(
            task=task,
            input_size=input_size,
            depth=depth,
            channels=tuple(CHANNEL_SCHEDULE[:depth]) if 1 <= depth <= MAX_DEPTH else (),
            pool_after=tuple(i < p for i in range(depth)),
            class_names=CLASS_NAMES.get(task, ()),
        )

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def final_side(self) -> int:
        return self.input_size >> sum(self.pool_after)

    @property
    def head_inputs(self) -> int:
        return self.channels[-1] * self.final_side ** 2

    @property
    def param_count(self) -> int:
        total, c_in = 0, 3
        for c_out in self.channels:
            total += c_out * c_in * 9 + c_out
            c_in = c_out
        return total + self.n_classes * (self.head_inputs + 1)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "input_size": self.input_size,
            "depth": self.depth,
            "channels": list(self.channels),
            "pool_after": list(self.pool_after),
            "class_names": list(self.class_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            task=d["task"],
            input_size=int(d["input_size"]),
            depth=int(d["depth"]),
            channels=tuple(int(c) for c in d["channels"]),
            pool_after=tuple(bool(p) for p in d["pool_after"]),
            class_names=tuple(d["class_names"]),
        )


def param_names(depth: int) -> list[str]:
    names = []
    for i in range(1, depth + 1):
        names += [f"conv{i}.weight", f"conv{i}.bias"]
    return names + ["head.weight", "head.bias"]


@dataclass
class Model:
    config: ModelConfig
    convs: list
    head: FcLayer
    _cache: list | None = field(default=None, repr=False)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def parameters(self) -> dict:
        """Name -> array, in serialization order. Arrays are the live weights."""
        params = {}
        for i, conv in enumerate(self.convs, 1):
            params[f"conv{i}.weight"] = conv.weight
            params[f"conv{i}.bias"] = conv.bias
        params["head.weight"] = self.head.weight
        params["head.bias"] = self.head.bias
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def astype(self, dtype) -> "Model":
        convs = [ConvLayer(c.weight.astype(dtype), c.bias.astype(dtype)) for c in self.convs]
        return Model(self.config, convs, FcLayer(self.head.weight.astype(dtype), self.head.bias.astype(dtype)))

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        cfg = self.config
        s = cfg.input_size
        if batch.ndim != 4 or batch.shape[1:] != (3, s, s):
            raise ShapeError(f"model expects (N, 3, {s}, {s}) input, got {batch.shape}")
        x = batch.astype(self.dtype, copy=False)
        cache = []
        for conv, pooled in zip(self.convs, cfg.pool_after):
            pre = layers.conv2d_forward(x, conv)
            act = layers.relu(pre)
            argmax = None
            if pooled:
                out, argmax = layers.maxpool2x2_forward(act)
            else:
                out = act
            cache.append((x, pre, argmax))
            x = out
        flat = x.reshape(x.shape[0], -1)
        logits = layers.fc_forward(flat, self.head)
        self._cache = (cache, flat, x.shape) if train else None
        return logits

    def backward(self, grad_logits: np.ndarray) -> dict:
        if self._cache is None:
            raise ModelStateError("backward called without a preceding training-mode forward")
        cache, flat, pooled_shape = self._cache
        grads = {}
        g_flat, grads["head.weight"], grads["head.bias"] = layers.fc_backward(flat, self.head, grad_logits)
        g = g_flat.reshape(pooled_shape)
        for i in range(len(self.convs), 0, -1):
            x, pre, argmax = cache[i - 1]
            if argmax is not None:
                g = layers.maxpool2x2_backward(g, argmax, pre.shape)
            g = layers.relu_backward(pre, g)
            g, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = layers.conv2d_backward(x, self.convs[i - 1], g)
        return {name: grads[name] for name in param_names(len(self.convs))}

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        return layers.softmax(self.forward(batch))


def init_model(config: ModelConfig, rng: Rng, dtype=DEFAULT_DTYPE) -> Model:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights drawn in parameter order; zero biases."""
    convs = []
    c_in = 3
    for c_out in config.channels:
        fan_in = c_in * layers.KERNEL * layers.KERNEL
        w = _uniform_weights(rng, (c_out, c_in, layers.KERNEL, layers.KERNEL), fan_in, dtype)
        convs.append(ConvLayer(w, np.zeros(c_out, dtype=dtype)))
        c_in = c_out
    n_in = config.head_inputs
    head = FcLayer(_uniform_weights(rng, (config.n_classes, n_in), n_in, dtype), np.zeros(config.n_classes, dtype=dtype))
    return Model(config, convs, head)


def _uniform_weights(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    u = rng.uniforms(int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).astype(dtype).reshape(shape)

"""Binary model file: "3DEM" magic, u32 LE version/lengths, JSON config header,
then named float32 LE tensors in parameter order."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError, UnsupportedError
from .layers import ConvLayer, FcLayer
from .model import Model, ModelConfig, param_names

MAGIC = b"3DEM"
VERSION = 1
_U32 = struct.Struct("<I")


def _header_bytes(config: ModelConfig) -> bytes:
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def dumps(model: Model) -> bytes:
    out = bytearray(MAGIC)
    header = _header_bytes(model.config)
    out += _U32.pack(VERSION) + _U32.pack(len(header)) + header
    params = model.parameters()
    out += _U32.pack(len(params))
    for name, arr in params.items():
        encoded = name.encode("utf-8")
        out += _U32.pack(len(encoded)) + encoded + _U32.pack(arr.ndim)
        for d in arr.shape:
            out += _U32.pack(d)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def save_model(model: Model, sink) -> int:
    """Write ``model`` to a path or binary file object; returns bytes written."""
    data = dumps(model)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n > len(self.data) - self.pos:
            raise CorruptionError(f"truncated model file while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def loads(data: bytes) -> Model:
    if data[:4] != MAGIC:
        raise FormatError(f"bad model magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedError(f"model file version {version} unsupported (expected {VERSION})")
    header = r.take(r.u32("header length"), "header")
    try:
        config = ModelConfig.from_dict(json.loads(header.decode("utf-8")))
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptionError(f"invalid model header: {e}") from e
    expected = param_names(config.depth)
    shapes = _expected_shapes(config)
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8", errors="replace")
        if i >= len(expected) or name != expected[i]:
            want = expected[i] if i < len(expected) else "<none>"
            raise CorruptionError(f"tensor {i} is {name!r}, expected {want!r}")
        dims = tuple(r.u32(f"{name} dims") for _ in range(r.u32(f"{name} ndim")))
        if dims != shapes[name]:
            raise CorruptionError(f"tensor {name} has shape {dims}, config implies {shapes[name]}")
        n_bytes = 4 * int(np.prod(dims))
        # length is checked by take() before any buffer is allocated
        payload = r.take(n_bytes, f"tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if count < len(expected):
        raise CorruptionError(f"missing tensor {expected[count]} ({count} of {len(expected)} present)")
    if r.pos != len(data):
        raise CorruptionError(f"{len(data) - r.pos} trailing bytes after last tensor")
    convs = [ConvLayer(tensors[f"conv{i}.weight"], tensors[f"conv{i}.bias"]) for i in range(1, config.depth + 1)]
    return Model(config, convs, FcLayer(tensors["head.weight"], tensors["head.bias"]))


def load_model(source) -> Model:
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    return loads(data)


def _expected_shapes(config: ModelConfig) -> dict:
    shapes = {}
    c_in = 3
    for i, c_out in enumerate(config.channels, 1):
        shapes[f"conv{i}.weight"] = (c_out, c_in, 3, 3)
        shapes[f"conv{i}.bias"] = (c_out,)
        c_in = c_out
    shapes["head.weight"] = (config.n_classes, config.head_inputs)
    shapes["head.bias"] = (config.n_classes,)
    return shapes

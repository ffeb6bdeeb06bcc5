"""Numeric substrate: numpy arrays as tensors plus a splitmix64 generator.

Tensors are plain C-contiguous ``numpy.ndarray`` objects. Training runs in
float32; gradient checks pass float64 arrays through the same code.
"""
from __future__ import annotations

from typing import MutableSequence, Sequence, TypeVar

import numpy as np

from .errors import ShapeError

T = TypeVar("T")

DEFAULT_DTYPE = np.float32

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z):
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class Rng:
    """splitmix64 stream. Never shared between workers."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) / 9007199254740992.0

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` consecutive draws as float64, identical to calling ``uniform`` n times."""
        if n <= 0:
            return np.zeros(0, dtype=np.float64)
        # splitmix64 is counter based: state_i = state + i * golden (mod 2**64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK
        return (z >> np.uint64(11)).astype(np.float64) / 9007199254740992.0

    def randint(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        return int(self.uniform() * n)

    def shuffle(self, items: Sequence[T]) -> list[T]:
        """Fisher-Yates from the last index down; returns a new list."""
        out = list(items)
        shuffle_in_place(self, out)
        return out


def shuffle_in_place(rng: Rng, items: MutableSequence) -> None:
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.uniform() * (i + 1))
        items[i], items[j] = items[j], items[i]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def check_shape(x: np.ndarray, shape: tuple, what: str) -> None:
    """Raise ``ShapeError`` unless ``x.shape`` matches; ``None`` entries are wildcards."""
    if x.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, x.shape)):
        raise ShapeError(f"{what}: expected shape {shape}, got {x.shape}")


def all_finite(x: np.ndarray) -> bool:
    return bool(np.isfinite(x).all())

"""Image preprocessing: shorter-side bilinear resize, center crop, flips."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .tensor import DEFAULT_DTYPE, Rng


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray  # uint8, (height, width, 3), interleaved RGB

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError(f"image pixels must be uint8 (H, W, 3), got {p.dtype} {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "Image":
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class AugmentPolicy:
    target_size: int = 256
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5

    def __post_init__(self):
        if self.target_size < 8:
            raise ValueError(f"target_size must be >= 8, got {self.target_size}")
        for p in (self.hflip_prob, self.vflip_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"flip probability {p} outside [0, 1]")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _source_coords(n_dst: int, n_src: int):
    scale = n_src / n_dst
    s = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
    s = np.clip(s, 0.0, n_src - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, s - i0


def resize_shorter_side(img: Image, target: int) -> Image:
    """Bilinear resize so the shorter side equals ``target``, keeping aspect ratio."""
    if target < 1:
        raise ValueError(f"resize target must be >= 1, got {target}")
    w, h = img.width, img.height
    if w <= h:
        new_w, new_h = target, max(1, _round_half_up(h * target / w))
    else:
        new_w, new_h = max(1, _round_half_up(w * target / h)), target
    if (new_w, new_h) == (w, h):
        return Image(img.pixels.copy())
    x0, x1, fx = _source_coords(new_w, w)
    y0, y1, fy = _source_coords(new_h, h)
    src = img.pixels.astype(np.float64)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = (1.0 - fx) * src[y0][:, x0] + fx * src[y0][:, x1]
    bottom = (1.0 - fx) * src[y1][:, x0] + fx * src[y1][:, x1]
    v = (1.0 - fy) * top + fy * bottom
    return Image(np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8))


def center_crop(img: Image, size: int) -> Image:
    w, h = img.width, img.height
    if w < size or h < size:
        raise DataError(f"cannot crop {size}x{size} from a {w}x{h} image")
    left, top = (w - size) // 2, (h - size) // 2
    return Image(img.pixels[top:top + size, left:left + size].copy())


def flip_h(img: Image) -> Image:
    return Image(img.pixels[:, ::-1].copy())


def flip_v(img: Image) -> Image:
    return Image(img.pixels[::-1].copy())


def to_input_tensor(img: Image, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """(3, S, S) planar tensor with samples scaled to [0, 1]."""
    if img.width != img.height:
        raise ShapeError(f"model input must be square, got {img.width}x{img.height}")
    return (img.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0).astype(dtype)


def prepare(img: Image, size: int) -> Image:
    """Deterministic part of both pipelines: resize then center crop."""
    return center_crop(resize_shorter_side(img, size), size)


def random_flips(img: Image, policy: AugmentPolicy, rng: Rng) -> Image:
    # both draws are always taken so the stream position is independent of outcomes
    do_h = rng.uniform() < policy.hflip_prob
    do_v = rng.uniform() < policy.vflip_prob
    if do_h:
        img = flip_h(img)
    if do_v:
        img = flip_v(img)
    return img


def apply_train_augment(img: Image, policy: AugmentPolicy, rng: Rng, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return to_input_tensor(random_flips(prepare(img, policy.target_size), policy, rng), dtype)


def apply_eval(img: Image, size: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return to_input_tensor(prepare(img, size), dtype)

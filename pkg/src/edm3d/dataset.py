"""Class-per-directory image datasets, PPM decoding, splits and batches."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .augment import Image
from .errors import DataError, FormatError, UnsupportedError
from .model import CLASS_NAMES, TASKS
from .tensor import Rng

log = logging.getLogger(__name__)

FAULT_DIRS = CLASS_NAMES["multi"]
NORMAL_DIR = "normal"
IMAGE_EXTENSIONS = {".ppm", ".png", ".jpg", ".jpeg"}
_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True)
class LabelMap:
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def classes(self) -> tuple:
        return CLASS_NAMES[self.task]

    def dir_to_class(self) -> dict:
        if self.task == "binary":
            return {NORMAL_DIR: 0, **{d: 1 for d in FAULT_DIRS}}
        return {d: i for i, d in enumerate(FAULT_DIRS)}


@dataclass(frozen=True)
class LabeledSample:
    path: str
    class_id: int
    origin_dir: str


@dataclass
class Split:
    train: list
    test: list
    seed: int
    ratio: float


def decode_ppm(data: bytes) -> Image:
    """Parse a binary P6 file with maxval 255."""
    if data[:2] != b"P6":
        raise FormatError(f"not a P6 file (magic {data[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated PPM header")
        ch = data[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise FormatError("truncated PPM header comment")
            pos = eol + 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise FormatError(f"unexpected byte {ch!r} in PPM header at offset {pos}")
    width, height, maxval = fields
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise FormatError("PPM header not terminated by whitespace")
    pos += 1
    if maxval != 255:
        raise UnsupportedError(f"PPM maxval {maxval} unsupported (only 255)")
    if width < 1 or height < 1:
        raise FormatError(f"PPM dimensions must be positive, got {width}x{height}")
    need = width * height * 3
    if len(data) - pos < need:
        raise FormatError(f"truncated PPM payload: need {need} bytes, have {len(data) - pos}")
    return Image.from_bytes(width, height, data[pos:pos + need])


def encode_ppm(img: Image) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.tobytes()


def decode_image(path) -> Image:
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in IMAGE_EXTENSIONS:
        raise DataError(f"{path}: unsupported image extension {ext!r}")
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read file ({e.strerror or e})") from e
    if ext == ".ppm":
        try:
            return decode_ppm(data)
        except FormatError as e:
            raise type(e)(f"{path}: {e}") from e
    return _decode_with_pillow(path, data)


def _decode_with_pillow(path, data):
    import io

    import numpy as np
    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(data)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:  # Pillow raises a wide range of types
        raise DataError(f"{path}: cannot decode image ({e})") from e
    return Image(np.ascontiguousarray(rgb))


def scan_dataset(root, task: str) -> list[LabeledSample]:
    root = Path(root)
    label_map = LabelMap(task)
    mapping = label_map.dir_to_class()
    samples = []
    skipped = 0
    found = {}
    for dirname in sorted(mapping):
        d = root / dirname
        if not d.is_dir():
            continue
        count = 0
        for dirpath, dirnames, filenames in os.walk(d):
            dirnames.sort()
            for name in filenames:
                p = Path(dirpath) / name
                if p.suffix.lower() in IMAGE_EXTENSIONS:
                    samples.append(LabeledSample(str(p), mapping[dirname], dirname))
                    count += 1
                else:
                    skipped += 1
        found[dirname] = count
    if skipped:
        log.warning("skipped %d non-image files under %s", skipped, root)
    missing = _missing_classes(label_map, found)
    if missing:
        raise DataError(f"{root}: no images for {task} class(es): {', '.join(missing)}")
    samples.sort(key=lambda s: s.path)
    return samples


def _missing_classes(label_map, found):
    mapping = label_map.dir_to_class()
    missing = []
    for cid, name in enumerate(label_map.classes):
        dirs = [d for d, c in mapping.items() if c == cid]
        if not any(found.get(d, 0) for d in dirs):
            missing.append(name if len(dirs) == 1 else f"{name} ({'/'.join(dirs)})")
    return missing


def class_counts(samples, n_classes: int) -> list[int]:
    counts = [0] * n_classes
    for s in samples:
        counts[s.class_id] += 1
    return counts


def stratified_split(samples, ratio: float = 0.8, seed: int = 42) -> Split:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    by_class = {}
    for s in samples:
        by_class.setdefault(s.class_id, []).append(s)
    train, test = [], []
    for cid in sorted(by_class):
        members = by_class[cid]
        n = len(members)
        if n < 2:
            raise DataError(f"class {cid} has {n} sample(s); a split needs at least 2")
        shuffled = Rng(seed ^ cid).shuffle(members)
        k = min(max(int(ratio * n), 1), n - 1)
        train += shuffled[:k]
        test += shuffled[k:]
    return Split(train=train, test=test, seed=seed, ratio=ratio)


def make_batches(samples, batch_size: int, seed: int = 0, shuffle: bool = True) -> list[list]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    items = Rng(seed).shuffle(samples) if shuffle else list(samples)
    return [items[i:i + batch_size] for i in range(0, len(items), batch_size)]

"""Seeded synthetic datasets in the class-per-directory layout.

Four texture classes stand in for the fault directories: horizontal
stripes, vertical stripes, checkerboard and solid colour. Every image gets
a fraction of its pixels replaced by uniform random colours.

    python -m edm3d.synthetic OUT_DIR [--per-class 40] [--size 64] [--seed 0]
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .augment import Image
from .dataset import FAULT_DIRS, NORMAL_DIR, encode_ppm
from .tensor import Rng

TEXTURES = ("hstripes", "vstripes", "checker", "solid")


def _two_colours(rng):
    dark = rng.uniforms(3) * 100.0
    light = 155.0 + rng.uniforms(3) * 100.0
    if rng.uniform() < 0.5:
        dark, light = light, dark
    return dark, light


def texture_image(kind: str, size: int, rng: Rng, noise: float = 0.05) -> Image:
    a, b = _two_colours(rng)
    band = 2 + rng.randint(7)  # stripe/cell width 2..8 px
    py, px = rng.randint(2 * band), rng.randint(2 * band)
    ys, xs = np.mgrid[0:size, 0:size]
    if kind == "hstripes":
        mask = ((ys + py) // band) % 2 == 1
    elif kind == "vstripes":
        mask = ((xs + px) // band) % 2 == 1
    elif kind == "checker":
        mask = (((ys + py) // band) + ((xs + px) // band)) % 2 == 1
    elif kind == "solid":
        mask = np.zeros((size, size), dtype=bool)
        a = rng.uniforms(3) * 255.0
    else:
        raise ValueError(f"unknown texture {kind!r}")
    pix = np.where(mask[..., None], b, a)
    hit = rng.uniforms(size * size).reshape(size, size) < noise
    random_colours = (rng.uniforms(size * size * 3).reshape(size, size, 3) * 256.0).clip(0, 255)
    pix = np.where(hit[..., None], random_colours, pix)
    return Image(np.floor(pix).astype(np.uint8))


def write_texture_dataset(root, per_class: int = 40, size: int = 64, seed: int = 0, noise: float = 0.05) -> Path:
    """Write ``per_class`` PPMs for each texture into the four fault directories."""
    root = Path(root)
    rng = Rng(seed)
    for dirname, kind in zip(FAULT_DIRS, TEXTURES):
        d = root / dirname
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            (d / f"{kind}_{i:04d}.ppm").write_bytes(encode_ppm(texture_image(kind, size, rng, noise)))
    return root


def write_count_tree(root, counts: dict, size: int = 2) -> Path:
    """Tiny constant images, ``counts[dirname]`` per directory (for counting tests)."""
    root = Path(root)
    blob = encode_ppm(Image(np.full((size, size, 3), 127, dtype=np.uint8)))
    for dirname, n in counts.items():
        d = root / dirname
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            (d / f"img_{i:04d}.ppm").write_bytes(blob)
    return root


PAPER_COUNTS = {NORMAL_DIR: 500, **{d: 200 for d in FAULT_DIRS}}


def main(argv=None):
    ap = argparse.ArgumentParser(prog="python -m edm3d.synthetic", description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--per-class", type=int, default=40)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.05)
    args = ap.parse_args(argv)
    write_texture_dataset(args.out, args.per_class, args.size, args.seed, args.noise)


if __name__ == "__main__":
    main()

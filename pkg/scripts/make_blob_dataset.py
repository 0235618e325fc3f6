#!/usr/bin/env python3
"""Generate a synthetic bright-blob-on-dark-background dataset.

Each image is a Gaussian bump with random center, width and brightness on
a dim background, written as grayscale PNG. The distribution is simple
enough for a desk-scale adversarial run to reach equilibrium in a few
minutes, which makes it the standard smoke dataset for this repo.
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image


def blob_array(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0.3, 0.7) * size
    cx = rng.uniform(0.3, 0.7) * size
    sigma = rng.uniform(0.10, 0.22) * size
    amp = rng.uniform(0.65, 1.0)
    base = rng.uniform(0.03, 0.10)
    img = base + amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def write_dataset(out_dir: Path, count: int, size: int, seed: int) -> list[Path]:
    rng = np.random.default_rng(seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = out_dir / f"blob_{i:04d}.png"
        Image.fromarray(blob_array(rng, size), mode="L").save(p)
        paths.append(p)
    return paths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--count", type=int, default=512)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    paths = write_dataset(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")


if __name__ == "__main__":
    main()

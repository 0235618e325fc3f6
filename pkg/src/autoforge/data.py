"""Image ingestion and augmentation.

Pipeline order per image: decode -> bilinear resize to ``resize_size`` ->
random resized crop to ``target_size`` -> random horizontal flip ->
normalize to [-1, 1]. Grayscale sources are replicated to three channels
so every batch is (B, 3, S, S).

All randomness flows from the single ``numpy.random.Generator`` passed
in, so a fixed seed reproduces the batch stream bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError, IngestionError
from .tensor import Tensor

log = logging.getLogger(__name__)

VALID_LABELS = ("positive", "negative")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    label: str | None = None


@dataclass
class PixelBuffer:
    """8-bit image samples, (H, W, C) row-major with C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.uint8 or self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise DataError(f"PixelBuffer expects uint8 (H,W,C) with C in {{1,3}}, got "
                            f"{self.data.dtype} {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class AugmentConfig:
    target_size: int = 224
    resize_size: int | None = None  # None: 8/7 of target (224 -> 256)
    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    flip_probability: float = 0.5
    seed: int = 0

    def validate(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop_scale_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
        if self.target_size < 1:
            raise ConfigError("target_size must be >= 1")
        if not (0.0 <= self.flip_probability <= 1.0):
            raise ConfigError("flip_probability must be in [0, 1]")

    @property
    def effective_resize(self) -> int:
        return self.resize_size if self.resize_size is not None else (self.target_size * 8) // 7


def load_image(record: ImageRecord) -> PixelBuffer:
    """Decode to an 8-bit buffer; grayscale is replicated to 3 channels."""
    try:
        with Image.open(record.path) as im:
            im = im.convert("L") if im.mode in ("1", "L", "I", "I;16", "F") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as e:
        raise IngestionError(record.path, "file not found") from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise IngestionError(record.path, f"cannot decode: {e}") from e
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return PixelBuffer(np.ascontiguousarray(arr))


def scan_directory(root: Path) -> list[ImageRecord]:
    """All images under `root`, sorted by relative path for determinism."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_EXTENSIONS)
    return [ImageRecord(p) for p in paths]


def read_manifest(root: Path, manifest: Path) -> list[ImageRecord]:
    """Label manifest: one `relative_path,label` line per image."""
    records = []
    for lineno, raw in enumerate(Path(manifest).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rel, sep, label = line.rpartition(",")
        if not sep or label not in VALID_LABELS:
            raise DataError(f"{manifest}:{lineno}: expected 'relative_path,label' with label in "
                            f"{VALID_LABELS}, got {raw!r}")
        records.append(ImageRecord(Path(root) / rel, label))
    return records


def resize(buf: PixelBuffer, size: int) -> PixelBuffer:
    """Bilinear resize to size x size (half-pixel sample centers)."""
    if size < 1:
        raise ConfigError("resize target must be >= 1")
    h, w = buf.height, buf.width
    if h == size and w == size:
        return PixelBuffer(buf.data.copy())
    src = buf.data.astype(np.float32)

    def axis_weights(n_src, n_dst):
        pos = np.clip((np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5, 0.0, n_src - 1.0)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, (pos - i0).astype(np.float32)

    y0, y1, wy = axis_weights(h, size)
    x0, x1, wx = axis_weights(w, size)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return PixelBuffer(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def hflip(buf: PixelBuffer) -> PixelBuffer:
    return PixelBuffer(np.ascontiguousarray(buf.data[:, ::-1, :]))


def random_horizontal_flip(buf: PixelBuffer, p: float, rng: np.random.Generator) -> PixelBuffer:
    if not (0.0 <= p <= 1.0):
        raise ConfigError("flip probability must be in [0, 1]")
    # always consume one draw so the stream stays aligned across p values
    return hflip(buf) if rng.random() < p else buf


def random_resized_crop(buf: PixelBuffer, cfg: AugmentConfig, rng: np.random.Generator) -> PixelBuffer:
    """Crop a square covering a uniform area fraction, then resize to target."""
    cfg.validate()
    h, w = buf.height, buf.width
    lo, hi = cfg.crop_scale_range
    frac = rng.uniform(lo, hi)
    side = int(round(math.sqrt(frac * h * w)))
    side = max(1, min(side, h, w))
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    crop = PixelBuffer(np.ascontiguousarray(buf.data[y0 : y0 + side, x0 : x0 + side, :]))
    return resize(crop, cfg.target_size)


def normalize(buf: PixelBuffer) -> Tensor:
    """[0, 255] -> [-1, 1], channel-planar (C, H, W) float32."""
    arr = buf.data.astype(np.float32) / 127.5 - 1.0
    return Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def denormalize(t) -> PixelBuffer:
    """Inverse of normalize: (C, H, W) in [-1, 1] -> 8-bit (H, W, C)."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = (arr + 1.0) * 127.5
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return PixelBuffer(np.ascontiguousarray(arr.transpose(1, 2, 0)))


def augment(buf: PixelBuffer, cfg: AugmentConfig, rng: np.random.Generator) -> Tensor:
    """Full per-image pipeline: resize, random crop, random flip, normalize."""
    buf = resize(buf, cfg.effective_resize)
    buf = random_resized_crop(buf, cfg, rng)
    buf = random_horizontal_flip(buf, cfg.flip_probability, rng)
    return normalize(buf)


def batches(records, cfg: AugmentConfig, batch_size: int, rng: np.random.Generator):
    """One epoch of shuffled (B, 3, S, S) tensors; the last batch may be short.

    Records that fail to decode are logged and skipped.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if not records:
        raise ConfigError("empty record list")
    order = rng.permutation(len(records))
    pending = []
    for idx in order:
        record = records[int(idx)]
        try:
            buf = load_image(record)
        except IngestionError as e:
            log.warning("skipping %s (%s)", e.path, e.reason)
            continue
        pending.append(augment(buf, cfg, rng).data)
        if len(pending) == batch_size:
            yield Tensor(np.stack(pending))
            pending = []
    if pending:
        yield Tensor(np.stack(pending))

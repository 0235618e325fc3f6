"""Acceptance-rate evaluation against a pluggable external classifier.

The protocol mirrors how the original experiment was scored: generate
``num_sets`` directories of ``set_size`` synthetic images, have an
external classifier score every image, and report the fraction accepted
per set (score >= threshold) plus the mean across sets.

The classifier is any executable invoked as ``CMD ... {dir}`` that prints
one ``filename,score`` line per image to stdout with score in [0, 1] and
exits 0. A deliberately trivial mock ships in scripts/mock_classifier.py
for tests and protocol demos.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, load_checkpoint
from .data import denormalize
from .errors import AdapterError, ConfigError
from .tensor import Tensor, no_grad
from .training import restore_generator, sample_noise

GENERATE_CHUNK = 32  # images per forward pass when sampling sets


@dataclass(frozen=True)
class EvalConfig:
    num_sets: int = 10
    set_size: int = 100
    seed: int = 0
    output_dir: Path = Path("eval_out")

    def validate(self):
        if self.num_sets < 1 or self.set_size < 1:
            raise ConfigError("num_sets and set_size must be >= 1")


@dataclass(frozen=True)
class ClassifierAdapter:
    command: str  # template; "{dir}" is replaced by the image directory
    timeout: float = 300.0
    positive_threshold: float = 0.5


@dataclass(frozen=True)
class SetResult:
    set_index: int
    accepted: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.accepted / self.total


@dataclass
class EvalReport:
    per_set: list[SetResult]
    config: EvalConfig
    threshold: float = 0.5

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.per_set]))

    def to_csv(self) -> str:
        lines = ["set_index,accepted,total,accuracy"]
        for r in self.per_set:
            lines.append(f"{r.set_index},{r.accepted},{r.total},{r.accuracy!r}")
        lines.append(f"mean,,,{self.mean_accuracy!r}")
        return "\n".join(lines) + "\n"


def set_dir_name(i: int) -> str:
    return f"set_{i:02d}"


def image_name(i: int) -> str:
    return f"img_{i:03d}.png"


def generate_sets(ckpt: Checkpoint | str | Path, cfg: EvalConfig) -> list[Path]:
    """Sample num_sets x set_size images from the checkpointed generator.

    The generator runs in eval mode (running batchnorm statistics), so the
    images depend only on (checkpoint, seed).
    """
    cfg.validate()
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    scale, g_net = restore_generator(ckpt)
    rng = np.random.default_rng(cfg.seed)
    out_root = Path(cfg.output_dir)
    set_dirs = []
    for s in range(cfg.num_sets):
        set_dir = out_root / set_dir_name(s)
        try:
            set_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"cannot create output directory {set_dir}: {e}") from e
        z = sample_noise(cfg.set_size, scale.latent_dim, rng)
        for start in range(0, cfg.set_size, GENERATE_CHUNK):
            chunk = Tensor(z.data[start : start + GENERATE_CHUNK])
            with no_grad():
                imgs = g_net.forward(chunk)
            for j in range(imgs.shape[0]):
                buf = denormalize(imgs.data[j])
                arr = buf.data.squeeze(axis=2) if buf.channels == 1 else buf.data
                Image.fromarray(arr).save(set_dir / image_name(start + j))
        set_dirs.append(set_dir)
    return set_dirs


def classify_images(directory: Path, adapter: ClassifierAdapter) -> list[tuple[str, float]]:
    """Run the adapter command on a directory and parse its scores.

    Every image in the directory must be scored exactly once; any protocol
    violation raises AdapterError naming the offending line or file.
    """
    directory = Path(directory)
    argv = shlex.split(adapter.command)
    if any("{dir}" in a for a in argv):
        argv = [a.replace("{dir}", str(directory)) for a in argv]
    else:
        argv.append(str(directory))
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=adapter.timeout)
    except subprocess.TimeoutExpired as e:
        raise AdapterError(f"classifier timed out after {adapter.timeout}s: {argv}") from e
    except OSError as e:
        raise AdapterError(f"cannot run classifier {argv}: {e}") from e
    if proc.returncode != 0:
        raise AdapterError(f"classifier exited {proc.returncode}: {proc.stderr.strip()[:500]}")

    expected = {p.name for p in directory.iterdir() if p.suffix.lower() == ".png"}
    scores: list[tuple[str, float]] = []
    seen = set()
    for raw in proc.stdout.splitlines():
        line = raw.strip()
        if not line:
            continue
        name, sep, score_text = line.rpartition(",")
        if not sep:
            raise AdapterError(f"malformed classifier line (expected 'filename,score'): {raw!r}")
        try:
            score = float(score_text)
        except ValueError:
            raise AdapterError(f"malformed score in classifier line: {raw!r}") from None
        if not (0.0 <= score <= 1.0):
            raise AdapterError(f"score out of [0,1] in classifier line: {raw!r}")
        if name not in expected:
            raise AdapterError(f"classifier scored unknown file {name!r}")
        if name in seen:
            raise AdapterError(f"classifier scored {name!r} more than once")
        seen.add(name)
        scores.append((name, score))
    missing = expected - seen
    if missing:
        raise AdapterError(f"classifier did not score {sorted(missing)[0]!r} "
                           f"({len(missing)} file(s) missing)")
    return scores


def acceptance_report(scores_per_set: list[list[tuple[str, float]]], cfg: EvalConfig,
                      threshold: float = 0.5) -> EvalReport:
    """Count accepted images (score >= threshold) per set."""
    per_set = []
    for i, scores in enumerate(scores_per_set):
        accepted = sum(1 for _, s in scores if s >= threshold)
        per_set.append(SetResult(i, accepted, len(scores)))
    return EvalReport(per_set=per_set, config=cfg, threshold=threshold)


def evaluate_directory(images_root: Path, adapter: ClassifierAdapter, cfg: EvalConfig | None = None) -> EvalReport:
    """Score every set_* subdirectory (or the root itself) and build the report."""
    images_root = Path(images_root)
    set_dirs = sorted(d for d in images_root.iterdir() if d.is_dir() and d.name.startswith("set_"))
    if not set_dirs:
        set_dirs = [images_root]
    scores = [classify_images(d, adapter) for d in set_dirs]
    if cfg is None:
        cfg = EvalConfig(num_sets=len(set_dirs), set_size=max(len(s) for s in scores),
                         output_dir=images_root)
    return acceptance_report(scores, cfg, adapter.positive_threshold)

"""Flat key=value run configuration.

One key per line, `#` starts a comment, command-line overrides win over
file values. Unknown keys are rejected so typos cannot silently fall back
to defaults, and every command that writes outputs echoes the fully
resolved configuration to run_config.txt for auditability.
"""

from __future__ import annotations

from pathlib import Path

from .data import AugmentConfig
from .errors import ConfigError
from .evaluate import EvalConfig
from .models import ModelScale
from .training import TrainConfig

_INT = int
_FLOAT = float
_STR = str


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); defaults mirror the dataclass defaults
KEYS = {
    # model scale
    "image_size": (_INT, 224),
    "seed_size": (_INT, 7),
    "stages": (_INT, 5),
    "base_width": (_INT, 192),
    "channels": (_INT, 3),
    "latent_dim": (_INT, 100),
    # training
    "batch_size": (_INT, 16),
    "learning_rate": (_FLOAT, 0.0002),
    "beta1": (_FLOAT, 0.5),
    "beta2": (_FLOAT, 0.999),
    "adam_eps": (_FLOAT, 1e-8),
    "epochs": (_INT, 3000),
    "seed": (_INT, 0),
    "checkpoint_every": (_INT, 100),
    "sample_every": (_INT, 100),
    "generator_loss": (_STR, "non_saturating"),
    # augmentation
    "target_size": (_INT, None),  # None: follow image_size
    "resize_size": (_INT, None),  # None: 8/7 of target
    "crop_scale_lo": (_FLOAT, 0.8),
    "crop_scale_hi": (_FLOAT, 1.0),
    "flip_probability": (_FLOAT, 0.5),
    # evaluation
    "num_sets": (_INT, 10),
    "set_size": (_INT, 100),
    "positive_threshold": (_FLOAT, 0.5),
    "classifier_timeout": (_FLOAT, 300.0),
}


class RunConfig:
    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def resolve(cls, config_path: str | Path | None = None, overrides: list[str] | None = None) -> "RunConfig":
        values = {k: default for k, (_, default) in KEYS.items()}
        if config_path is not None:
            values.update(cls._parse_file(Path(config_path)))
        for item in overrides or []:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            values[cls._check_key(key.strip(), source="--set")] = cls._parse_value(key.strip(), raw.strip())
        return cls(values)

    @staticmethod
    def _check_key(key: str, source: str) -> str:
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key {key!r} (from {source})")
        return key

    @staticmethod
    def _parse_value(key: str, raw: str):
        parser, _ = KEYS[key]
        try:
            return parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e

    @classmethod
    def _parse_file(cls, path: Path) -> dict:
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        out = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key = cls._check_key(key.strip(), source=f"{path}:{lineno}")
            out[key] = cls._parse_value(key, value.strip())
        return out

    # -- views -------------------------------------------------------------

    def model_scale(self) -> ModelScale:
        v = self.values
        scale = ModelScale(
            image_size=v["image_size"], seed_size=v["seed_size"], stages=v["stages"],
            base_width=v["base_width"], channels=v["channels"], latent_dim=v["latent_dim"],
        )
        scale.validate()
        return scale

    def train_config(self) -> TrainConfig:
        v = self.values
        cfg = TrainConfig(
            batch_size=v["batch_size"], learning_rate=v["learning_rate"], beta1=v["beta1"],
            beta2=v["beta2"], adam_eps=v["adam_eps"], epochs=v["epochs"],
            latent_dim=v["latent_dim"], seed=v["seed"], checkpoint_every=v["checkpoint_every"],
            sample_every=v["sample_every"], generator_loss=v["generator_loss"],
        )
        cfg.validate()
        return cfg

    def augment_config(self) -> AugmentConfig:
        v = self.values
        target = v["target_size"] if v["target_size"] is not None else v["image_size"]
        cfg = AugmentConfig(
            target_size=target, resize_size=v["resize_size"],
            crop_scale_range=(v["crop_scale_lo"], v["crop_scale_hi"]),
            flip_probability=v["flip_probability"], seed=v["seed"],
        )
        cfg.validate()
        return cfg

    def eval_config(self, output_dir) -> EvalConfig:
        v = self.values
        cfg = EvalConfig(num_sets=v["num_sets"], set_size=v["set_size"], seed=v["seed"],
                         output_dir=Path(output_dir))
        cfg.validate()
        return cfg

    def render(self) -> str:
        """Resolved configuration, one sorted key=value line per key."""
        lines = [f"{k}={self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def write_echo(self, out_dir: Path):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.txt").write_text(self.render())

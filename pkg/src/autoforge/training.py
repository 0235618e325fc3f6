"""Adversarial training loop.

Each batch takes one discriminator step (BCE against real=1, fake=0, with
the generator frozen) followed by one generator step on fresh noise. The
generator objective defaults to the non-saturating form, BCE of D(G(z))
against 1; the original minimax form (minimize log(1 - D(G(z)))) is
available behind ``TrainConfig.generator_loss`` but starves the generator
of gradient early on.

Everything random draws from one seeded generator, so (seed, config,
dataset) fully determine the metrics log and the final checkpoint, and a
run resumed from a checkpoint retraces the uninterrupted trajectory
exactly.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import Checkpoint, save_checkpoint
from .data import AugmentConfig, batches, denormalize
from .errors import CheckpointFormatError, ConfigError, ContractError, DataError, NumericalError, ShapeError
from .layers import BatchNorm2d
from .models import ModelScale, Network, build_discriminator, build_generator
from .tensor import Tensor, no_grad, zero_grads

log = logging.getLogger(__name__)

LOG_EPS = 1e-12  # each log argument is floored here so log stays finite

METRICS_HEADER = "epoch,step,d_loss,g_loss,d_real_mean,d_fake_mean"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 3000
    latent_dim: int = 100
    seed: int = 0
    checkpoint_every: int = 100
    sample_every: int = 100
    generator_loss: str = "non_saturating"

    def validate(self):
        if self.batch_size < 1 or self.latent_dim < 1:
            raise ConfigError("batch_size and latent_dim must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate and adam_eps must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.checkpoint_every < 0 or self.sample_every < 0:
            raise ConfigError("schedule intervals must be >= 0 (0 disables)")
        if self.generator_loss not in ("non_saturating", "minimax"):
            raise ConfigError(f"unknown generator_loss {self.generator_loss!r}")


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step; returns (new_param, new_m, new_v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Per-parameter moment state with a shared step counter."""

    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = 0

    def step(self):
        self.t += 1
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name} at optimizer step {self.t}")
            p.data, self.m[name], self.v[name] = adam_update(
                p.data, g, self.m[name], self.v[name], self.t, self.lr, self.beta1, self.beta2, self.eps
            )


def sample_noise(batch: int, latent_dim: int, rng: np.random.Generator) -> Tensor:
    """(batch, latent_dim) of i.i.d. standard normal draws."""
    if batch < 1 or latent_dim < 1:
        raise ContractError("batch and latent_dim must be >= 1")
    return Tensor(rng.standard_normal((batch, latent_dim), dtype=np.float32))


def bce_loss(predictions: Tensor, targets: Tensor) -> Tensor:
    """-mean[y log p + (1-y) log(1-p)], log arguments floored at 1e-12.

    The floor keeps a saturated sigmoid from emitting log(0); a perfect
    prediction therefore scores exactly 0.
    """
    if predictions.shape != targets.shape:
        raise ShapeError(f"bce_loss shapes disagree: {predictions.shape} vs {targets.shape}")
    td = targets.data
    if not np.all((td == 0.0) | (td == 1.0)):
        raise ContractError("bce_loss targets must be 0 or 1")
    log_p = predictions.clamp(LOG_EPS, 1.0).log()
    log_q = (1.0 - predictions).clamp(LOG_EPS, 1.0).log()
    return (targets * log_p + (1.0 - targets) * log_q).mean().neg()


def _all_params(*nets: Network):
    out = []
    for net in nets:
        out.extend(t for _, t in net.parameters())
    return out


def _abort_snapshot(tag, step, terms, nets):
    norms = {
        name: float(np.sqrt(np.sum(p.data.astype(np.float64) ** 2)))
        for net in nets
        for name, p in net.parameters()
    }
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:4]
    return (f"{tag}: non-finite loss at step {step}; terms={terms}; "
            f"largest parameter norms: {worst}")


def discriminator_step(d_net, g_net, real: Tensor, config: TrainConfig, adam_d: Adam,
                       rng: np.random.Generator):
    """One Adam step on D against the current (frozen) G.

    Returns (d_loss, mean D(real), mean D(fake)).
    """
    b = real.shape[0]
    z = sample_noise(b, config.latent_dim, rng)
    with no_grad():
        fake = g_net.forward(z)
    d_real = d_net.forward(real)
    d_fake = d_net.forward(fake)
    loss_real = bce_loss(d_real, Tensor.ones((b, 1)))
    loss_fake = bce_loss(d_fake, Tensor.zeros((b, 1)))
    loss = loss_real + loss_fake
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(_abort_snapshot(
            "discriminator_step", adam_d.t + 1, (loss_real.item(), loss_fake.item()), (d_net, g_net)))
    zero_grads(_all_params(d_net, g_net))
    loss.backward()
    adam_d.step()
    return value, float(d_real.data.mean()), float(d_fake.data.mean())


def generator_step(d_net, g_net, config: TrainConfig, adam_g: Adam, rng: np.random.Generator,
                   batch_size: int) -> float:
    """One Adam step on G through a frozen D. Returns g_loss."""
    z = sample_noise(batch_size, config.latent_dim, rng)
    d_out = d_net.forward(g_net.forward(z))
    if config.generator_loss == "non_saturating":
        loss = bce_loss(d_out, Tensor.ones((batch_size, 1)))
    else:
        loss = bce_loss(d_out, Tensor.zeros((batch_size, 1))).neg()
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(_abort_snapshot("generator_step", adam_g.t + 1, (value,), (d_net, g_net)))
    zero_grads(_all_params(d_net, g_net))
    loss.backward()
    adam_g.step()
    return value


# -- checkpoint assembly --------------------------------------------------------


def snapshot(scale, config, aug, epoch, step, g_net, d_net, adam_g, adam_d, rng) -> Checkpoint:
    meta = {
        "scale": asdict(scale),
        "train": asdict(config),
        "augment": {**asdict(aug), "crop_scale_range": list(aug.crop_scale_range)},
        "epoch": epoch,
        "step": step,
        "adam_t": {"g": adam_g.t, "d": adam_d.t},
    }
    tensors: dict[str, np.ndarray] = {}
    for name, p in g_net.parameters() + d_net.parameters():
        tensors[f"param.{name}"] = p.data
    for adam in (adam_g, adam_d):
        for name, _ in adam.params:
            tensors[f"adam_m.{name}"] = adam.m[name]
            tensors[f"adam_v.{name}"] = adam.v[name]
    for name, buf in g_net.buffers() + d_net.buffers():
        tensors[f"buffer.{name}"] = buf
    return Checkpoint(meta=meta, tensors=tensors, rng_state=rng.bit_generator.state)


def _load_network(net: Network, tensors: dict[str, np.ndarray]):
    for layer in net.layers:
        for pname, shape in layer.param_specs():
            key = f"param.{net.name}.{layer.name}.{pname}"
            if key not in tensors:
                raise CheckpointFormatError(f"checkpoint missing tensor {key}")
            arr = tensors[key]
            if arr.shape != tuple(shape):
                raise CheckpointFormatError(f"{key}: shape {arr.shape} != expected {tuple(shape)}")
            setattr(layer, pname, Tensor(arr.copy(), requires_grad=True))
        if isinstance(layer, BatchNorm2d):
            for bname in ("running_mean", "running_var"):
                key = f"buffer.{net.name}.{layer.name}.{bname}"
                if key not in tensors:
                    raise CheckpointFormatError(f"checkpoint missing tensor {key}")
                setattr(layer, bname, tensors[key].copy())


def restore(ckpt: Checkpoint):
    """Rebuild (scale, config, augment, G, D, adam_G, adam_D, rng) from a checkpoint."""
    try:
        scale = ModelScale(**ckpt.meta["scale"])
        config = TrainConfig(**ckpt.meta["train"])
        aug_meta = dict(ckpt.meta["augment"])
        aug_meta["crop_scale_range"] = tuple(aug_meta["crop_scale_range"])
        aug = AugmentConfig(**aug_meta)
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError(f"checkpoint meta invalid: {e}") from e
    g_net = build_generator(scale)
    d_net = build_discriminator(scale)
    _load_network(g_net, ckpt.tensors)
    _load_network(d_net, ckpt.tensors)
    adam_g = Adam(g_net.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    adam_d = Adam(d_net.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    for adam, key in ((adam_g, "g"), (adam_d, "d")):
        adam.t = ckpt.meta["adam_t"][key]
        for name, _ in adam.params:
            adam.m[name] = ckpt.tensors[f"adam_m.{name}"].copy()
            adam.v[name] = ckpt.tensors[f"adam_v.{name}"].copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    return scale, config, aug, g_net, d_net, adam_g, adam_d, rng


def restore_generator(ckpt: Checkpoint):
    """Generator only (for sampling); returned in eval mode."""
    try:
        scale = ModelScale(**ckpt.meta["scale"])
    except (KeyError, TypeError) as e:
        raise CheckpointFormatError(f"checkpoint meta invalid: {e}") from e
    g_net = build_generator(scale)
    _load_network(g_net, ckpt.tensors)
    g_net.set_mode("eval")
    return scale, g_net


def _save_or_abort(ckpt: Checkpoint, path: Path):
    try:
        save_checkpoint(ckpt, path)
    except OSError as e:
        log.warning("checkpoint write failed; partial state may remain at %s", path)
        raise CheckpointFormatError(f"checkpoint write failed at {path}: {e}") from e


def sample_grid(g_net: Network, latent_dim: int, seed, count: int = 16) -> np.ndarray:
    """Tile `count` eval-mode samples into one (H, W, C) uint8 image.

    Noise comes from a generator seeded by `seed` alone, so emitting grids
    never perturbs the training rng stream.
    """
    srng = np.random.default_rng(seed)
    z = sample_noise(count, latent_dim, srng)
    modes = [l.mode for l in g_net.layers if isinstance(l, BatchNorm2d)]
    g_net.set_mode("eval")
    with no_grad():
        imgs = g_net.forward(z)
    for layer, mode in zip((l for l in g_net.layers if isinstance(l, BatchNorm2d)), modes):
        layer.mode = mode
    cols = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / cols))
    tiles = [denormalize(imgs.data[i]).data for i in range(count)]
    th, tw, ch = tiles[0].shape
    canvas = np.zeros((rows * th, cols * tw, ch), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        canvas[r * th : (r + 1) * th, c * tw : (c + 1) * tw] = tile
    return canvas


def _write_grid(g_net, config, epoch, out_dir):
    canvas = sample_grid(g_net, config.latent_dim, (config.seed, epoch))
    img = Image.fromarray(canvas.squeeze(axis=2) if canvas.shape[2] == 1 else canvas)
    img.save(out_dir / f"samples_epoch_{epoch:04d}.png")


def train(records, scale: ModelScale, config: TrainConfig, aug: AugmentConfig, out_dir,
          resume: Checkpoint | None = None) -> Checkpoint:
    """Run the full loop; returns the final checkpoint (also written to disk).

    `resume` continues an earlier run: epochs already recorded in the
    checkpoint are skipped and the rng stream picks up where it left off.
    """
    config.validate()
    scale.validate()
    aug.validate()
    if config.latent_dim != scale.latent_dim:
        raise ConfigError(f"latent_dim mismatch: train {config.latent_dim} vs model {scale.latent_dim}")
    if not records:
        raise DataError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume is None:
        rng = np.random.default_rng(config.seed)
        g_net = build_generator(scale).initialize(rng)
        d_net = build_discriminator(scale).initialize(rng)
        adam_g = Adam(g_net.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        adam_d = Adam(d_net.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        start_epoch, step = 0, 0
    else:
        ck_scale, _, _, g_net, d_net, adam_g, adam_d, rng = restore(resume)
        if ck_scale != scale:
            raise ConfigError(f"resume checkpoint was trained at scale {ck_scale}, requested {scale}")
        for adam in (adam_g, adam_d):  # resumed run follows the config it was given
            adam.lr, adam.beta1, adam.beta2, adam.eps = (
                config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        start_epoch, step = resume.epoch, resume.step
        if start_epoch > config.epochs:
            raise ConfigError(f"checkpoint already at epoch {start_epoch} > target {config.epochs}")

    g_net.set_mode("train")
    d_net.set_mode("train")

    metrics_path = out_dir / "metrics.csv"
    write_header = not metrics_path.exists()
    with open(metrics_path, "a") as mf:
        if write_header:
            mf.write(METRICS_HEADER + "\n")
        for epoch in range(start_epoch + 1, config.epochs + 1):
            for real in batches(records, aug, config.batch_size, rng):
                d_loss, d_real_mean, d_fake_mean = discriminator_step(d_net, g_net, real, config, adam_d, rng)
                g_loss = generator_step(d_net, g_net, config, adam_g, rng, real.shape[0])
                step += 1
                mf.write(f"{epoch},{step},{d_loss!r},{g_loss!r},{d_real_mean!r},{d_fake_mean!r}\n")
            mf.flush()
            if config.sample_every and epoch % config.sample_every == 0:
                _write_grid(g_net, config, epoch, out_dir)
            if config.checkpoint_every and epoch % config.checkpoint_every == 0 and epoch < config.epochs:
                ck = snapshot(scale, config, aug, epoch, step, g_net, d_net, adam_g, adam_d, rng)
                _save_or_abort(ck, out_dir / f"checkpoint_epoch_{epoch:04d}.afge")

    final = snapshot(scale, config, aug, config.epochs, step, g_net, d_net, adam_g, adam_d, rng)
    _save_or_abort(final, out_dir / "checkpoint_final.afge")
    return final

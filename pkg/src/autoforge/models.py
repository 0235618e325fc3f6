"""Generator and discriminator construction.

Both networks are derived from one ``ModelScale`` so the full-size
(224x224) architecture and a desk-scale variant that trains in minutes
share a single code path. Channel widths double stage by stage; the
discriminator consumes them narrowest-first and the generator
widest-first, so the two stacks are exact mirrors.

Construction is shape-only: parameters are allocated by
``Network.initialize`` (or ``layers.init_weights``), which keeps shape
validation and parameter counting instant even at full scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .layers import (
    Activation,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Flatten,
    Linear,
    Reshape,
    init_weights,
)
from .tensor import Tensor

# Parameter totals claimed in the original description of this architecture.
# The quoted layer shapes imply far larger counts; see count_params().
CLAIMED_PARAMS = {"generator": 30_000_000, "discriminator": 5_000_000}


@dataclass(frozen=True)
class ModelScale:
    """Architecture scale knobs. Defaults are the full-size model."""

    image_size: int = 224
    seed_size: int = 7
    stages: int = 5
    base_width: int = 192
    channels: int = 3
    latent_dim: int = 100

    def validate(self):
        for name in ("image_size", "seed_size", "stages", "base_width", "channels", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelScale.{name} must be >= 1")
        if self.image_size != self.seed_size * 2 ** self.stages:
            raise ConfigError(
                f"image_size {self.image_size} != seed_size {self.seed_size} * 2^{self.stages}"
            )

    def widths(self) -> list[int]:
        """Stage widths narrowest-first: base_width * 2^i."""
        return [self.base_width * 2 ** i for i in range(self.stages)]


PAPER_SCALE = ModelScale()
DESK_SCALE = ModelScale(image_size=32, seed_size=4, stages=3, base_width=16, channels=3, latent_dim=100)


@dataclass
class Network:
    name: str
    layers: list = field(default_factory=list)
    claimed_params: int | None = None  # published total, attached to full-scale builds

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def initialize(self, seed, dtype=np.float32):
        init_weights(self.layers, seed, dtype)
        return self

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend((f"{self.name}.{n}", t) for n, t in layer.parameters())
        return out

    def buffers(self):
        out = []
        for layer in self.layers:
            out.extend((f"{self.name}.{n}", b) for n, b in layer.buffers())
        return out

    def set_mode(self, mode: str):
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                layer.mode = mode
        return self

    def out_shapes(self, input_shape) -> list[tuple[int, ...]]:
        """Propagate an input shape through every layer (no forward pass)."""
        shapes = []
        shape = tuple(input_shape)
        for layer in self.layers:
            shape = layer.out_shape(shape)
            shapes.append(shape)
        return shapes

    def astype(self, dtype):
        """Convert parameters and buffers in place (used for 64-bit checking)."""
        for layer in self.layers:
            for attr in ("weight", "bias", "gamma", "beta"):
                t = getattr(layer, attr, None)
                if t is not None:
                    setattr(layer, attr, t.astype(dtype))
            for attr in ("running_mean", "running_var"):
                b = getattr(layer, attr, None)
                if b is not None:
                    setattr(layer, attr, b.astype(dtype))
        return self


def build_generator(scale: ModelScale) -> Network:
    """Latent vector -> image in [-1, 1].

    FC projects the latent to the widest seed volume; each transposed-conv
    stage halves the width and doubles the resolution, with BatchNorm+ReLU
    everywhere except the output stage, which maps to `channels` and Tanh.
    """
    scale.validate()
    gw = list(reversed(scale.widths()))  # widest first
    net = Network("g", claimed_params=CLAIMED_PARAMS["generator"] if scale == PAPER_SCALE else None)
    net.layers.append(Linear(scale.latent_dim, gw[0] * scale.seed_size ** 2, bias=True, name="fc"))
    net.layers.append(Reshape((gw[0], scale.seed_size, scale.seed_size), name="seed"))
    for i in range(scale.stages):
        last = i == scale.stages - 1
        out_ch = scale.channels if last else gw[i + 1]
        net.layers.append(ConvTranspose2d(gw[i], out_ch, bias=last, name=f"up{i}"))
        if last:
            net.layers.append(Activation("tanh"))
        else:
            net.layers.append(BatchNorm2d(out_ch, name=f"bn{i}"))
            net.layers.append(Activation("relu", name=f"relu{i}"))
    return net


def build_discriminator(scale: ModelScale) -> Network:
    """Image -> realness probability in (0, 1).

    Conv stages double the width and halve the resolution, each followed by
    BatchNorm and LeakyReLU(0.2); the final map is flattened into a dense
    layer with a sigmoid output.
    """
    scale.validate()
    widths = scale.widths()
    net = Network("d", claimed_params=CLAIMED_PARAMS["discriminator"] if scale == PAPER_SCALE else None)
    in_ch = scale.channels
    for i, out_ch in enumerate(widths):
        net.layers.append(Conv2d(in_ch, out_ch, bias=False, name=f"down{i}"))
        net.layers.append(BatchNorm2d(out_ch, name=f"bn{i}"))
        net.layers.append(Activation("leaky_relu", slope=0.2, name=f"lrelu{i}"))
        in_ch = out_ch
    net.layers.append(Flatten())
    net.layers.append(Linear(widths[-1] * scale.seed_size ** 2, 1, bias=True, name="fc"))
    net.layers.append(Activation("sigmoid"))
    return net


def generator_widths(scale: ModelScale) -> list[int]:
    return list(reversed(scale.widths()))


def discriminator_widths(scale: ModelScale) -> list[int]:
    return scale.widths()


@dataclass
class ParamCountReport:
    network: str
    rows: list  # (layer name, kind, weight count, actual bias count, bias count if biased everywhere)
    total: int
    total_all_bias: int
    total_no_bias: int
    claimed: int | None = None

    @property
    def flags_discrepancy(self) -> bool:
        return self.claimed is not None and not np.isclose(self.total, self.claimed, rtol=0.5)

    def format(self) -> str:
        lines = [f"{self.network}: per-layer parameter counts"]
        for name, kind, wcount, bcount, bfull in self.rows:
            lines.append(f"  {name:<14} {kind:<18} weights={wcount:>12,} bias={bcount:,}")
        lines.append(f"  total={self.total:,} (all-bias convention: {self.total_all_bias:,}, "
                     f"no-conv-bias convention: {self.total_no_bias:,})")
        if self.flags_discrepancy:
            lines.append(
                f"  NOTE: measured total {self.total:,} is inconsistent with the originally "
                f"reported ~{self.claimed:,} for this architecture; the quoted layer shapes "
                f"are treated as normative and true counts are reported."
            )
        return "\n".join(lines)


def count_params(net: Network, claimed: int | None = None) -> ParamCountReport:
    """Deterministic per-layer and total parameter counts from shapes alone.

    Totals are reported under both bias conventions (every conv biased /
    no conv biases) since published counts rarely state which was used.
    """
    rows = []
    total = total_all = total_none = 0
    for layer in net.layers:
        wcount = bcount = bfull = 0
        for pname, shape in layer.param_specs():
            n = int(np.prod(shape))
            if pname == "bias":
                bcount += n
            else:
                wcount += n
        if layer.kind in ("conv2d", "conv_transpose2d"):
            bfull = layer.out_channels
        elif layer.kind == "linear":
            bfull = layer.out_features
        if layer.param_specs():
            rows.append((layer.name, layer.kind, wcount, bcount, bfull))
        total += wcount + bcount
        total_all += wcount + bfull
        # no-bias convention: conv layers unbiased, dense layers keep theirs
        total_none += wcount + (bcount if layer.kind == "linear" else 0)
    if claimed is None:
        claimed = net.claimed_params
    return ParamCountReport(net.name, rows, total, total_all, total_none, claimed)

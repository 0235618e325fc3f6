"""Parameterized network layers: linear, strided conv, transposed conv,
per-channel batch normalization, and the pointwise activations.

Convolution is cross-correlation (no kernel flip), the deep-learning
convention. Both conv directions share one im2col/col2im pair; the
transposed conv forward is literally the conv input-gradient map, which
makes the adjoint identity <conv(x), y> == <x, convT(y)> hold by
construction for a shared weight array.

Weight layouts: linear (in, out); conv (out_ch, in_ch, kh, kw);
transposed conv (in_ch, out_ch, kh, kw).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor, make_op

WEIGHT_STD = 0.02  # DCGAN-style init: weights ~ N(0, 0.02), BN gamma ~ N(1, 0.02)


# -- im2col machinery ---------------------------------------------------------


def _im2col(x: np.ndarray, kh, kw, sh, sw, ph, pw, oh, ow) -> np.ndarray:
    """(N,C,H,W) -> (N*oh*ow, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    col = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j, :, :] = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def _col2im(col: np.ndarray, out_shape, kh, kw, sh, sw, ph, pw, oh, ow) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back into an (N,C,H,W) image."""
    n, c, h, w = out_shape
    col = col.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=col.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += col[:, :, i, j, :, :]
    if ph or pw:
        return xp[:, :, ph : ph + h, pw : pw + w]
    return xp


# -- functional ops -----------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x[N,in] @ weight[in,out] (+ bias[out])."""
    y = x.matmul(weight)
    if bias is not None:
        y = y + bias
    return y


def conv2d(x: Tensor, weight: Tensor, stride=(2, 2), padding=(1, 1), bias: Tensor | None = None) -> Tensor:
    """Strided 2-d cross-correlation. weight: (out_ch, in_ch, kh, kw)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N,C,H,W) input, got {x.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    if c != ic:
        raise ShapeError(f"conv2d input has {c} channels, weight expects {ic}")
    if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
        raise ShapeError(
            f"conv2d output size not integral: (({h}+2*{ph}-{kh})/{sh}+1, ({w}+2*{pw}-{kw})/{sw}+1)"
        )
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output extent < 1 for input {x.shape} kernel ({kh},{kw})")

    col = _im2col(x.data, kh, kw, sh, sw, ph, pw, oh, ow)
    w_col = weight.data.reshape(oc, -1)
    out = (col @ w_col.T).reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)

    def backward(g):
        g_flat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, oc)
        dw = (g_flat.T @ col).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = _col2im(g_flat @ w_col, x.shape, kh, kw, sh, sw, ph, pw, oh, ow)
        return dx, dw

    y = make_op(out, (x, weight), backward)
    if bias is not None:
        y = y + bias
    return y


def conv_transpose2d(x: Tensor, weight: Tensor, stride=(2, 2), padding=(1, 1), bias: Tensor | None = None) -> Tensor:
    """Strided transposed convolution (scatter-add of kernel copies).

    weight: (in_ch, out_ch, kh, kw); output spatial size (H-1)*s - 2*p + k.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects (N,C,H,W) input, got {x.shape}")
    n, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    if c != ic:
        raise ShapeError(f"conv_transpose2d input has {c} channels, weight expects {ic}")
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (w - 1) * sw - 2 * pw + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv_transpose2d output extent ({oh},{ow}) < 1 for input {x.shape}")

    x_flat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * w, ic)
    w_col = weight.data.reshape(ic, -1)
    out = _col2im(x_flat @ w_col, (n, oc, oh, ow), kh, kw, sh, sw, ph, pw, h, w)

    def backward(g):
        dcol = _im2col(g, kh, kw, sh, sw, ph, pw, h, w)
        dx = None
        if x.requires_grad:
            dx = (dcol @ w_col.T).reshape(n, h, w, ic).transpose(0, 3, 1, 2)
        dw = (x_flat.T @ dcol).reshape(weight.shape) if weight.requires_grad else None
        return dx, dw

    y = make_op(out, (x, weight), backward)
    if bias is not None:
        y = y + bias
    return y


# -- layer classes ------------------------------------------------------------


class Linear:
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, bias: bool = True, name: str = "fc"):
        self.in_features = in_features
        self.out_features = out_features
        self.has_bias = bias
        self.name = name
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None

    def param_specs(self):
        specs = [("weight", (self.in_features, self.out_features))]
        if self.has_bias:
            specs.append(("bias", (self.out_features,)))
        return specs

    def initialize(self, rng: np.random.Generator, dtype=np.float32):
        self.weight = Tensor(
            rng.normal(0.0, WEIGHT_STD, (self.in_features, self.out_features)).astype(dtype),
            requires_grad=True,
        )
        if self.has_bias:
            self.bias = Tensor(np.zeros(self.out_features, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        _require_initialized(self)
        return linear(x, self.weight, self.bias)

    def out_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected (N,{self.in_features}) input, got {shape}")
        return (shape[0], self.out_features)

    def parameters(self):
        return _named_params(self, ("weight", "bias"))

    def buffers(self):
        return []


class Conv2d:
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                 bias=False, name="conv"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.has_bias = bias
        self.name = name
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None

    def param_specs(self):
        kh, kw = self.kernel
        specs = [("weight", (self.out_channels, self.in_channels, kh, kw))]
        if self.has_bias:
            specs.append(("bias", (self.out_channels,)))
        return specs

    def initialize(self, rng, dtype=np.float32):
        kh, kw = self.kernel
        self.weight = Tensor(
            rng.normal(0.0, WEIGHT_STD, (self.out_channels, self.in_channels, kh, kw)).astype(dtype),
            requires_grad=True,
        )
        if self.has_bias:
            self.bias = Tensor(np.zeros(self.out_channels, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        _require_initialized(self)
        return conv2d(x, self.weight, self.stride, self.padding, self.bias)

    def out_shape(self, shape):
        n, c, h, w = _expect_4d(self.name, shape, self.in_channels)
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        if (h + 2 * ph - kh) % sh or (w + 2 * pw - kw) % sw:
            raise ShapeError(f"{self.name}: non-integral output for input {shape}")
        return (n, self.out_channels, (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)

    def parameters(self):
        return _named_params(self, ("weight", "bias"))

    def buffers(self):
        return []


class ConvTranspose2d:
    kind = "conv_transpose2d"

    def __init__(self, in_channels, out_channels, kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                 bias=False, name="convt"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.has_bias = bias
        self.name = name
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None

    def param_specs(self):
        kh, kw = self.kernel
        specs = [("weight", (self.in_channels, self.out_channels, kh, kw))]
        if self.has_bias:
            specs.append(("bias", (self.out_channels,)))
        return specs

    def initialize(self, rng, dtype=np.float32):
        kh, kw = self.kernel
        self.weight = Tensor(
            rng.normal(0.0, WEIGHT_STD, (self.in_channels, self.out_channels, kh, kw)).astype(dtype),
            requires_grad=True,
        )
        if self.has_bias:
            self.bias = Tensor(np.zeros(self.out_channels, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        _require_initialized(self)
        return conv_transpose2d(x, self.weight, self.stride, self.padding, self.bias)

    def out_shape(self, shape):
        n, c, h, w = _expect_4d(self.name, shape, self.in_channels)
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        oh = (h - 1) * sh - 2 * ph + kh
        ow = (w - 1) * sw - 2 * pw + kw
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: output extent ({oh},{ow}) < 1")
        return (n, self.out_channels, oh, ow)

    def parameters(self):
        return _named_params(self, ("weight", "bias"))

    def buffers(self):
        return []


class BatchNorm2d:
    """Per-channel normalization over (N, H, W) with learned scale/shift.

    Train mode normalizes by batch statistics and updates the running
    statistics; eval mode is a pure function of (x, running stats).
    """

    kind = "batchnorm2d"

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1, name: str = "bn"):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.name = name
        self.mode = "train"
        self.gamma: Tensor | None = None
        self.beta: Tensor | None = None
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def param_specs(self):
        return [("gamma", (self.num_features,)), ("beta", (self.num_features,))]

    def initialize(self, rng, dtype=np.float32):
        c = self.num_features
        self.gamma = Tensor(rng.normal(1.0, WEIGHT_STD, c).astype(dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        _require_initialized(self, ("gamma", "beta"))
        if x.ndim != 4 or x.shape[1] != self.num_features:
            raise ShapeError(f"{self.name}: expected (N,{self.num_features},H,W), got {x.shape}")
        n, c, h, w = x.shape
        gamma_r = self.gamma.data.reshape(1, c, 1, 1)
        xd = x.data

        if self.mode == "train":
            if n * h * w < 2:
                raise ContractError(f"{self.name}: train-mode variance undefined for {n * h * w} value(s) per channel")
            mu = xd.mean(axis=(0, 2, 3))
            var = xd.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = ((1.0 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1.0 - m) * self.running_var + m * var).astype(self.running_var.dtype)
        else:
            mu = self.running_mean
            var = self.running_var

        inv = 1.0 / np.sqrt(var + self.eps)
        inv_r = inv.reshape(1, c, 1, 1)
        xhat = (xd - mu.reshape(1, c, 1, 1)) * inv_r
        out = gamma_r * xhat + self.beta.data.reshape(1, c, 1, 1)
        train_mode = self.mode == "train"

        def backward(g):
            g_xhat = g * xhat
            dgamma = g_xhat.sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dx = None
            if x.requires_grad:
                if train_mode:
                    mean_g = g.mean(axis=(0, 2, 3), keepdims=True)
                    mean_gx = g_xhat.mean(axis=(0, 2, 3), keepdims=True)
                    dx = gamma_r * inv_r * (g - mean_g - xhat * mean_gx)
                else:
                    dx = g * gamma_r * inv_r
            return dx, dgamma, dbeta

        return make_op(out, (x, self.gamma, self.beta), backward)

    def out_shape(self, shape):
        _expect_4d(self.name, shape, self.num_features)
        return tuple(shape)

    def parameters(self):
        return _named_params(self, ("gamma", "beta"))

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean), (f"{self.name}.running_var", self.running_var)]


class Activation:
    kind = "activation"

    def __init__(self, fn: str, slope: float = 0.2, name: str | None = None):
        if fn not in ("relu", "leaky_relu", "tanh", "sigmoid"):
            raise ContractError(f"unknown activation {fn!r}")
        self.fn = fn
        self.slope = slope
        self.name = name or fn

    def param_specs(self):
        return []

    def initialize(self, rng, dtype=np.float32):
        pass

    def forward(self, x: Tensor) -> Tensor:
        if self.fn == "relu":
            return x.relu()
        if self.fn == "leaky_relu":
            return x.leaky_relu(self.slope)
        if self.fn == "tanh":
            return x.tanh()
        return x.sigmoid()

    def out_shape(self, shape):
        return tuple(shape)

    def parameters(self):
        return []

    def buffers(self):
        return []


class Reshape:
    """Reinterpret (N, prod(target)) as (N, *target)."""

    kind = "reshape"

    def __init__(self, target, name="reshape"):
        self.target = tuple(target)
        self.name = name

    def param_specs(self):
        return []

    def initialize(self, rng, dtype=np.float32):
        pass

    def forward(self, x: Tensor) -> Tensor:
        return x.reshape((x.shape[0],) + self.target)

    def out_shape(self, shape):
        if int(np.prod(shape[1:])) != int(np.prod(self.target)):
            raise ShapeError(f"{self.name}: cannot view {shape} as (N, {self.target})")
        return (shape[0],) + self.target

    def parameters(self):
        return []

    def buffers(self):
        return []


class Flatten:
    kind = "flatten"

    def __init__(self, name="flatten"):
        self.name = name

    def param_specs(self):
        return []

    def initialize(self, rng, dtype=np.float32):
        pass

    def forward(self, x: Tensor) -> Tensor:
        return x.flatten_batch()

    def out_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def parameters(self):
        return []

    def buffers(self):
        return []


def init_weights(layers, seed, dtype=np.float32):
    """Initialize every layer in order: weights ~ N(0, 0.02), biases 0,
    BN gamma ~ N(1, 0.02). Deterministic for a given seed or Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for layer in layers:
        layer.initialize(rng, dtype)


def _named_params(layer, attrs):
    out = []
    for attr in attrs:
        t = getattr(layer, attr, None)
        if t is not None:
            out.append((f"{layer.name}.{attr}", t))
    return out


def _require_initialized(layer, attrs=("weight",)):
    for attr in attrs:
        if getattr(layer, attr) is None:
            raise ContractError(f"{layer.name}: parameters not initialized (call init_weights first)")


def _expect_4d(name, shape, channels):
    if len(shape) != 4 or shape[1] != channels:
        raise ShapeError(f"{name}: expected (N,{channels},H,W) input, got {tuple(shape)}")
    return shape

"""Finite-difference verification of every backward rule.

Central differences in 64-bit: for each coordinate of the checked input,
numeric = (f(x + h e_i) - f(x - h e_i)) / 2h, compared against the tape
gradient with relative error |a - n| / max(|a|, |n|, 1e-8).

``standard_suite`` covers each layer kind, the activations, the BCE loss
and the composite discriminator(generator(z)) at desk scale; the CLI
`gradcheck` command runs it and reports one line per check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ContractError, NumericalError
from .models import DESK_SCALE, build_discriminator, build_generator
from .tensor import Tensor, no_grad

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray

    def __bool__(self):
        return self.passed


def grad_check(f, point: Tensor, h: float = DEFAULT_H, tol: float = DEFAULT_TOL,
               name: str = "f") -> GradCheckResult:
    """Compare the tape gradient of scalar-valued `f` at `point` against
    central finite differences, coordinate by coordinate."""
    if point.dtype != np.float64:
        raise ContractError("grad_check requires a float64 point")
    x = Tensor(point.data.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ContractError(f"{name}: grad_check target must be scalar-valued, got shape {out.shape}")
    out.backward()
    analytic = x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(analytic)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(x).item()
            flat[i] = orig - h
            lo = f(x).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalError(f"{name}: non-finite value at coordinate {i}")
            numeric[i] = (hi - lo) / (2.0 * h)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise NumericalError(f"{name}: non-finite analytic gradient at coordinate {bad}")

    rel = np.abs(analytic - numeric) / np.maximum.reduce(
        [np.abs(analytic), np.abs(numeric), np.full_like(analytic, 1e-8)]
    )
    max_err = float(rel.max()) if rel.size else 0.0
    return GradCheckResult(name, max_err, max_err <= tol, analytic, numeric)


def _weighted_sum(y: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalarize with fixed random weights so no gradient symmetry hides bugs."""
    w = Tensor(rng.normal(size=y.shape).astype(np.float64))
    return (y * w).sum()


def standard_suite(tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> list[GradCheckResult]:
    """Gradient checks for every primitive plus the desk-scale composite."""
    from .training import bce_loss  # local import: training depends on this module's peers

    rng = np.random.default_rng(20240211)
    f64 = np.float64
    results = []

    def run(name, f, point):
        results.append(grad_check(f, point, h=h, tol=tol, name=name))

    # linear: inputs, weight, bias
    x = Tensor(rng.normal(size=(2, 3)))
    w = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=4))
    run("linear/x", lambda t: _weighted_sum(layers.linear(t, w, b), np.random.default_rng(7)), x)
    run("linear/weight", lambda t: _weighted_sum(layers.linear(x, t, b), np.random.default_rng(7)), w)
    run("linear/bias", lambda t: _weighted_sum(layers.linear(x, w, t), np.random.default_rng(7)), b)

    # conv2d on a 6x6 input with the (4,4)/(2,2)/(1,1) production geometry
    cx = Tensor(rng.normal(size=(1, 2, 6, 6)))
    cw = Tensor(rng.normal(size=(3, 2, 4, 4)))
    cb = Tensor(rng.normal(size=3))
    run("conv2d/x", lambda t: _weighted_sum(layers.conv2d(t, cw, bias=cb), np.random.default_rng(8)), cx)
    run("conv2d/weight", lambda t: _weighted_sum(layers.conv2d(cx, t, bias=cb), np.random.default_rng(8)), cw)
    run("conv2d/bias", lambda t: _weighted_sum(layers.conv2d(cx, cw, bias=t), np.random.default_rng(8)), cb)

    # conv_transpose2d
    tx = Tensor(rng.normal(size=(1, 3, 3, 3)))
    tw = Tensor(rng.normal(size=(3, 2, 4, 4)))
    tb = Tensor(rng.normal(size=2))
    run("conv_transpose2d/x", lambda t: _weighted_sum(layers.conv_transpose2d(t, tw, bias=tb), np.random.default_rng(9)), tx)
    run("conv_transpose2d/weight", lambda t: _weighted_sum(layers.conv_transpose2d(tx, t, bias=tb), np.random.default_rng(9)), tw)

    # batchnorm2d, train mode
    bn = layers.BatchNorm2d(3)
    bn.initialize(np.random.default_rng(11), dtype=f64)
    bx = Tensor(rng.normal(size=(2, 3, 4, 4)))
    run("batchnorm2d/x", lambda t: _weighted_sum(bn.forward(t), np.random.default_rng(10)), bx)

    def bn_gamma(t):
        bn.gamma = t
        return _weighted_sum(bn.forward(bx), np.random.default_rng(10))

    def bn_beta(t):
        bn.beta = t
        return _weighted_sum(bn.forward(bx), np.random.default_rng(10))

    run("batchnorm2d/gamma", bn_gamma, bn.gamma)
    run("batchnorm2d/beta", bn_beta, bn.beta)

    # activations; keep relu-family inputs away from the kink at 0
    ax = rng.normal(size=(3, 5))
    ax = np.where(np.abs(ax) < 0.1, ax + 0.25, ax).astype(f64)
    run("relu", lambda t: _weighted_sum(t.relu(), np.random.default_rng(12)), Tensor(ax))
    run("leaky_relu", lambda t: _weighted_sum(t.leaky_relu(0.2), np.random.default_rng(12)), Tensor(ax))
    run("tanh", lambda t: _weighted_sum(t.tanh(), np.random.default_rng(12)), Tensor(ax))
    run("sigmoid", lambda t: _weighted_sum(t.sigmoid(), np.random.default_rng(12)), Tensor(ax))

    # bce_loss wrt predictions (targets fixed in {0,1})
    preds = Tensor(rng.uniform(0.05, 0.95, size=(4, 1)))
    targets = Tensor(np.array([[1.0], [0.0], [1.0], [0.0]], dtype=f64))
    run("bce_loss", lambda t: bce_loss(t, targets), preds)

    # composite D(G(z)) at desk scale, wrt the latent batch
    g = build_generator(DESK_SCALE).initialize(101, dtype=f64)
    d = build_discriminator(DESK_SCALE).initialize(102, dtype=f64)
    z = Tensor(rng.normal(size=(2, DESK_SCALE.latent_dim)))
    ones = Tensor(np.ones((2, 1), dtype=f64))
    run("composite_d_of_g", lambda t: bce_loss(d.forward(g.forward(t)), ones), z)

    return results

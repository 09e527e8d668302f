"""Central finite-difference checks of every analytic gradient.

All checks run in float64. The relative error of a gradient tensor is
``|analytic - numeric| / max(|analytic|, |numeric|)`` with Euclidean norms over
the checked coordinates; when both norms fall below ``ZERO_FLOOR`` the pair
is treated as agreeing zeros.

Whole-network checks are kink-aware: a coordinate whose +h and -h
evaluations switch any ReLU on or off is not differentiable over the stencil,
so it is skipped and counted instead of compared.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import functional as F
from .nn.layers import BatchNorm2d, ReLU, ResidualBlock
from .nn.network import _run, backprop, build_convnet4, build_resnet10lite

log = logging.getLogger(__name__)

STEP = 1e-3
TOLERANCE = 1e-4
ZERO_FLOOR = 1e-10
NETWORK_BATCH = 8
MIN_BN_SPREAD = 0.3
MAX_DRAW_TRIES = 1000


@dataclass
class CheckResult:
    name: str
    draw: int
    max_rel_error: float
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if max(na, nb) < ZERO_FLOOR:
        return 0.0
    return float(np.linalg.norm(a - b) / max(na, nb))


def numeric_grad(f, x, h=STEP, coords=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def _weighted_loss(rng, shape):
    # a random linear read-out makes a scalar loss out of any layer output
    w = rng.normal(size=shape)
    return w, (lambda y: float((w * y).sum()))


def check_conv(rng, draw):
    n, c, o = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 3))
    size = int(rng.integers(k, 10))
    x = rng.normal(size=(n, c, size, size))
    w = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    y, cache = F.conv2d_forward(x, w, b, stride, pad)
    wy, loss = _weighted_loss(rng, y.shape)
    dx, dw, db = F.conv2d_backward(wy, cache)
    f = lambda: loss(F.conv2d(x, w, b, stride, pad))  # noqa: E731
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)), rel_error(db, numeric_grad(f, b)))
    return CheckResult("conv2d", draw, err)


def check_batchnorm(rng, draw):
    x = rng.normal(size=(2, 3, 4, 4)) * rng.uniform(0.5, 2) + rng.normal()
    gamma = rng.normal(size=3)
    beta = rng.normal(size=3)
    rm, rv = np.zeros(3), np.ones(3)
    y, cache, _ = F.batchnorm_forward(x, gamma, beta, rm, rv, train=True)
    wy, loss = _weighted_loss(rng, y.shape)
    dx, dg, db = F.batchnorm_backward(wy, cache)
    f = lambda: loss(F.batchnorm_forward(x, gamma, beta, rm, rv, train=True)[0])  # noqa: E731
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dg, numeric_grad(f, gamma)),
              rel_error(db, numeric_grad(f, beta)))
    return CheckResult("batchnorm", draw, err)


def check_dense(rng, draw):
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6))
    b = rng.normal(size=3)
    y = F.dense(x, w, b)
    wy, loss = _weighted_loss(rng, y.shape)
    dx, dw, db = F.dense_backward(wy, x, w)
    f = lambda: loss(F.dense(x, w, b))  # noqa: E731
    err = max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)), rel_error(db, numeric_grad(f, b)))
    return CheckResult("dense", draw, err)


def check_softmax_ce(rng, draw):
    k = int(rng.integers(2, 4))
    logits = rng.normal(size=(5, k)) * 3
    labels = rng.integers(0, k, size=5)
    _, _, d = F.softmax_cross_entropy(logits, labels)
    f = lambda: F.softmax_cross_entropy(logits, labels)[0]  # noqa: E731
    return CheckResult("softmax_cross_entropy", draw, rel_error(d, numeric_grad(f, logits)))


def randomize(net, rng):
    """Redraw every parameter, including the zero-initialized head.

    Biases and batchnorm shifts are centred at 1 so most ReLUs stay live;
    weights are N(0, 0.5) and batchnorm scales U(0.5, 1.5).
    """
    for k, v in net.params.items():
        leaf = k.rsplit(".", 1)[-1]
        if leaf == "gamma":
            net.params[k] = rng.uniform(0.5, 1.5, size=v.shape)
        elif leaf in ("beta", "bias"):
            net.params[k] = rng.normal(1.0, 0.5, size=v.shape)
        else:
            net.params[k] = rng.normal(0.0, 0.5, size=v.shape)
    return net


def bn_input_spreads(net, x) -> np.ndarray:
    """Per-channel standard deviation of every batchnorm input in a train-mode pass."""
    _, caches, _, _ = _run(net, x, train=True)
    found = []
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, BatchNorm2d):
            found.append((layer, cache))
        elif isinstance(layer, ResidualBlock):
            found += [(sub, cache[name]) for name, sub in layer.sublayers() if isinstance(sub, BatchNorm2d)]
    return np.concatenate([np.sqrt(np.maximum(c[1] ** -2.0 - bn.eps, 0.0)) for bn, c in found])


def conditioned_draw(net, rng, batch):
    """Redraw parameters and inputs until every batchnorm channel sees spread >= ``MIN_BN_SPREAD``.

    A channel whose inputs nearly coincide makes the normalized loss so curved
    that the h^2 truncation term of a central difference swamps the tolerance,
    even though the analytic gradient is exact.
    """
    for _ in range(MAX_DRAW_TRIES):
        randomize(net, rng)
        x = rng.normal(size=(batch, *net.input_shape))
        if bn_input_spreads(net, x).min() >= MIN_BN_SPREAD:
            return x
    raise RuntimeError(f"no well-conditioned draw for {net.arch} in {MAX_DRAW_TRIES} tries")


def _loss_and_pattern(net, x, labels):
    logits, caches, _, _ = _run(net, x, train=True)
    pre = []
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, ReLU):
            pre.append(cache)
        elif isinstance(layer, ResidualBlock):
            pre += [cache["relu1"], cache["out"]]
    pattern = np.concatenate([(a > 0).ravel() for a in pre])
    return F.softmax_cross_entropy(logits, labels)[0], pattern


def check_network(net, rng, draw, max_coords=None, batch=NETWORK_BATCH):
    """Compare backprop against finite differences of the train-mode loss for every parameter tensor.

    ``max_coords`` limits each tensor to a random subset of coordinates.
    """
    x = conditioned_draw(net, rng, batch)
    labels = rng.integers(0, net.num_classes, size=batch)
    grads = backprop(net, x, labels).grads
    worst = 0.0
    skipped = 0
    for k, p in net.params.items():
        flat = p.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and p.size > max_coords:
            coords = sorted(rng.choice(p.size, size=max_coords, replace=False).tolist())
        ana, num = [], []
        for i in coords:
            old = flat[i]
            flat[i] = old + STEP
            fp, pat_p = _loss_and_pattern(net, x, labels)
            flat[i] = old - STEP
            fm, pat_m = _loss_and_pattern(net, x, labels)
            flat[i] = old
            if not np.array_equal(pat_p, pat_m):
                skipped += 1
                continue
            ana.append(grads[k].reshape(-1)[i])
            num.append((fp - fm) / (2 * STEP))
        if ana:
            worst = max(worst, rel_error(np.array(ana), np.array(num)))
    return CheckResult(net.arch, draw, worst, skipped)


def check_convnet4(rng, draw, max_coords=None):
    net = build_convnet4(int(rng.integers(2, 4)), 16, (2, 3, 4, 4), seed=draw, dtype=np.float64)
    return check_network(net, rng, draw, max_coords)


def check_resnet10(rng, draw, max_coords=None):
    net = build_resnet10lite(int(rng.integers(2, 4)), 16, 2, seed=draw, dtype=np.float64)
    return check_network(net, rng, draw, max_coords)


KERNEL_CHECKS = {
    "conv2d": check_conv,
    "batchnorm": check_batchnorm,
    "dense": check_dense,
    "softmax_cross_entropy": check_softmax_ce,
}
NETWORK_CHECKS = {"convnet4": check_convnet4, "resnet10lite": check_resnet10}
# coordinates sampled per parameter tensor; keeps the whole suite well under a minute
NETWORK_COORDS = {"convnet4": 16, "resnet10lite": 4}


def run_suite(seed=0, draws=20) -> list[CheckResult]:
    results = []
    rng = np.random.default_rng(seed)
    for name, check in KERNEL_CHECKS.items():
        for d in range(draws):
            results.append(check(rng, d))
        log.info("%s: worst relative error %.3g", name, max(r.max_rel_error for r in results[-draws:]))
    for name, check in NETWORK_CHECKS.items():
        for d in range(draws):
            results.append(check(rng, d, NETWORK_COORDS[name]))
        log.info("%s: worst relative error %.3g", name, max(r.max_rel_error for r in results[-draws:]))
    return results

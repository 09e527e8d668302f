"""Array kernels behind the network layers.

Every tensor is an NCHW numpy array. Forward kernels return their output plus
an opaque cache; the matching backward kernel consumes that cache. Nothing here
holds state.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Incompatible array shapes."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------------------
# convolution (cross-correlation, zero padding)
# ---------------------------------------------------------------------------


def _im2col(x, kh, kw, stride, ph, pw):
    if ph or pw:
        n, c, h, w = x.shape
        xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x
        x = xp
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    # rows ordered (n, oh, ow); columns ordered (c, kh, kw) to match weight.reshape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    if c != in_c:
        raise ShapeError(f"conv2d input {x.shape} has {c} channels but weight {weight.shape} expects {in_c}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    ph, pw = _pair(padding)
    oh = conv_output_size(h, kh, stride, ph)
    ow = conv_output_size(w, kw, stride, pw)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d input {x.shape} too small for weight {weight.shape} "
            f"with stride {stride} and padding {(ph, pw)}"
        )
    cols, oh, ow = _im2col(x, kh, kw, stride, ph, pw)
    wmat = weight.reshape(out_c, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias
    y = np.ascontiguousarray(out.reshape(n, oh, ow, out_c).transpose(0, 3, 1, 2))
    cache = (x.shape, cols, weight, stride, (ph, pw), bias is not None)
    return y, cache


def conv2d_backward(dy, cache, need_dx=True):
    """Return (dx, dweight, dbias); dbias is None for bias-free convolutions
    and dx is None when ``need_dx`` is false."""
    x_shape, cols, weight, stride, (ph, pw), has_bias = cache
    n, c, h, w = x_shape
    out_c, _, kh, kw = weight.shape
    _, _, oh, ow = dy.shape
    dy_col = dy.transpose(0, 2, 3, 1).reshape(-1, out_c)
    dweight = (dy_col.T @ cols).reshape(weight.shape)
    dbias = dy_col.sum(axis=0) if has_bias else None
    if not need_dx:
        return None, dweight, dbias
    # (c, kh, kw, n, oh, ow): each kernel offset is a contiguous (c, n, oh, ow) slab
    dcols = (weight.reshape(out_c, -1).T @ dy_col.T).reshape(c, kh, kw, n, oh, ow)
    hp, wp = h + 2 * ph, w + 2 * pw
    dxp = np.zeros((c, n, hp, wp), dtype=dy.dtype)
    # col2im per stride phase: kernel offset (a + s*u, b + s*v) lands on rows
    # a::s shifted by u, so each phase accumulates into a dense buffer
    for a in range(min(stride, kh)):
        for b in range(min(stride, kw)):
            rows, cols_ = len(range(a, hp, stride)), len(range(b, wp, stride))
            phase = np.zeros((c, n, rows, cols_), dtype=dy.dtype)
            for u, ki in enumerate(range(a, kh, stride)):
                for v, kj in enumerate(range(b, kw, stride)):
                    phase[:, :, u:u + oh, v:v + ow] += dcols[:, ki, kj]
            dxp[:, :, a::stride, b::stride] = phase
    dx = dxp[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), dweight, dbias


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Strided, zero-padded 2-d cross-correlation of an NCHW batch."""
    return conv2d_forward(x, weight, bias, stride, padding)[0]


# ---------------------------------------------------------------------------
# elementwise and pooling
# ---------------------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def global_avg_pool(x):
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dy, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to((dy / (h * w))[:, :, None, None], x_shape).copy()


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    Returns ``(y, cache, (running_mean, running_var))``. In train mode the
    returned running statistics are new arrays blended with the batch
    statistics; in inference mode they are the inputs, untouched.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm input {x.shape} does not match {gamma.shape[0]} channels")
    if not train:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[:, None, None]) * inv_std[:, None, None]
        y = gamma[:, None, None] * xhat + beta[:, None, None]
        return y.astype(x.dtype, copy=False), None, (running_mean, running_var)

    n, c, h, w = x.shape
    m = n * h * w
    if m < 2:
        raise ValueError(f"batchnorm in train mode needs >= 2 values per channel, input {x.shape} has {m}")
    mean = x.mean(axis=(0, 2, 3))
    centered = x - mean[:, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[:, None, None]
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    # running variance tracks the unbiased estimate
    new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype)
    new_var = ((1 - momentum) * running_var + momentum * var * (m / (m - 1))).astype(running_var.dtype)
    return y, (xhat, inv_std, gamma), (new_mean, new_var)


def batchnorm_backward(dy, cache):
    """Return (dx, dgamma, dbeta) for a train-mode forward."""
    xhat, inv_std, gamma = cache
    n, c, h, w = dy.shape
    m = n * h * w
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * gamma[:, None, None]
    dx = (inv_std / m)[:, None, None] * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[:, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[:, None, None]
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# dense head and loss
# ---------------------------------------------------------------------------


def dense(x, weight, bias):
    """Fully connected layer on a (batch, features) matrix: ``x @ W.T + b``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias


def dense_backward(dy, x, weight):
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy.

    Returns ``(loss, probabilities, dlogits)`` where ``dlogits`` is the
    gradient of the mean loss.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)]
        raise ValueError(f"labels must be in [0, {k}), got {bad.tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(n)
    log_p = z[rows, labels] - np.log(s[:, 0])
    loss = float(-log_p.mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= n
    return loss, probs, grad

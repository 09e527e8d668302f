"""Declarative layer specs.

A layer object only describes shapes and wiring. Its parameters and running
statistics live in the owning network's stores, passed in as plain dicts keyed
by the layer's local names.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import functional as F
from .functional import ShapeError

Shape = tuple[int, int, int]  # (channels, height, width), batch excluded


class Layer:
    kind = "layer"
    # post-ReLU tensors that forward(capture=True) reports
    captures = False

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def output_shape(self, shape):
        return shape

    def forward(self, x, params, buffers, train):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError


@dataclass(frozen=True)
class Conv2d(Layer):
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    bias: bool = True
    # projection shortcuts are not counted as network depth
    projection: bool = False

    kind = "conv"

    def param_shapes(self):
        shapes = {"weight": (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got shape {shape}")
        oh = F.conv_output_size(h, self.kernel_size, self.stride, self.padding)
        ow = F.conv_output_size(w, self.kernel_size, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv {self.kernel_size}x{self.kernel_size}/{self.stride} cannot take input {shape}")
        return (self.out_channels, oh, ow)

    def forward(self, x, params, buffers, train):
        y, cache = F.conv2d_forward(x, params["weight"], params.get("bias"), self.stride, self.padding)
        return y, cache, {}

    def backward(self, dy, cache, params, need_dx=True):
        dx, dw, db = F.conv2d_backward(dy, cache, need_dx)
        grads = {"weight": dw}
        if db is not None:
            grads["bias"] = db
        return dx, grads


@dataclass(frozen=True)
class ReLU(Layer):
    kind = "relu"
    captures = True

    def forward(self, x, params, buffers, train):
        return F.relu(x), x, {}

    def backward(self, dy, cache, params):
        return F.relu_backward(dy, cache), {}


@dataclass(frozen=True)
class BatchNorm2d(Layer):
    channels: int
    momentum: float = 0.1
    eps: float = 1e-5

    kind = "batchnorm"

    def param_shapes(self):
        return {"gamma": (self.channels,), "beta": (self.channels,)}

    def buffer_shapes(self):
        return {"running_mean": (self.channels,), "running_var": (self.channels,)}

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ShapeError(f"batchnorm over {self.channels} channels got shape {shape}")
        return shape

    def forward(self, x, params, buffers, train):
        y, cache, (mean, var) = F.batchnorm_forward(
            x, params["gamma"], params["beta"], buffers["running_mean"], buffers["running_var"],
            train, self.momentum, self.eps,
        )
        new = {"running_mean": mean, "running_var": var} if train else {}
        return y, cache, new

    def backward(self, dy, cache, params):
        if cache is None:
            raise RuntimeError("batchnorm backward needs a train-mode forward")
        dx, dgamma, dbeta = F.batchnorm_backward(dy, cache)
        return dx, {"gamma": dgamma, "beta": dbeta}


@dataclass(frozen=True)
class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, params, buffers, train):
        return x.reshape(x.shape[0], -1), x.shape, {}

    def backward(self, dy, cache, params):
        return dy.reshape(cache), {}


@dataclass(frozen=True)
class GlobalAvgPool(Layer):
    kind = "global-average-pool"

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, params, buffers, train):
        return F.global_avg_pool(x), x.shape, {}

    def backward(self, dy, cache, params):
        return F.global_avg_pool_backward(dy, cache), {}


@dataclass(frozen=True)
class Dense(Layer):
    in_features: int
    out_features: int

    kind = "dense"

    def param_shapes(self):
        return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}

    def output_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} flattened features, got shape {shape}")
        return (self.out_features,)

    def forward(self, x, params, buffers, train):
        return F.dense(x, params["weight"], params["bias"]), x, {}

    def backward(self, dy, cache, params):
        dx, dw, db = F.dense_backward(dy, cache, params["weight"])
        return dx, {"weight": dw, "bias": db}


def _sub(store, prefix):
    p = prefix + "."
    return {k[len(p):]: v for k, v in store.items() if k.startswith(p)}


def _prefixed(d, prefix):
    return {f"{prefix}.{k}": v for k, v in d.items()}


@dataclass(frozen=True)
class ResidualBlock(Layer):
    """Basic block: conv-BN-ReLU-conv-BN, add shortcut, ReLU.

    A 1x1 projection (conv + BN) replaces the identity shortcut whenever the
    stride or channel count changes.
    """

    in_channels: int
    out_channels: int
    stride: int = 1

    kind = "residual-block"
    captures = True

    @property
    def projected(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels

    @lru_cache(maxsize=None)
    def sublayers(self) -> list[tuple[str, Layer]]:
        subs: list[tuple[str, Layer]] = [
            ("conv1", Conv2d(self.in_channels, self.out_channels, 3, self.stride, 1, bias=False)),
            ("bn1", BatchNorm2d(self.out_channels)),
            ("conv2", Conv2d(self.out_channels, self.out_channels, 3, 1, 1, bias=False)),
            ("bn2", BatchNorm2d(self.out_channels)),
        ]
        if self.projected:
            subs += [
                ("proj", Conv2d(self.in_channels, self.out_channels, 1, self.stride, 0, bias=False, projection=True)),
                ("proj_bn", BatchNorm2d(self.out_channels)),
            ]
        return subs

    @lru_cache(maxsize=None)
    def param_shapes(self):
        out = {}
        for name, layer in self.sublayers():
            out.update(_prefixed(layer.param_shapes(), name))
        return out

    @lru_cache(maxsize=None)
    def buffer_shapes(self):
        out = {}
        for name, layer in self.sublayers():
            out.update(_prefixed(layer.buffer_shapes(), name))
        return out

    def output_shape(self, shape):
        subs = dict(self.sublayers())
        return subs["conv1"].output_shape(shape)

    def _run(self, names, x, params, buffers, train, caches, new_buffers, subs):
        for name in names:
            x, cache, nb = subs[name].forward(x, _sub(params, name), _sub(buffers, name), train)
            caches[name] = cache
            new_buffers.update(_prefixed(nb, name))
        return x

    def forward(self, x, params, buffers, train):
        subs = dict(self.sublayers())
        caches: dict = {}
        new_buffers: dict = {}
        h = self._run(["conv1", "bn1"], x, params, buffers, train, caches, new_buffers, subs)
        caches["relu1"] = h
        h = F.relu(h)
        h = self._run(["conv2", "bn2"], h, params, buffers, train, caches, new_buffers, subs)
        if self.projected:
            s = self._run(["proj", "proj_bn"], x, params, buffers, train, caches, new_buffers, subs)
        else:
            s = x
        pre = h + s
        caches["out"] = pre
        return F.relu(pre), caches, new_buffers

    def backward(self, dy, cache, params):
        subs = dict(self.sublayers())
        grads: dict = {}

        def back(names, d):
            for name in reversed(names):
                d, g = subs[name].backward(d, cache[name], _sub(params, name))
                grads.update(_prefixed(g, name))
            return d

        d = F.relu_backward(dy, cache["out"])
        dmain = back(["conv2", "bn2"], d)
        dmain = F.relu_backward(dmain, cache["relu1"])
        dx = back(["conv1", "bn1"], dmain)
        if self.projected:
            dx = dx + back(["proj", "proj_bn"], d)
        else:
            dx = dx + d
        return dx, grads

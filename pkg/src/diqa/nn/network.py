"""Network container, the two architecture builders, forward and backprop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .. import seeding
from . import functional as F
from .functional import ShapeError
from .layers import BatchNorm2d, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, ReLU, ResidualBlock

CONVNET4 = "convnet4"
RESNET10 = "resnet10lite"
ARCHITECTURES = (CONVNET4, RESNET10)

DEFAULT_CHANNEL_PLAN = (8, 16, 32, 32)
DEFAULT_RESNET_BASE = 8

# (kernel, padding) per ConvNet-4 stage; every stage is stride 2 and halves the input
CONVNET4_KERNELS = ((10, 4), (7, 3), (3, 1), (3, 1))


@dataclass
class Network:
    arch: str
    num_classes: int
    input_size: int
    channel_plan: tuple[int, ...]
    layers: list[Layer]
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    in_channels: int = 1
    seed: int = 0
    step: int = 0
    dtype: type = np.float32
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.input_size, self.input_size)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def layer_params(self, i: int) -> dict[str, np.ndarray]:
        return {name: self.params[f"{i}.{name}"] for name in self.layers[i].param_shapes()}

    def layer_buffers(self, i: int) -> dict[str, np.ndarray]:
        return {name: self.buffers[f"{i}.{name}"] for name in self.layers[i].buffer_shapes()}

    def astype(self, dtype) -> "Network":
        return replace(
            self,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            buffers={k: v.astype(dtype) for k, v in self.buffers.items()},
            dtype=dtype,
        )

    def copy(self) -> "Network":
        return self.astype(self.dtype)


def weighted_layer_count(net: Network) -> int:
    """Depth in the usual ResNet sense: convolutions and dense layers, projections excluded."""

    def count(layer):
        if isinstance(layer, ResidualBlock):
            return sum(count(sub) for _, sub in layer.sublayers())
        if isinstance(layer, Conv2d):
            return 0 if layer.projection else 1
        return 1 if isinstance(layer, Dense) else 0

    return sum(count(layer) for layer in net.layers)


def _assemble(arch, layers, num_classes, input_size, in_channels, channel_plan, seed, dtype):
    shape = (in_channels, input_size, input_size)
    shapes = [shape]
    for layer in layers:
        shape = layer.output_shape(shape)
        shapes.append(shape)

    rng = seeding.stream(seed, "init")
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for i, layer in enumerate(layers):
        for name, pshape in layer.param_shapes().items():
            leaf = name.rsplit(".", 1)[-1]
            if isinstance(layer, Dense) or leaf in ("bias", "beta"):
                value = np.zeros(pshape)
            elif leaf == "gamma":
                value = np.ones(pshape)
            else:
                fan_in = int(np.prod(pshape[1:]))
                value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=pshape)
            params[f"{i}.{name}"] = value.astype(dtype)
        for name, bshape in layer.buffer_shapes().items():
            init = np.ones if name.endswith("running_var") else np.zeros
            buffers[f"{i}.{name}"] = init(bshape, dtype=dtype)
    return Network(
        arch=arch, num_classes=num_classes, input_size=input_size, channel_plan=tuple(channel_plan),
        layers=layers, params=params, buffers=buffers, in_channels=in_channels, seed=seed,
        dtype=dtype, shapes=shapes,
    )


def _check_classes(num_classes):
    if num_classes not in (2, 3):
        raise ValueError(f"num_classes must be 2 or 3, got {num_classes}")


def build_convnet4(num_classes=2, input_size=64, channel_plan=DEFAULT_CHANNEL_PLAN, seed=0,
                   in_channels=1, dtype=np.float32) -> Network:
    """Four stride-2 convolutions (10x10, 7x7, 3x3, 3x3), each followed by ReLU then
    batch norm, flattened into a dense head. The head starts at zero."""
    _check_classes(num_classes)
    if input_size < 16 or input_size % 16:
        raise ValueError(f"ConvNet-4 input_size must be a positive multiple of 16, got {input_size}")
    if len(channel_plan) != 4 or min(channel_plan) < 1:
        raise ValueError(f"channel_plan must be four positive integers, got {channel_plan}")
    layers: list[Layer] = []
    c_in = in_channels
    for c_out, (k, pad) in zip(channel_plan, CONVNET4_KERNELS):
        layers += [Conv2d(c_in, c_out, k, 2, pad), ReLU(), BatchNorm2d(c_out)]
        c_in = c_out
    final = input_size // 16
    layers += [Flatten(), Dense(c_in * final * final, num_classes)]
    return _assemble(CONVNET4, layers, num_classes, input_size, in_channels, channel_plan, seed, dtype)


def build_resnet10lite(num_classes=2, input_size=64, base_channels=DEFAULT_RESNET_BASE, seed=0,
                       in_channels=1, dtype=np.float32) -> Network:
    """7x7/2 stem, one basic block per stage (channels doubling, stages 2-4 at
    stride 2), global average pool, dense head: ten weighted layers."""
    _check_classes(num_classes)
    if input_size < 16 or input_size % 16:
        raise ValueError(f"ResNet-10-lite input_size must be a positive multiple of 16, got {input_size}")
    if base_channels < 1:
        raise ValueError(f"base_channels must be positive, got {base_channels}")
    plan = tuple(base_channels * 2**i for i in range(4))
    layers: list[Layer] = [Conv2d(in_channels, plan[0], 7, 2, 3, bias=False), BatchNorm2d(plan[0]), ReLU()]
    c_in = plan[0]
    for stage, c_out in enumerate(plan):
        layers.append(ResidualBlock(c_in, c_out, 1 if stage == 0 else 2))
        c_in = c_out
    layers += [GlobalAvgPool(), Dense(c_in, num_classes)]
    return _assemble(RESNET10, layers, num_classes, input_size, in_channels, plan, seed, dtype)


def build_network(arch, num_classes, input_size, channel_plan=None, seed=0, in_channels=1, dtype=np.float32):
    if arch == CONVNET4:
        plan = DEFAULT_CHANNEL_PLAN if channel_plan is None else tuple(channel_plan)
        return build_convnet4(num_classes, input_size, plan, seed, in_channels, dtype)
    if arch in (RESNET10, "resnet10"):
        base = DEFAULT_RESNET_BASE if channel_plan is None else int(channel_plan[0])
        return build_resnet10lite(num_classes, input_size, base, seed, in_channels, dtype)
    raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


def _check_batch(net: Network, batch):
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != net.input_shape:
        raise ShapeError(f"network expects input (N, {', '.join(map(str, net.input_shape))}), got {batch.shape}")
    return batch.astype(net.dtype, copy=False)


def _run(net: Network, batch, train: bool, capture: bool = False):
    x = _check_batch(net, batch)
    caches = []
    activations = []
    new_buffers = dict(net.buffers)
    for i, layer in enumerate(net.layers):
        x, cache, nb = layer.forward(x, net.layer_params(i), net.layer_buffers(i), train)
        caches.append(cache)
        for k, v in nb.items():
            new_buffers[f"{i}.{k}"] = v
        if capture and layer.captures:
            activations.append(x)
    return x, caches, new_buffers, activations


def forward(net: Network, batch, mode="inference", capture=False):
    """Logits for ``batch``; with ``capture`` also every post-ReLU activation.

    The network is never mutated. Train mode normalizes with batch statistics;
    use :func:`backprop` to obtain the updated running statistics.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    logits, _, _, acts = _run(net, batch, mode == "train", capture)
    return (logits, acts) if capture else logits


class Backprop(NamedTuple):
    loss: float
    grads: dict[str, np.ndarray]
    probs: np.ndarray
    buffers: dict[str, np.ndarray]


def backprop(net: Network, batch, labels) -> Backprop:
    """Train-mode forward plus reverse pass.

    Returns the mean cross-entropy, its gradient for every parameter, the
    softmax probabilities and the running statistics after this batch.
    """
    logits, caches, new_buffers, _ = _run(net, batch, train=True)
    loss, probs, d = F.softmax_cross_entropy(logits, labels)
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if i == 0 and isinstance(layer, Conv2d):
            # nothing consumes the gradient of the input batch
            d, g = layer.backward(d, caches[i], net.layer_params(i), need_dx=False)
        else:
            d, g = layer.backward(d, caches[i], net.layer_params(i))
        for k, v in g.items():
            grads[f"{i}.{k}"] = v.astype(net.dtype, copy=False)
    grads = {k: grads[k] for k in net.params}
    return Backprop(loss, grads, probs, new_buffers)


def loss_only(net: Network, batch, labels, mode="train") -> float:
    logits = forward(net, batch, mode)
    return F.softmax_cross_entropy(logits, labels)[0]

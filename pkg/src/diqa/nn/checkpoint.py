"""Binary checkpoint format.

Layout::

    b"MQC1"
    uint32 little-endian header length
    UTF-8 JSON header
    float32 little-endian parameters, then running statistics, in layer order

The header records everything needed to rebuild the layer graph plus the
number of floats that follow.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Network, build_network

MAGIC = b"MQC1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def _header(net: Network) -> dict:
    return {
        "version": VERSION,
        "architecture": net.arch,
        "channel_plan": list(net.channel_plan),
        "input_size": net.input_size,
        "in_channels": net.in_channels,
        "num_classes": net.num_classes,
        "seed": net.seed,
        "step": net.step,
        "num_params": net.parameter_count(),
        "num_buffers": int(sum(b.size for b in net.buffers.values())),
    }


def dumps(net: Network) -> bytes:
    header = json.dumps(_header(net), sort_keys=True).encode("utf-8")
    arrays = list(net.params.values()) + list(net.buffers.values())
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return MAGIC + struct.pack("<I", len(header)) + header + blob


def loads(data: bytes) -> Network:
    if data[:4] != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise TruncatedCheckpointError("checkpoint ends before the header length")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise TruncatedCheckpointError(f"header declares {hlen} bytes, only {len(data) - 8} present")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise VersionMismatchError(f"checkpoint version {header.get('version')!r}, this build reads {VERSION}")

    net = build_network(
        header["architecture"], header["num_classes"], header["input_size"],
        header["channel_plan"], header["seed"], header.get("in_channels", 1),
    )
    n_params = net.parameter_count()
    n_buffers = int(sum(b.size for b in net.buffers.values()))
    if (header["num_params"], header["num_buffers"]) != (n_params, n_buffers):
        raise CheckpointError(
            f"header declares {header['num_params']}+{header['num_buffers']} floats, "
            f"architecture needs {n_params}+{n_buffers}"
        )
    blob = data[8 + hlen:]
    expected = 4 * (n_params + n_buffers)
    if len(blob) < expected:
        raise TruncatedCheckpointError(f"parameter blob has {len(blob)} bytes, header declares {expected}")
    if len(blob) > expected:
        raise CheckpointError(f"parameter blob has {len(blob)} bytes, header declares {expected}")
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float32)
    offset = 0
    for store in (net.params, net.buffers):
        for k, v in store.items():
            store[k] = flat[offset:offset + v.size].reshape(v.shape).copy()
            offset += v.size
    net.step = int(header["step"])
    return net


def save_checkpoint(net: Network, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(net))
    return path


def load_checkpoint(path) -> Network:
    return loads(Path(path).read_bytes())

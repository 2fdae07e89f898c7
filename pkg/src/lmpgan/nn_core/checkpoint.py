"""Binary checkpoints.

Layout::

    b"GANLMP01"
    uint64 LE   header length in bytes
    header      UTF-8 JSON: network specs (canonical text), seed, iteration, extras
    tensors     for each network in header order, each array in layer order:
                uint64 LE ndim, ndim x uint64 LE dims, row-major float64 LE data
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .network import NetworkSpec, NetworkState, init_params

MAGIC = b"GANLMP01"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def dumps(networks: dict[str, NetworkState], seed: int, iteration: int, extra=None) -> bytes:
    header = {
        "format": 1,
        "networks": [[name, net.spec.text()] for name, net in networks.items()],
        "seed": int(seed),
        "iteration": int(iteration),
        "extra": extra or {},
    }
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U64.pack(len(text)))
    buf.write(text)
    for net in networks.values():
        for _, _, arr in net.arrays():
            buf.write(_U64.pack(arr.ndim))
            for d in arr.shape:
                buf.write(_U64.pack(d))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes):
    """Returns ``(networks, header)``."""
    try:
        return _loads(data)
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc


def _loads(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError(f"unknown checkpoint magic {data[:8]!r}")
    (hlen,) = _U64.unpack_from(data, 8)
    pos = 16 + hlen
    try:
        header = json.loads(data[16:pos].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    if header.get("format") != 1:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format')!r}")
    networks = {}
    for name, text in header["networks"]:
        net = init_params(NetworkSpec.parse(text), seed=0)
        for i, pname, arr in list(net.arrays()):
            (ndim,) = _U64.unpack_from(data, pos)
            pos += 8
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            if tuple(shape) != arr.shape:
                raise CheckpointError(f"{name} layer {i} {pname}: shape {shape} != {arr.shape}")
            n = int(np.prod(shape))
            vals = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
            pos += 8 * n
            net.params[i][pname] = vals.reshape(shape).astype(np.float64)
        networks[name] = net
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes in checkpoint")
    return networks, header


def save(path, networks, seed, iteration, extra=None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(networks, seed, iteration, extra))
    os.replace(tmp, path)


def load(path):
    return loads(Path(path).read_bytes())

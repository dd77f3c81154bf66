"""Binary checkpoint container.

Layout: ``b"AAPB1"`` magic, little-endian ``uint32`` header length, UTF-8 JSON
header, then every parameter as little-endian float64 in header order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .net import NetConfig, ScoreNet

__all__ = ["MAGIC", "FORMAT_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"AAPB1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: ScoreNet, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "net": net.config.to_dict(),
        "params": [[k, list(v.shape)] for k, v in net.params.items()],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    blob = net.flat_params().astype("<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC + struct.pack("<I", len(head)) + head + blob)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


def load_checkpoint(path):
    """Return ``(net, metadata)``; raises :class:`CheckpointError` on any mismatch."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    try:
        header = json.loads(data[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {header.get('format_version')} unsupported")
    off += hlen
    config = NetConfig(**header["net"])
    expected = sum(int(np.prod(shape)) for _, shape in header["params"])
    if len(data) - off != 8 * expected:
        raise CheckpointError(f"{path}: parameter blob size mismatch")
    flat = np.frombuffer(data[off:], dtype="<f8").astype(np.float64)
    params, pos = {}, 0
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape)
        pos += size
    try:
        net = ScoreNet(config, params=params)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return net, header["metadata"]

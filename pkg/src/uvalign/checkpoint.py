"""Binary checkpoint container for named float32 arrays plus a JSON config.

Layout, all little-endian:

    magic   4 bytes  b"AUVN"
    version u32      currently 1
    count   u32      number of entries
    entry   repeated:
        name_len u32
        name     UTF-8 bytes
        ndim     u32
        dims     ndim x u32
        payload  prod(dims) x f32

The training config rides along as a reserved entry named
``__config_json__`` whose payload is the UTF-8 JSON text widened to f32,
one byte value per element. Writes go through a temp file in the target
directory followed by an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"AUVN"
VERSION = 1
CONFIG_KEY = "__config_json__"

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError", "CONFIG_KEY"]


class CheckpointError(ValueError):
    """Raised when a checkpoint file fails structural validation."""


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    payload = np.asarray(arr, dtype="<f4")
    if payload.ndim and not payload.flags["C_CONTIGUOUS"]:
        payload = np.ascontiguousarray(payload)
    head = struct.pack("<I", len(nb)) + nb
    head += struct.pack("<I", payload.ndim)
    head += struct.pack(f"<{payload.ndim}I", *payload.shape) if payload.ndim else b""
    return head + payload.tobytes()


def save_checkpoint(path, arrays, config=None):
    """Write named arrays (dict or (name, array) pairs) and an optional config dict.

    The write is atomic: data lands in a temp file that is fsynced and then
    renamed over `path`.
    """
    items = list(arrays.items()) if isinstance(arrays, dict) else list(arrays)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise CheckpointError("save_checkpoint: duplicate entry names")
    if CONFIG_KEY in names:
        raise CheckpointError(f"save_checkpoint: entry name {CONFIG_KEY!r} is reserved")
    if config is not None:
        blob = json.dumps(config, sort_keys=True).encode("utf-8")
        items.append((CONFIG_KEY, np.frombuffer(blob, dtype=np.uint8).astype(np.float32)))

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(items))
    for name, arr in items:
        buf += _pack_entry(name, np.asarray(arr))

    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(buf))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, config dict or None).

    Validates magic, version, and that every entry's payload fits inside the
    file before allocating it.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    arrays = {}
    config = None
    for _ in range(count):
        if off + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated at entry header")
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + name_len + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated entry name")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        if ndim > 8:
            raise CheckpointError(f"{path}: entry {name!r} claims {ndim} dims")
        if off + 4 * ndim > len(blob):
            raise CheckpointError(f"{path}: truncated dims for {name!r}")
        dims = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        n_elem = 1
        for d in dims:
            n_elem *= d
        nbytes = 4 * n_elem
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n_elem, offset=off).reshape(dims).copy()
        off += nbytes
        if name == CONFIG_KEY:
            config = json.loads(arr.astype(np.uint8).tobytes().decode("utf-8"))
        else:
            arrays[name] = arr
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return arrays, config

"""Binary checkpoint I/O for model state dicts.

Layout: magic b"TTAN", u32 format version, then one record per array:
u32 name length, UTF-8 name, u32 rank, rank u64 dims, float32 payload.
All integers and floats little-endian. Arrays round-trip as float32.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TTAN"
VERSION = 1


def save_state(path, state: dict):
    """Write ``state`` (name -> array) in a stable, sorted order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype=np.float32)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_state(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = 8
    state = {}
    while off < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        state[name] = np.array(arr, dtype=np.float32)
    return state


def save_module(path, module):
    save_state(path, module.state_dict())


def load_module(path, module):
    module.load_state_dict(load_state(path))
    return module

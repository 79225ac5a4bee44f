"""Versioned binary checkpoint container.

Layout: magic ``DAMCKPT1``, u32 version, u32-length utf-8 key=value config
block, u32 tensor count, then per tensor: u16 name length + name, u8 dtype
string length + numpy dtype string, u8 ndim, u32 dims, u64 payload size and
raw little-endian bytes. Round-trips bit-exactly.
"""

import struct

import numpy as np

MAGIC = b"DAMCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config, tensors):
    """config: dict[str, str]; tensors: dict[str, np.ndarray]."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = "".join(f"{k}={v}\n" for k, v in sorted(config.items())).encode("utf-8")
    blob += struct.pack("<I", len(cfg)) + cfg
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # would promote 0-d to 1-d
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        dt = arr.dtype.str.encode("ascii")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", len(dt)) + dt
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload = arr.tobytes()
        blob += struct.pack("<Q", len(payload)) + payload
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    pos = 8
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    config = {}
    for line in blob[pos : pos + cfg_len].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        config[key] = value
    pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (dt_len,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dtype = np.dtype(blob[pos : pos + dt_len].decode("ascii"))
        pos += dt_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        tensors[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=pos).reshape(shape).copy()
        pos += nbytes
    return config, tensors

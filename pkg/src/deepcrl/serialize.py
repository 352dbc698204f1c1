"""Little-endian binary container for named arrays.

Layout: magic "DCRL", format version u32, config blob (u32 length + bytes),
entry count u32, then per entry: name length u32, name bytes, dtype code u8,
rank u32, dims u32 each, raw payload; then an rng blob (u32 length + bytes)
and a CRC32 trailer over everything before it.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np

MAGIC = b"DCRL"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(IOError):
    pass


def _pack_entries(buf: io.BytesIO, arrays: dict[str, np.ndarray]):
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_FOR:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", _CODE_FOR[arr.dtype]))
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def dump(path: str, arrays: dict[str, np.ndarray], config_blob: bytes = b"",
         rng_blob: bytes = b""):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(config_blob)))
    buf.write(config_blob)
    _pack_entries(buf, arrays)
    buf.write(struct.pack("<I", len(rng_blob)))
    buf.write(rng_blob)
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", crc))
    import os
    os.replace(tmp, path)


def load(path: str):
    """Returns (arrays, config_blob, rng_blob); validates CRC before parsing."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    payload, trailer = raw[:-4], raw[-4:]
    (crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"checksum mismatch (corrupt or truncated): {path}")
    buf = io.BytesIO(payload)
    if buf.read(4) != MAGIC:
        raise CheckpointError(f"bad magic; not a DCRL file (or wrong endianness): {path}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} in {path}")
    (clen,) = struct.unpack("<I", buf.read(4))
    config_blob = buf.read(clen)
    (n,) = struct.unpack("<I", buf.read(4))
    arrays = {}
    for _ in range(n):
        (nlen,) = struct.unpack("<I", buf.read(4))
        name = buf.read(nlen).decode("utf-8")
        (code,) = struct.unpack("<B", buf.read(1))
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code} for entry {name}")
        dt = _DTYPE_CODES[code]
        (rank,) = struct.unpack("<I", buf.read(4))
        dims = struct.unpack(f"<{rank}I", buf.read(4 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        data = buf.read(count * dt.itemsize)
        arrays[name] = np.frombuffer(data, dtype=dt).reshape(dims).copy()
    (rlen,) = struct.unpack("<I", buf.read(4))
    rng_blob = buf.read(rlen)
    return arrays, config_blob, rng_blob

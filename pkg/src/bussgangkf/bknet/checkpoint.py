"""Bit-exact checkpoint format for gain-network parameters.

Layout: magic "BKNET1\\0"; u64 parameter count; per parameter a manifest
entry (u64 name length, UTF-8 name, u64 rank, u64 dims); then all values as
row-major float64 little-endian in manifest order; then a u64 FNV-1a checksum
of the value bytes. All integers are little-endian.
"""

import struct
from pathlib import Path

import numpy as np

from ..datagen import fnv1a64
from ..errors import FormatError

MAGIC = b"BKNET1\x00"


def save_checkpoint(params, path):
    """Write the parameter dict; iteration order is sorted by name."""
    names = sorted(params)
    manifest = bytearray()
    manifest += struct.pack("<Q", len(names))
    values = bytearray()
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        nb = name.encode("utf-8")
        manifest += struct.pack("<Q", len(nb)) + nb
        manifest += struct.pack("<Q", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        values += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(manifest)
        fh.write(values)
        fh.write(struct.pack("<Q", fnv1a64(bytes(values))))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<Q", raw, off)
        off += 8
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<Q", raw, off)
        off += 8
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        entries.append((name, dims))
    nbytes = sum(8 * int(np.prod(d, dtype=np.int64)) for _, d in entries)
    values = raw[off : off + nbytes]
    if len(values) != nbytes or len(raw) < off + nbytes + 8:
        raise FormatError(f"{path}: truncated checkpoint")
    (checksum,) = struct.unpack_from("<Q", raw, off + nbytes)
    if fnv1a64(values) != checksum:
        raise FormatError(f"{path}: checksum mismatch")
    params = {}
    voff = 0
    for name, dims in entries:
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(values[voff : voff + 8 * size], dtype="<f8")
        params[name] = arr.reshape(dims).copy()
        voff += 8 * size
    return params

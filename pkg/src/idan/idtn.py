"""IDTN raw tensor files and the named-parameter checkpoint container.

IDTN layout (all little-endian)::

    b"IDTN" | u16 version (=1) | u16 rank | rank x u32 dims | float32 data (row-major)

Checkpoint layout::

    u32 count | count x (u16 name_len | utf-8 name | IDTN blob)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IDTN"
VERSION = 1


class IDTNError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode(array) -> bytes:
    a = np.array(array, dtype="<f4", order="C")  # keeps rank 0, unlike ascontiguousarray
    head = MAGIC + struct.pack("<HH", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def decode(buf: bytes, offset: int = 0) -> tuple:
    """Parse one IDTN blob starting at ``offset``; return (array, next_offset)."""
    if len(buf) < offset + 8:
        raise IDTNError("truncated header", len(buf))
    if buf[offset:offset + 4] != MAGIC:
        raise IDTNError(f"bad magic {bytes(buf[offset:offset + 4])!r}", offset)
    version, rank = struct.unpack_from("<HH", buf, offset + 4)
    if version != VERSION:
        raise IDTNError(f"unsupported version {version}", offset + 4)
    pos = offset + 8
    if len(buf) < pos + 4 * rank:
        raise IDTNError("truncated dimension list", len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    end = pos + 4 * count
    if len(buf) < end:
        raise IDTNError(f"truncated data: need {4 * count} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(dims)
    return data, end


def write_idtn(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_idtn(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    data, end = decode(buf)
    if end != len(buf):
        raise IDTNError(f"{len(buf) - end} trailing bytes", end)
    return data


def save_checkpoint(path, params: dict) -> None:
    parts = [struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = value.data if hasattr(value, "data") and not isinstance(value, np.ndarray) else value
        parts.append(struct.pack("<H", len(raw)) + raw + encode(arr))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise IDTNError("truncated checkpoint header", len(buf))
    (count,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    out = {}
    for _ in range(count):
        if len(buf) < pos + 2:
            raise IDTNError("truncated entry name length", len(buf))
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) < pos + n:
            raise IDTNError("truncated entry name", len(buf))
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        if name in out:
            raise IDTNError(f"duplicate entry {name!r}", pos)
        out[name], pos = decode(buf, pos)
    if pos != len(buf):
        raise IDTNError(f"{len(buf) - pos} trailing bytes", pos)
    return out

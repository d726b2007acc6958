"""HASSPRM tensor container.

Layout, all integers little-endian::

    b"HASSPRM"  u16 version  u32 count
    count x ( u16 name_len, utf-8 name, u8 rank, rank x u32 extent,
              float32 payload in row-major order )

Values are narrowed to float32 on write and widened back to float64 on read.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HASSPRM"
VERSION = 1
MAX_RANK = 32


class ParamFormatError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr))
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor {name} has too many axes")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        with np.errstate(over="ignore"):
            f32 = np.ascontiguousarray(arr, dtype="<f4")
        if not np.all(np.isfinite(f32)):
            raise ValueError(f"tensor {name} has values that are not finite in float32")
        out.append(f32.tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise ParamFormatError("bad magic: not a HASSPRM file")
    pos = len(MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ParamFormatError(f"truncated while reading {what} at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise ParamFormatError(f"unsupported HASSPRM version {version}")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"name length of tensor {i}"))
        try:
            name = take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParamFormatError(f"tensor {i} name is not utf-8") from exc
        if name in tensors:
            raise ParamFormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        if rank > MAX_RANK:
            raise ParamFormatError(f"tensor {name!r} has rank {rank} (at most {MAX_RANK} supported)")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"extents of {name!r}"))
        if 0 in shape:
            raise ParamFormatError(f"tensor {name!r} has a zero extent {shape}")
        size = math.prod(shape)
        if 4 * size > len(buf) - pos:
            raise ParamFormatError(f"truncated while reading payload of {name!r} at byte {pos}")
        values = np.frombuffer(take(4 * size, f"payload of {name!r}"), dtype="<f4")
        if not np.all(np.isfinite(values)):
            raise ParamFormatError(f"tensor {name!r} contains non-finite values")
        tensors[name] = values.astype(np.float64).reshape(shape)
    if pos != len(buf):
        raise ParamFormatError(f"{len(buf) - pos} trailing bytes after {count} tensors")
    return tensors


def save(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

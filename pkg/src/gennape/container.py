"""Binary tensor container shared by every persisted model.

Layout (little-endian)::

    b"GNPE" | version u32 | count u32 |
    count x (name_len u32, name utf-8, rank u32, dims u64 x rank, f64 data) |
    crc32 u32 over all preceding bytes

Non-tensor metadata rides along as a JSON document stored in the reserved
``__meta__`` tensor (one byte value per element).
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ChecksumError, ParseError, VersionMismatch

MAGIC = b"GNPE"
VERSION = 1
META_KEY = "__meta__"


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    items = dict(tensors)
    if meta is not None:
        raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        items[META_KEY] = np.frombuffer(raw, dtype=np.uint8).astype(float)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any] | None]:
    if len(data) < 16:
        raise ParseError("container too short", len(data))
    if data[:4] != MAGIC:
        raise ParseError("bad magic bytes", 0)
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("container checksum mismatch")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise VersionMismatch(f"container version {version}, this build reads version {VERSION}")
    (count,) = struct.unpack_from("<I", body, 8)
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", body, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(dims)
            off += 8 * size
            out[name] = arr.astype(float)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"truncated or malformed tensor record: {exc}", off) from None
    if off != len(body):
        raise ParseError("trailing bytes after last tensor", off)
    meta = None
    if META_KEY in out:
        meta = json.loads(out.pop(META_KEY).astype(np.uint8).tobytes().decode("utf-8"))
    return out, meta


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any] | None]:
    return loads(Path(path).read_bytes())


def with_prefix(prefix: str, tensors: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in tensors.items()}


def section(prefix: str, tensors: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    lead = prefix + "/"
    return {k[len(lead) :]: v for k, v in tensors.items() if k.startswith(lead)}

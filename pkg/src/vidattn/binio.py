"""Named-tensor binary container shared by checkpoints and metric reports.

Layout (little-endian)::

    magic  b"ATVC"
    u32    version (1)
    u32    tensor count
    per tensor:
        u32 name length, UTF-8 name
        u32 rank, u32 dims[rank]
        f32 data (row-major)
    u32    CRC-32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from typing import Dict, Mapping

import numpy as np

MAGIC = b"ATVC"
VERSION = 1


class FormatError(ValueError):
    """Base class for malformed binary files."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class IntegrityError(FormatError):
    """CRC mismatch."""


class UnsupportedVersionError(FormatError):
    pass


def encode_named_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"file truncated: needed {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_named_tensors(buf: bytes) -> Dict[str, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < 16:
        raise TruncatedError("file truncated: header incomplete")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    rd = _Reader(body)
    rd.take(4)
    version = rd.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    count = rd.u32()
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = rd.take(rd.u32()).decode("utf-8")
        rank = rd.u32()
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(rd.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    if rd.pos != len(body):
        raise FormatError(f"{len(body) - rd.pos} unexpected trailing bytes")
    if zlib.crc32(body) != crc:
        raise IntegrityError("CRC-32 mismatch: file is corrupted")
    return out


def write_named_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_named_tensors(tensors))


def read_named_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_named_tensors(fh.read())

"""MMV1 dataset container and PGM previews.

MMV1 layout (little-endian)::

    magic "MMV1" | u32 version=1 | u32 sequences | u32 frames | u32 height
    | u32 width | u8 mode | u64 seed | u8 label * sequences
    | u8 pixels (sequence, frame, row, col) | u32 CRC-32 of all preceding bytes
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..binio import BadMagicError, FormatError, IntegrityError, TruncatedError, UnsupportedVersionError
from .moving import MODES, VideoDataset

MAGIC = b"MMV1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIBQ")


def encode_container(ds: VideoDataset) -> bytes:
    s, t, h, w = ds.frames.shape
    head = _HEADER.pack(MAGIC, VERSION, s, t, h, w, MODES.index(ds.mode), ds.seed)
    body = head + np.ascontiguousarray(ds.labels, dtype=np.uint8).tobytes() \
        + np.ascontiguousarray(ds.frames, dtype=np.uint8).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_header(buf: bytes) -> dict:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError("container truncated inside the header")
    _, version, s, t, h, w, mode, seed = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if mode >= len(MODES):
        raise FormatError(f"unknown mode code {mode}")
    return {"sequences": s, "frames": t, "height": h, "width": w, "mode": MODES[mode], "seed": seed}


def decode_container(buf: bytes) -> VideoDataset:
    hdr = decode_header(buf)
    s, t, h, w = hdr["sequences"], hdr["frames"], hdr["height"], hdr["width"]
    need = _HEADER.size + s + s * t * h * w + 4
    if len(buf) < need:
        raise TruncatedError(f"container truncated: expected {need} bytes, found {len(buf)}")
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} unexpected trailing bytes")
    body = buf[:-4]
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("CRC-32 mismatch: container is corrupted")
    off = _HEADER.size
    labels = np.frombuffer(buf, dtype=np.uint8, count=s, offset=off).copy()
    frames = np.frombuffer(buf, dtype=np.uint8, count=s * t * h * w, offset=off + s).reshape(s, t, h, w).copy()
    return VideoDataset(frames, labels, hdr["mode"], hdr["seed"])


def write_container(ds: VideoDataset, path) -> None:
    Path(path).write_bytes(encode_container(ds))


def read_container(path) -> VideoDataset:
    return decode_container(Path(path).read_bytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return decode_header(fh.read(_HEADER.size))


# ---------------------------------------------------------------- PGM

def to_u8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, image) -> None:
    img = to_u8(image)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedError("PGM header truncated")
        fields.append(buf[start:pos])
    if fields[0] != b"P5":
        raise BadMagicError("not a binary PGM (P5) file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    data = buf[pos + 1:]  # exactly one whitespace byte ends the header
    if len(data) < w * h:
        raise TruncatedError("PGM pixel data truncated")
    return np.frombuffer(data[:w * h], dtype=np.uint8).reshape(h, w)

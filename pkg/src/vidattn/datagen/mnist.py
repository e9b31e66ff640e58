"""MNIST IDX reading and writing."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class MnistSet:
    """Images [N, 28, 28] as float32 in [0, 1] and labels [N] in 0..9."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def by_digit(self) -> List[np.ndarray]:
        return [self.images[self.labels == d] for d in range(10)]


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    data = path.read_bytes()
    return gzip.decompress(data) if path.suffix == ".gz" else data


def parse_idx(buf: bytes, expect_magic: int) -> np.ndarray:
    if len(buf) < 4:
        raise IdxTruncatedError("IDX file truncated inside the magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expect_magic:
        raise IdxMagicError(f"bad IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise IdxTruncatedError("IDX file truncated inside the header")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    need = int(np.prod(dims))
    if len(buf) - head < need:
        raise IdxTruncatedError(f"IDX payload truncated: header promises {need} bytes, found {len(buf) - head}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=head).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> MnistSet:
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return MnistSet(images.astype(np.float32) / 255.0, labels.astype(np.int64))


def load_mnist_dir(directory, split: str = "train") -> MnistSet:
    names = TRAIN_FILES if split == "train" else TEST_FILES
    d = Path(directory)
    return load_mnist_idx(d / names[0], d / names[1])


def encode_idx(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + arr.tobytes()


def write_mnist_dir(directory, split: str, images_u8: np.ndarray, labels: np.ndarray) -> Tuple[Path, Path]:
    names = TRAIN_FILES if split == "train" else TEST_FILES
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ip, lp = d / names[0], d / names[1]
    ip.write_bytes(encode_idx(images_u8))
    lp.write_bytes(encode_idx(labels))
    return ip, lp


def bundled_dir() -> Path:
    """Directory of the 10,000-digit MNIST subset shipped with the package (gzipped IDX).

    Train holds 9,000 digits, test the last 100 exemplars of every class.
    """
    return Path(__file__).resolve().parent.parent / "data" / "mnist"


def export_bundled_subset(directory) -> dict:
    """Write the bundled subset as uncompressed IDX files under ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    counts = {}
    for split, names in (("train", TRAIN_FILES), ("test", TEST_FILES)):
        for name in names:
            (d / name).write_bytes(_read_bytes(bundled_dir() / name))
        counts[split] = len(load_mnist_dir(d, split))
    counts["dir"] = os.fspath(directory)
    return counts

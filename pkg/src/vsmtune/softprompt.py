"""Soft-prompt matrices (virtual-token embeddings) and their binary file format.

A soft prompt is a T x dim matrix of embedding values, stored as float32 so
the on-disk format round-trips losslessly. File layout:

    bytes 0..7    magic  b"SOFTPMT1"
    bytes 8..11   format version, little-endian uint32 (currently 1)
    bytes 12..15  reserved, zero
    bytes 16..23  T, little-endian uint64
    bytes 24..31  dim, little-endian uint64
    bytes 32..    T*dim little-endian IEEE-754 float32, row-major
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SOFTPMT1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI4x")
_SHAPE = struct.Struct("<QQ")
HEADER_SIZE = _HEADER.size + _SHAPE.size  # 32 bytes


class ShapeMismatch(ValueError):
    """Operands or seeds do not share the required (T, dim) shape."""


class FormatError(ValueError):
    """A soft-prompt file has a bad magic, bad version, or wrong length."""


@dataclass(frozen=True, eq=False)
class SoftPrompt:
    """Immutable T x dim float32 matrix of virtual-token embeddings.

    T = 0 is the degenerate prompt-free case used by the naive baseline;
    the optimizer itself only works with T >= 1.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeMismatch(f"soft prompt must be 2-D (T, dim), got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ShapeMismatch(f"embedding dim must be >= 1, got {arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("soft prompt entries must be finite")
        if arr is self.values or arr.base is not None:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def token_count(self) -> int:
        return self.values.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, embed_dim: int) -> "SoftPrompt":
        """The zero-token prompt (naive baseline: no virtual tokens sent)."""
        return cls(np.zeros((0, int(embed_dim)), dtype=np.float32))

    def same_values(self, other: "SoftPrompt") -> bool:
        return self.values.shape == other.values.shape and np.array_equal(self.values, other.values)

    def to_bytes(self) -> bytes:
        t, dim = self.values.shape
        return (
            _HEADER.pack(MAGIC, FORMAT_VERSION)
            + _SHAPE.pack(t, dim)
            + np.ascontiguousarray(self.values, dtype="<f4").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "SoftPrompt":
        if len(data) < HEADER_SIZE:
            raise FormatError(f"file too short: {len(data)} bytes, header needs {HEADER_SIZE}")
        magic, version = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        t, dim = _SHAPE.unpack_from(data, _HEADER.size)
        expected = HEADER_SIZE + t * dim * 4
        if len(data) != expected:
            kind = "truncated" if len(data) < expected else "trailing data in"
            raise FormatError(f"{kind} file: got {len(data)} bytes, expected {expected} for {t}x{dim}")
        if dim < 1:
            raise FormatError(f"embedding dim must be >= 1, got {dim}")
        flat = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
        try:
            return cls(flat.reshape(t, dim))
        except ValueError as exc:
            raise FormatError(str(exc)) from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "SoftPrompt":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        """SHA-256 of the serialized form; equals the hash of a saved file."""
        return hashlib.sha256(self.to_bytes()).hexdigest()

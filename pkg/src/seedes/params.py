"""Layered float32 parameter vectors and their on-disk container.

Snapshot container (all integers little-endian)::

    magic      8 bytes   b"ESPARAM1"
    n_layers   u32
    per layer:
      name_len u16, name (utf-8)
      ndim     u8,  dims u64 * ndim
      data     float32 little-endian, C order

The parameter digest is the SHA-256 of exactly these bytes, so a snapshot
file's hash is the digest of the parameters it holds.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"ESPARAM1"
_F32LE = np.dtype("<f4")


class SnapshotError(ValueError):
    pass


class ParameterSet:
    """Ordered named float32 layers. Layer order and shapes never change."""

    def __init__(self, layers, version: int = 0):
        self._names: list[str] = []
        self._arrays: list[np.ndarray] = []
        for name, arr in layers:
            if name in self._names:
                raise ValueError(f"duplicate layer name {name!r}")
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            if arr.size == 0:
                raise ValueError(f"layer {name!r} is empty")
            self._names.append(str(name))
            self._arrays.append(arr)
        if not self._names:
            raise ValueError("a ParameterSet needs at least one layer")
        self.version = version

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(zip(self._names, self._arrays))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[self._names.index(name)]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self._arrays]

    @property
    def size(self) -> int:
        return sum(a.size for a in self._arrays)

    @property
    def largest_layer_size(self) -> int:
        return max(a.size for a in self._arrays)

    def offsets(self) -> list[int]:
        """Stream position at which each layer's noise starts."""
        out, pos = [], 0
        for a in self._arrays:
            out.append(pos)
            pos += a.size
        return out

    def flat_views(self) -> list[np.ndarray]:
        return [a.reshape(-1) for a in self._arrays]

    def copy(self) -> "ParameterSet":
        return ParameterSet([(n, a.copy()) for n, a in self], version=self.version)

    def assign(self, other: "ParameterSet") -> None:
        """Overwrite values in place from ``other`` (same layout required)."""
        self.check_compatible(other)
        for dst, src in zip(self._arrays, other._arrays):
            dst[...] = src
        self.version = other.version

    def check_compatible(self, other: "ParameterSet") -> None:
        if self.names != other.names or self.shapes != other.shapes:
            raise ValueError("parameter layouts differ")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self._arrays])

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self._arrays)

    def _header(self, name: str, arr: np.ndarray) -> bytes:
        raw = name.encode("utf-8")
        return (struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
                + struct.pack(f"<{arr.ndim}Q", *arr.shape))

    def _chunks(self):
        yield MAGIC + struct.pack("<I", len(self._names))
        for name, arr in self:
            yield self._header(name, arr)
            data = arr if arr.dtype == _F32LE else arr.astype(_F32LE)
            yield memoryview(data).cast("B")

    def digest(self) -> str:
        h = hashlib.sha256()
        for chunk in self._chunks():
            h.update(chunk)
        return h.hexdigest()

    def to_bytes(self) -> bytes:
        return b"".join(bytes(c) for c in self._chunks())

    def save(self, path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            for chunk in self._chunks():
                fh.write(chunk)
        tmp.replace(path)
        return self.digest()

    @classmethod
    def from_bytes(cls, data: bytes, version: int = 0) -> "ParameterSet":
        return cls.read(io.BytesIO(data), version=version)

    @classmethod
    def load(cls, path, version: int = 0) -> "ParameterSet":
        with open(path, "rb") as fh:
            try:
                return cls.read(fh, version=version)
            except SnapshotError as exc:
                raise SnapshotError(f"{path}: {exc}") from None

    @classmethod
    def read(cls, fh, version: int = 0) -> "ParameterSet":
        def take(n):
            buf = fh.read(n)
            if len(buf) != n:
                raise SnapshotError("truncated snapshot")
            return buf

        if take(8) != MAGIC:
            raise SnapshotError("bad magic; not a parameter snapshot")
        (count,) = struct.unpack("<I", take(4))
        layers = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = take(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(take(4 * n), dtype=_F32LE).astype(np.float32).reshape(shape)
            layers.append((name, arr))
        if fh.read(1):
            raise SnapshotError("trailing bytes after last layer")
        return cls(layers, version=version)


def split_vector(vec: np.ndarray, sizes: list[int], prefix: str = "layer") -> ParameterSet:
    """Cut a flat vector into consecutive 1-D layers named ``prefix0, prefix1, ...``."""
    if sum(sizes) != vec.size:
        raise ValueError("layer sizes do not add up to the vector length")
    layers, pos = [], 0
    for i, n in enumerate(sizes):
        layers.append((f"{prefix}{i}", vec[pos:pos + n].copy()))
        pos += n
    return ParameterSet(layers)

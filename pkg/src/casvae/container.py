"""CVT1 binary container: named, typed tensor sections plus a text meta block.

Layout (little-endian)::

    b"CVT1" | version u32 | section_count u32 |
    per section: name_len u32 | name utf-8 | ndim u32 | dims u32 * ndim |
                 dtype u8 (0 = float32, 1 = uint8) | payload
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import BadMagicError, ContainerError, TruncatedError, VersionMismatchError

MAGIC = b"CVT1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def encode_meta(meta: Mapping[str, object]) -> np.ndarray:
    lines = []
    for key, value in meta.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise ContainerError(f"meta entry {key!r} cannot be encoded as key=value")
        lines.append(f"{key}={text}")
    return np.frombuffer("\n".join(lines).encode("utf-8"), dtype=np.uint8).copy()


def decode_meta(payload: np.ndarray) -> dict[str, str]:
    text = payload.tobytes().decode("utf-8")
    out = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            out[key] = value
    return out


def header_size(sections: Mapping[str, np.ndarray]) -> int:
    size = 12
    for name, arr in sections.items():
        size += 4 + len(name.encode("utf-8")) + 4 + 4 * arr.ndim + 1
    return size


def write_sections(path: str | Path, sections: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, arr in sections.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise ContainerError(f"section {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(struct.pack("<B", _CODES[arr.dtype]))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"file truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_sections(path: str | Path, skip: Iterable[str] = ()) -> dict[str, np.ndarray]:
    """Read every section; names in ``skip`` are stepped over, never decoded."""
    skip = set(skip)
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a CVT1 container")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{path}: container version {version}, expected {VERSION}")
    count = r.u32()
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        dims = tuple(r.u32() for _ in range(ndim))
        code = r.take(1)[0]
        if code not in _DTYPES:
            raise ContainerError(f"section {name!r}: unknown dtype code {code}")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        payload = r.take(nbytes)
        if name in skip:
            continue
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if r.pos != len(r.data):
        raise ContainerError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return out

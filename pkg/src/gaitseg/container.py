"""Versioned binary container shared by checkpoints and windowed datasets.

Layout (all integers little-endian)::

    magic        8 bytes
    version      u32
    header_len   u32, then header_len bytes of UTF-8 ``key=value`` lines (sorted)
    n_arrays     u32
    per array:   name_len u16, name, dtype code u8, ndim u8, dims u64 * ndim, raw data
    sha256       32 bytes over everything before it
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

FORMAT_VERSION = 1

_DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("<i8"),
    3: np.dtype("<i4"),
    4: np.dtype("i1"),
    5: np.dtype("u1"),
}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class ContainerError(ValueError):
    """Corrupt, truncated or incompatible container file."""


def encode_header(header: dict[str, str]) -> bytes:
    for k, v in header.items():
        if "\n" in k or "=" in k or "\n" in str(v):
            raise ValueError(f"header entry {k!r} not representable as key=value text")
    return "".join(f"{k}={header[k]}\n" for k in sorted(header)).encode()


def decode_header(raw: bytes) -> dict[str, str]:
    out = {}
    for line in raw.decode().splitlines():
        if line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def write_container(path: str | Path, magic: bytes, header: dict[str, str],
                    arrays: Iterable[tuple[str, np.ndarray]]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    arrays = list(arrays)
    hbytes = encode_header(header)
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|", "=", "<") else arr.dtype
        dt = np.dtype(dt.str.replace("=", "<"))
        if dt not in _CODES:
            raise ValueError(f"array {name!r}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        parts.append(struct.pack("<HBB", len(nb), _CODES[dt], arr.ndim) + nb)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_container(path: str | Path, magic: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if len(blob) < 8 + 8 + 32:
        raise ContainerError(f"{path}: file truncated ({len(blob)} bytes)")
    if blob[:8] != magic:
        raise ContainerError(f"{path}: bad magic {blob[:8]!r}, expected {magic!r}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError(f"{path}: checksum mismatch (file truncated or corrupted)")
    version, hlen = struct.unpack_from("<II", body, 8)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    pos = 16
    header = decode_header(body[pos:pos + hlen])
    pos += hlen
    (n_arrays,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays = {}
    for _ in range(n_arrays):
        nlen, code, ndim = struct.unpack_from("<HBB", body, pos)
        pos += 4
        name = body[pos:pos + nlen].decode()
        pos += nlen
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        if code not in _DTYPES:
            raise ContainerError(f"{path}: array {name!r} has unknown dtype code {code}")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(body):
        raise ContainerError(f"{path}: {len(body) - pos} trailing bytes after last array")
    return header, arrays

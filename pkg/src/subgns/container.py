"""Chunked little-endian binary container used for every artifact file.

Layout::

    b"SGNS"                magic
    u32                    format version
    u64 + bytes            JSON metadata (UTF-8)
    (u64 + bytes) * k      raw float64 blocks, row-major, little-endian
    u32                    CRC32 of everything between the version and the CRC

Block names, shapes and dtypes are listed in the metadata under ``"blocks"``
so a reader never has to guess.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SGNS"
VERSION = 1

_LE_F8 = np.dtype("<f8")
_LE_I8 = np.dtype("<i8")
_DTYPES = {"f8": _LE_F8, "i8": _LE_I8}


class FormatError(ValueError):
    """Raised for any malformed, truncated or corrupted container file."""


def _as_le(array: np.ndarray) -> tuple[str, np.ndarray]:
    array = np.asarray(array)
    if array.dtype.kind in "iub":
        return "i8", np.ascontiguousarray(array, dtype=_LE_I8)
    return "f8", np.ascontiguousarray(array, dtype=_LE_F8)


def encode(meta: dict, blocks: dict[str, np.ndarray]) -> bytes:
    """Serialize metadata and named arrays into container bytes."""
    meta = dict(meta)
    table = []
    payloads = []
    for name, array in blocks.items():
        code, le = _as_le(array)
        table.append({"name": name, "shape": list(le.shape), "dtype": code})
        payloads.append(le.tobytes(order="C"))
    meta["blocks"] = table
    js = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = bytearray()
    body += struct.pack("<Q", len(js))
    body += js
    for raw in payloads:
        body += struct.pack("<Q", len(raw))
        body += raw
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    return MAGIC + struct.pack("<I", VERSION) + bytes(body) + struct.pack("<I", crc)


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse container bytes; raise :class:`FormatError` on any defect."""
    if len(data) < 4 + 4 + 8 + 4:
        raise FormatError("file truncated: shorter than the fixed header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version} (reader is {VERSION})")
    body = data[8:-4]
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError("CRC32 mismatch: file is corrupted or truncated")

    off = 0
    (jlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    if off + jlen > len(body):
        raise FormatError("metadata block runs past end of file")
    try:
        meta = json.loads(body[off : off + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}") from exc
    off += jlen

    blocks = {}
    for entry in meta.get("blocks", []):
        if off + 8 > len(body):
            raise FormatError(f"block {entry['name']!r} missing")
        (blen,) = struct.unpack_from("<Q", body, off)
        off += 8
        dtype = _DTYPES.get(entry.get("dtype", "f8"))
        if dtype is None:
            raise FormatError(f"unknown dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if blen != expected or off + blen > len(body):
            raise FormatError(f"block {entry['name']!r} has wrong length")
        arr = np.frombuffer(body, dtype=dtype, count=expected // dtype.itemsize, offset=off)
        blocks[entry["name"]] = arr.reshape(shape).astype(dtype.newbyteorder("="))
        off += blen
    if off != len(body):
        raise FormatError("trailing bytes after last block")
    return meta, blocks


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temporary sibling and rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write(path, meta: dict, blocks: dict[str, np.ndarray]) -> str:
    """Atomically write a container file and return its SHA-256 fingerprint."""
    data = encode(meta, blocks)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_fingerprint(*arrays: np.ndarray) -> str:
    """SHA-256 over the little-endian bytes and shapes of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        _, le = _as_le(a)
        h.update(str(le.shape).encode())
        h.update(le.tobytes())
    return h.hexdigest()

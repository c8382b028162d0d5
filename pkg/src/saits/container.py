"""Versioned binary container for named float64 arrays.

Layout::

    b"SAITSBIN"                  8-byte magic
    uint64 LE                    header length in bytes
    header (UTF-8 JSON)          {"format_version", "kind", "meta", "manifest"}
    payload                      little-endian float64 arrays, back to back
    sha256 digest (32 bytes)     over every preceding byte

Each manifest entry is ``{"name", "shape", "offset"}`` with ``offset``
counted in bytes from the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SAITSBIN"
FORMAT_VERSION = 1
_DIGEST = 32


def write_container(path, kind, arrays, meta=None):
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        raw = data.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "manifest": manifest},
        sort_keys=True,
    ).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())
    os.replace(tmp, path)


def read_container(path, kind=None):
    """Return ``(header, arrays)``; raises :class:`CheckpointError` on any defect."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + _DIGEST or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a container file")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupted)")
    (hlen,) = struct.unpack("<Q", body[8:16])
    try:
        header = json.loads(body[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} unsupported (want {FORMAT_VERSION})")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} file, found {header.get('kind')!r}")
    payload = body[16 + hlen:]
    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']!r} extends past payload")
        arrays[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).astype(np.float64)
    return header, arrays

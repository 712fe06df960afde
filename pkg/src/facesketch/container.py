"""Single-file parameter container: a JSON manifest plus raw named blocks.

Layout::

    MAGIC (8 bytes) | manifest length (uint64 LE) | manifest JSON | data

The manifest holds free-form ``meta``, one record per block (name, dtype,
shape, offset, nbytes) and a sha256 of the data section.  Writing is
deterministic, so save -> load -> save reproduces identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile

MAGIC = b"FSKCONT1"


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def encode_container(meta, blocks):
    records, chunks, offset = [], [], 0
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        records.append({
            "name": name, "dtype": arr.dtype.newbyteorder("<").str,
            "shape": list(arr.shape), "offset": offset, "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    manifest = _canonical_json({
        "meta": meta, "blocks": records, "sha256": hashlib.sha256(payload).hexdigest(),
    })
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + payload


def decode_container(raw):
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CorruptFile("not a parameter container (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + n])
    except ValueError as exc:
        raise CorruptFile(f"unreadable manifest: {exc}") from None
    payload = raw[16 + n:]
    if hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise CorruptFile("data section checksum mismatch")
    blocks = {}
    for rec in manifest["blocks"]:
        start, stop = rec["offset"], rec["offset"] + rec["nbytes"]
        arr = np.frombuffer(payload[start:stop], dtype=np.dtype(rec["dtype"]))
        blocks[rec["name"]] = arr.reshape(rec["shape"]).copy()
    return manifest["meta"], blocks


def write_container(path, meta, blocks):
    Path(path).write_bytes(encode_container(meta, blocks))


def read_container(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    return decode_container(path.read_bytes())

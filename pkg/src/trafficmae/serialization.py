"""Self-describing binary container for models, entity matrices and pipelines.

Layout::

    magic      8 bytes   b"TRFMAE\\x00\\x01"
    version    uint32 LE
    length     uint64 LE  byte length of the manifest
    manifest   UTF-8 JSON (sorted keys)
    digest     32 bytes   SHA-256 of the manifest bytes
    payload    concatenated little-endian float64 arrays

The manifest lists every array's name, shape, dtype, byte order, offset
into the payload and SHA-256, plus free-form JSON metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CorruptionError, VersionError

MAGIC = b"TRFMAE\x00\x01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQ")


def write_container(path, arrays, meta=None, version=FORMAT_VERSION):
    """Write ``arrays`` (name -> float array) and JSON-able ``meta`` to ``path``."""
    entries, blobs, offset = [], [], 0
    for name, value in arrays.items():
        arr = np.asarray(value, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        blob = arr.tobytes()
        entries.append({
            "name": name, "shape": list(arr.shape), "dtype": "float64", "byte_order": "little",
            "offset": offset, "nbytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest(),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = {"format_version": version, "arrays": entries, "meta": meta or {}}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(version, len(text)))
        fh.write(text)
        fh.write(hashlib.sha256(text).digest())
        for blob in blobs:
            fh.write(blob)


def read_container(path):
    """Return ``(arrays, meta)``; raises VersionError / CorruptionError."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + _HEADER.size or raw[:len(MAGIC)] != MAGIC:
        raise CorruptionError(f"{path}: not a model container (bad magic or truncated header)")
    version, length = _HEADER.unpack_from(raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: container version {version} is not supported "
                           f"(this build reads version {FORMAT_VERSION})")
    start = len(MAGIC) + _HEADER.size
    text = raw[start:start + length]
    digest = raw[start + length:start + length + 32]
    if len(text) != length or len(digest) != 32:
        raise CorruptionError(f"{path}: truncated manifest")
    if hashlib.sha256(text).digest() != digest:
        raise CorruptionError(f"{path}: manifest checksum mismatch")
    try:
        manifest = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format_version") != version:
        raise CorruptionError(f"{path}: manifest version disagrees with header")
    payload = raw[start + length + 32:]
    expected = sum(e["nbytes"] for e in manifest["arrays"])
    if len(payload) != expected:
        raise CorruptionError(f"{path}: payload holds {len(payload)} bytes, manifest expects {expected}")
    arrays = {}
    for e in manifest["arrays"]:
        blob = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise CorruptionError(f"{path}: checksum mismatch for array {e['name']!r}")
        if e["dtype"] != "float64" or e["byte_order"] != "little":
            raise CorruptionError(f"{path}: unsupported element type for {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]

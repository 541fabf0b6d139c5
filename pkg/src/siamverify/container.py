"""Binary container: JSON manifest + raw little-endian float32 blobs.

Layout on disk::

    8 bytes   magic b"SVCONT01"
    4 bytes   manifest length (uint32, little-endian)
    N bytes   manifest JSON (UTF-8, sorted keys)
    ...       blobs, concatenated in manifest entry order

The manifest records format version, container kind, per-entry ids,
kinds, shapes, dtype, byte offsets (relative to the blob section) and a
CRC32 per blob.  Round trips are bit-exact; any truncation or checksum
mismatch is rejected before data is handed out.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import WeightCorruptionError, WeightFormatError

MAGIC = b"SVCONT01"
FORMAT_VERSION = 1
_DTYPE = "<f4"  # little-endian float32


@dataclass
class ContainerEntry:
    entry_id: str
    kind: str
    array: np.ndarray
    extra: dict = field(default_factory=dict)


def write_container(path, kind: str, entries: list[ContainerEntry], meta: dict | None = None) -> None:
    blobs = []
    manifest_entries = []
    offset = 0
    for e in entries:
        raw = np.ascontiguousarray(e.array, dtype=_DTYPE).tobytes()
        record = {
            "id": e.entry_id,
            "kind": e.kind,
            "shape": [int(d) for d in e.array.shape],
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        }
        record.update(e.extra)
        manifest_entries.append(record)
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "container_kind": kind,
        "meta": meta or {},
        "entries": manifest_entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for raw in blobs:
            fh.write(raw)


def read_manifest(path) -> tuple[dict, int]:
    """Parse and validate the manifest; returns (manifest, blob_section_start)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 4)
        if len(head) < len(MAGIC) + 4 or head[:len(MAGIC)] != MAGIC:
            raise WeightFormatError(f"{path}: not a recognized container file")
        (mlen,) = struct.unpack("<I", head[len(MAGIC):])
        mbytes = fh.read(mlen)
        if len(mbytes) != mlen:
            raise WeightCorruptionError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(mbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightCorruptionError(f"{path}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version!r}")
    return manifest, len(MAGIC) + 4 + mlen


def read_container(path) -> tuple[str, list[ContainerEntry], dict]:
    """Load and fully verify a container; returns (kind, entries, meta)."""
    path = Path(path)
    manifest, blob_start = read_manifest(path)
    data = path.read_bytes()[blob_start:]
    entries = []
    for record in manifest["entries"]:
        shape = tuple(record["shape"])
        nbytes = record["nbytes"]
        if record.get("dtype") != "float32":
            raise WeightFormatError(f"{path}: entry {record['id']}: unsupported dtype {record.get('dtype')!r}")
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if nbytes != expected:
            raise WeightCorruptionError(
                f"{path}: entry {record['id']}: {nbytes} bytes inconsistent with shape {shape}")
        start, end = record["offset"], record["offset"] + nbytes
        if end > len(data):
            raise WeightCorruptionError(f"{path}: entry {record['id']}: blob truncated")
        raw = data[start:end]
        if zlib.crc32(raw) != record["crc32"]:
            raise WeightCorruptionError(f"{path}: entry {record['id']}: checksum mismatch")
        arr = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()
        extra = {k: v for k, v in record.items()
                 if k not in ("id", "kind", "shape", "dtype", "offset", "nbytes", "crc32")}
        entries.append(ContainerEntry(record["id"], record["kind"], arr, extra))
    return manifest.get("container_kind", ""), entries, manifest.get("meta", {})

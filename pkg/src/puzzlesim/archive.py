"""PZTA weight-archive container: named float32 tensors plus string metadata.

Layout (all integers little-endian):
  magic "PZTA" | u32 version=1 | u32 entry count
  per entry: u16 key length | UTF-8 key | u8 rank | u32 dims[rank] | f32 data
  u32 metadata count
  per pair: u16 key length | UTF-8 key | u32 value length | UTF-8 value
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

ARCHIVE_MAGIC = b"PZTA"
ARCHIVE_VERSION = 1

MANDATORY_METADATA = ("preprocess.mean", "preprocess.std", "spec.name")


@dataclass(frozen=True)
class TensorArchive:
    entries: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def tensor(self, key):
        try:
            return self.entries[key]
        except KeyError:
            raise ValidationError(f"archive has no tensor {key!r}") from None

    def preprocess(self):
        """Per-channel (mean, std) parsed from metadata."""
        mean = _parse_triple(self.metadata["preprocess.mean"])
        std = _parse_triple(self.metadata["preprocess.std"])
        return mean, std


def _parse_triple(s):
    vals = [float(v) for v in s.split(",")]
    if len(vals) != 3:
        raise ValidationError(f"expected 3 comma-separated floats, got {s!r}")
    return np.asarray(vals, dtype=np.float32)


def write_tensor_entries(f, entries):
    f.write(struct.pack("<I", len(entries)))
    for key in entries:
        arr = np.ascontiguousarray(entries[key], dtype=np.float32)
        kb = key.encode("utf-8")
        f.write(struct.pack("<H", len(kb)))
        f.write(kb)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4").tobytes())


def read_tensor_entries(f, path=""):
    (count,) = _unpack(f, "<I", path)
    entries = {}
    for _ in range(count):
        (klen,) = _unpack(f, "<H", path)
        key = f.read(klen).decode("utf-8")
        (rank,) = _unpack(f, "<B", path)
        dims = _unpack(f, f"<{rank}I", path) if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = f.read(4 * n)
        if len(raw) != 4 * n:
            raise FormatError(f"{path}: truncated tensor data for {key!r}")
        if key in entries:
            raise FormatError(f"{path}: duplicate tensor key {key!r}")
        entries[key] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return entries


def write_metadata(f, metadata):
    f.write(struct.pack("<I", len(metadata)))
    for key in metadata:
        kb = key.encode("utf-8")
        vb = str(metadata[key]).encode("utf-8")
        f.write(struct.pack("<H", len(kb)))
        f.write(kb)
        f.write(struct.pack("<I", len(vb)))
        f.write(vb)


def read_metadata(f, path=""):
    (count,) = _unpack(f, "<I", path)
    meta = {}
    for _ in range(count):
        (klen,) = _unpack(f, "<H", path)
        key = f.read(klen).decode("utf-8")
        (vlen,) = _unpack(f, "<I", path)
        meta[key] = f.read(vlen).decode("utf-8")
    return meta


def _unpack(f, fmt, path):
    size = struct.calcsize(fmt)
    raw = f.read(size)
    if len(raw) != size:
        raise FormatError(f"{path}: truncated container")
    return struct.unpack(fmt, raw)


def save_archive(archive, path):
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<I", ARCHIVE_VERSION))
        write_tensor_entries(f, archive.entries)
        write_metadata(f, archive.metadata)


def load_archive(path):
    """Read a PZTA file, validating magic, version and mandatory metadata."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != ARCHIVE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (version,) = _unpack(f, "<I", path)
        if version != ARCHIVE_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        entries = read_tensor_entries(f, path)
        metadata = read_metadata(f, path)
    for key in MANDATORY_METADATA:
        if key not in metadata:
            raise ValidationError(f"{path}: missing mandatory metadata {key!r}")
    return TensorArchive(entries=entries, metadata=metadata)

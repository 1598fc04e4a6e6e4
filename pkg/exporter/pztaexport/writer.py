"""Minimal PZTA container writer.

Layout (all integers little-endian):
  magic "PZTA" | u32 version=1 | u32 entry count
  per entry: u16 key length | UTF-8 key | u8 rank | u32 dims[rank] | f32 data
  u32 metadata count
  per pair: u16 key length | UTF-8 key | u32 value length | UTF-8 value

Entries are always written in sorted key order so re-exports are
byte-identical.
"""

import struct

import numpy as np

MAGIC = b"PZTA"
VERSION = 1


def write_pzta(path, entries, metadata):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(entries)))
        for key in sorted(entries):
            arr = np.ascontiguousarray(entries[key])
            if arr.dtype != np.float32:
                raise TypeError(f"{key}: expected float32 data, got {arr.dtype}")
            kb = key.encode("utf-8")
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())
        f.write(struct.pack("<I", len(metadata)))
        for key in sorted(metadata):
            kb = key.encode("utf-8")
            vb = str(metadata[key]).encode("utf-8")
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<I", len(vb)))
            f.write(vb)

"""The cross-reference similarity metric.

References are embedded once into a flat per-tap matrix of unit feature
vectors; a test image is scored by the best cosine match of every feature
position against all reference positions, computed blockwise so the full
outer product is never materialized. Per-tap maps are upsampled to the
test resolution and fused with the tap weights.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import archive as _archive
from .errors import FormatError, IndexMismatchError, ValidationError
from .inference import forward
from .tensor import bilinear_resize

INDEX_MAGIC = b"PZIX"
INDEX_VERSION = 1

DEGENERATE_NORM = 1e-12

DEFAULT_TILE_Q = 256
DEFAULT_TILE_R = 4096
DEFAULT_MEMORY_BUDGET = 512 * 1024 * 1024  # bytes of block working set


@dataclass(frozen=True)
class TapIndex:
    vectors: np.ndarray      # (R, C) float32, unit rows; degenerate rows all-zero
    degenerate: np.ndarray   # (R,) bool
    provenance: np.ndarray   # (R, 3) int32: reference number, row, col


@dataclass(frozen=True)
class ReferenceIndex:
    spec_name: str
    taps: dict                      # tap name -> TapIndex
    ref_names: tuple = ()

    @property
    def ref_count(self):
        first = next(iter(self.taps.values()))
        return int(first.provenance[:, 0].max()) + 1 if len(first.provenance) else 0


@dataclass(frozen=True)
class SimilarityMap:
    values: np.ndarray              # (H, W) float32 fused map
    per_layer: dict = field(default_factory=dict)   # tap name -> (H_l, W_l) map
    degenerate_queries: dict = field(default_factory=dict)  # tap name -> bool map


def normalize_rows(mat):
    """Unit-normalize rows; all-zero rows stay zero and are flagged."""
    mat = np.asarray(mat, dtype=np.float32)
    norms = np.linalg.norm(mat.astype(np.float64), axis=1)
    degenerate = norms <= DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    return (mat / safe[:, None].astype(np.float32)).astype(np.float32), degenerate


def _flatten_tap(t):
    """(C, H, W) -> (H*W, C) rows in row-major spatial order."""
    c, h, w = t.shape
    return np.ascontiguousarray(t.reshape(c, h * w).T), (h, w)


def build_index(refs, spec, archive, ref_names=()):
    """Embed all reference images into per-tap unit-vector matrices."""
    if not refs:
        raise ValueError("reference list is empty")
    per_tap_rows = {t.name: [] for t in spec.taps}
    per_tap_prov = {t.name: [] for t in spec.taps}
    per_tap_flags = {t.name: [] for t in spec.taps}
    for n, image in enumerate(refs):
        stack = forward(spec, archive, image)
        for name, t in stack.taps:
            rows, (h, w) = _flatten_tap(t)
            unit, degenerate = normalize_rows(rows)
            yy, xx = np.divmod(np.arange(h * w, dtype=np.int32), w)
            prov = np.stack([np.full(h * w, n, dtype=np.int32), yy, xx], axis=1)
            per_tap_rows[name].append(unit)
            per_tap_prov[name].append(prov)
            per_tap_flags[name].append(degenerate)
    taps = {
        name: TapIndex(
            vectors=np.concatenate(per_tap_rows[name], axis=0),
            degenerate=np.concatenate(per_tap_flags[name], axis=0),
            provenance=np.concatenate(per_tap_prov[name], axis=0),
        )
        for name in per_tap_rows
    }
    return ReferenceIndex(spec_name=spec.name, taps=taps, ref_names=tuple(ref_names))


@njit(cache=True)
def _tiled_rowmax(q, r, tile_q, tile_r):
    nq = q.shape[0]
    nr = r.shape[0]
    out = np.full(nq, -np.inf, dtype=np.float32)
    for i0 in range(0, nq, tile_q):
        i1 = min(i0 + tile_q, nq)
        qt = q[i0:i1]
        for j0 in range(0, nr, tile_r):
            j1 = min(j0 + tile_r, nr)
            blk = np.dot(qt, r[j0:j1].T)
            for a in range(blk.shape[0]):
                m = out[i0 + a]
                row = blk[a]
                for b in range(row.shape[0]):
                    if row[b] > m:
                        m = row[b]
                out[i0 + a] = m
    return out


def autotune_tiles(tile_q, tile_r, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Shrink tile sizes until one product block fits the working-set budget."""
    tile_q, tile_r = max(1, int(tile_q)), max(1, int(tile_r))
    while tile_q * tile_r * 4 > memory_budget and (tile_q > 1 or tile_r > 1):
        if tile_r >= tile_q:
            tile_r = max(1, tile_r // 2)
        else:
            tile_q = max(1, tile_q // 2)
    return tile_q, tile_r


def max_cosine_tiled(query, index_rows, tile_q=DEFAULT_TILE_Q, tile_r=DEFAULT_TILE_R,
                     memory_budget=DEFAULT_MEMORY_BUDGET):
    """Best dot product of each query row against all index rows.

    Both inputs must have unit (or all-zero, excluded upstream) rows. At most
    tile_q x tile_r products exist at any time; the result is independent of
    the tile sizes.
    """
    query = np.ascontiguousarray(query, dtype=np.float32)
    index_rows = np.ascontiguousarray(index_rows, dtype=np.float32)
    if query.ndim != 2 or index_rows.ndim != 2:
        raise ValidationError("expected 2-D row matrices")
    if query.shape[1] != index_rows.shape[1]:
        raise ValidationError(
            f"dimension mismatch: query C={query.shape[1]}, index C={index_rows.shape[1]}"
        )
    if index_rows.shape[0] == 0:
        raise ValueError("index has no rows")
    if tile_q < 1 or tile_r < 1:
        raise ValueError("tile sizes must be >= 1")
    tile_q, tile_r = autotune_tiles(tile_q, tile_r, memory_budget)
    return _tiled_rowmax(query, index_rows, tile_q, tile_r)


def puzzle_similarity(test, index, spec, archive, weights=None,
                      tile_q=DEFAULT_TILE_Q, tile_r=DEFAULT_TILE_R,
                      keep_layers=False):
    """Fused best-match similarity map of a test image against the index.

    weights: optional per-tap override (renormalized to sum 1); defaults to
    the spec's tap weights.
    """
    if index.spec_name != spec.name:
        raise IndexMismatchError(
            f"index built with spec {index.spec_name!r}, got {spec.name!r}"
        )
    tap_weights = {t.name: t.weight for t in spec.taps}
    if weights is not None:
        if len(weights) != len(spec.taps):
            raise ValueError(f"expected {len(spec.taps)} weights")
        total = float(sum(weights))
        if total <= 0:
            raise ValueError("weights must have positive sum")
        tap_weights = {t.name: w / total for t, w in zip(spec.taps, weights)}

    h, w = test.shape[:2]
    stack = forward(spec, archive, test)
    fused = np.zeros((h, w), dtype=np.float32)
    per_layer = {}
    degenerate_queries = {}
    for name, t in stack.taps:
        rows, (th, tw) = _flatten_tap(t)
        unit, q_degenerate = normalize_rows(rows)
        tap = index.taps[name]
        valid = tap.vectors[~tap.degenerate]
        if valid.shape[0] == 0:
            raise ValidationError(f"index tap {name!r} has only degenerate rows")
        sims = max_cosine_tiled(unit, valid, tile_q=tile_q, tile_r=tile_r)
        sims[q_degenerate] = 0.0
        layer_map = sims.reshape(th, tw).astype(np.float32)
        if keep_layers:
            per_layer[name] = layer_map
            degenerate_queries[name] = q_degenerate.reshape(th, tw)
        fused += tap_weights[name] * bilinear_resize(layer_map, h, w)
    return SimilarityMap(values=fused, per_layer=per_layer,
                         degenerate_queries=degenerate_queries)


def save_index(index, path):
    """Persist a ReferenceIndex in the PZIX container (PZTA tensor encoding)."""
    entries = {}
    for name in sorted(index.taps):
        tap = index.taps[name]
        entries[f"tap.{name}.vectors"] = tap.vectors
        entries[f"tap.{name}.degenerate"] = tap.degenerate.astype(np.float32)
        entries[f"tap.{name}.provenance"] = tap.provenance.astype(np.float32)
    metadata = {
        "spec.name": index.spec_name,
        "tap.names": ",".join(sorted(index.taps)),
        "ref.count": str(index.ref_count),
        "ref.names": ",".join(index.ref_names),
    }
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<I", INDEX_VERSION))
        _archive.write_tensor_entries(f, entries)
        _archive.write_metadata(f, metadata)


def load_index(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != INDEX_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != INDEX_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        entries = _archive.read_tensor_entries(f, path)
        metadata = _archive.read_metadata(f, path)
    names = [n for n in metadata.get("tap.names", "").split(",") if n]
    taps = {}
    for name in names:
        try:
            taps[name] = TapIndex(
                vectors=entries[f"tap.{name}.vectors"],
                degenerate=entries[f"tap.{name}.degenerate"].astype(bool),
                provenance=entries[f"tap.{name}.provenance"].astype(np.int32),
            )
        except KeyError as e:
            raise FormatError(f"{path}: missing index entry {e}") from None
    if not taps:
        raise FormatError(f"{path}: index holds no taps")
    ref_names = tuple(n for n in metadata.get("ref.names", "").split(",") if n)
    return ReferenceIndex(spec_name=metadata.get("spec.name", ""), taps=taps,
                          ref_names=ref_names)

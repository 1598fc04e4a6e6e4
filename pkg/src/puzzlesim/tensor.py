"""Image I/O, bilinear resampling and raw-map serialization.

Images are float32 arrays of shape (H, W, 3) with values in [0, 1].
Single-channel maps are float32 arrays of shape (H, W).
"""

import struct

import numpy as np
from PIL import Image

from .errors import FormatError

SIDECAR_MAGIC = b"PZSM"

COLORMAPS = ("viridis", "turbo", "gray")


def load_image(path):
    """Decode an 8- or 16-bit PNG/JPEG into a (H, W, 3) float32 array in [0, 1].

    Grayscale images are replicated to 3 channels; an alpha channel is dropped.
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, Image.DecompressionBombError) as e:
        raise OSError(f"cannot read image {path}: {e}") from e

    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        if arr.max(initial=0.0) > 65535:
            raise FormatError(f"{path}: unsupported bit depth (mode {mode})")
        arr = (arr / 65535.0).astype(np.float32)
    elif mode in ("L", "RGB", "RGBA", "LA", "P", "1"):
        if mode in ("P", "1"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    else:
        raise FormatError(f"{path}: unsupported image mode {mode}")

    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] == 2:  # LA
        arr = np.repeat(arr[:, :, :1], 3, axis=2)
    elif arr.shape[2] == 4:  # RGBA
        arr = arr[:, :, :3]
    return np.ascontiguousarray(arr, dtype=np.float32)


def save_image(arr, path):
    """Write a (H, W, 3) float array in [0, 1] as an 8-bit PNG."""
    a = np.clip(np.asarray(arr), 0.0, 1.0)
    Image.fromarray((a * 255.0 + 0.5).astype(np.uint8)).save(path)


def bilinear_resize(t, out_h, out_w):
    """Align-corners bilinear resampling.

    Accepts (H, W) or (C, H, W); corner samples map exactly onto corner
    samples, so identity sizes reproduce the input bit-for-bit.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    t = np.asarray(t, dtype=np.float32)
    squeeze = t.ndim == 2
    if squeeze:
        t = t[None]
    _, h, w = t.shape
    if h == out_h and w == out_w:
        out = t.copy()
        return out[0] if squeeze else out

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)

    ys = axis_coords(h, out_h)
    xs = axis_coords(w, out_w)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)
    wx = (xs - x0).astype(np.float32)

    top = t[:, y0[:, None], x0[None, :]] * (1 - wx) + t[:, y0[:, None], x1[None, :]] * wx
    bot = t[:, y1[:, None], x0[None, :]] * (1 - wx) + t[:, y1[:, None], x1[None, :]] * wx
    out = top * (1 - wy[:, None]) + bot * wy[:, None]
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def _colormap_lut(name):
    import matplotlib

    if name not in COLORMAPS:
        raise ValueError(f"unknown colormap {name!r}, expected one of {COLORMAPS}")
    cmap = matplotlib.colormaps[name]
    return (cmap(np.linspace(0.0, 1.0, 256))[:, :3] * 255.0 + 0.5).astype(np.uint8)


def save_heatmap(map2d, path, colormap="viridis"):
    """Write a scalar map as a colormapped 8-bit PNG plus a raw float sidecar.

    The PNG is min-max normalized per image. The sidecar (``<path>.pzsm`` when
    ``path`` ends in .png, else ``path + '.pzsm'``) stores the raw float32
    values behind a 16-byte header: magic "PZSM", u32 height, u32 width,
    u32 reserved, all little-endian.
    """
    m = np.asarray(map2d, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("map contains non-finite values")

    lut = _colormap_lut(colormap)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        norm = (m - lo) / (hi - lo)
    else:
        norm = np.zeros_like(m)
    idx = np.minimum((norm * 255.0 + 0.5).astype(np.int32), 255)
    Image.fromarray(lut[idx]).save(path)

    write_sim_map(m, sidecar_path(path))


def sidecar_path(png_path):
    s = str(png_path)
    return s[:-4] + ".pzsm" if s.lower().endswith(".png") else s + ".pzsm"


def write_sim_map(map2d, path):
    """Serialize a 2-D float32 map in the PZSM layout."""
    m = np.ascontiguousarray(map2d, dtype=np.float32)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(SIDECAR_MAGIC)
        f.write(struct.pack("<III", h, w, 0))
        f.write(m.astype("<f4").tobytes())


def read_sim_map(path):
    """Parse a PZSM sidecar back into a (H, W) float32 array."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:4] != SIDECAR_MAGIC:
            raise FormatError(f"{path}: bad PZSM header")
        h, w, _ = struct.unpack("<III", head[4:])
        raw = f.read(4 * h * w)
    if len(raw) != 4 * h * w:
        raise FormatError(f"{path}: truncated PZSM payload")
    data = np.frombuffer(raw, dtype="<f4")
    return data.reshape(h, w).astype(np.float32)

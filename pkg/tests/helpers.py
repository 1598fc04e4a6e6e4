"""Shared fixtures helpers: random archives and synthetic scenes."""

import numpy as np

from puzzlesim.archive import TensorArchive
from puzzlesim.netspec import LayerDesc, NetworkSpec, Tap
from puzzlesim.tensor import bilinear_resize

PREPROCESS_META = {
    "preprocess.mean": "0.485,0.456,0.406",
    "preprocess.std": "0.229,0.224,0.225",
}


def tiny_spec():
    """Two-tap toy backbone small enough for exhaustive checks."""
    layers = (
        LayerDesc("conv2d", "c1", 3, 8, (3, 3), stride=2, padding=1),
        LayerDesc("relu", "r1"),
        LayerDesc("maxpool2d", "p1", kernel=(2, 2), stride=2),
        LayerDesc("conv2d", "c2", 8, 16, (3, 3), padding=1),
        LayerDesc("relu", "r2"),
    )
    taps = (Tap(1, "early", 0.7), Tap(4, "late", 0.3))
    return NetworkSpec("tiny", layers, taps)


def make_random_archive(spec, seed=0):
    """He-scaled random weights for every key the spec demands."""
    rng = np.random.default_rng(seed)
    entries = {}
    for key, shape in spec.weight_keys():
        if len(shape) == 4:
            fan_in = int(np.prod(shape[1:]))
            entries[key] = rng.normal(
                scale=np.sqrt(2.0 / fan_in), size=shape
            ).astype(np.float32)
        else:
            # positive biases keep post-ReLU feature vectors away from the
            # all-dead (degenerate) case on synthetic inputs
            entries[key] = (np.abs(rng.normal(scale=0.1, size=shape)) + 0.05).astype(
                np.float32)
    metadata = dict(PREPROCESS_META)
    metadata["spec.name"] = spec.name
    return TensorArchive(entries=entries, metadata=metadata)


FILTER_KERNELS = {
    "avg": np.ones((3, 3), np.float32) / 9.0,
    "dx": np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], np.float32) / 4.0,
    "dy": np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], np.float32) / 4.0,
    "d1": np.array([[0, 1, 2], [-1, 0, 1], [-2, -1, 0]], np.float32) / 4.0,
    "d2": np.array([[2, 1, 0], [1, 0, -1], [0, -1, -2]], np.float32) / 4.0,
    "lap": np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], np.float32) / 4.0,
    "hf": np.array([[1, -1, 1], [-1, 1, -1], [1, -1, 1]], np.float32) / 5.0,
    "ctr": np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], np.float32),
}

FILTER_COLORS = [
    np.array(c, np.float32)
    for c in ([1, 1, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1],
              [1, -1, 0], [0, 1, -1], [1, 0, -1], [1, 1, -2])
]


def make_filterbank_archive(spec, theta=0.5):
    """Deterministic, hand-designed weights with discriminative features.

    Random-init ReLU stacks collapse cosine diversity (everything matches
    everything near 1.0), which makes localization tests meaningless.  This
    builds the first conv as an oriented-edge / color filter bank whose edge
    channels are thresholded by a negative bias, so feature vectors are sparse
    and out-of-distribution content (e.g. a noise patch) lands in channel
    supports that clean references never occupy.  Fire modules pass channels
    through untouched: the squeeze selects a spread of channels, expand1x1
    copies them and expand3x3 adds a spatially averaged copy.

    Channels 0/1 of the first conv are a +/- luminance pair with positive
    bias; at least one is active at every position, so no feature vector is
    ever all-zero.  Every squeeze keeps that pair, preserving the guarantee
    at each tap.
    """
    entries = {}
    w = np.zeros((64, 3, 3, 3), np.float32)
    b = np.zeros(64, np.float32)
    w[0] = FILTER_COLORS[0][:, None, None] * FILTER_KERNELS["avg"][None]
    b[0] = 0.1
    w[1] = -w[0]
    b[1] = 0.1
    i = 2
    for kind, kernel in FILTER_KERNELS.items():
        for ci, color in enumerate(FILTER_COLORS):
            if i >= 64:
                break
            sign = 1.0 if ci % 2 == 0 else -1.0
            w[i] = sign * color[:, None, None] * kernel[None]
            b[i] = 0.05 if kind in ("avg", "ctr") else -theta
            i += 1
    entries["conv1.weight"] = w
    entries["conv1.bias"] = b

    def passthrough(fire, in_ch, squeeze_ch, expand_ch):
        sq = np.zeros((squeeze_ch, in_ch, 1, 1), np.float32)
        sq[0, 0] = 1.0
        sq[1, 1] = 1.0
        for r in range(2, squeeze_ch):
            sq[r, (r * in_ch) // squeeze_ch] = 1.0
        entries[f"{fire}.squeeze.weight"] = sq
        entries[f"{fire}.squeeze.bias"] = np.zeros(squeeze_ch, np.float32)
        e1 = np.zeros((expand_ch, squeeze_ch, 1, 1), np.float32)
        for r in range(expand_ch):
            e1[r, r % squeeze_ch] = 1.0
        entries[f"{fire}.expand1x1.weight"] = e1
        entries[f"{fire}.expand1x1.bias"] = np.zeros(expand_ch, np.float32)
        e3 = np.zeros((expand_ch, squeeze_ch, 3, 3), np.float32)
        for r in range(expand_ch):
            e3[r, r % squeeze_ch] = np.ones((3, 3), np.float32) / 9.0
        entries[f"{fire}.expand3x3.weight"] = e3
        entries[f"{fire}.expand3x3.bias"] = np.zeros(expand_ch, np.float32)

    for args in (("fire2", 64, 16, 64), ("fire3", 128, 16, 64),
                 ("fire4", 128, 32, 128), ("fire5", 256, 32, 128),
                 ("fire6", 256, 48, 192), ("fire7", 384, 48, 192),
                 ("fire8", 384, 64, 256), ("fire9", 512, 64, 256)):
        passthrough(*args)
    metadata = dict(PREPROCESS_META)
    metadata["spec.name"] = spec.name
    return TensorArchive(entries=entries, metadata=metadata)


def smooth_texture(rng, h, w, cells=8):
    """Low-frequency random RGB texture in [0, 1]."""
    coarse = rng.random((3, cells, cells)).astype(np.float32)
    up = bilinear_resize(coarse, h, w).transpose(1, 2, 0)
    return np.clip(up, 0.0, 1.0)


def make_scene(seed, n_refs, size, canvas_scale=2, cells=12):
    """References plus a held-out view cropped from one shared texture canvas."""
    rng = np.random.default_rng(seed)
    canvas = smooth_texture(rng, size * canvas_scale, size * canvas_scale, cells)
    views = []
    for _ in range(n_refs + 1):
        y = rng.integers(0, size * (canvas_scale - 1) + 1)
        x = rng.integers(0, size * (canvas_scale - 1) + 1)
        views.append(np.ascontiguousarray(canvas[y:y + size, x:x + size]))
    return views[:n_refs], views[n_refs]


def corrupt_with_patch(image, area_fraction=0.10, seed=0):
    """Replace a square region with uniform noise; returns (image, patch mask)."""
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    side = int(np.sqrt(area_fraction * h * w))
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    out = image.copy()
    out[y0:y0 + side, x0:x0 + side] = rng.random((side, side, 3)).astype(np.float32)
    mask = np.zeros((h, w), dtype=bool)
    mask[y0:y0 + side, x0:x0 + side] = True
    return out, mask

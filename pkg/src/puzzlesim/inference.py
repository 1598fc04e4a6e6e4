"""Forward-only CNN inference over a NetworkSpec.

Convolutions run as im2col + matmul in float32; pooling supports the
ceil-mode windowing the built-in backbones use. Everything is a pure
function of its inputs.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputTooSmallError, ValidationError
from .netspec import min_input_size, tap_sizes, validate_archive


@dataclass(frozen=True)
class FeatureStack:
    """Tap activations in tap order: list of (tap_name, array of shape (C, H, W))."""

    taps: tuple

    def __post_init__(self):
        prev = None
        for name, t in self.taps:
            if t.ndim != 3 or min(t.shape) < 1:
                raise ValidationError(f"tap {name!r} has invalid shape {t.shape}")
            hw = t.shape[1:]
            if prev is not None and (hw[0] > prev[0] or hw[1] > prev[1]):
                raise ValidationError("tap spatial sizes must be non-increasing")
            prev = hw

    def __getitem__(self, name):
        for tap_name, t in self.taps:
            if tap_name == name:
                return t
        raise KeyError(name)


def conv2d(x, weight, bias, stride=1, padding=0):
    """Direct 2-D convolution (cross-correlation) with zero padding.

    x: (Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,).
    Output spatial size is floor((S + 2*pad - k)/stride) + 1 per axis.
    """
    x = np.asarray(x, dtype=np.float32)
    weight = np.asarray(weight, dtype=np.float32)
    cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValidationError(f"channel mismatch: input {cin}, kernel expects {cin_w}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ph, pw = x.shape[1:]
    if ph < kh or pw < kw:
        raise ValidationError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    # windows: (Cin, Ho, Wo, kh, kw)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += np.asarray(bias, dtype=np.float32)
    return np.ascontiguousarray(out.T.reshape(cout, ho, wo), dtype=np.float32)


def relu(x):
    return np.maximum(x, 0.0)


def maxpool2d(x, kernel, stride, padding=0, ceil_mode=False):
    """Per-window max over (kh, kw) windows; ceil mode clips trailing windows."""
    x = np.asarray(x, dtype=np.float32)
    kh, kw = kernel
    c, h, w = x.shape

    def out_size(size, k):
        if size + 2 * padding < k:
            raise ValidationError(f"pool kernel {k} exceeds padded input {size + 2 * padding}")
        if ceil_mode:
            n = -(-(size + 2 * padding - k) // stride) + 1
            if (n - 1) * stride >= size + padding:
                n -= 1
            return n
        return (size + 2 * padding - k) // stride + 1

    ho, wo = out_size(h, kh), out_size(w, kw)
    out = np.empty((c, ho, wo), dtype=np.float32)
    for i in range(ho):
        y0 = max(i * stride - padding, 0)
        y1 = min(i * stride - padding + kh, h)
        for j in range(wo):
            x0 = max(j * stride - padding, 0)
            x1 = min(j * stride - padding + kw, w)
            out[:, i, j] = x[:, y0:y1, x0:x1].max(axis=(1, 2))
    return out


def _fire_forward(layer, x, archive):
    name = layer.name
    sq = relu(conv2d(x, archive.tensor(f"{name}.squeeze.weight"),
                     archive.tensor(f"{name}.squeeze.bias")))
    e1 = relu(conv2d(sq, archive.tensor(f"{name}.expand1x1.weight"),
                     archive.tensor(f"{name}.expand1x1.bias")))
    e3 = relu(conv2d(sq, archive.tensor(f"{name}.expand3x3.weight"),
                     archive.tensor(f"{name}.expand3x3.bias"), padding=1))
    return np.concatenate([e1, e3], axis=0)


def preprocess(image, archive):
    """(H, W, 3) image in [0, 1] -> (3, H, W) normalized by archive mean/std."""
    mean, std = archive.preprocess()
    x = (np.asarray(image, dtype=np.float32) - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def forward(spec, archive, image):
    """Run the backbone on one image and capture tap activations.

    image: (H, W, 3) in [0, 1]. Returns a FeatureStack in tap order.
    """
    if archive.metadata.get("spec.name", spec.name) != spec.name:
        raise ValidationError(
            f"archive was exported for {archive.metadata['spec.name']!r}, "
            f"spec is {spec.name!r}"
        )
    validate_archive(spec, archive)
    h, w = image.shape[:2]
    if tap_sizes(spec, h, w) is None:
        raise InputTooSmallError((h, w), min_input_size(spec))

    x = preprocess(image, archive)
    tap_at = {}
    for t in spec.taps:
        tap_at.setdefault(t.layer_index, []).append(t.name)
    captured = {}
    last_needed = max(tap_at)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv2d":
            x = conv2d(
                x,
                archive.tensor(f"{layer.name}.weight"),
                archive.tensor(f"{layer.name}.bias"),
                stride=layer.stride,
                padding=layer.padding,
            )
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "maxpool2d":
            x = maxpool2d(x, layer.kernel, layer.stride, layer.padding, layer.ceil_mode)
        elif layer.kind == "fire":
            x = _fire_forward(layer, x, archive)
        else:
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
        for name in tap_at.get(i, ()):
            captured[name] = x
        if i == last_needed:
            break
    return FeatureStack(taps=tuple((t.name, captured[t.name]) for t in spec.taps))

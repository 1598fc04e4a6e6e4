"""Declarative backbone descriptions and the built-in network specs.

A NetworkSpec is a single chain of layers; fire layers fan out internally
into two expand branches whose outputs are concatenated. Taps name the
layer outputs captured as feature maps, together with their fusion weights.
"""

import math
from dataclasses import dataclass, field

from .errors import ValidationError


@dataclass(frozen=True)
class LayerDesc:
    kind: str  # "conv2d" | "relu" | "maxpool2d" | "fire"
    name: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: tuple = (1, 1)
    stride: int = 1
    padding: int = 0
    ceil_mode: bool = False
    # fire-only channel split: (squeeze, expand1x1, expand3x3)
    fire: tuple = ()

    def weight_keys(self):
        """(key, shape) pairs this layer demands from the archive."""
        if self.kind == "conv2d":
            kh, kw = self.kernel
            return [
                (f"{self.name}.weight", (self.out_ch, self.in_ch, kh, kw)),
                (f"{self.name}.bias", (self.out_ch,)),
            ]
        if self.kind == "fire":
            s, e1, e3 = self.fire
            return [
                (f"{self.name}.squeeze.weight", (s, self.in_ch, 1, 1)),
                (f"{self.name}.squeeze.bias", (s,)),
                (f"{self.name}.expand1x1.weight", (e1, s, 1, 1)),
                (f"{self.name}.expand1x1.bias", (e1,)),
                (f"{self.name}.expand3x3.weight", (e3, s, 3, 3)),
                (f"{self.name}.expand3x3.bias", (e3,)),
            ]
        return []


@dataclass(frozen=True)
class Tap:
    layer_index: int
    name: str
    weight: float


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    taps: tuple
    input_channels: int = 3

    def __post_init__(self):
        total = sum(t.weight for t in self.taps)
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"tap weights sum to {total}, expected 1")
        for t in self.taps:
            if not 0 <= t.layer_index < len(self.layers):
                raise ValidationError(f"tap {t.name} points at missing layer {t.layer_index}")

    def weight_keys(self):
        keys = []
        for layer in self.layers:
            keys.extend(layer.weight_keys())
        return keys


def _fire(name, in_ch, squeeze, expand):
    return LayerDesc(
        kind="fire", name=name, in_ch=in_ch, out_ch=2 * expand,
        fire=(squeeze, expand, expand),
    )


def _squeezenet():
    layers = (
        LayerDesc("conv2d", "conv1", 3, 64, (3, 3), stride=2),
        LayerDesc("relu", "relu1"),
        LayerDesc("maxpool2d", "pool1", kernel=(3, 3), stride=2, ceil_mode=True),
        _fire("fire2", 64, 16, 64),
        _fire("fire3", 128, 16, 64),
        LayerDesc("maxpool2d", "pool2", kernel=(3, 3), stride=2, ceil_mode=True),
        _fire("fire4", 128, 32, 128),
        _fire("fire5", 256, 32, 128),
        LayerDesc("maxpool2d", "pool3", kernel=(3, 3), stride=2, ceil_mode=True),
        _fire("fire6", 256, 48, 192),
        _fire("fire7", 384, 48, 192),
        _fire("fire8", 384, 64, 256),
        _fire("fire9", 512, 64, 256),
    )
    taps = (Tap(4, "fire3", 0.67), Tap(7, "fire5", 0.2), Tap(9, "fire6", 0.13))
    return NetworkSpec("squeezenet", layers, taps)


def _vgg16():
    cfg = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
    layers = []
    in_ch, conv_i = 3, 0
    block, conv_in_block = 1, 0
    tap_points = {}
    for item in cfg:
        if item == "M":
            layers.append(LayerDesc("maxpool2d", f"pool{block}", kernel=(2, 2), stride=2))
            block += 1
            conv_in_block = 0
        else:
            conv_i += 1
            conv_in_block += 1
            layers.append(LayerDesc("conv2d", f"conv{conv_i}", in_ch, item, (3, 3), padding=1))
            layers.append(LayerDesc("relu", f"relu{block}_{conv_in_block}"))
            tap_points[f"relu{block}_{conv_in_block}"] = len(layers) - 1
            in_ch = item
    taps = (
        Tap(tap_points["relu2_2"], "relu2_2", 0.67),
        Tap(tap_points["relu3_3"], "relu3_3", 0.2),
        Tap(tap_points["relu4_3"], "relu4_3", 0.13),
    )
    return NetworkSpec("vgg16", tuple(layers), taps)


def _alexnet():
    layers = (
        LayerDesc("conv2d", "conv1", 3, 64, (11, 11), stride=4, padding=2),
        LayerDesc("relu", "relu1"),
        LayerDesc("maxpool2d", "pool1", kernel=(3, 3), stride=2),
        LayerDesc("conv2d", "conv2", 64, 192, (5, 5), padding=2),
        LayerDesc("relu", "relu2"),
        LayerDesc("maxpool2d", "pool2", kernel=(3, 3), stride=2),
        LayerDesc("conv2d", "conv3", 192, 384, (3, 3), padding=1),
        LayerDesc("relu", "relu3"),
        LayerDesc("conv2d", "conv4", 384, 256, (3, 3), padding=1),
        LayerDesc("relu", "relu4"),
        LayerDesc("conv2d", "conv5", 256, 256, (3, 3), padding=1),
        LayerDesc("relu", "relu5"),
        LayerDesc("maxpool2d", "pool3", kernel=(3, 3), stride=2),
    )
    taps = (Tap(4, "relu2", 0.67), Tap(7, "relu3", 0.2), Tap(9, "relu4", 0.13))
    return NetworkSpec("alexnet", layers, taps)


_BUILTINS = {}


def builtin_spec(name):
    if name not in _BUILTINS:
        factory = {"squeezenet": _squeezenet, "vgg16": _vgg16, "alexnet": _alexnet}.get(name)
        if factory is None:
            raise ValidationError(f"unknown network spec {name!r}")
        _BUILTINS[name] = factory()
    return _BUILTINS[name]


def builtin_spec_names():
    return ("squeezenet", "vgg16", "alexnet")


def validate_archive(spec, archive):
    """Every weight key the spec demands must exist with a matching shape."""
    missing, bad = [], []
    for key, shape in spec.weight_keys():
        if key not in archive.entries:
            missing.append(key)
        elif tuple(archive.entries[key].shape) != tuple(shape):
            bad.append((key, tuple(archive.entries[key].shape), tuple(shape)))
    if missing or bad:
        parts = []
        if missing:
            parts.append("missing keys: " + ", ".join(missing))
        if bad:
            parts.append(
                "shape mismatches: "
                + ", ".join(f"{k} got {g} want {w}" for k, g, w in bad)
            )
        raise ValidationError(f"archive does not satisfy spec {spec.name!r}: " + "; ".join(parts))


def _conv_out(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _pool_out(size, kernel, stride, padding, ceil_mode):
    if size + 2 * padding < kernel:
        return 0
    if ceil_mode:
        out = math.ceil((size + 2 * padding - kernel) / stride) + 1
        # drop a trailing window that would start entirely in the padding
        if (out - 1) * stride >= size + padding:
            out -= 1
        return out
    return (size + 2 * padding - kernel) // stride + 1


def layer_output_size(layer, h, w):
    if layer.kind == "conv2d" or layer.kind == "fire":
        if layer.kind == "fire":
            return h, w  # 1x1 squeeze and padded 3x3 expand preserve size
        kh, kw = layer.kernel
        return (
            _conv_out(h, kh, layer.stride, layer.padding),
            _conv_out(w, kw, layer.stride, layer.padding),
        )
    if layer.kind == "maxpool2d":
        kh, kw = layer.kernel
        return (
            _pool_out(h, kh, layer.stride, layer.padding, layer.ceil_mode),
            _pool_out(w, kw, layer.stride, layer.padding, layer.ceil_mode),
        )
    return h, w


def tap_sizes(spec, h, w):
    """Spatial size at each tap for an h x w input, or None if any stage collapses."""
    sizes = {}
    cur_h, cur_w = h, w
    tap_at = {t.layer_index: t.name for t in spec.taps}
    for i, layer in enumerate(spec.layers):
        cur_h, cur_w = layer_output_size(layer, cur_h, cur_w)
        if cur_h < 1 or cur_w < 1:
            return None
        if i in tap_at:
            sizes[tap_at[i]] = (cur_h, cur_w)
        if len(sizes) == len(spec.taps):
            break
    return sizes if len(sizes) == len(spec.taps) else None


def min_input_size(spec):
    """Smallest square input for which every tap yields at least one position."""
    for n in range(1, 4097):
        if tap_sizes(spec, n, n) is not None:
            return (n, n)
    raise ValidationError(f"spec {spec.name!r} has no feasible input size")

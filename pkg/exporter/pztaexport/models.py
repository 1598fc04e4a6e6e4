"""Model definitions: zoo parameter names, archive keys and expected shapes."""

import numpy as np

# ImageNet normalization used by all torchvision classification backbones.
PREPROCESS_METADATA = {
    "preprocess.mean": "0.485,0.456,0.406",
    "preprocess.std": "0.229,0.224,0.225",
}

FALLBACK_SEED = 20240801

# SqueezeNet 1.1: (fire name, features index, in, squeeze, expand-per-branch)
_SQUEEZENET_FIRES = [
    ("fire2", 3, 64, 16, 64),
    ("fire3", 4, 128, 16, 64),
    ("fire4", 6, 128, 32, 128),
    ("fire5", 7, 256, 32, 128),
    ("fire6", 9, 256, 48, 192),
    ("fire7", 10, 384, 48, 192),
    ("fire8", 11, 384, 64, 256),
    ("fire9", 12, 512, 64, 256),
]

# VGG-16: per-conv output channels, torchvision features indices in order.
_VGG16_CHANNELS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
_VGG16_INDICES = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28]

# AlexNet: (features index, out, in, kernel)
_ALEXNET_CONVS = [
    (0, 64, 3, 11),
    (3, 192, 64, 5),
    (6, 384, 192, 3),
    (8, 256, 384, 3),
    (10, 256, 256, 3),
]


class ExportError(Exception):
    pass


def _conv_pair(zoo_prefix, key_prefix, out_ch, in_ch, k):
    return [
        (f"{zoo_prefix}.weight", f"{key_prefix}.weight", (out_ch, in_ch, k, k)),
        (f"{zoo_prefix}.bias", f"{key_prefix}.bias", (out_ch,)),
    ]


def parameter_table(model_name):
    """(zoo parameter name, archive key, expected shape) rows, export order."""
    rows = []
    if model_name == "squeezenet":
        rows += _conv_pair("features.0", "conv1", 64, 3, 3)
        for fire, idx, in_ch, s, e in _SQUEEZENET_FIRES:
            rows += _conv_pair(f"features.{idx}.squeeze", f"{fire}.squeeze",
                               s, in_ch, 1)
            rows += _conv_pair(f"features.{idx}.expand1x1", f"{fire}.expand1x1",
                               e, s, 1)
            rows += _conv_pair(f"features.{idx}.expand3x3", f"{fire}.expand3x3",
                               e, s, 3)
    elif model_name == "vgg16":
        in_ch = 3
        for i, (idx, out_ch) in enumerate(zip(_VGG16_INDICES, _VGG16_CHANNELS)):
            rows += _conv_pair(f"features.{idx}", f"conv{i + 1}", out_ch, in_ch, 3)
            in_ch = out_ch
    elif model_name == "alexnet":
        for i, (idx, out_ch, in_ch, k) in enumerate(_ALEXNET_CONVS):
            rows += _conv_pair(f"features.{idx}", f"conv{i + 1}", out_ch, in_ch, k)
    else:
        raise ExportError(f"unknown model {model_name!r}")
    return rows


def build_model(model_name, pretrained=True):
    """Instantiate the torchvision model, downloading weights if possible.

    Without network access (or a local torch hub cache) the pretrained
    download fails; we then fall back to a deterministic seeded
    initialization so exports stay reproducible, and report that in the
    manifest.
    """
    import torch
    import torchvision.models as tvm

    ctor = {"squeezenet": tvm.squeezenet1_1, "vgg16": tvm.vgg16,
            "alexnet": tvm.alexnet}
    if model_name not in ctor:
        raise ExportError(f"unknown model {model_name!r}")
    if pretrained:
        try:
            model = ctor[model_name](weights="IMAGENET1K_V1")
            return model.eval(), True
        except Exception:
            pass
    torch.manual_seed(FALLBACK_SEED)
    model = ctor[model_name](weights=None)
    return model.eval(), False


def extract_entries(model, model_name):
    """Pull the mapped parameters out of a model's state dict.

    Raises ExportError listing every offending key when shapes disagree with
    the spec table or when a parameter is not float32 (narrowing must never
    happen silently).
    """
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    entries = {}
    manifest_rows = []
    problems = []
    for zoo_name, key, shape in parameter_table(model_name):
        if zoo_name not in state:
            problems.append(f"{zoo_name}: missing from state dict")
            continue
        arr = state[zoo_name]
        if arr.dtype != np.float32:
            problems.append(f"{zoo_name}: dtype {arr.dtype}, expected float32")
            continue
        if arr.shape != shape:
            problems.append(f"{zoo_name} -> {key}: shape {arr.shape}, "
                            f"expected {shape}")
            continue
        entries[key] = arr
        manifest_rows.append(
            {"zoo": zoo_name, "key": key, "shape": list(shape)})
    if problems:
        raise ExportError("export aborted:\n  " + "\n  ".join(problems))
    return entries, manifest_rows

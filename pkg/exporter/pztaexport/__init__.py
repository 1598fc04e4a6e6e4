"""Export torchvision backbone weights into PZTA tensor archives."""

import json

from .models import (
    ExportError,
    PREPROCESS_METADATA,
    build_model,
    extract_entries,
    parameter_table,
)
from .writer import write_pzta

MODELS = ("squeezenet", "vgg16", "alexnet")


def export(model_name, out_path, manifest_path=None, model=None):
    """Write a PZTA archive for MODEL_NAME; returns the manifest dict.

    `model` lets callers (tests, mainly) supply an already-built network
    instead of hitting the zoo.
    """
    if model is None:
        model, pretrained = build_model(model_name)
    else:
        pretrained = None
    entries, rows = extract_entries(model, model_name)
    metadata = dict(PREPROCESS_METADATA)
    metadata["spec.name"] = model_name
    write_pzta(out_path, entries, metadata)
    manifest = {
        "spec": model_name,
        "pretrained": pretrained,
        "parameters": rows,
        "metadata": metadata,
    }
    if manifest_path:
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2)
    return manifest

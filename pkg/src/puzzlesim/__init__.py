"""Cross-reference artifact maps from unaligned same-scene references."""

from .archive import TensorArchive, load_archive, save_archive
from .errors import (
    FormatError,
    IndexMismatchError,
    InpainterError,
    InputTooSmallError,
    PuzzleSimError,
    ValidationError,
)
from .inference import FeatureStack, conv2d, forward, maxpool2d, relu
from .metric import (
    ReferenceIndex,
    SimilarityMap,
    build_index,
    load_index,
    max_cosine_tiled,
    puzzle_similarity,
    save_index,
)
from .netspec import NetworkSpec, builtin_spec, builtin_spec_names
from .tensor import bilinear_resize, load_image, read_sim_map, save_heatmap

__version__ = "0.1.0"

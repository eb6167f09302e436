"""patchmosaic: rebuild and animate grayscale images from clustered patches.

The pipeline has three phases: cut a corpus of images into fixed-size
patches and cluster them by visual similarity (k-means on mean-centered
vectors); match each cell of a target image to its nearest cluster; and
render stills or frame sequences by repeatedly drawing random members
of the matched clusters.
"""

from .analysis import (
    ComponentGrid,
    dct_basis,
    load_components,
    pca_components,
    render_montage,
    save_components,
)
from .animation import FrameSequence, generate_frames, write_frames
from .clustering import (
    ClusterModel,
    assign_step,
    kmeans,
    load_model,
    nearest_cluster,
    objective,
    save_model,
    update_step,
)
from .errors import DataError, PatchmosaicError, ValidationError
from .image_io import GrayImage, load_image, prepare_image, save_image, to_grayscale
from .patching import (
    CenteredPatch,
    Patch,
    PatchLibrary,
    PatchRef,
    assemble,
    build_library,
    center_patch,
    center_vectors,
    extract_patches,
    load_library,
    load_manifest,
    manifest_digest,
    patch_count,
    save_library,
)
from .reconstruction import (
    ReconstructionGrid,
    histogram_match,
    match_target,
    reconstruct,
    sample_member,
    write_grid_sidecar,
)

__version__ = "0.1.0"

__all__ = [
    "CenteredPatch",
    "ClusterModel",
    "ComponentGrid",
    "DataError",
    "FrameSequence",
    "GrayImage",
    "Patch",
    "PatchLibrary",
    "PatchRef",
    "PatchmosaicError",
    "ReconstructionGrid",
    "ValidationError",
    "assemble",
    "assign_step",
    "build_library",
    "center_patch",
    "center_vectors",
    "dct_basis",
    "extract_patches",
    "generate_frames",
    "histogram_match",
    "kmeans",
    "load_components",
    "load_image",
    "load_library",
    "load_manifest",
    "load_model",
    "manifest_digest",
    "match_target",
    "nearest_cluster",
    "objective",
    "patch_count",
    "pca_components",
    "prepare_image",
    "reconstruct",
    "render_montage",
    "sample_member",
    "save_components",
    "save_image",
    "save_library",
    "save_model",
    "to_grayscale",
    "update_step",
    "write_frames",
    "write_grid_sidecar",
]

"""Frame sequences: the sampling step repeated with fresh randomness.

Cluster matching runs once; every frame then redraws each cell from
its matched cluster using the (seed, frame, cell) stream. Frame 0 is
bit-identical to a single reconstruction with the same seed. Frames
land on disk as 8-bit grayscale PNGs next to a text manifest that
records the seed, the config (plus its hash), and a digest of every
frame's pixel bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .clustering import ClusterModel
from .errors import ValidationError
from .image_io import GrayImage, save_image
from .patching import PatchLibrary
from .reconstruction import (
    ReconstructionGrid,
    _target_patches,
    check_model_library,
    match_target,
    render_frame,
)

MANIFEST_NAME = "manifest.txt"


def frame_name(index: int) -> str:
    return f"frame_{index:05d}.png"


def frame_digest(image: GrayImage) -> str:
    """SHA-256 of the frame's raw pixel bytes (row-major)."""
    return hashlib.sha256(image.tobytes()).hexdigest()


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a config snapshot."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(eq=False)
class FrameSequence:
    seed: int
    frames: list[GrayImage]
    grids: list[ReconstructionGrid]
    config: dict = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.grids):
            raise ValidationError("frames and grids must pair up one to one")


def generate_frames(
    target: GrayImage,
    model: ClusterModel,
    library: PatchLibrary,
    frame_count: int,
    seed: int,
    match_histograms: bool = True,
    workers: int = 1,
) -> FrameSequence:
    """Render frame_count independent redraws of the target mosaic."""
    if frame_count < 1:
        raise ValidationError(f"frame_count must be >= 1; got {frame_count}")
    check_model_library(model, library)
    clusters = match_target(target, model, workers)
    reference = _target_patches(target, model.n) if match_histograms else None

    frames: list[GrayImage] = []
    grids: list[ReconstructionGrid] = []
    for f in range(frame_count):
        image, grid = render_frame(
            clusters, model, library, seed,
            frame_index=f, reference_patches=reference, workers=workers,
        )
        frames.append(image)
        grids.append(grid)

    config = {
        "width": target.width,
        "height": target.height,
        "patch_side": model.n,
        "clusters": model.k,
        "frame_count": frame_count,
        "seed": seed,
        "histogram_match": match_histograms,
        "model_seed": model.seed,
        "manifest_sha256": model.manifest_digest,
    }
    return FrameSequence(seed=seed, frames=frames, grids=grids, config=config)


def write_frames(sequence: FrameSequence, directory) -> list[Path]:
    """Write frame PNGs plus the manifest; returns the paths written.

    Manifest layout: `key = value` lines for the seed, the config
    snapshot and its SHA-256, then one `<filename> sha256=<hex>` line
    per frame in order. Digests cover pixel bytes, so a reloaded frame
    can be checked without re-encoding.
    """
    if sequence.frame_count == 0:
        raise ValidationError("a frame sequence must hold at least one frame")
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    lines = [
        "# patchmosaic frame manifest v1",
        f"seed = {sequence.seed}",
        f"frame_count = {sequence.frame_count}",
        f"config_sha256 = {config_digest(sequence.config)}",
    ]
    for key in sorted(sequence.config):
        value = sequence.config[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"config.{key} = {value}")
    for index, image in enumerate(sequence.frames):
        name = frame_name(index)
        save_image(image, out_dir / name)
        written.append(out_dir / name)
        lines.append(f"{name} sha256={frame_digest(image)}")

    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(manifest)
    return written

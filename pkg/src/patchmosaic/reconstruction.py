"""Rebuild a target image as a mosaic of real library patches.

The target is cut into a non-overlapping grid, each grid cell is
matched to its nearest centroid in centered space, and the pixels
placed in the cell are a uniformly drawn member of that cluster, raw
(no mean correction). Per-patch histogram matching against the target
cell is applied by default to keep local brightness plausible.

Every cell draws from its own RNG stream derived from (seed, frame,
cell), so results are reproducible cell by cell and independent of
evaluation order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel
from .errors import DataError, ValidationError
from .image_io import GrayImage
from .parallel import chunk_spans, check_workers, run_spans
from .patching import Patch, PatchLibrary, PatchRef, assemble, center_vectors, extract_arrays
from .rng import cell_rng, check_seed

# Cells per chunk when rendering; fixed so worker count cannot change
# chunk boundaries (it cannot change results either way, but keeping
# the schedule fixed makes that easy to see).
_CELL_CHUNK = 1024
_MATCH_CHUNK = 2048


@dataclass(eq=False)
class ReconstructionGrid:
    """Which source patch landed in each cell of one rendered frame.

    Cells are indexed row-major: cell = row * grid_side + col. For each
    cell this records the matched cluster, the position of the drawn
    member within that cluster's list, and the member's source
    coordinates as (image_index, x, y) rows.
    """

    grid_side: int
    patch_side: int
    clusters: np.ndarray
    member_pos: np.ndarray
    source_refs: np.ndarray

    def __post_init__(self) -> None:
        cells = self.grid_side * self.grid_side
        self.clusters = np.asarray(self.clusters, dtype=np.int32)
        self.member_pos = np.asarray(self.member_pos, dtype=np.int64)
        self.source_refs = np.asarray(self.source_refs, dtype=np.int32)
        if self.clusters.shape != (cells,) or self.member_pos.shape != (cells,):
            raise ValidationError("grid arrays must hold one entry per cell")
        if self.source_refs.shape != (cells, 3):
            raise ValidationError("source_refs must be (cells, 3)")

    @property
    def cells(self) -> int:
        return self.grid_side * self.grid_side

    def ref(self, cell: int) -> PatchRef:
        image_index, x, y = (int(v) for v in self.source_refs[cell])
        return PatchRef(image_index, x, y, self.patch_side)


def check_model_library(model: ClusterModel, library: PatchLibrary) -> None:
    """Refuse model/library pairs that were not built together."""
    if (model.n, model.stride, model.image_side) != (
        library.n,
        library.stride,
        library.image_side,
    ):
        raise DataError(
            "model geometry (n={}, stride={}, side={}) does not match the "
            "library (n={}, stride={}, side={})".format(
                model.n, model.stride, model.image_side,
                library.n, library.stride, library.image_side,
            )
        )
    if model.patch_count != len(library):
        raise DataError(
            f"model was fitted on {model.patch_count} patches; "
            f"library holds {len(library)}"
        )
    if model.manifest_digest != library.digest:
        raise DataError("model manifest digest does not match the library")
    if model.content_digest != library.content_digest:
        raise DataError("model was fitted on different patch data than this library")


def _nearest_direct(queries: np.ndarray, centroids: np.ndarray, workers: int) -> np.ndarray:
    """Nearest centroid per query row, by exact squared distance."""
    k = centroids.shape[0]

    def one(start: int, stop: int) -> np.ndarray:
        q = queries[start:stop]
        dist = np.empty((q.shape[0], k), dtype=np.float64)
        for j in range(k):
            diff = q - centroids[j]
            dist[:, j] = np.einsum("ij,ij->i", diff, diff)
        return np.argmin(dist, axis=1).astype(np.int32)

    parts = run_spans(one, chunk_spans(queries.shape[0], _MATCH_CHUNK), workers)
    if not parts:
        return np.empty(0, dtype=np.int32)
    return np.concatenate(parts)


def _target_patches(target: GrayImage, n: int) -> np.ndarray:
    target.require_pipeline_ready()
    if n > target.width:
        raise ValidationError(
            f"patch side {n} exceeds the target side {target.width}"
        )
    return extract_arrays(target.pixels, n, n)


def match_target(target: GrayImage, model: ClusterModel, workers: int = 1) -> np.ndarray:
    """Nearest cluster for every non-overlapping cell of the target.

    Cells are compared in centered space, same as clustering; ties go
    to the lowest cluster index.
    """
    check_workers(workers)
    raw = _target_patches(target, model.n)
    centered, _ = center_vectors(raw)
    return _nearest_direct(centered, model.centroids, workers)


def sample_member(cluster: int, model: ClusterModel, rng: np.random.Generator) -> PatchRef:
    """Uniform draw from one cluster's member list (one rng call)."""
    members = model.members[cluster]
    if members.size == 0:
        raise DataError(f"cluster {cluster} has no members")
    pick = int(rng.integers(members.size))
    return model.patch_ref(int(members[pick]))


def _match_hist_values(source: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Histogram-match one uint8 patch onto a reference of equal size.

    Integer CDFs make the map exact: value v goes to the smallest w
    with ref_cdf[w] >= src_cdf[v]. Equal pixel counts guarantee the
    top value maps within range, and matching a patch to itself is the
    identity.
    """
    src_cdf = np.cumsum(np.bincount(source, minlength=256))
    ref_cdf = np.cumsum(np.bincount(reference, minlength=256))
    mapping = np.searchsorted(ref_cdf, src_cdf, side="left").astype(np.uint8)
    return mapping[source]


def histogram_match(source: Patch, reference: Patch) -> Patch:
    """Remap source's gray levels so its histogram tracks reference's."""
    if source.n != reference.n:
        raise ValidationError(
            f"patch sides differ: {source.n} vs {reference.n}"
        )
    return Patch(source.n, _match_hist_values(source.values, reference.values))


def render_frame(
    clusters: np.ndarray,
    model: ClusterModel,
    library: PatchLibrary,
    seed: int,
    frame_index: int,
    reference_patches: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[GrayImage, ReconstructionGrid]:
    """Draw one frame: a fresh member per cell, assembled into an image.

    clusters gives the matched cluster per cell (from match_target).
    When reference_patches is provided (cells x n^2 uint8 rows of the
    target), each drawn patch is histogram-matched to its cell first.
    """
    check_seed(seed)
    check_workers(workers)
    clusters = np.asarray(clusters)
    cells = clusters.size
    grid_side = int(np.sqrt(cells))
    if grid_side * grid_side != cells:
        raise ValidationError(f"{cells} cells do not form a square grid")
    if reference_patches is not None and reference_patches.shape != (cells, model.n**2):
        raise ValidationError("one reference patch per cell is required")

    d = model.n * model.n

    def one(start: int, stop: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = np.empty((stop - start, d), dtype=np.uint8)
        pos = np.empty(stop - start, dtype=np.int64)
        idx = np.empty(stop - start, dtype=np.int64)
        for cell in range(start, stop):
            members = model.members[int(clusters[cell])]
            if members.size == 0:
                raise DataError(f"cluster {int(clusters[cell])} has no members")
            pick = int(cell_rng(seed, frame_index, cell).integers(members.size))
            library_index = int(members[pick])
            values = library.vectors[library_index]
            if reference_patches is not None:
                values = _match_hist_values(values, reference_patches[cell])
            out[cell - start] = values
            pos[cell - start] = pick
            idx[cell - start] = library_index
        return out, pos, idx

    parts = run_spans(one, chunk_spans(cells, _CELL_CHUNK), workers)
    blocks = np.concatenate([p[0] for p in parts])
    member_pos = np.concatenate([p[1] for p in parts])
    indices = np.concatenate([p[2] for p in parts])

    image = assemble(blocks, grid_side * model.n)
    grid = ReconstructionGrid(
        grid_side=grid_side,
        patch_side=model.n,
        clusters=clusters.astype(np.int32),
        member_pos=member_pos,
        source_refs=library.refs[indices],
    )
    return image, grid


def reconstruct(
    target: GrayImage,
    model: ClusterModel,
    library: PatchLibrary,
    seed: int,
    match_histograms: bool = True,
    workers: int = 1,
) -> tuple[GrayImage, ReconstructionGrid]:
    """Single-frame reconstruction of the target from library patches."""
    check_model_library(model, library)
    clusters = match_target(target, model, workers)
    reference = _target_patches(target, model.n) if match_histograms else None
    return render_frame(
        clusters, model, library, seed,
        frame_index=0, reference_patches=reference, workers=workers,
    )


def write_grid_sidecar(grid: ReconstructionGrid, path, config: dict) -> None:
    """Text sidecar: run parameters as comments, one line per cell."""
    lines = ["# patchmosaic reconstruction grid v1"]
    for key, value in config.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"# {key} = {value}")
    lines.append("# columns: cell_x cell_y cluster image_index src_x src_y")
    for cell in range(grid.cells):
        row, col = divmod(cell, grid.grid_side)
        image_index, x, y = (int(v) for v in grid.source_refs[cell])
        lines.append(
            f"{col} {row} {int(grid.clusters[cell])} {image_index} {x} {y}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

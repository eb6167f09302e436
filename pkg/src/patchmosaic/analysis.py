"""Corpus analytics: PCA of patches, 2D DCT bases, montage rendering.

PCA and DCT both yield orthonormal sets of length-n^2 vectors; the
montage renderer tiles any such set (or a model's centroids) into one
grayscale overview image with per-tile contrast normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel
from .container import read_container, write_container
from .errors import DataError, ValidationError
from .image_io import GrayImage
from .patching import PatchLibrary

COMPONENTS_MAGIC = b"PMCG"
COMPONENTS_FORMAT = 1

ORDER_PCA = "pca-descending-eigenvalue"
ORDER_DCT = "dct-zigzag"
ORDER_CLUSTER_SIZE = "cluster-size-descending"

# Total corpus variance at or below this is treated as no variance at
# all; identical patches land many orders of magnitude below it while
# any real gray-level variation sits far above.
_DEGENERATE_VARIANCE = 1e-9


@dataclass(eq=False)
class ComponentGrid:
    """An ordered stack of length-n^2 component vectors."""

    n: int
    vectors: np.ndarray
    ordering: str

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.n * self.n:
            raise ValidationError(
                f"vectors must be (count, {self.n * self.n}); got {self.vectors.shape}"
            )
        if self.vectors.shape[0] < 1:
            raise ValidationError("a component grid needs at least one vector")

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each vector so its largest-magnitude coordinate is positive.

    np.argmax takes the first maximum, which settles magnitude ties on
    the earliest coordinate.
    """
    out = vectors.copy()
    for row in out:
        lead = row[np.argmax(np.abs(row))]
        if lead < 0:
            row *= -1.0
    return out


def pca_components(library: PatchLibrary, m: int) -> ComponentGrid:
    """Top-m principal directions of the library's centered patches.

    Directions are eigenvectors of the covariance of the centered
    patches (taken around the corpus mean), in descending eigenvalue
    order. Computed through an SVD of the centered data matrix, which
    shares eigenvectors with the covariance but avoids forming it.
    """
    d = library.n * library.n
    if not 1 <= m <= d:
        raise ValidationError(f"m must be in [1, {d}]; got {m}")
    if len(library) == 0:
        raise ValidationError("library is empty")

    centered, _ = library.centered()
    deviations = centered - centered.mean(axis=0)
    total_variance = float(np.einsum("ij,ij->", deviations, deviations)) / len(library)
    if total_variance <= _DEGENERATE_VARIANCE:
        raise ValidationError(
            "degenerate corpus: patches have no variance to analyze"
        )
    # full_matrices keeps all n^2 right singular vectors even when the
    # corpus has fewer patches than coordinates, so m may go up to n^2.
    _, _, vt = np.linalg.svd(deviations, full_matrices=True)
    return ComponentGrid(n=library.n, vectors=_fix_signs(vt[:m]), ordering=ORDER_PCA)


def zigzag_order(n: int) -> list[tuple[int, int]]:
    """(u, v) frequency pairs by ascending u+v, then ascending u."""
    pairs = [(u, v) for u in range(n) for v in range(n)]
    pairs.sort(key=lambda uv: (uv[0] + uv[1], uv[0]))
    return pairs


def dct_basis(n: int, m: int) -> ComponentGrid:
    """First m orthonormal 2D DCT-II basis functions for n x n patches.

    B_{u,v}(x, y) = a(u) a(v) cos(pi (2x+1) u / 2n) cos(pi (2y+1) v / 2n)
    with a(0) = sqrt(1/n) and a(u>0) = sqrt(2/n), zigzag-ordered.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 1 <= m <= n * n:
        raise ValidationError(f"m must be in [1, {n * n}]; got {m}")

    alpha = np.full(n, math.sqrt(2.0 / n))
    alpha[0] = math.sqrt(1.0 / n)
    grid = np.arange(n, dtype=np.float64)
    # cosines[f, i] = cos(pi (2i+1) f / 2n)
    cosines = np.cos(np.pi * np.outer(grid, 2.0 * grid + 1.0) / (2.0 * n))

    vectors = np.empty((m, n * n), dtype=np.float64)
    for row, (u, v) in enumerate(zigzag_order(n)[:m]):
        tile = alpha[v] * alpha[u] * np.outer(cosines[v], cosines[u])
        vectors[row] = tile.ravel()
    return ComponentGrid(n=n, vectors=vectors, ordering=ORDER_DCT)


def _normalize_tile(vector: np.ndarray, n: int) -> np.ndarray:
    lo = float(vector.min())
    hi = float(vector.max())
    if hi == lo:
        return np.full((n, n), 128, dtype=np.uint8)
    scaled = (vector - lo) * (255.0 / (hi - lo))
    return np.floor(scaled + 0.5).astype(np.uint8).reshape(n, n)


def render_montage(source: ComponentGrid | ClusterModel, columns: int) -> GrayImage:
    """Tile components (or centroids by descending cluster size) into
    one image, each tile stretched to [0,255], 1-pixel black separators."""
    if columns < 1:
        raise ValidationError("columns must be >= 1")
    if isinstance(source, ClusterModel):
        order = np.argsort(-source.member_counts(), kind="stable")
        vectors = source.centroids[order]
        n = source.n
    else:
        vectors = source.vectors
        n = source.n
    count = vectors.shape[0]
    if count == 0:
        raise ValidationError("nothing to render")

    rows = -(-count // columns)
    height = rows * n + (rows - 1)
    width = columns * n + (columns - 1)
    canvas = np.zeros((height, width), dtype=np.uint8)
    for i in range(count):
        r, c = divmod(i, columns)
        top = r * (n + 1)
        left = c * (n + 1)
        canvas[top : top + n, left : left + n] = _normalize_tile(vectors[i], n)
    return GrayImage(canvas)


def save_components(grid: ComponentGrid, path) -> None:
    """Raw component dump: JSON header + little-endian float64 block."""
    header = {
        "format": COMPONENTS_FORMAT,
        "kind": "component-grid",
        "n": grid.n,
        "count": grid.count,
        "ordering": grid.ordering,
    }
    block = np.ascontiguousarray(grid.vectors, dtype="<f8").tobytes()
    write_container(path, COMPONENTS_MAGIC, header, [block])


def load_components(path) -> ComponentGrid:
    header, payload = read_container(path, COMPONENTS_MAGIC)
    try:
        if header["format"] != COMPONENTS_FORMAT:
            raise DataError(f"unsupported component format {header['format']!r}")
        n = int(header["n"])
        count = int(header["count"])
        ordering = str(header["ordering"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"component header is malformed: {exc}") from exc
    expected = count * n * n * 8
    if len(payload) != expected:
        raise DataError(
            f"component block is {len(payload)} bytes; expected {expected}"
        )
    vectors = np.frombuffer(payload, dtype="<f8").reshape(count, n * n).astype(np.float64)
    return ComponentGrid(n=n, vectors=vectors, ordering=ordering)

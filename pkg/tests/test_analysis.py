"""PCA, DCT basis, and montage rendering against independent oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from patchmosaic import (
    ComponentGrid,
    DataError,
    GrayImage,
    PatchLibrary,
    ValidationError,
    dct_basis,
    load_components,
    pca_components,
    render_montage,
    save_components,
)
from patchmosaic.analysis import zigzag_order

from conftest import rand_library, small_model


def oracle_dct_value(n: int, u: int, v: int, x: int, y: int) -> float:
    """The 2D DCT-II basis evaluated pointwise with math.cos."""
    def alpha(f: int) -> float:
        return math.sqrt(1.0 / n) if f == 0 else math.sqrt(2.0 / n)
    return (
        alpha(u) * alpha(v)
        * math.cos(math.pi * (2 * x + 1) * u / (2 * n))
        * math.cos(math.pi * (2 * y + 1) * v / (2 * n))
    )


def oracle_pca(library: PatchLibrary, m: int) -> np.ndarray:
    """Eigendecomposition of the explicit covariance matrix; same sign
    convention (largest-magnitude coordinate positive, first on ties)."""
    centered, _ = library.centered()
    deviations = centered - centered.mean(axis=0)
    cov = deviations.T @ deviations / len(library)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    components = eigenvectors[:, order].T[:m].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return components


def single_direction_library() -> tuple[PatchLibrary, np.ndarray]:
    """Ten 4x4 patches of the form base + t*v for one integer direction v
    with zero sum, so all centered variation lies along v exactly."""
    v = np.ones(16, dtype=np.int64)
    v[8:] = -1
    tiles = []
    for t in range(-5, 5):
        tiles.append((100 + t * v).astype(np.uint8).reshape(4, 4))
    # lay the ten 4x4 tiles onto two 8x8 images (4 tiles each) plus padding
    images = []
    idx = 0
    for _ in range(3):
        canvas = np.full((8, 8), 100, dtype=np.uint8)
        for q, (r, c) in enumerate(((0, 0), (0, 4), (4, 0), (4, 4))):
            if idx < len(tiles):
                canvas[r : r + 4, c : c + 4] = tiles[idx]
                idx += 1
        images.append(GrayImage(canvas))
    library = PatchLibrary.from_images(images, 4, 4)
    unit = v.astype(np.float64) / np.linalg.norm(v)
    return library, unit


def test_dct_first_basis_is_constant():
    for n in (2, 4, 8):
        grid = dct_basis(n, 1)
        assert np.allclose(grid.vectors[0], 1.0 / n, atol=1e-15)


def test_dct_n2_entries_are_half_magnitude():
    grid = dct_basis(2, 4)
    assert np.all(np.isclose(np.abs(grid.vectors), 0.5, atol=1e-15))


def test_dct_gram_is_identity():
    for n in (2, 8, 16):
        grid = dct_basis(n, n * n)
        gram = grid.vectors @ grid.vectors.T
        assert np.abs(gram - np.eye(n * n)).max() <= 1e-10


def test_dct_matches_pointwise_cosine_oracle():
    n = 4
    grid = dct_basis(n, 16)
    for row, (u, v) in enumerate(zigzag_order(n)):
        for y in range(n):
            for x in range(n):
                expected = oracle_dct_value(n, u, v, x, y)
                assert grid.vectors[row, y * n + x] == pytest.approx(expected, abs=1e-12)


def test_dct_zigzag_ordering():
    order = zigzag_order(4)
    assert order[:6] == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]
    sums = [u + v for u, v in order]
    assert sums == sorted(sums)
    for prev, cur in zip(order, order[1:]):
        if prev[0] + prev[1] == cur[0] + cur[1]:
            assert prev[0] < cur[0]


def test_dct_of_constant_patch_has_single_coefficient():
    n = 8
    grid = dct_basis(n, n * n)
    constant = np.full(n * n, 9.0)
    coefficients = grid.vectors @ constant
    assert coefficients[0] == pytest.approx(9.0 * n, rel=1e-12)
    assert np.abs(coefficients[1:]).max() <= 1e-10


def test_dct_validation():
    with pytest.raises(ValidationError):
        dct_basis(4, 0)
    with pytest.raises(ValidationError):
        dct_basis(4, 17)
    with pytest.raises(ValidationError):
        dct_basis(0, 1)


def test_pca_recovers_single_direction():
    library, direction = single_direction_library()
    grid = pca_components(library, 1)
    assert abs(float(grid.vectors[0] @ direction)) >= 1.0 - 1e-6
    oracle = oracle_pca(library, 1)
    assert abs(float(oracle[0] @ direction)) >= 1.0 - 1e-6
    assert abs(float(grid.vectors[0] @ oracle[0])) >= 1.0 - 1e-9


def test_pca_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(91)
    library = rand_library(rng, count=2, side=16, n=4)
    m = 6
    grid = pca_components(library, m)
    oracle = oracle_pca(library, m)
    # eigenvalues of a random corpus are distinct, so components must
    # align one for one (same sign after the shared convention)
    for got, expected in zip(grid.vectors, oracle):
        assert abs(float(got @ expected)) >= 1.0 - 1e-9


def test_pca_orthonormal():
    rng = np.random.default_rng(92)
    library = rand_library(rng, count=2, side=16, n=4)
    grid = pca_components(library, 16)
    gram = grid.vectors @ grid.vectors.T
    assert np.abs(gram - np.eye(16)).max() <= 1e-10


def test_pca_full_rank_round_trip():
    rng = np.random.default_rng(93)
    library = rand_library(rng, count=2, side=16, n=4)
    grid = pca_components(library, 16)
    centered, _ = library.centered()
    coefficients = centered @ grid.vectors.T
    restored = coefficients @ grid.vectors
    err = np.linalg.norm(restored - centered) / np.linalg.norm(centered)
    assert err <= 1e-8


def test_pca_invariant_to_patch_order():
    rng = np.random.default_rng(94)
    library = rand_library(rng, count=2, side=16, n=4)
    perm = rng.permutation(len(library))
    shuffled = PatchLibrary(
        n=library.n, stride=library.stride, image_side=library.image_side,
        manifest=library.manifest, refs=library.refs[perm],
        vectors=library.vectors[perm],
    )
    a = pca_components(library, 5).vectors
    b = pca_components(shuffled, 5).vectors
    for va, vb in zip(a, b):
        assert abs(float(va @ vb)) >= 1.0 - 1e-9


def test_pca_degenerate_corpus():
    img = GrayImage(np.full((16, 16), 55, dtype=np.uint8))
    library = PatchLibrary.from_images([img], 4, 4)
    with pytest.raises(ValidationError, match="degenerate corpus"):
        pca_components(library, 3)


def test_pca_validation():
    rng = np.random.default_rng(95)
    library = rand_library(rng, count=1, side=16, n=4)
    with pytest.raises(ValidationError):
        pca_components(library, 0)
    with pytest.raises(ValidationError):
        pca_components(library, 17)


def test_montage_dimensions():
    grid = dct_basis(32, 64)
    image = render_montage(grid, 8)
    assert (image.width, image.height) == (263, 263)  # 8*32 + 7 separators


def test_montage_tiles_and_separators():
    vectors = np.stack([
        np.full(16, 3.0),                      # constant -> mid gray
        np.linspace(0.0, 15.0, 16),           # full ramp -> 0..255
    ])
    grid = ComponentGrid(n=4, vectors=vectors, ordering="dct-zigzag")
    image = render_montage(grid, 2)
    assert (image.height, image.width) == (4, 9)
    assert np.all(image.pixels[:, 4] == 0)  # separator column
    assert np.all(image.pixels[:, :4] == 128)
    ramp = image.pixels[:, 5:].ravel()
    assert ramp[0] == 0 and ramp[-1] == 255
    assert np.all(np.diff(ramp.astype(np.int32)) >= 0)


def test_montage_rows_round_up():
    grid = dct_basis(4, 5)
    image = render_montage(grid, 2)
    # 3 rows of 2 columns: height 3*4+2, width 2*4+1
    assert (image.height, image.width) == (14, 9)


def test_montage_centroids_ordered_by_cluster_size():
    rng = np.random.default_rng(96)
    library, model = small_model(rng, k=4, seed=80, count=2, side=32, n=8)
    image = render_montage(model, model.k)
    counts = model.member_counts()
    order = np.argsort(-counts, kind="stable")
    for slot, j in enumerate(order):
        left = slot * (model.n + 1)
        tile = image.pixels[: model.n, left : left + model.n]
        vector = model.centroids[int(j)]
        lo, hi = float(vector.min()), float(vector.max())
        expected = np.floor((vector - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)
        assert np.array_equal(tile.ravel(), expected)


def test_montage_validation():
    grid = dct_basis(4, 4)
    with pytest.raises(ValidationError):
        render_montage(grid, 0)


def test_components_file_round_trip(tmp_path):
    grid = dct_basis(8, 20)
    path = tmp_path / "c.pmcg"
    save_components(grid, path)
    again = load_components(path)
    assert again.n == 8 and again.count == 20
    assert again.ordering == grid.ordering
    assert again.vectors.tobytes() == grid.vectors.tobytes()
    save_components(again, tmp_path / "c2.pmcg")
    assert path.read_bytes() == (tmp_path / "c2.pmcg").read_bytes()


def test_components_file_corruption(tmp_path):
    grid = dct_basis(4, 4)
    path = tmp_path / "c.pmcg"
    save_components(grid, path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.pmcg"
    bad.write_bytes(raw[:-4])
    with pytest.raises(DataError):
        load_components(bad)
    wrong = tmp_path / "wrong.pmcg"
    wrong.write_bytes(b"ZZZZ" + raw[4:])
    with pytest.raises(DataError):
        load_components(wrong)

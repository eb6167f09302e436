"""Patch extraction, centering, and reassembly.

Images are partitioned into square n x n patches on a stride-s grid,
enumerated row-major by (y, x). Patch vectors are stored row-major;
this order is normative: patch indices, RNG streams, and the library
file format all depend on it.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .container import read_container, write_container
from .errors import DataError, ValidationError
from .image_io import GrayImage, is_power_of_two, load_image

LIBRARY_MAGIC = b"PMLB"
LIBRARY_FORMAT = 1


class PatchRef(NamedTuple):
    """Provenance of one extracted patch."""

    image_index: int
    x: int
    y: int
    n: int


@dataclass(eq=False)
class Patch:
    """A square patch as a row-major vector of n*n 8-bit intensities."""

    n: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if not is_power_of_two(self.n):
            raise ValidationError(f"patch side {self.n} must be a power of two")
        arr = np.asarray(self.values)
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValidationError("patch values must be 8-bit integers")
            if arr.size and (int(arr.min()) < 0 or int(arr.max()) > 255):
                raise ValidationError("patch values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = arr.ravel()
        if arr.size != self.n * self.n:
            raise ValidationError(
                f"patch has {arr.size} values, expected {self.n * self.n}"
            )
        self.values = arr


@dataclass(eq=False)
class CenteredPatch:
    """A patch minus its mean intensity; values sum to zero."""

    n: int
    values: np.ndarray  # float64, length n*n
    mean: float


def patch_count(N: int, n: int, s: int) -> int:
    """Number of patches an N x N image yields with side n and stride s.

    Equals ((N - n) / s + 1)^2, which reduces to (N / n)^2 when s == n.
    """
    for name, value in (("N", N), ("n", n), ("s", s)):
        if not is_power_of_two(value):
            raise ValidationError(f"{name}={value} must be a power of two")
    if n > N:
        raise ValidationError(f"patch side {n} exceeds image side {N}")
    if s > n:
        raise ValidationError(f"stride {s} exceeds patch side {n}")
    if (N - n) % s != 0:
        raise ValidationError(f"(N - n) = {N - n} is not divisible by stride {s}")
    per_axis = (N - n) // s + 1
    return per_axis * per_axis


def extract_arrays(pixels: np.ndarray, n: int, s: int) -> np.ndarray:
    """All patches of an image as an (L, n*n) uint8 array, row-major order."""
    windows = sliding_window_view(pixels, (n, n))[::s, ::s]
    return windows.reshape(-1, n * n).copy()


def _grid_coords(N: int, n: int, s: int) -> np.ndarray:
    """(L, 2) array of (x, y) patch origins in row-major (y, x) order."""
    steps = np.arange(0, N - n + 1, s, dtype=np.int32)
    yy, xx = np.meshgrid(steps, steps, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def extract_patches(
    img: GrayImage, n: int, s: int, image_index: int = 0
) -> list[tuple[PatchRef, Patch]]:
    """Cut an image into patches, returned with their provenance refs."""
    img.require_pipeline_ready()
    N = img.width
    patch_count(N, n, s)  # validates N, n, s
    vectors = extract_arrays(img.pixels, n, s)
    coords = _grid_coords(N, n, s)
    return [
        (PatchRef(image_index, int(x), int(y), n), Patch(n, vec))
        for (x, y), vec in zip(coords, vectors)
    ]


def center_patch(p: Patch) -> CenteredPatch:
    """Subtract the patch's mean intensity; exact for power-of-two sides."""
    mean = float(int(p.values.sum(dtype=np.int64))) / (p.n * p.n)
    values = p.values.astype(np.float64) - mean
    return CenteredPatch(p.n, values, mean)


def center_vectors(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Center rows of an (M, n*n) uint8 matrix; returns (centered, means)."""
    d = vectors.shape[1]
    means = vectors.sum(axis=1, dtype=np.int64).astype(np.float64) / d
    return vectors.astype(np.float64) - means[:, None], means


def assemble(patches: Sequence[Patch] | np.ndarray, N: int) -> GrayImage:
    """Tile non-overlapping patches (row-major) back into an N x N image."""
    if isinstance(patches, np.ndarray):
        vectors = patches
        if vectors.ndim != 2:
            raise ValidationError("patch array must be 2-D (count, n*n)")
        n = int(round(vectors.shape[1] ** 0.5))
        if n * n != vectors.shape[1]:
            raise ValidationError("patch vectors are not square")
    else:
        if not patches:
            raise ValidationError("cannot assemble zero patches")
        n = patches[0].n
        if any(p.n != n for p in patches):
            raise ValidationError("mixed patch sizes in assembly")
        vectors = np.stack([p.values for p in patches])
    if N % n != 0:
        raise ValidationError(f"image side {N} not divisible by patch side {n}")
    cells = N // n
    if vectors.shape[0] != cells * cells:
        raise ValidationError(
            f"got {vectors.shape[0]} patches, expected {cells * cells} "
            f"for an {N}x{N} image with side {n}"
        )
    blocks = vectors.reshape(cells, cells, n, n).astype(np.uint8)
    pixels = blocks.transpose(0, 2, 1, 3).reshape(N, N)
    return GrayImage(pixels.copy())


def load_manifest(path: str | Path) -> list[str]:
    """Read a dataset manifest: one path per line, '#' comments ignored.

    Relative entries are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        entry = Path(stripped)
        if not entry.is_absolute():
            entry = base / entry
        entries.append(str(entry))
    return entries


def manifest_digest(entries: Sequence[str]) -> str:
    """SHA-256 over the ordered manifest entries, newline-joined."""
    joined = "\n".join(entries).encode("utf-8")
    return hashlib.sha256(joined).hexdigest()


@dataclass(eq=False)
class PatchLibrary:
    """Every extracted source patch plus provenance, in manifest order."""

    n: int
    stride: int
    image_side: int
    manifest: list[str]
    refs: np.ndarray  # (M, 3) int32: image_index, x, y
    vectors: np.ndarray  # (M, n*n) uint8, row-major patch data
    digest: str = field(default="")
    content_digest: str = field(default="")

    def __post_init__(self) -> None:
        if self.refs.shape[0] != self.vectors.shape[0]:
            raise ValidationError("refs and vectors disagree on patch count")
        if self.vectors.shape[1] != self.n * self.n:
            raise ValidationError("vector length does not match patch side")
        if not self.digest:
            self.digest = manifest_digest(self.manifest)
        if not self.content_digest:
            # binds models to the actual pixels, not just the file names
            self.content_digest = hashlib.sha256(self.vectors.tobytes()).hexdigest()

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def patches_per_image(self) -> int:
        return patch_count(self.image_side, self.n, self.stride)

    def ref(self, index: int) -> PatchRef:
        img, x, y = (int(v) for v in self.refs[index])
        return PatchRef(img, x, y, self.n)

    def patch(self, index: int) -> Patch:
        return Patch(self.n, self.vectors[index].copy())

    def index_of(self, ref: PatchRef) -> int:
        """Library index of a ref, from the normative row-major layout."""
        cols = (self.image_side - self.n) // self.stride + 1
        return ref.image_index * cols * cols + (ref.y // self.stride) * cols + (
            ref.x // self.stride
        )

    def centered(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered float64 patch matrix and the per-patch means."""
        return center_vectors(self.vectors)

    @classmethod
    def from_images(
        cls,
        images: Sequence[GrayImage],
        n: int,
        s: int,
        names: Sequence[str] | None = None,
    ) -> "PatchLibrary":
        """Build a library from in-memory images (all the same side)."""
        if not images:
            raise ValidationError("cannot build a library from zero images")
        if names is None:
            names = [f"<image:{i}>" for i in range(len(images))]
        if len(names) != len(images):
            raise ValidationError("names and images differ in length")
        N = images[0].width
        for name, img in zip(names, images):
            if not img.pipeline_ready:
                raise ValidationError(
                    f"{name}: image {img.width}x{img.height} is not prepared "
                    "(square power-of-two side required)"
                )
            if img.width != N:
                raise ValidationError(
                    f"{name}: side {img.width} differs from first image side {N}"
                )
        L = patch_count(N, n, s)
        coords = _grid_coords(N, n, s)
        refs = np.empty((len(images) * L, 3), dtype=np.int32)
        vectors = np.empty((len(images) * L, n * n), dtype=np.uint8)
        for t, img in enumerate(images):
            refs[t * L : (t + 1) * L, 0] = t
            refs[t * L : (t + 1) * L, 1:] = coords
            vectors[t * L : (t + 1) * L] = extract_arrays(img.pixels, n, s)
        return cls(
            n=n,
            stride=s,
            image_side=N,
            manifest=list(names),
            refs=refs,
            vectors=vectors,
        )


def build_library(
    manifest: Sequence[str], n: int, s: int, workers: int = 1
) -> PatchLibrary:
    """Extract and concatenate patches from every manifest image, in order."""
    entries = list(manifest)
    if not entries:
        raise ValidationError("manifest lists no images")

    def load_one(entry: str) -> GrayImage:
        try:
            img = load_image(entry)
        except OSError as exc:
            raise ValidationError(f"{entry}: cannot read image ({exc})") from None
        if not img.pipeline_ready:
            raise ValidationError(
                f"{entry}: image {img.width}x{img.height} is not prepared "
                "(square power-of-two side required)"
            )
        return img

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(load_one, entries))
    else:
        images = [load_one(entry) for entry in entries]
    return PatchLibrary.from_images(images, n, s, names=entries)


def save_library(library: PatchLibrary, path: str | Path) -> None:
    """Write the library container (JSON header + refs and patch blocks)."""
    header = {
        "format": LIBRARY_FORMAT,
        "kind": "patch-library",
        "n": library.n,
        "stride": library.stride,
        "image_side": library.image_side,
        "count": len(library),
        "manifest": library.manifest,
        "manifest_sha256": library.digest,
        "content_sha256": library.content_digest,
    }
    refs_block = np.ascontiguousarray(library.refs, dtype="<i4").tobytes()
    patch_block = np.ascontiguousarray(library.vectors).tobytes()
    write_container(path, LIBRARY_MAGIC, header, [refs_block, patch_block])


def load_library(path: str | Path) -> PatchLibrary:
    header, tail = read_container(path, LIBRARY_MAGIC)
    try:
        n = int(header["n"])
        stride = int(header["stride"])
        image_side = int(header["image_side"])
        count = int(header["count"])
        manifest = list(header["manifest"])
        digest = str(header["manifest_sha256"])
        content = str(header["content_sha256"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid library header ({exc})") from None
    refs_size = count * 3 * 4
    patch_size = count * n * n
    if len(tail) != refs_size + patch_size:
        raise DataError(
            f"{path}: library payload has {len(tail)} bytes, "
            f"expected {refs_size + patch_size}"
        )
    refs = np.frombuffer(tail[:refs_size], dtype="<i4").reshape(count, 3)
    vectors = np.frombuffer(tail[refs_size:], dtype=np.uint8).reshape(count, n * n)
    library = PatchLibrary(
        n=n,
        stride=stride,
        image_side=image_side,
        manifest=manifest,
        refs=refs.astype(np.int32),
        vectors=vectors.copy(),
        digest=digest,
    )
    if library.content_digest != content:
        raise DataError(f"{path}: patch data does not match its recorded digest")
    return library

"""Lloyd's k-means over mean-centered patch vectors.

Assignment minimizes squared Euclidean distance; the update step moves
each centroid to the exact mean of its members. Iteration stops once
every centroid moved less than epsilon (L2) AND the assignment is
stable, so a converged model is a true fixed point: re-running an
assign or update step on it changes nothing. Multiple restarts run
from independent RNG streams and the lowest-objective run wins.

Everything here is deterministic for a given seed. Chunk sizes are
fixed constants, partial results merge in ascending chunk order, and
distance ties break toward the lowest index, so outputs are identical
byte for byte no matter how many worker threads are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .container import read_container, write_container
from .errors import DataError, ValidationError
from .patching import CenteredPatch, PatchLibrary, PatchRef, patch_count
from .parallel import chunk_spans, check_workers, run_spans
from .rng import check_seed, clustering_rng

MODEL_MAGIC = b"PMCM"
MODEL_FORMAT = 1

# Patches per chunk in the assign/update/objective loops. A workload
# constant, never derived from the worker count (see parallel module).
_CHUNK = 8192

IterationCallback = Callable[[int, int, float, float], None]


@dataclass(eq=False)
class ClusterModel:
    """A fitted clustering of one patch library.

    centroids holds k mean-centered vectors, row j the center of
    cluster j. members[j] lists the library indices assigned to
    cluster j in ascending order; every cluster is non-empty and each
    centroid is the exact mean of its members' centered vectors.
    The library geometry (n, stride, image_side, patch_count) and the
    manifest digest are carried along so downstream stages can verify
    they are paired with the same corpus the model was fitted on.
    """

    k: int
    n: int
    stride: int
    image_side: int
    centroids: np.ndarray
    members: list[np.ndarray]
    iterations_run: int
    final_objective: float
    seed: int
    epsilon: float
    max_iter: int
    restarts: int
    init: str
    manifest_digest: str
    patch_count: int
    image_count: int = field(default=0)
    content_digest: str = field(default="")

    def __post_init__(self) -> None:
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if self.centroids.shape != (self.k, self.n * self.n):
            raise ValidationError(
                f"centroids must have shape ({self.k}, {self.n * self.n}); "
                f"got {self.centroids.shape}"
            )
        if len(self.members) != self.k:
            raise ValidationError("one member list per cluster is required")
        self.members = [np.asarray(m, dtype=np.int64) for m in self.members]

    @property
    def cells_per_side(self) -> int:
        return (self.image_side - self.n) // self.stride + 1

    def member_counts(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=np.int64)

    def patch_ref(self, index: int) -> PatchRef:
        """Library index -> source patch coordinates."""
        cols = self.cells_per_side
        per_image = cols * cols
        image_index, rem = divmod(int(index), per_image)
        row, col = divmod(rem, cols)
        return PatchRef(image_index, col * self.stride, row * self.stride, self.n)

    def index_of_ref(self, ref: PatchRef) -> int:
        cols = self.cells_per_side
        col, col_rem = divmod(ref.x, self.stride)
        row, row_rem = divmod(ref.y, self.stride)
        if col_rem or row_rem or not (0 <= col < cols and 0 <= row < cols):
            raise ValidationError(f"{ref} is not on this model's patch grid")
        index = (ref.image_index * cols + row) * cols + col
        if not 0 <= index < self.patch_count:
            raise ValidationError(f"{ref} lies outside the fitted library")
        return index


def _centroid_scores(chunk: np.ndarray, centroids: np.ndarray, sq_norms: np.ndarray) -> np.ndarray:
    # Squared distance minus the per-patch constant ||x||^2; the argmin
    # is unchanged and the matmul form runs on BLAS.
    return sq_norms - 2.0 * (chunk @ centroids.T)


def assign_step(
    centered_patches: np.ndarray,
    centroids: np.ndarray,
    workers: int = 1,
) -> np.ndarray:
    """Index of the nearest centroid for every patch (ties: lowest index)."""
    x = np.ascontiguousarray(centered_patches, dtype=np.float64)
    c = np.ascontiguousarray(centroids, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise ValidationError("patches and centroids must be 2-D with equal row length")
    if c.shape[0] == 0:
        raise ValidationError("at least one centroid is required")
    sq_norms = np.einsum("ij,ij->i", c, c)

    def one(start: int, stop: int) -> np.ndarray:
        scores = _centroid_scores(x[start:stop], c, sq_norms)
        return np.argmin(scores, axis=1).astype(np.int32)

    parts = run_spans(one, chunk_spans(x.shape[0], _CHUNK), workers)
    if not parts:
        return np.empty(0, dtype=np.int32)
    return np.concatenate(parts)


def update_step(
    centered_patches: np.ndarray,
    assignments: np.ndarray,
    k: int,
    workers: int = 1,
) -> tuple[np.ndarray, list[int]]:
    """Mean of each cluster's patches, plus the list of emptied clusters.

    Empty clusters keep a zero row in the returned array; they are
    reported, never silently dropped, and the caller decides how to
    repair them.
    """
    x = np.ascontiguousarray(centered_patches, dtype=np.float64)
    labels = np.asarray(assignments)
    if labels.shape != (x.shape[0],):
        raise ValidationError("one assignment per patch is required")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError("assignments must lie in [0, k)")

    def one(start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        sums = np.zeros((k, x.shape[1]), dtype=np.float64)
        np.add.at(sums, labels[start:stop], x[start:stop])
        counts = np.bincount(labels[start:stop], minlength=k)
        return sums, counts

    total = np.zeros((k, x.shape[1]), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for sums_part, counts_part in run_spans(one, chunk_spans(x.shape[0], _CHUNK), workers):
        total += sums_part
        counts += counts_part

    empty = [int(j) for j in np.flatnonzero(counts == 0)]
    nonzero = counts > 0
    total[nonzero] /= counts[nonzero, None]
    return total, empty


def _member_distances(
    x: np.ndarray, centroids: np.ndarray, labels: np.ndarray, workers: int
) -> np.ndarray:
    """Exact squared distance from each patch to its assigned centroid."""

    def one(start: int, stop: int) -> np.ndarray:
        diff = x[start:stop] - centroids[labels[start:stop]]
        return np.einsum("ij,ij->i", diff, diff)

    parts = run_spans(one, chunk_spans(x.shape[0], _CHUNK), workers)
    if not parts:
        return np.empty(0, dtype=np.float64)
    return np.concatenate(parts)


def objective(
    assignments: np.ndarray,
    centroids: np.ndarray,
    centered_patches: np.ndarray,
    workers: int = 1,
) -> float:
    """Total within-cluster squared distance J."""
    x = np.ascontiguousarray(centered_patches, dtype=np.float64)
    c = np.ascontiguousarray(centroids, dtype=np.float64)
    labels = np.asarray(assignments)
    if labels.shape != (x.shape[0],):
        raise ValidationError("one assignment per patch is required")
    if labels.size and (labels.min() < 0 or labels.max() >= c.shape[0]):
        raise ValidationError("assignments must lie in [0, k)")
    return float(np.sum(_member_distances(x, c, labels, workers)))


def _repair_empty(
    centroids: np.ndarray,
    empty: Sequence[int],
    x: np.ndarray,
    labels: np.ndarray,
    workers: int,
) -> None:
    """Re-seed each empty cluster at the patch farthest from its centroid.

    Distinct patches are picked for distinct empty clusters. If even the
    farthest remaining patch sits exactly on its centroid, every patch
    coincides with a centroid and the corpus has fewer than k distinct
    patches, which no repair can fix.
    """
    dist = _member_distances(x, centroids, labels, workers)
    for j in sorted(empty):
        pick = int(np.argmax(dist))
        if dist[pick] == 0.0:
            raise ValidationError(
                "k exceeds the number of distinct patches in the library"
            )
        centroids[j] = x[pick]
        dist[pick] = -1.0


@dataclass
class _RunResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    iterations: int


def _lloyd_run(
    x: np.ndarray,
    k: int,
    epsilon: float,
    max_iter: int,
    rng: np.random.Generator,
    init: str,
    workers: int,
    callback: Callable[[int, float, float], None] | None,
) -> _RunResult:
    if init == "kmeans++":
        centroids_prev = _kmeanspp_init(x, k, rng)
    elif init == "random":
        idx = np.sort(rng.choice(x.shape[0], size=k, replace=False))
        centroids_prev = x[idx].copy()
    else:
        raise ValidationError(f"unknown init strategy {init!r}")

    labels = assign_step(x, centroids_prev, workers)
    centroids = centroids_prev
    value = float("inf")
    iterations = 0
    for iteration in range(1, max_iter + 1):
        iterations = iteration
        centroids, empty = update_step(x, labels, k, workers)
        if empty:
            _repair_empty(centroids, empty, x, labels, workers)
        value = objective(labels, centroids, x, workers)
        moves = np.sqrt(np.einsum("ij,ij->i", centroids - centroids_prev, centroids - centroids_prev))
        max_move = float(moves.max())
        if callback is not None:
            callback(iteration, value, max_move)
        labels_next = assign_step(x, centroids, workers)
        if not empty and max_move < epsilon and np.array_equal(labels_next, labels):
            break
        centroids_prev = centroids
        labels = labels_next
    # labels is always the assignment the final update was computed
    # from, so each centroid is exactly the mean of its members.
    return _RunResult(centroids, labels, value, iterations)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(x.shape[0]))
    centroids[0] = x[first]
    diff = x - centroids[0]
    dist = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, k):
        total = float(dist.sum())
        if total == 0.0:
            raise ValidationError(
                "k exceeds the number of distinct patches in the library"
            )
        cut = rng.random() * total
        pick = int(np.searchsorted(np.cumsum(dist), cut, side="right"))
        pick = min(pick, x.shape[0] - 1)
        centroids[j] = x[pick]
        diff = x - centroids[j]
        dist = np.minimum(dist, np.einsum("ij,ij->i", diff, diff))
    return centroids


def kmeans(
    library: PatchLibrary,
    k: int,
    seed: int,
    epsilon: float = 1e-4,
    max_iter: int = 300,
    restarts: int = 3,
    init: str = "random",
    workers: int = 1,
    on_iteration: IterationCallback | None = None,
) -> ClusterModel:
    """Fit k clusters to the library's centered patches.

    Runs `restarts` independent Lloyd runs (seeded from non-overlapping
    RNG streams) and keeps the one with the lowest objective; on an
    exact tie the earliest run wins. on_iteration, when given, receives
    (run_index, iteration, objective, max_centroid_move) after every
    update, with the objective measured for the assignment that update
    averaged, so the reported series within a run never increases.
    """
    check_seed(seed)
    check_workers(workers)
    m = len(library)
    if not 1 <= k <= m:
        raise ValidationError(f"k must be in [1, {m}] for this library; got {k}")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")

    x, _ = library.centered()
    best: _RunResult | None = None
    for run in range(restarts):
        callback = None
        if on_iteration is not None:
            callback = lambda it, val, move, _run=run: on_iteration(_run, it, val, move)
        result = _lloyd_run(
            x, k, epsilon, max_iter, clustering_rng(seed, run), init, workers, callback
        )
        if best is None or result.objective < best.objective:
            best = result

    assert best is not None
    members = [np.flatnonzero(best.labels == j).astype(np.int64) for j in range(k)]
    return ClusterModel(
        k=k,
        n=library.n,
        stride=library.stride,
        image_side=library.image_side,
        centroids=best.centroids,
        members=members,
        iterations_run=best.iterations,
        final_objective=best.objective,
        seed=seed,
        epsilon=epsilon,
        max_iter=max_iter,
        restarts=restarts,
        init=init,
        manifest_digest=library.digest,
        patch_count=m,
        image_count=len(library.manifest),
        content_digest=library.content_digest,
    )


def nearest_cluster(query: CenteredPatch, model: ClusterModel, workers: int = 1) -> int:
    """Index of the centroid closest to one centered patch."""
    v = np.asarray(query.values, dtype=np.float64)
    if v.shape != (model.n * model.n,):
        raise ValidationError(
            f"query length {v.size} does not match patch side {model.n}"
        )
    diff = model.centroids - v
    dist = np.einsum("ij,ij->i", diff, diff)
    return int(np.argmin(dist))


def save_model(model: ClusterModel, path) -> None:
    """Write a model container: JSON header + centroid block.

    Member lists are stored as flat (image_index, x, y) triples so the
    file is meaningful without the library; centroids follow as
    little-endian float64, row-major.
    """
    members_refs = []
    for member in model.members:
        flat: list[int] = []
        for index in member.tolist():
            ref = model.patch_ref(index)
            flat.extend((ref.image_index, ref.x, ref.y))
        members_refs.append(flat)
    header = {
        "format": MODEL_FORMAT,
        "kind": "cluster-model",
        "n": model.n,
        "stride": model.stride,
        "image_side": model.image_side,
        "image_count": model.image_count,
        "k": model.k,
        "seed": model.seed,
        "epsilon": model.epsilon,
        "max_iter": model.max_iter,
        "restarts": model.restarts,
        "init": model.init,
        "iterations_run": model.iterations_run,
        "final_objective": model.final_objective,
        "manifest_sha256": model.manifest_digest,
        "content_sha256": model.content_digest,
        "patch_count": model.patch_count,
        "members": members_refs,
    }
    block = np.ascontiguousarray(model.centroids, dtype="<f8").tobytes()
    write_container(path, MODEL_MAGIC, header, [block])


def load_model(path) -> ClusterModel:
    """Read a model container back; inverse of save_model."""
    header, payload = read_container(path, MODEL_MAGIC)
    try:
        if header["format"] != MODEL_FORMAT:
            raise DataError(f"unsupported model format {header['format']!r}")
        k = int(header["k"])
        n = int(header["n"])
        stride = int(header["stride"])
        image_side = int(header["image_side"])
        members_refs = header["members"]
        model = ClusterModel(
            k=k,
            n=n,
            stride=stride,
            image_side=image_side,
            centroids=np.zeros((k, n * n)),
            members=[np.empty(0, dtype=np.int64) for _ in range(k)],
            iterations_run=int(header["iterations_run"]),
            final_objective=float(header["final_objective"]),
            seed=int(header["seed"]),
            epsilon=float(header["epsilon"]),
            max_iter=int(header["max_iter"]),
            restarts=int(header["restarts"]),
            init=str(header["init"]),
            manifest_digest=str(header["manifest_sha256"]),
            patch_count=int(header["patch_count"]),
            image_count=int(header.get("image_count", 0)),
            content_digest=str(header["content_sha256"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model header is malformed: {exc}") from exc

    expected = k * n * n * 8
    if len(payload) != expected:
        raise DataError(
            f"model centroid block is {len(payload)} bytes; expected {expected}"
        )
    model.centroids = (
        np.frombuffer(payload, dtype="<f8").reshape(k, n * n).astype(np.float64)
    )

    members: list[np.ndarray] = []
    for flat in members_refs:
        if not isinstance(flat, list) or len(flat) % 3:
            raise DataError("member lists must hold (image, x, y) triples")
        indices = []
        for i in range(0, len(flat), 3):
            try:
                ref = PatchRef(int(flat[i]), int(flat[i + 1]), int(flat[i + 2]), n)
                indices.append(model.index_of_ref(ref))
            except (ValidationError, TypeError, ValueError) as exc:
                raise DataError(f"bad member reference in model file: {exc}") from exc
        members.append(np.asarray(indices, dtype=np.int64))
    model.members = members

    total = int(sum(m.size for m in members))
    if total != model.patch_count:
        raise DataError(
            f"member lists cover {total} patches; header says {model.patch_count}"
        )
    expected_count = patch_count(image_side, n, stride) * max(model.image_count, 1)
    if model.image_count and total != expected_count:
        raise DataError(
            f"member lists cover {total} patches; geometry implies {expected_count}"
        )
    return model

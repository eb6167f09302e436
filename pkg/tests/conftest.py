"""Shared helpers for building small synthetic corpora."""

from __future__ import annotations

import numpy as np

from patchmosaic import GrayImage, PatchLibrary, kmeans


def rand_image(rng: np.random.Generator, side: int) -> GrayImage:
    return GrayImage(rng.integers(0, 256, size=(side, side), dtype=np.uint8))


def rand_corpus(rng: np.random.Generator, count: int, side: int) -> list[GrayImage]:
    return [rand_image(rng, side) for _ in range(count)]


def rand_library(
    rng: np.random.Generator, count: int = 4, side: int = 64, n: int = 8, s: int | None = None
) -> PatchLibrary:
    return PatchLibrary.from_images(rand_corpus(rng, count, side), n, s if s is not None else n)


def small_model(rng: np.random.Generator, k: int = 6, seed: int = 123, **lib_kwargs):
    library = rand_library(rng, **lib_kwargs)
    return library, kmeans(library, k, seed=seed)

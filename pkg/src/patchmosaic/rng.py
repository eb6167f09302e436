"""Deterministic RNG streams derived from one master seed.

Streams are Philox counter blocks: the 128-bit key carries the master
seed plus a domain word, and the 256-bit counter start encodes the
stream coordinates (restart index, or frame and cell). Draws increment
the low counter word only, so distinct coordinates can never collide
and any cell or frame can be rendered independently, in any order.
"""

from __future__ import annotations

from numpy.random import Generator, Philox

from .errors import ValidationError

_DOMAIN_CLUSTERING = 1
_DOMAIN_CELLS = 2

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise ValidationError(f"seed must be an integer in [0, 2^64); got {seed!r}")
    return seed


def clustering_rng(seed: int, run_index: int) -> Generator:
    """Stream for one k-means restart."""
    check_seed(seed)
    return Generator(Philox(key=[seed, _DOMAIN_CLUSTERING], counter=[0, 0, 0, run_index]))


def cell_rng(seed: int, frame: int, cell: int) -> Generator:
    """Stream for one reconstruction cell of one frame."""
    check_seed(seed)
    return Generator(Philox(key=[seed, _DOMAIN_CELLS], counter=[0, 0, frame, cell]))

"""Grayscale image loading, validation, cropping, and bit-exact saving.

Two on-disk formats are supported: binary PGM (P5, maxval 255) as the
bit-exact interchange format, and 8-bit PNG for convenience. Color PNG
input is reduced to grayscale with BT.601 luma weights; every 8-bit
value produced anywhere in this module rounds half away from zero.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ValidationError

PGM_MAGIC = b"P5"
_PGM_WHITESPACE = b" \t\n\r\x0b\x0c"


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


@dataclass(eq=False)
class GrayImage:
    """An 8-bit single-channel raster, row-major, 0=black / 255=white."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.dtype != np.uint8:
            raise ValidationError("GrayImage requires a 2-D uint8 pixel array")
        if arr.size == 0:
            raise ValidationError("GrayImage must not be empty")
        self.pixels = arr

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def pipeline_ready(self) -> bool:
        """True when square with a power-of-two side of at least 4."""
        return (
            self.width == self.height
            and self.width >= 4
            and is_power_of_two(self.width)
        )

    def require_pipeline_ready(self) -> None:
        if not self.pipeline_ready:
            raise ValidationError(
                f"image is {self.width}x{self.height}; the pipeline needs a "
                "square power-of-two side >= 4 (run prepare_image first)"
            )

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def to_grayscale(r: int, g: int, b: int) -> int:
    """BT.601 luma of an RGB triple, rounded half away from zero."""
    for v in (r, g, b):
        if not 0 <= v <= 255:
            raise ValidationError(f"channel value {v} outside [0, 255]")
    return (299 * r + 587 * g + 114 * b + 500) // 1000


def _rgb_to_gray_array(rgb: np.ndarray) -> np.ndarray:
    # Integer arithmetic keeps the rounding exactly half-away-from-zero.
    r = rgb[..., 0].astype(np.uint32)
    g = rgb[..., 1].astype(np.uint32)
    b = rgb[..., 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def _decode_pgm(data: bytes, path: Path) -> GrayImage:
    pos = len(PGM_MAGIC)
    tokens: list[bytes] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1] in _PGM_WHITESPACE:
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise DataError(f"{path}: truncated PGM header")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1] not in _PGM_WHITESPACE:
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: unsupported PGM maxval {maxval} (only 255)")
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(data) or data[pos : pos + 1] not in _PGM_WHITESPACE:
        raise DataError(f"{path}: truncated PGM header")
    pos += 1
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise DataError(
            f"{path}: PGM payload has {len(payload)} bytes, "
            f"expected {width * height}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.copy())


def _decode_png(data: bytes, path: Path) -> GrayImage:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                pixels = np.asarray(img, dtype=np.uint8)
            elif mode == "LA":
                pixels = np.asarray(img, dtype=np.uint8)[..., 0]
            elif mode in ("RGB", "RGBA"):
                pixels = _rgb_to_gray_array(np.asarray(img)[..., :3])
            elif mode in ("P", "1"):
                pixels = _rgb_to_gray_array(np.asarray(img.convert("RGB")))
            else:
                raise DataError(f"{path}: unsupported PNG mode {mode!r}")
    except UnidentifiedImageError:
        raise DataError(f"{path}: corrupt PNG data") from None
    except OSError as exc:
        raise DataError(f"{path}: corrupt PNG data ({exc})") from None
    return GrayImage(np.ascontiguousarray(pixels))


def load_image(path: str | Path) -> GrayImage:
    """Decode a PGM (binary P5) or PNG file into a GrayImage.

    Non-square or non-power-of-two images are returned as-is with
    ``pipeline_ready`` False; run prepare_image before pipeline use.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == PGM_MAGIC:
        return _decode_pgm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(data, path)
    raise DataError(f"{path}: unsupported format (expected P5 PGM or PNG)")


def prepare_image(img: GrayImage, side: int) -> GrayImage:
    """Center-crop to side x side; offsets are floor((dim - side) / 2)."""
    if not is_power_of_two(side) or side < 4:
        raise ValidationError(f"crop side {side} must be a power of two >= 4")
    if img.width < side or img.height < side:
        raise ValidationError(
            f"image {img.width}x{img.height} smaller than requested side {side}"
        )
    x0 = (img.width - side) // 2
    y0 = (img.height - side) // 2
    return GrayImage(img.pixels[y0 : y0 + side, x0 : x0 + side].copy())


def save_image(img: GrayImage, path: str | Path, format: str | None = None) -> None:
    """Write a GrayImage as PGM or PNG; load_image inverts it bit-exactly."""
    path = Path(path)
    if format is None:
        suffix = path.suffix.lower()
        if suffix == ".pgm":
            format = "pgm"
        elif suffix == ".png":
            format = "png"
        else:
            raise ValidationError(
                f"cannot infer format from {path.name!r}; pass format='pgm'|'png'"
            )
    format = format.lower()
    if format == "pgm":
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + img.tobytes())
    elif format == "png":
        Image.fromarray(img.pixels, mode="L").save(path, format="PNG")
    else:
        raise ValidationError(f"unsupported format {format!r}")

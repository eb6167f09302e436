"""Command-line pipeline: extract, cluster, reconstruct, animate, analyze.

Options resolve as CLI flag > config file > built-in default. The
config file is plain `key = value` text with `#` comments, keys named
like the long flags with underscores. All randomness flows from one
seed; when no seed is given one is generated and printed. Exit codes:
0 success, 2 usage or validation, 3 corrupt or mismatched data files,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import dct_basis, pca_components, render_montage, save_components
from .animation import generate_frames, write_frames
from .clustering import kmeans, load_model, save_model
from .errors import DataError, ValidationError
from .image_io import load_image, prepare_image, save_image
from .parallel import WORKERS_ENV, default_workers
from .patching import build_library, load_library, load_manifest, save_library
from .reconstruction import reconstruct, write_grid_sidecar
from .rng import MAX_SEED

_DEFAULTS = {
    "stride": None,  # patch side unless --overlap
    "epsilon": 1e-4,
    "max_iter": 300,
    "restarts": 3,
    "init": "random",
    "histogram_match": True,
    "columns": 8,
}


def _parse_config_value(key: str, raw: str):
    converters = {
        "patch_side": int,
        "stride": int,
        "clusters": int,
        "epsilon": float,
        "max_iter": int,
        "restarts": int,
        "seed": int,
        "frames": int,
        "workers": int,
        "components": int,
        "columns": int,
        "target_side": int,
        "init": str,
        "mode": str,
        "histogram_match": _parse_bool,
        "overlap": _parse_bool,
    }
    if key not in converters:
        raise ValidationError(f"unknown config key {key!r}")
    try:
        return converters[key](raw)
    except ValueError:
        raise ValidationError(f"bad value for config key {key!r}: {raw!r}") from None


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(raw)


def load_config(path: Path) -> dict:
    """Read a key=value config file, applying per-key type conversion."""
    _require_file(path, "config file")
    values: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = _parse_config_value(key.strip(), raw.strip())
    return values


class _Options:
    """Flag > config > default resolution for one command invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = load_config(Path(args.config)) if getattr(args, "config", None) else {}

    def get(self, key: str, default=None):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.config:
            return self.config[key]
        return default

    def require(self, key: str, flag_name: str):
        value = self.get(key)
        if value is None:
            raise ValidationError(f"{flag_name} is required (flag or config file)")
        return value

    def seed(self) -> int:
        """The run seed; generated and announced when not supplied."""
        value = self.get("seed")
        if value is None:
            value = int.from_bytes(os.urandom(8), "big")
        if not 0 <= value <= MAX_SEED:
            raise ValidationError("seed must be in [0, 2^64)")
        print(f"seed = {value}")
        return value

    def workers(self) -> int:
        value = self.get("workers")
        return default_workers() if value is None else value


def _require_file(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{what} not found: {path}")
    return path


def _load_target(options: _Options, path: Path):
    image = load_image(_require_file(path, "target image"))
    side = options.get("target_side")
    if side is not None:
        return prepare_image(image, side)
    if not image.pipeline_ready:
        raise ValidationError(
            f"target is {image.width}x{image.height}; pass --target-side to "
            "center-crop it to a power-of-two square"
        )
    return image


def cmd_extract(args: argparse.Namespace) -> int:
    options = _Options(args)
    n = options.require("patch_side", "--patch-side")
    stride = options.get("stride")
    overlap = options.get("overlap", False)
    if stride is not None and overlap:
        raise ValidationError("--stride and --overlap are mutually exclusive")
    if stride is None:
        stride = n // 2 if overlap else n

    manifest_path = _require_file(Path(args.manifest), "manifest")
    entries = load_manifest(manifest_path)
    library = build_library(entries, n, stride, workers=options.workers())
    save_library(library, args.out)
    print(f"T={len(library.manifest)}")
    print(f"L={library.patches_per_image}")
    print(f"M={len(library)}")
    print(f"wrote {args.out}")
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    options = _Options(args)
    k = options.require("clusters", "--clusters")
    library = load_library(_require_file(Path(args.library), "library"))
    seed = options.seed()
    on_iteration = None
    if args.verbose:
        def on_iteration(run: int, iteration: int, value: float, move: float) -> None:
            print(f"run {run} iter {iteration}: J={value:.6g} max_move={move:.3g}")

    model = kmeans(
        library,
        k,
        seed=seed,
        epsilon=options.get("epsilon", _DEFAULTS["epsilon"]),
        max_iter=options.get("max_iter", _DEFAULTS["max_iter"]),
        restarts=options.get("restarts", _DEFAULTS["restarts"]),
        init=options.get("init", _DEFAULTS["init"]),
        workers=options.workers(),
        on_iteration=on_iteration,
    )
    save_model(model, args.out)
    print(f"iterations={model.iterations_run}")
    print(f"J={model.final_objective:.6g}")
    print(f"wrote {args.out}")
    return 0


def _reconstruction_config(options: _Options, args, seed: int, model, extra=None) -> dict:
    config = {
        "seed": seed,
        "patch_side": model.n,
        "stride": model.stride,
        "clusters": model.k,
        "histogram_match": options.get("histogram_match", _DEFAULTS["histogram_match"]),
        "model": str(args.model),
        "library": str(args.library),
        "target": str(args.target),
        "manifest_sha256": model.manifest_digest,
    }
    if extra:
        config.update(extra)
    return config


def cmd_reconstruct(args: argparse.Namespace) -> int:
    options = _Options(args)
    model = load_model(_require_file(Path(args.model), "model"))
    library = load_library(_require_file(Path(args.library), "library"))
    target = _load_target(options, Path(args.target))
    seed = options.seed()
    match_histograms = options.get("histogram_match", _DEFAULTS["histogram_match"])

    image, grid = reconstruct(
        target, model, library, seed,
        match_histograms=match_histograms, workers=options.workers(),
    )
    save_image(image, args.out)
    sidecar = Path(str(args.out) + ".grid.txt")
    write_grid_sidecar(grid, sidecar, _reconstruction_config(options, args, seed, model))
    print(f"wrote {args.out}")
    print(f"wrote {sidecar}")
    return 0


def cmd_animate(args: argparse.Namespace) -> int:
    options = _Options(args)
    frame_count = options.require("frames", "--frames")
    model = load_model(_require_file(Path(args.model), "model"))
    library = load_library(_require_file(Path(args.library), "library"))
    target = _load_target(options, Path(args.target))
    seed = options.seed()
    match_histograms = options.get("histogram_match", _DEFAULTS["histogram_match"])

    sequence = generate_frames(
        target, model, library, frame_count, seed,
        match_histograms=match_histograms, workers=options.workers(),
    )
    sequence.config.update(
        _reconstruction_config(options, args, seed, model, {"frame_count": frame_count})
    )
    write_frames(sequence, args.outdir)
    print(f"wrote {frame_count} frames to {args.outdir}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    options = _Options(args)
    mode = options.require("mode", "--mode")
    columns = options.get("columns", _DEFAULTS["columns"])

    if mode == "pca":
        if not getattr(args, "library", None):
            raise ValidationError("--mode pca requires --library")
        library = load_library(_require_file(Path(args.library), "library"))
        d = library.n * library.n
        m = options.get("components", min(64, d))
        grid = pca_components(library, m)
    elif mode == "dct":
        n = options.require("patch_side", "--patch-side")
        m = options.get("components", min(64, n * n))
        grid = dct_basis(n, m)
    elif mode == "centroids":
        if not getattr(args, "model", None):
            raise ValidationError("--mode centroids requires --model")
        grid = load_model(_require_file(Path(args.model), "model"))
    else:
        raise ValidationError(f"unknown analyze mode {mode!r}")

    montage = render_montage(grid, columns)
    save_image(montage, args.out)
    print(f"wrote {args.out}")

    if args.dump:
        if mode == "centroids":
            raise ValidationError("--dump applies to pca and dct modes only")
        save_components(grid, args.dump)
        print(f"wrote {args.dump}")
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value config file; flags override it")
    sub.add_argument(
        "--workers", type=int, default=None,
        help=f"worker threads (default: ${WORKERS_ENV} or 1); results do not depend on it",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchmosaic",
        description="Reconstruct and animate grayscale images as mosaics of "
        "clustered patches drawn from an image corpus.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("extract", help="cut a corpus into a patch library file")
    p.add_argument("--manifest", required=True, help="text file listing one image path per line")
    p.add_argument("--patch-side", type=int, default=None, help="patch edge n, a power of two")
    p.add_argument("--stride", type=int, default=None, help="grid step (default: n)")
    p.add_argument(
        "--overlap", action="store_true", default=None,
        help="use stride n/2 for an overlapping grid",
    )
    p.add_argument("--out", required=True, help="library file to write")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = commands.add_parser("cluster", help="fit k-means to a patch library")
    p.add_argument("--library", required=True)
    p.add_argument("--clusters", "-k", type=int, default=None, help="number of clusters k "
                   "(typical range: 166 for 128x128 patches up to 512 for 8x8 patches)")
    p.add_argument("--epsilon", type=float, default=None, help="centroid-move tolerance (default: 1e-4)")
    p.add_argument("--max-iter", type=int, default=None, help="iteration cap (default: 300)")
    p.add_argument("--restarts", type=int, default=None, help="independent runs, best kept (default: 3)")
    p.add_argument("--init", choices=("random", "kmeans++"), default=None,
                   help="centroid seeding (default: random)")
    p.add_argument("--seed", type=int, default=None, help="master seed; generated and printed if omitted")
    p.add_argument("--verbose", action="store_true", help="print the objective each iteration")
    p.add_argument("--out", required=True, help="model file to write")
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = commands.add_parser("reconstruct", help="rebuild a target image from library patches")
    p.add_argument("--model", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--target", required=True, help="image to reconstruct")
    p.add_argument("--target-side", type=int, default=None,
                   help="center-crop the target to this power-of-two square first")
    p.add_argument("--seed", type=int, default=None, help="master seed; generated and printed if omitted")
    p.add_argument("--histogram-match", action=argparse.BooleanOptionalAction, default=None,
                   help="per-cell histogram matching (default: on)")
    p.add_argument("--out", required=True, help="output image (.png or .pgm); a .grid.txt sidecar is written beside it")
    _add_common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = commands.add_parser("animate", help="render a frame sequence of reconstructions")
    p.add_argument("--model", required=True)
    p.add_argument("--library", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--target-side", type=int, default=None,
                   help="center-crop the target to this power-of-two square first")
    p.add_argument("--frames", type=int, default=None, help="number of frames to render")
    p.add_argument("--seed", type=int, default=None, help="master seed; generated and printed if omitted")
    p.add_argument("--histogram-match", action=argparse.BooleanOptionalAction, default=None,
                   help="per-cell histogram matching (default: on)")
    p.add_argument("--outdir", required=True, help="directory for frame_*.png and manifest.txt")
    _add_common(p)
    p.set_defaults(func=cmd_animate)

    p = commands.add_parser("analyze", help="render PCA/DCT/centroid montages")
    p.add_argument("--mode", choices=("pca", "dct", "centroids"), default=None, required=False)
    p.add_argument("--library", default=None, help="patch library (pca mode)")
    p.add_argument("--model", default=None, help="cluster model (centroids mode)")
    p.add_argument("--patch-side", type=int, default=None, help="patch edge n (dct mode)")
    p.add_argument("--components", type=int, default=None,
                   help="how many components (default: up to 64)")
    p.add_argument("--columns", type=int, default=None, help="montage columns (default: 8)")
    p.add_argument("--dump", default=None, help="also write raw component vectors to this file")
    p.add_argument("--out", required=True, help="montage image to write")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

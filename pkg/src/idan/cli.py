"""``idan`` command line: tile, diffmap, train, eval, infer, flops, synth.

Exit codes: 0 success, 2 bad arguments or config, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import ConfigError, RunConfig
from .data import (
    augment,
    load_png,
    png_size,
    read_dataset,
    save_png,
    split_every_k,
    synth_dataset,
    tile_origins,
    tile_pair,
    write_dataset,
)
from .diffmap import MapBuilder, build_ed_map, build_fd_map
from .idtn import IDTNError, load_checkpoint, write_idtn
from .imgproc import StructuringElement, minmax_normalize
from .model import IDANModel, flop_table
from .training import NumericalError, Prepared, binarize, evaluate, predict, prepare, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OVERLAY_TINT = np.array([1.0, 0.0, 0.0], dtype=np.float32)
OVERLAY_ALPHA = 0.5


class DataError(Exception):
    pass


def _load_config(path, overrides=()) -> RunConfig:
    cfg = config_mod.load(path) if path else RunConfig()
    return config_mod.with_overrides(cfg, overrides) if overrides else cfg


def sidecar_path(ckpt) -> Path:
    return Path(str(ckpt) + ".cfg")


def _builder(cfg: RunConfig) -> MapBuilder:
    if not cfg.diffmap.extractor.startswith("random:"):
        raise ConfigError("training and evaluation need a random:<seed>:<c_p> extractor (feature files are per image pair)")
    return MapBuilder(cfg.diffmap.make_extractor(), cfg.diffmap.edge, cfg.diffmap.edge_params(), cfg.diffmap.kernel)


def _read_split(root, split: str) -> list:
    if not Path(root, "index.txt").is_file():
        raise DataError(f"{root}: no index.txt, not a dataset directory")
    return [s for _, s, _ in read_dataset(root, split)]


# ---------------------------------------------------------------------------
# commands


def cmd_tile(args) -> int:
    spec = config_mod.TileSection(args.window, args.stride or args.window, args.test_every).tile_spec()
    if args.dry_run:
        if args.width is not None and args.height is not None:
            width, height = args.width, args.height
        elif args.a:
            width, height = png_size(args.a)
        else:
            raise ConfigError("--dry-run needs --width and --height (or --a to read the raster header)")
        n = len(tile_origins(width, height, spec))
        train_n = n - n // spec.test_every_k
        print(f"tiles={n} train={train_n} test={n - train_n}")
        return EXIT_OK
    if not (args.a and args.b and args.label and args.out):
        raise ConfigError("tile needs --a, --b, --label and --out (or --dry-run)")
    a, b = load_png(args.a), load_png(args.b)
    label = load_png(args.label, label=True)
    if a.ndim != 3 or b.ndim != 3:
        raise DataError("tile rasters --a/--b must be RGB images")
    tiles = tile_pair(a, b, label, spec)
    train_set, test_set = split_every_k(list(range(len(tiles))), spec.test_every_k)
    test_ids = set(test_set)
    entries = [(f"tile_{i:05d}", t, "test" if i in test_ids else "train") for i, t in enumerate(tiles)]
    write_dataset(args.out, entries)
    print(f"tiles={len(tiles)} train={len(train_set)} test={len(test_set)}")
    return EXIT_OK


def cmd_diffmap(args) -> int:
    cfg = _load_config(args.config)
    extractor_spec = args.extractor or cfg.diffmap.extractor
    edge = args.edge or cfg.diffmap.edge
    kernel = args.kernel or cfg.diffmap.kernel
    cfg = config_mod.with_overrides(cfg, [f"diffmap.extractor={extractor_spec}", f"diffmap.edge={edge}",
                                          f"diffmap.kernel={kernel}"])
    a, b = load_png(args.a), load_png(args.b)
    if a.ndim != 3 or a.shape != b.shape:
        raise DataError(f"diffmap needs two RGB images of one size, got {a.shape} and {b.shape}")
    k = StructuringElement.square(cfg.diffmap.kernel)
    fd = build_fd_map(a, b, cfg.diffmap.make_extractor(), k)
    ed = build_ed_map(a, b, cfg.diffmap.edge, cfg.diffmap.edge_params(), k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idtn(out / "fd.idtn", fd)
    save_png(out / "ed.png", ed, label=True)
    save_png(out / "fd_vis.png", minmax_normalize(fd.mean(axis=0)))
    print(f"fd={tuple(fd.shape)} ed_pixels={int(ed.sum())} out={out}")
    return EXIT_OK


def _augmented(samples: list, cfg: RunConfig) -> list:
    if not cfg.augment.enabled:
        return samples
    rng = np.random.default_rng(cfg.train.seed)
    acfg = cfg.augment.augment_config()
    extra = [augment(s, rng, acfg) for _ in range(cfg.augment.copies) for s in samples]
    return samples + extra


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set or ())
    if args.epochs is not None:
        cfg = config_mod.with_overrides(cfg, [f"train.epochs={args.epochs}"])
    data = args.data or cfg.paths.data
    out = args.out or cfg.paths.checkpoint
    if not data or not out:
        raise ConfigError("train needs --data and --out (or [paths] data / checkpoint)")
    samples = _augmented(_read_split(data, "train"), cfg)
    if not samples:
        raise DataError(f"{data}: no training samples")
    val = _read_split(data, args.val_split) if args.val_split else None
    builder = _builder(cfg)
    m = cfg.model
    model = IDANModel(m.unet(), m.fd_channels, m.use_fda, m.use_ec, seed=m.init_seed)
    if builder.extractor.output_channels != m.fd_channels:
        raise ConfigError(f"extractor produces {builder.extractor.output_channels} channels, model.fd_channels is {m.fd_channels}")
    train(model, prepare(samples, builder), cfg.train.train_config(str(out)),
          val=prepare(val, builder) if val else None, on_log=print)
    config_mod.save(sidecar_path(out), cfg)
    return EXIT_OK


def _load_model(ckpt, config_path=None) -> tuple:
    side = Path(config_path) if config_path else sidecar_path(ckpt)
    cfg = config_mod.load(side) if side.is_file() else RunConfig()
    try:
        params = load_checkpoint(ckpt)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {ckpt}: {exc}") from exc
    model = IDANModel.from_params(params)
    return model, cfg


def cmd_eval(args) -> int:
    model, cfg = _load_model(args.ckpt, args.config)
    samples = _read_split(args.data, args.split)
    if not samples:
        raise DataError(f"{args.data}: no samples in split {args.split!r}")
    threshold = args.threshold if args.threshold is not None else cfg.train.threshold
    report = evaluate(model, prepare(samples, _builder(cfg)), threshold)
    print(report.line())
    return EXIT_OK


def overlay(image_b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Tint changed pixels of image_b; (3, H, W) in, (3, H, W) out."""
    sel = np.asarray(mask, dtype=bool)[None]
    tinted = (1 - OVERLAY_ALPHA) * image_b + OVERLAY_ALPHA * OVERLAY_TINT[:, None, None]
    return np.where(sel, tinted, image_b).astype(np.float32)


def cmd_infer(args) -> int:
    model, cfg = _load_model(args.ckpt, args.config)
    a, b = load_png(args.a), load_png(args.b)
    if a.ndim != 3 or a.shape != b.shape:
        raise DataError(f"infer needs two RGB images of one size, got {a.shape} and {b.shape}")
    fd, ed = _builder(cfg)(a, b)
    prob = predict(model, [Prepared(a, b, np.zeros(a.shape[1:], np.uint8), fd, ed)])[0]
    threshold = args.threshold if args.threshold is not None else cfg.train.threshold
    mask = binarize(prob, threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, mask, label=True)
    over = out.with_name(f"{out.stem}_overlay.png")
    save_png(over, overlay(b, mask))
    print(f"changed_pixels={int(mask.sum())} mask={out} overlay={over}")
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = _load_config(args.config, args.set or ())
    m = cfg.model
    with_modules = not args.no_modules and (m.use_fda or m.use_ec)
    rows = flop_table(m.unet(), with_modules, (args.height, args.width), m.fd_channels)
    width = max(len(r[0]) for r in rows)
    print(f"{'layer':<{width}}  {'kind':<11}  {'flops':>16}")
    for name, kind, flops in rows:
        print(f"{name:<{width}}  {kind:<11}  {flops:>16d}")
    total = sum(r[2] for r in rows)
    print(f"total_gflops={total / 1e9:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    samples = synth_dataset(args.seed, args.count, args.size)
    train_idx, test_idx = split_every_k(list(range(len(samples))), args.test_every)
    test_ids = set(test_idx)
    entries = [(f"synth_{i:05d}", s, "test" if i in test_ids else "train") for i, s in enumerate(samples)]
    write_dataset(args.out, entries)
    print(f"samples={len(samples)} train={len(train_idx)} test={len(test_idx)} out={args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idan", description="Bi-temporal change detection with FD/ED prior maps.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tile", help="cut full-scene rasters into a tiled dataset")
    t.add_argument("--a")
    t.add_argument("--b")
    t.add_argument("--label")
    t.add_argument("--out")
    t.add_argument("--window", type=int, default=512)
    t.add_argument("--stride", type=int, help="default: equal to --window")
    t.add_argument("--test-every", type=int, default=5)
    t.add_argument("--dry-run", action="store_true", help="count tiles from dimensions only")
    t.add_argument("--width", type=int)
    t.add_argument("--height", type=int)
    t.set_defaults(func=cmd_tile)

    d = sub.add_parser("diffmap", help="write fd.idtn, ed.png and fd_vis.png for one image pair")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--edge", choices=("canny", "sobel", "prewitt"))
    d.add_argument("--extractor", help="random:<seed>:<c_p> or file:<features_a>,<features_b>")
    d.add_argument("--kernel", type=int)
    d.add_argument("--config")
    d.set_defaults(func=cmd_diffmap)

    tr = sub.add_parser("train", help="train a model on a dataset directory")
    tr.add_argument("--config")
    tr.add_argument("--data")
    tr.add_argument("--out")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--val-split", choices=("val", "test"))
    tr.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    tr.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report metrics of a checkpoint on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test", "val"))
    e.add_argument("--threshold", type=float)
    e.add_argument("--config", help="run config (default: the checkpoint's .cfg sidecar)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict a change mask and overlay for one pair")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--a", required=True)
    i.add_argument("--b", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--threshold", type=float)
    i.add_argument("--config")
    i.set_defaults(func=cmd_infer)

    f = sub.add_parser("flops", help="per-layer analytic FLOP table")
    f.add_argument("--config")
    f.add_argument("--height", type=int, default=512)
    f.add_argument("--width", type=int, default=512)
    f.add_argument("--no-modules", action="store_true")
    f.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    f.set_defaults(func=cmd_flops)

    s = sub.add_parser("synth", help="write a synthetic change-detection dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=250)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--test-every", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"idan {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"idan {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, IDTNError, OSError, ValueError) as exc:
        print(f"idan {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

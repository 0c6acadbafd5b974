"""``lgnn`` command line: train, eval, analyze, som-demo."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis as A
from .config import RunConfig
from .data import PREFETCH_ENV, load_cifar100
from .exceptions import LGNNError
from .som import SomGrid, topographic_ratio, train_som
from .training import evaluate, load_datasets, load_run, train

ANALYSES = ("gram", "neighbors", "magnitudes", "activations", "maximize", "filters")


def _rows(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--rows expects comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lgnn", description="Gradient smoothing over conv filter grids.",
        epilog=f"{PREFETCH_ENV}=<n> sets the number of data prefetch threads (0 disables).")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", type=Path, help="run directory (default: config output_dir)")

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--data", type=Path, help="CIFAR-100 binary directory (default: config data)")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--config", type=Path, help="run config (default: next to the checkpoint)")

    a = sub.add_parser("analyze", help="export filter and activation analyses")
    a.add_argument("analysis", choices=ANALYSES)
    a.add_argument("--ckpt", required=True, type=Path)
    a.add_argument("--layer", help="conv layer name (default: last conv; first for filters)")
    a.add_argument("--rows", type=_rows, default=[0], help="Gram rows, e.g. 0,2,4")
    a.add_argument("--class", dest="cls", help="class name or index for activations")
    a.add_argument("--channel", type=int, default=0, help="channel for maximize")
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--step-size", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--data", type=Path, help="CIFAR-100 directory for activations")
    a.add_argument("--pgm", action="store_true", help="also write PGM images of heat maps")
    a.add_argument("--config", type=Path)
    a.add_argument("--out", type=Path, help="output directory (default: <run>/analysis)")

    s = sub.add_parser("som-demo", help="train an 8x8 SOM on uniform 2-D points")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points", type=int, default=500)
    s.add_argument("--out", type=Path, help="write prototypes as CSV here")
    return p


def _dataset(cfg: RunConfig, split: str, data_dir: Path | None):
    if data_dir is None:
        train_ds, test_ds = load_datasets(cfg)
        return test_ds if split == "test" else train_ds
    ds = load_cifar100(data_dir, split, strict=bool(cfg.data.get("strict", True)))
    if cfg.data.get("kind") == "cifar100" and cfg.data.get("classes"):
        ds = ds.subset(cfg.data["classes"])
    return ds


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    run = train(cfg, args.out)
    print(run)
    return 0


def cmd_eval(args) -> int:
    _, cfg = load_run(args.ckpt, args.config)
    ds = _dataset(cfg, args.split, args.data)
    acc = evaluate(args.ckpt, ds, args.config)
    print(f"accuracy {acc:.6f} ({len(ds)} images, split={args.split})")
    return 0


def _heatmap_out(hm, out: Path, stem: str, pgm: bool) -> list[Path]:
    paths = [hm.to_csv(out / f"{stem}.csv")]
    if pgm:
        paths.append(hm.to_pgm(out / f"{stem}.pgm"))
    return paths


def cmd_analyze(args) -> int:
    model, cfg = load_run(args.ckpt, args.config)
    dims = cfg.dims()
    out = args.out or Path(args.ckpt).resolve().parent / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    first = args.analysis == "filters"
    layer = args.layer or model.layer_names[0 if first else -1]
    norm = cfg.normalization or {}
    written: list[Path] = []

    if args.analysis == "gram":
        for hm in A.gram_heatmaps(model, layer, args.rows, dims):
            written += _heatmap_out(hm, out, f"gram_{layer}_row{hm.row}", args.pgm)
    elif args.analysis == "neighbors":
        value = A.neighbor_similarity(model, layer, dims)
        path = out / f"neighbors_{layer}.csv"
        path.write_text(f"layer,neighbor_similarity\n{layer},{value:.6e}\n")
        written.append(path)
        print(f"{layer} neighbor_similarity {value:.6f}")
    elif args.analysis == "magnitudes":
        lo, hi, sd = A.magnitude_stats(model, layer)
        path = out / f"magnitudes_{layer}.csv"
        path.write_text(f"min,max,stddev_of_log\n{lo:.6e},{hi:.6e},{sd:.6e}\n")
        written.append(path)
    elif args.analysis == "activations":
        if args.cls is None:
            raise LGNNError("activations needs --class")
        ds = _dataset(cfg, "test", args.data)
        cls = ds.class_index(args.cls)
        images = ds.of_class(cls)
        if len(images) == 0:
            raise LGNNError(f"no test images of class {args.cls!r}")
        hm = A.class_activation_map(model, images, layer, dims, norm.get("mean"), norm.get("std"))
        name = ds.class_names[cls] if cls < len(ds.class_names) else str(cls)
        hm.meta["class"] = name
        written += _heatmap_out(hm, out, f"activation_{layer}_{name}", args.pgm)
    elif args.analysis == "maximize":
        res = A.activation_maximization(model, layer, args.channel, args.steps, args.step_size,
                                        args.seed, mean=norm.get("mean"), std=norm.get("std"))
        pixels = np.rint(np.clip(res.image, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
        path = A.write_pnm(out / f"maximize_{layer}_ch{args.channel}.ppm", pixels,
                           [f"layer={layer}", f"channel={args.channel}",
                            f"activation={res.activation:.6e}"])
        written.append(path)
        print(f"{layer}[{args.channel}] activation {res.history[0]:.4f} -> {res.activation:.4f}")
    elif args.analysis == "filters":
        path = out / f"filters_{layer}.ppm"
        tiles = A.first_layer_tiles(model, dims, layer)
        m, n = dims.grid_shape(A.layer_weight(model, layer).shape[0])
        A.write_pnm(path, tiles, [f"layer={layer}", f"grid={m}x{n}", "kind=filters"])
        written.append(path)
    for p in written:
        print(p)
    return 0


def cmd_som_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    data = rng.uniform(0, 1, (args.points, 2))
    grid = train_som(SomGrid.random(8, 8, 2, seed=args.seed), data, args.epochs, seed=args.seed)
    ratio = topographic_ratio(grid)
    print(f"topographic_ratio {ratio:.4f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(args.out, grid.weights, fmt="%.6e", delimiter=",", header="x,y", comments="")
        print(args.out)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
            "som-demo": cmd_som_demo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (LGNNError, OSError, KeyError, ValueError, IndexError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lgnn {args.command}: error: {msg}".splitlines()[0], file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``lf4d`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import LF4DError
from .fileio import atomic_write_bytes, atomic_write_json, atomic_write_text, encode_png, from_unit, read_png, to_unit
from .lflayers import ARCHITECTURES
from .lightfield import (
    RemapImage, extract_epis, from_remap, load_labels, load_lightfield, save_lightfield, to_remap,
)

log = logging.getLogger("lf4d")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# data directories


def load_scenes(data_dir):
    """Scenes listed in ``index.csv`` of a ``lf4d synth`` output tree."""
    from .synth import SceneSample

    data_dir = Path(data_dir)
    scenes = []
    for row in _read_csv(data_dir / "index.csv"):
        sdir = data_dir / row["dir"]
        scenes.append(SceneSample(load_lightfield(sdir), load_labels(sdir / "labels.png"), int(row["image_id"])))
    return scenes


def _render_one(args):
    from .synth import scene_for

    index, seed, specs, size, h_a, w_a, layout = args
    return scene_for(index, seed, specs, size, size, h_a, w_a, layout)


def _map(fn, items, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _config(args):
    """Config file (if any) overlaid by the flags the user actually gave."""
    from .train import ExperimentConfig, benchmark_config

    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = ExperimentConfig.load(path)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{path}: {exc}") from None
    else:
        cfg = benchmark_config()
    changes = {}
    for flag, key in (("arch", "architecture"), ("seed", "seed"), ("precision", "precision"),
                      ("patch_size", "patch_size"), ("epochs", "epochs"), ("lr", "base_lr")):
        val = getattr(args, flag, None)
        if val is not None:
            changes[key] = val
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# subcommands


def cmd_convert(args):
    src = Path(args.input)
    out = Path(args.out)
    if src.is_dir():
        lf = load_lightfield(src)
    else:
        if args.h_a is None or args.w_a is None:
            raise UsageError("converting a remap image needs --h-a and --w-a")
        img = to_unit(read_png(src))
        if img.ndim != 3:
            raise UsageError(f"{src}: expected an RGB remap image")
        lf = from_remap(RemapImage(img.transpose(2, 0, 1), args.h_a, args.w_a), args.h_a, args.w_a)
    if args.to == "views":
        save_lightfield(lf, out, bits=args.bits)
    elif args.to == "remap":
        remap = to_remap(lf)
        atomic_write_bytes(out, encode_png(from_unit(np.asarray(remap.data).transpose(1, 2, 0), args.bits)))
    else:
        epis = extract_epis(lf)
        out.mkdir(parents=True, exist_ok=True)
        for y, e in enumerate(epis.horizontal):
            atomic_write_bytes(out / f"epi_h_y{y}.png", encode_png(from_unit(e.transpose(1, 2, 0), args.bits)))
        for x, e in enumerate(epis.vertical):
            atomic_write_bytes(out / f"epi_v_x{x}.png", encode_png(from_unit(e.transpose(1, 2, 0), args.bits)))
    print(f"wrote {out}")


def cmd_synth(args):
    from .synth import default_classes

    specs = default_classes(background=args.background)
    seed = 0 if args.seed is None else args.seed
    jobs = [(i, seed, specs, args.size, args.h_a, args.w_a, args.layout) for i in range(args.scenes)]
    scenes = _map(_render_one, jobs, args.jobs)
    out = Path(args.out)
    rows = []
    for s in scenes:
        name = f"scene_{s.image_id:04d}"
        save_lightfield(s.lf, out / name, bits=args.bits, labels=s.labels)
        ids, counts = np.unique(s.labels, return_counts=True)
        hist = ";".join(f"{c}:{n}" for c, n in zip(ids, counts))
        rows.append((s.image_id, name, args.layout, hist))
    atomic_write_text(out / "index.csv", _csv_text(rows, ["image_id", "dir", "layout", "class_histogram"]))
    atomic_write_json(out / "classes.json", [{"id": c.id, "name": c.name} for c in specs])
    print(f"wrote {len(scenes)} scenes to {out}")


def _mine(scenes, patch_size, min_spacing, max_per_image, seed):
    from .synth import extract_patches
    from .train import thin_patches

    patches = []
    for s in scenes:
        patches.extend(extract_patches(s, patch_size, min_spacing or None))
    return thin_patches(patches, max_per_image, seed)


PATCH_COLUMNS = ["image_id", "cy", "cx", "size", "label"]


def _patch_rows(patches):
    return [(p.image_id, p.center[0], p.center[1], p.patch.h_s, p.label) for p in patches]


def _patches_from_csv(path, scenes):
    from .lightfield import crop_patch
    from .synth import PatchSample

    by_id = {s.image_id: s for s in scenes}
    out = []
    for row in _read_csv(path):
        s = by_id.get(int(row["image_id"]))
        if s is None:
            raise UsageError(f"{path}: image {row['image_id']} is not in the data directory")
        cy, cx, size = int(row["cy"]), int(row["cx"]), int(row["size"])
        out.append(PatchSample(crop_patch(s.lf, cy, cx, size), int(row["label"]), s.image_id, (cy, cx)))
    return out


def cmd_extract_patches(args):
    scenes = load_scenes(args.data)
    patches = _mine(scenes, args.patch_size, args.min_spacing, args.max_per_image, args.seed or 0)
    out = Path(args.out)
    atomic_write_text(out / "patches.csv", _csv_text(_patch_rows(patches), PATCH_COLUMNS))
    print(f"wrote {len(patches)} patches to {out / 'patches.csv'}")


def cmd_split(args):
    from .synth import split_by_image

    rows = _read_csv(args.patches)
    ids = sorted({int(r["image_id"]) for r in rows})

    class _Row:  # split_by_image only needs image_id
        def __init__(self, r):
            self.row, self.image_id = r, int(r["image_id"])

    train, test = split_by_image([_Row(r) for r in rows], args.fraction, 0 if args.seed is None else args.seed)
    out = Path(args.out)
    for name, part in (("train.csv", train), ("test.csv", test)):
        atomic_write_text(out / name, _csv_text([[r.row[c] for c in PATCH_COLUMNS] for r in part], PATCH_COLUMNS))
    print(f"{len(ids)} images: {len(train)} train / {len(test)} test patches -> {out}")


def _train_test(args, cfg, scenes):
    from .synth import split_by_image

    if args.split:
        split = Path(args.split)
        return _patches_from_csv(split / "train.csv", scenes), _patches_from_csv(split / "test.csv", scenes)
    patches = _mine(scenes, cfg.patch_size, cfg.min_spacing, cfg.max_patches_per_image, 0)
    return split_by_image(patches, cfg.train_fraction, cfg.seed)


def cmd_train(args):
    from .nn import checkpoint
    from .plotting import plot_history
    from .train import train

    if args.fcn:
        raise UsageError("direct FCN training is refused: it is unstable; train a patch model, "
                         "then run 'lf4d segment', which converts it")
    cfg = _config(args)
    scenes = load_scenes(args.data)
    train_set, _ = _train_test(args, cfg, scenes)
    result = train(cfg, train_set, progress=lambda e, l: log.info("epoch %d loss %.4f", e, l))
    out = Path(args.out)
    checkpoint.save(result.network, out / "model.lf4d")
    atomic_write_json(out / "config.json", cfg.to_dict())
    atomic_write_text(out / "history.csv", _csv_text([(e, i, repr(l)) for e, i, l in result.history],
                                                      ["epoch", "iteration", "loss"]))
    plot_history(result.history, out / "loss.png")
    print(f"{cfg.architecture}: loss {result.initial_loss:.4f} -> {result.final_loss:.4f}; model at {out / 'model.lf4d'}")


def _load_model(path):
    from .nn import checkpoint

    path = Path(path)
    if not path.is_file():
        raise UsageError(f"model file not found: {path}")
    return checkpoint.load(path)


def cmd_eval(args):
    from .plotting import plot_confusion
    from .synth import split_by_image
    from .train import evaluate

    net = _load_model(args.model)
    scenes = load_scenes(args.data)
    if args.split:
        test_set = _patches_from_csv(Path(args.split) / "test.csv", scenes)
    else:
        cfg_path = Path(args.model).with_name("config.json")
        cfg = _config(argparse.Namespace(config=str(cfg_path) if cfg_path.is_file() else None, seed=args.seed))
        patches = _mine(scenes, cfg.patch_size, cfg.min_spacing, cfg.max_patches_per_image, 0)
        test_set = split_by_image(patches, cfg.train_fraction, cfg.seed)[1]
    ev = evaluate(net, test_set)
    out = Path(args.out)
    k = ev.confusion.n_classes
    metrics = {"accuracy": ev.accuracy, "per_class": [None if np.isnan(v) else float(v) for v in ev.per_class],
               "n_test": len(test_set)}
    atomic_write_json(out / "metrics.json", metrics)
    atomic_write_text(out / "confusion.csv", _csv_text(ev.confusion.counts.tolist(), [f"pred_{j}" for j in range(k)]))
    plot_confusion(ev.confusion, out / "confusion.png", title=net.input_adapter)
    print(f"accuracy {ev.accuracy:.4f} on {len(test_set)} patches")


def _experiment_job(job):
    from .train import run_experiment

    preset, scenes, cfg, seed, arches = job
    return run_experiment(preset, scenes, None, cfg, seeds=[seed], arches=arches)


def cmd_experiment(args):
    from .synth import synth_dataset
    from .train import DEFAULT_SEEDS, write_reports

    cfg = _config(args)
    if args.data:
        scenes = load_scenes(args.data)
    else:
        scenes = synth_dataset(args.scenes, 0 if args.seed is None else args.seed)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(DEFAULT_SEEDS)
    arches = args.arches.split(",") if args.arches else None
    if arches and set(arches) - set(ARCHITECTURES):
        raise UsageError(f"unknown architecture in --arches: {args.arches}")
    jobs = [(args.preset, scenes, cfg, s, arches) for s in seeds]
    records = [r for part in _map(_experiment_job, jobs, args.jobs) for r in part]
    write_reports(records, Path(args.out), figures=not args.no_figures)
    for r in records:
        print(f"{r.preset},{r.variant},{r.seed},{r.accuracy:.4f}")


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    rows = run_suite(seed=0 if args.seed is None else args.seed, only=None if args.all else args.layer)
    width = max(len(r[0]) for r in rows)
    lines = [f"{'layer':<{width}}  {'shape':<20} max_rel_err  ok"]
    for name, shape, err, ok in rows:
        lines.append(f"{name:<{width}}  {shape:<20} {err:.3e}    {'yes' if ok else 'NO'}")
    print("\n".join(lines))
    if args.out:
        atomic_write_text(Path(args.out) / "gradcheck.csv",
                          _csv_text([(n, s, repr(e), int(o)) for n, s, e, o in rows], ["layer", "shape", "max_rel_err", "ok"]))
    return 0 if all(r[3] for r in rows) else 2


def cmd_segment(args):
    from .segment import convolutionalize, segment_lightfield, write_segmentation

    fcns = [convolutionalize(_load_model(m)) for m in args.model]
    scene = Path(args.scene)
    lf = load_lightfield(scene)
    gt = load_labels(scene / "labels.png") if (scene / "labels.png").is_file() else None
    seg = segment_lightfield(fcns, lf, args.radius, args.eps)
    metrics = write_segmentation(args.out, seg, gt, args.ignore)
    if metrics:
        print(f"per-pixel accuracy {metrics['pre_filter_acc']:.4f} -> {metrics['post_filter_acc']:.4f} after guided filter")
    print(f"wrote {args.out}")


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: command specific)")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--config", default=None, help="JSON experiment config; flags override its values")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent scenes/seeds")
    common.add_argument("--precision", choices=("f32", "f64"), default=None, help="training precision")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="lf4d", description="Light-field material recognition toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_text, out_required=True):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        sp.set_defaults(func=fn, out_required=out_required)
        return sp

    sp = add("convert", cmd_convert, "convert between view directories, remap images and EPIs")
    sp.add_argument("input", help="light-field directory (meta.json + views) or remap PNG")
    sp.add_argument("--to", choices=("views", "remap", "epi"), required=True, help="output layout")
    sp.add_argument("--h-a", type=int, default=None, help="angular height of a remap input")
    sp.add_argument("--w-a", type=int, default=None, help="angular width of a remap input")
    sp.add_argument("--bits", type=int, choices=(8, 16), default=8, help="PNG bit depth")

    sp = add("synth", cmd_synth, "render synthetic material light fields")
    sp.add_argument("--scenes", type=int, required=True, help="number of scenes")
    sp.add_argument("--size", type=int, default=64, help="spatial height and width")
    sp.add_argument("--h-a", type=int, default=7, help="angular height (odd)")
    sp.add_argument("--w-a", type=int, default=7, help="angular width (odd)")
    sp.add_argument("--layout", choices=("uniform", "voronoi"), default="uniform", help="class layout per scene")
    sp.add_argument("--background", action="store_true", help="add the background 'other' class")
    sp.add_argument("--bits", type=int, choices=(8, 16), default=8, help="PNG bit depth")

    sp = add("extract-patches", cmd_extract_patches, "mine labelled patch centres from a synth tree")
    sp.add_argument("--data", required=True, help="directory written by 'lf4d synth'")
    sp.add_argument("--patch-size", type=int, default=32, help="patch side in pixels")
    sp.add_argument("--min-spacing", type=int, default=0, help="minimum centre distance (0: half the patch)")
    sp.add_argument("--max-per-image", type=int, default=0, help="cap patches per image (0: no cap)")

    sp = add("split", cmd_split, "split a patch list by image into train.csv and test.csv")
    sp.add_argument("--patches", required=True, help="patches.csv from 'lf4d extract-patches'")
    sp.add_argument("--fraction", type=float, default=0.7, help="fraction of images used for training")

    for name, fn, text in (("train", cmd_train, "train a patch classifier"),
                           ("experiment", cmd_experiment, "run a preset comparison over several seeds")):
        sp = add(name, fn, text)
        if name == "train":
            sp.add_argument("--arch", choices=ARCHITECTURES, default=None, help="architecture")
            sp.add_argument("--data", required=True, help="directory written by 'lf4d synth'")
            sp.add_argument("--split", default=None, help="directory with train.csv/test.csv from 'lf4d split'")
            sp.add_argument("--fcn", action="store_true", help="train a fully convolutional model directly (refused)")
        else:
            sp.add_argument("--preset", required=True,
                            choices=("arch_comparison", "channel_sweep", "patch_sweep", "equal_pixel"), help="preset")
            sp.add_argument("--data", default=None, help="synth tree; default renders --scenes in memory")
            sp.add_argument("--scenes", type=int, default=200, help="scenes to render when --data is absent")
            sp.add_argument("--seeds", default=None, help="comma-separated split seeds (default 1,2,3,4,5)")
            sp.add_argument("--arches", default=None, help="comma-separated architectures to include")
            sp.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
        sp.add_argument("--patch-size", type=int, default=None, help="patch side in pixels")
        sp.add_argument("--epochs", type=int, default=None, help="training epochs")
        sp.add_argument("--lr", type=float, default=None, help="base learning rate")

    sp = add("eval", cmd_eval, "evaluate a trained model on held-out patches")
    sp.add_argument("--model", required=True, help="model.lf4d checkpoint")
    sp.add_argument("--data", required=True, help="directory written by 'lf4d synth'")
    sp.add_argument("--split", default=None, help="directory with test.csv; default re-splits as in training")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of every layer kind", out_required=False)
    sp.add_argument("--all", action="store_true", help="check every layer kind")
    sp.add_argument("--layer", default=None, help="check one layer kind")

    sp = add("segment", cmd_segment, "dense material map of one scene")
    sp.add_argument("--model", action="append", required=True, help="patch model; repeat to fuse several scales")
    sp.add_argument("--scene", required=True, help="light-field directory (labels.png enables metrics)")
    sp.add_argument("--radius", type=int, default=8, help="guided filter radius")
    sp.add_argument("--eps", type=float, default=1e-3, help="guided filter regularizer")
    sp.add_argument("--ignore", type=int, default=None, help="label excluded from the accuracy")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("lf4d: a command is required")
        if args.out_required and not args.out:
            raise UsageError(f"lf4d {args.command}: --out is required")
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if args.command == "gradcheck" and not (args.all or args.layer):
            raise UsageError("lf4d gradcheck: give --all or --layer KIND")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        return args.func(args) or 0
    except UsageError as exc:
        print(f"{exc} (see 'lf4d --help')", file=sys.stderr)
        return 1
    except (LF4DError, ValueError, OSError) as exc:
        print(f"lf4d: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

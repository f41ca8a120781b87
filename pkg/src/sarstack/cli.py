"""Command-line entry point.

Exit codes: 0 success, 1 I/O or system failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import composites, datasets, metrics, tuner, wbf
from .errors import InputError

log = logging.getLogger("sarstack")

EXIT_OK, EXIT_IO, EXIT_INPUT = 0, 1, 2
SWEEP_HEADER = ["label", "ap_50_95", "ap_50", "ap_75", "ar_50_95"]


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _pair(text: str) -> tuple[float, float]:
    vals = _float_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got '{text}'")
    return vals[0], vals[1]


def _origin(text: str) -> tuple[int, int]:
    try:
        x, y = (int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y pixel origin, got '{text}'")
    return x, y


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_composite(args) -> int:
    if args.sensor == "s1":
        vh = composites.load_raster(args.vh)
        vv = composites.load_raster(args.vv)
        img = composites.s1_composite(vh, vv, args.clip)
    else:
        bands = [composites.load_raster(p) for p in (args.b04, args.b03, args.b02)]
        img = composites.s2_composite(*bands, reflectance_scale=args.scale)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    composites.save_png(img, args.out)
    log.info("wrote %s (%dx%d)", args.out, img.width, img.height)
    return EXIT_OK


def _gt_for_image(gt: datasets.DatasetGT, image_path: Path) -> datasets.ImageInfo:
    matches = [im for im in gt.images if Path(im.file_name).name == image_path.name]
    if len(matches) == 1:
        return matches[0]
    if len(gt.images) == 1:
        return gt.images[0]
    raise InputError(f"ground truth has no unique image entry for '{image_path.name}'")


def cmd_crop(args) -> int:
    spec = composites.CropSpec(args.size, args.stride, args.min_visibility)
    src = Path(args.input)
    img = composites.load_png(src)
    excluded = set(args.exclude or [])
    out_dir = Path(args.out)

    if args.gt:
        gt = datasets.load_gt(args.gt)
        info = _gt_for_image(gt, src)
        if (info.width, info.height) != (img.width, img.height):
            raise InputError(
                f"ground truth says {info.width}x{info.height} but {src} is {img.width}x{img.height}"
            )
        anns = [a for a in gt.annotations if a.image_id == info.id]
        patches = [
            p for p in composites.crop_detection_patches(img, anns, spec)
            if (p.origin_x, p.origin_y) not in excluded
        ]
    else:
        gt = None
        patches = [
            p for p in composites.crop_grid(img, spec) if (p.origin_x, p.origin_y) not in excluded
        ]

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, images, annotations = [], [], []
    for k, p in enumerate(patches):
        name = f"{src.stem}_{p.origin_x}_{p.origin_y}.png"
        composites.save_png(p.image, out_dir / name)
        manifest.append(
            {"file_name": name, "origin_x": p.origin_x, "origin_y": p.origin_y, "source": src.name}
        )
        if gt is not None:
            image_id = k + 1
            images.append(datasets.ImageInfo(image_id, spec.patch_size, spec.patch_size, name))
            for a in p.annotations:
                annotations.append(
                    datasets.Annotation(a.box, a.category_id, image_id, len(annotations) + 1)
                )
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    if gt is not None:
        datasets.save_gt(
            datasets.DatasetGT(images, annotations, list(gt.categories)),
            out_dir / "annotations.json",
        )
    log.info("wrote %d patches to %s", len(patches), out_dir)
    return EXIT_OK


def cmd_split(args) -> int:
    spec = datasets.SplitSpec(args.train_fraction, args.seed)
    gt = datasets.load_gt(args.gt)
    train, val = datasets.split(gt, spec)
    datasets.save_gt(train, args.out_train)
    datasets.save_gt(val, args.out_val)
    log.info("split %d images into %d train / %d val", len(gt.images), len(train.images), len(val.images))
    return EXIT_OK


def _print_metrics(report: metrics.EvalReport, label: str = "") -> None:
    head = f"{label}: " if label else ""
    row = report.as_row()
    print(head + "  ".join(f"{k}={v:.2f}" for k, v in row.items()))


def cmd_eval(args) -> int:
    gt = datasets.load_gt(args.gt)
    preds = datasets.load_predictions(args.pred, gt)
    report = metrics.evaluate(gt, preds)
    _print_metrics(report)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _load_model_sets(gt, paths) -> list[datasets.PredictionSet]:
    return [datasets.load_predictions(p, gt, model_id=m) for m, p in enumerate(paths)]


def cmd_fuse(args) -> int:
    weights = args.weights if args.weights is not None else [1.0] * len(args.pred)
    if len(weights) != len(args.pred):
        raise InputError(f"{len(weights)} weights given for {len(args.pred)} prediction files")
    config = wbf.EnsembleConfig(tuple(weights), args.iou_thr, args.skip_thr)
    gt = datasets.load_gt(args.gt)
    sets = _load_model_sets(gt, args.pred)
    fused = wbf.fuse_dataset(sets, config, workers=args.threads)
    datasets.save_predictions(fused, gt, args.out)
    log.info("fused %d files into %d detections", len(sets), len(fused))
    return EXIT_OK


def cmd_tune(args) -> int:
    gt = datasets.load_gt(args.gt)
    sets = _load_model_sets(gt, args.pred)
    space = tuner.SearchSpace(
        len(sets), tuple(args.weight_range), tuple(args.iou_range), tuple(args.skip_range)
    )
    study = tuner.tune(gt, sets, space, n_trials=args.trials, seed=args.seed, workers=args.threads)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(study.to_json())
    b = study.best
    print(
        f"best trial {b.index}: objective={b.objective_value:.2f} "
        f"weights={','.join(f'{w:.4f}' for w in b.config.weights)} "
        f"iou_thr={b.config.iou_threshold:.4f} skip_thr={b.config.skip_threshold:.4f}"
    )
    _print_metrics(b.report, "best")
    return EXIT_OK


def cmd_sweep(args) -> int:
    gt = datasets.load_gt(args.gt)
    pred_dir = Path(args.pred_dir)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    files = sorted(pred_dir.glob("*.json"), key=lambda p: datasets.natural_key(p.stem))
    if not files:
        raise InputError(f"no *.json prediction files in {pred_dir}")
    result = datasets.sweep(gt, [(p.stem, p) for p in files], workers=args.threads)
    with open(args.out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for label, r in result.curve:
            writer.writerow(
                [label] + [f"{v:.6f}" for v in (r.ap_50_95, r.ap_50, r.ap_75, r.ar_50_95)]
            )
    for label, r in result.curve:
        _print_metrics(r, label)
    print(f"best: {result.best_checkpoint}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all stochastic steps")
    common.add_argument(
        "--threads", type=_positive_int, default=os.cpu_count() or 1, help="worker threads"
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true")
    verbosity.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="sarstack",
        description="SAR/optical composites, detection metrics and Weighted Boxes Fusion ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("composite", help="build an RGB composite from band rasters")
    sensors = p.add_subparsers(dest="sensor", required=True)
    s1 = sensors.add_parser("s1", parents=[common], help="Sentinel-1 VH/VV/ratio composite")
    s1.add_argument("--vh", required=True)
    s1.add_argument("--vv", required=True)
    s1.add_argument("--clip", type=_pair, default=(2.0, 98.0), metavar="LO,HI")
    s1.add_argument("--out", required=True)
    s1.set_defaults(func=cmd_composite)
    s2 = sensors.add_parser("s2", parents=[common], help="Sentinel-2 true colour composite")
    s2.add_argument("--b04", required=True)
    s2.add_argument("--b03", required=True)
    s2.add_argument("--b02", required=True)
    s2.add_argument("--scale", type=float, default=10000.0)
    s2.add_argument("--out", required=True)
    s2.set_defaults(func=cmd_composite)

    p = sub.add_parser("crop", parents=[common], help="cut an image into square patches")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--size", type=_positive_int, required=True)
    p.add_argument("--stride", type=_positive_int)
    p.add_argument("--gt", help="COCO ground truth; keeps only patches with boxes")
    p.add_argument("--min-visibility", type=float, default=0.5)
    p.add_argument("--exclude", type=_origin, action="append", metavar="X,Y",
                   help="skip the patch at this origin (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("split", parents=[common], help="train/validation split by image")
    p.add_argument("--gt", required=True)
    p.add_argument("--train-fraction", type=float, default=0.85)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-val", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", parents=[common], help="COCO AP/AR of a results file")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", parents=[common], help="Weighted Boxes Fusion of results files")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--weights", type=_float_list)
    p.add_argument("--iou-thr", type=float, default=0.55)
    p.add_argument("--skip-thr", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("tune", parents=[common], help="search ensemble weights and thresholds")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--weight-range", type=_pair, default=(0.01, 2.0), metavar="LO,HI")
    p.add_argument("--iou-range", type=_pair, default=(0.30, 0.80), metavar="LO,HI")
    p.add_argument("--skip-range", type=_pair, default=(0.00, 0.40), metavar="LO,HI")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sweep", parents=[common], help="evaluate every checkpoint's predictions")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    clsim ssim a.png b.png
    clsim analyze manifest.json --out report.json
    clsim fit --bundled table3_cgan --out curve.json
    clsim predict --published 0.088
    clsim augment train.json val.json --generator blob --out run/
    clsim report report.json points.csv --published --out scatter.csv

Exit codes: 0 success, 1 data/runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import augment, gain
from .dataset import DEFAULT_COMMON_SIZE, ImageCache, ImageLoadError, ManifestError, load_image, load_manifest
from .setsim import BootstrapConfig, analyze
from .ssim import SsimParams, ssim

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
CURVE_SAMPLES = 200


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return (w, h)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _unit(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _finite(text: str) -> float:
    v = float(text)
    if not np.isfinite(v):
        raise argparse.ArgumentTypeError("must be finite")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _generator(text: str) -> str:
    if text in ("noise", "blob") or (text.startswith("subprocess:") and len(text) > len("subprocess:")):
        return text
    raise argparse.ArgumentTypeError("expected noise, blob or subprocess:PATH")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=42)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $CLSIM_THREADS or all cores)")
    common.add_argument("--common-size", type=_size, default=None, metavar="WxH",
                        help="resample images to this size (default: manifest value or 128x128)")
    common.add_argument("--out", type=Path, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clsim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ssim", parents=[common], help="SSIM of two images")
    p.add_argument("image_a", type=Path)
    p.add_argument("image_b", type=Path)
    p.add_argument("--window", type=_positive_int, default=None,
                   help="use the sliding uniform-window variant with this window size")

    p = sub.add_parser("analyze", parents=[common], help="SSIM-mergeCls and SSIM-supSubCls of a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--repetition-multiplier", type=_positive, default=2.0)
    p.add_argument("--threshold", type=_finite, default=gain.DEFAULT_THRESHOLD)

    p = sub.add_parser("fit", parents=[common], help="fit the exponential gain curve")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("points_csv", type=Path, nargs="?")
    src.add_argument("--bundled", choices=["table3_cgan", "table2_gd"])
    p.add_argument("--method", choices=["direct-nlls", "log-linear"], default="direct-nlls")

    p = sub.add_parser("predict", parents=[common], help="predict gain and verdict for a similarity value")
    curve = p.add_mutually_exclusive_group(required=True)
    curve.add_argument("--curve", type=Path)
    curve.add_argument("--published", action="store_true")
    p.add_argument("x", type=_finite)
    p.add_argument("--threshold", type=_finite, default=gain.DEFAULT_THRESHOLD)

    p = sub.add_parser("augment", parents=[common], help="run the generate-filter-retrain loop")
    p.add_argument("manifest", type=Path)
    p.add_argument("val_manifest", type=Path)
    p.add_argument("--alpha", type=_unit, default=0.9)
    p.add_argument("--epsilon", type=_nonneg, default=0.5)
    p.add_argument("--max-steps", type=_positive_int, default=2)
    p.add_argument("--target-count", type=_positive_int, default=None)
    p.add_argument("--attempt-multiplier", type=_positive_int, default=10)
    p.add_argument("--generator", type=_generator, default="noise")

    p = sub.add_parser("report", parents=[common], help="scatter CSV of reports plus curve samples")
    p.add_argument("inputs", type=Path, nargs="*",
                   help="analysis report JSON files and/or label,x,improvement_percent CSV files")
    curve = p.add_mutually_exclusive_group(required=True)
    curve.add_argument("--curve", type=Path)
    curve.add_argument("--published", action="store_true")
    return parser


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")


def cmd_ssim(args) -> int:
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    size = args.common_size
    if size is None and a.size != b.size:
        size = DEFAULT_COMMON_SIZE
    if size is not None:
        a = load_image(args.image_a, size)
        b = load_image(args.image_b, size)
    print(f"{ssim(a, b, SsimParams(), window=args.window):.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    h = load_manifest(args.manifest)
    size = args.common_size or h.common_size or DEFAULT_COMMON_SIZE
    cfg = BootstrapConfig(repetition_multiplier=args.repetition_multiplier, seed=args.seed, common_size=size)
    report = analyze(h, cfg, workers=args.threads)
    if args.out:
        _write_json(args.out, report)
    print(f"dataset:            {report['dataset']}")
    print(f"SSIM-mergeCls:      {report['ssim_merge_cls']:.4f}")
    print(f"SSIM-supSubCls:     {report['ssim_sup_sub_cls']:.4f} (super-class {report['argmax_super_class']})")
    print(f"verdict @ {args.threshold:.4f}:  {gain.verdict(report['ssim_sup_sub_cls'], args.threshold)}")
    for w in report["warnings"]:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.bundled:
        points = gain.bundled_points(args.bundled)
    else:
        points = gain.read_points(args.points_csv)
    if len(points) < 2:
        raise UsageError(f"need at least 2 data rows to fit, got {len(points)}")
    curve, diag = gain.fit(points, args.method)
    if args.out:
        gain.save_curve(args.out, curve, diag, points, args.method)
    b, p, q = curve.paper_form()
    print(f"method:  {args.method}")
    print(f"alpha:   {curve.alpha:.6f}")
    print(f"beta:    {curve.beta:.6f}")
    print(f"form:    {b}^({p:.2f}x{q:+.2f})")
    print(f"R^2:     {diag.r_squared:.4f}")
    print(f"MAE:     {diag.mae:.4f} %")
    return EXIT_OK


def _curve(args) -> gain.GainCurve:
    return gain.published_curve() if args.published else gain.load_curve(args.curve)


def cmd_predict(args) -> int:
    c = _curve(args)
    print(f"predicted improvement: {gain.predict(c, args.x):.2f} %")
    print(f"verdict: {gain.verdict(args.x, args.threshold)}")
    return EXIT_OK


def _make_generator(spec: str, h, cache: ImageCache, size):
    if spec == "noise":
        return augment.NoiseGenerator(h, cache)
    if spec == "blob":
        return augment.BlobGenerator(h.sub_class_ids(), size)
    return augment.SubprocessGenerator(spec.split(":", 1)[1], size)


def cmd_augment(args) -> int:
    if args.out is None:
        raise UsageError("augment needs --out RUN_DIR")
    h = load_manifest(args.manifest)
    val_h = load_manifest(args.val_manifest)
    augment.check_disjoint(h, val_h)
    size = args.common_size or h.common_size or DEFAULT_COMMON_SIZE
    cache = ImageCache(size)
    cfg = augment.AugmentationConfig(alpha=args.alpha, epsilon=args.epsilon, max_steps=args.max_steps,
                                     target_count=args.target_count,
                                     attempt_multiplier=args.attempt_multiplier, seed=args.seed)
    gen = _make_generator(args.generator, h, cache, size)
    val = augment.labeled_images(val_h, cache)
    result = augment.run(h, val, gen, augment.SoftmaxClassifier(), cfg, args.out, cache)
    ledger = augment.write_run(result, args.out)
    print(f"initial val acc: {result.initial_accuracy:.2f} %")
    for k, rec in enumerate(result.steps):
        print(f"step {k}: accepted {sum(rec.accepted.values())}, rejected {rec.rejected}, "
              f"val acc {rec.val_accuracy_before:.2f} -> {rec.val_accuracy_after:.2f} %")
    print(f"ledger: {ledger}")
    return EXIT_OK


def _report_points(paths) -> list[tuple[str, float, float | None]]:
    rows = []
    for path in paths:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
            imp = data.get("improvement_percent")
            rows.append((data["dataset"], float(data["ssim_sup_sub_cls"]), None if imp is None else float(imp)))
        else:
            rows.extend((p.label, p.x, p.improvement) for p in gain.read_points(path))
    return rows


def cmd_report(args) -> int:
    if not args.inputs:
        raise UsageError("report needs at least one analysis report or points file")
    if args.out is None:
        raise UsageError("report needs --out FILE.csv")
    c = _curve(args)
    rows = _report_points(args.inputs)
    if not rows:
        raise UsageError("inputs contain no data points")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "x", "improvement_percent", "predicted_percent"])
    for label, x, imp in rows:
        w.writerow([label, repr(x), "" if imp is None else repr(imp), repr(gain.predict(c, x))])
    x_max = max(x for _, x, _ in rows)
    for x in np.linspace(0.0, 1.1 * x_max, CURVE_SAMPLES):
        w.writerow(["curve", repr(float(x)), "", repr(gain.predict(c, float(x)))])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(buf.getvalue())
    print(f"wrote {len(rows)} data rows and {CURVE_SAMPLES} curve rows to {args.out}")
    return EXIT_OK


COMMANDS = {
    "ssim": cmd_ssim,
    "analyze": cmd_analyze,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "augment": cmd_augment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        os.environ["CLSIM_THREADS"] = str(args.threads)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"clsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, ImageLoadError, gain.FitError, augment.PortError,
            OSError, ValueError, KeyError) as exc:
        print(f"clsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

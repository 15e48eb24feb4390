"""Command-line entry point: ``convmean <subcommand> ...``.

Machine-readable results go to stdout (or ``--out``) as CSV; logs go to
stderr. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data
from . import model as cm
from .evaluation import aggregate_cameras, angular_error, error_stats, per_camera_stats, stats_csv
from .exceptions import DataError, FormatError, NumericError
from .training import TrainConfig, cross_validate, estimate_dataset, train_fold

logger = logging.getLogger("convmean")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ALGOS = ("grayworld", "whitepatch", "sog", "ge1", "ge2", "cm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text, path=None):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        logger.info("wrote %s", path)
    else:
        sys.stdout.write(text)


def _log_config(args):
    items = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    logger.info("config: %s", ", ".join(f"{k}={v}" for k, v in items.items()))


def cmd_train(args):
    config = TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed,
                         variant=args.variant, select_on_test=not args.no_test_select,
                         selection_metric=args.selection_metric)
    dataset = data.load_dataset(args.data)
    if args.folds >= 2:
        result = cross_validate(dataset, args.folds, config)
        logger.info("cross-validation (%d folds): %s", args.folds, result.stats)
        _emit(stats_csv([(config.variant.cli_name, result.stats)]), args.stats)
        if args.errors:
            _write_errors(args.errors, result.ids, result.errors)
    if args.out or args.report:
        report = train_fold(dataset, dataset, config)
        sel = report.selected
        logger.info("selected epoch %d: test mean %.4f deg", report.selected_epoch, sel.test_mean_deg)
        if args.out:
            cm.save(report.params, args.out)
            logger.info("wrote %s", args.out)
        if args.report:
            _emit(report.to_csv(), args.report)
    return EXIT_OK


def _write_errors(path, ids, errors):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "angular_deg"])
        for i, e in zip(ids, errors):
            writer.writerow([i, f"{e:.6f}"])


def _baseline_estimates(algo, thumbs, p, jobs):
    from . import baselines

    def one(im):
        return baselines.estimate(algo, im.pixels, p)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return np.stack(list(pool.map(one, thumbs)))
    return np.stack([one(im) for im in thumbs])


def cmd_eval(args):
    algo = args.algo or ("cm" if args.model else None)
    if algo is None:
        raise UsageError("eval needs --model or --algo")
    if algo == "cm" and not args.model:
        raise UsageError("--algo cm needs --model")
    dataset = data.load_dataset(args.data)
    if algo == "cm":
        params = cm.load(args.model)
        est = estimate_dataset(params, dataset)
        label = params.variant.cli_name
    else:
        thumbs = [data.make_thumbnail(im) for im in dataset]
        est = _baseline_estimates(algo, thumbs, args.p, args.jobs)
        label = algo
    errors = angular_error(est, dataset.illuminants())
    if args.per_camera_geomean:
        stats = aggregate_cameras(per_camera_stats(errors, dataset.cameras))
    else:
        stats = error_stats(errors)
    logger.info("%s: %s", label, stats)
    _emit(stats_csv([(label, stats)]), args.out)
    if args.errors:
        _write_errors(args.errors, dataset.ids, errors)
    return EXIT_OK


def _lookup_gt(image_path, gt_csv):
    path = gt_csv or os.path.join(os.path.dirname(os.path.abspath(image_path)), data.GT_FILENAME)
    if not os.path.isfile(path):
        return None
    row = data.read_ground_truth(path).get(os.path.splitext(os.path.basename(image_path))[0])
    return None if row is None else row[0]


def cmd_predict(args):
    params = cm.load(args.model)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    pixels = data.read_ppm(args.image)
    img = data.make_thumbnail(data.LabeledImage(pixels, (1, 1, 1), image_id))
    est, _, degenerate = cm.forward(params, cm.prepare_input(img.pixels, params.variant).astype(np.float32))
    fields = [image_id] + [f"{c:.6f}" for c in est]
    gt = _lookup_gt(args.image, args.gt)
    if gt is not None:
        fields.append(f"{float(angular_error(est, gt)):.6f}")
    if degenerate:
        fields.append("degenerate")
        logger.warning("%s: network response is all zero; printing the gray fallback", image_id)
    print(",".join(fields))
    return EXIT_OK


def cmd_bench(args):
    if args.iters < 100:
        raise UsageError("--iters must be at least 100")
    if args.warmup < 10:
        raise UsageError("--warmup must be at least 10")
    with open(args.model, "rb") as fh:
        blob = fh.read()
    loads = []
    for _ in range(max(10, args.load_repeats)):
        t0 = time.perf_counter()
        params = cm.deserialize(blob)
        loads.append(time.perf_counter() - t0)
    rng = np.random.default_rng(args.seed)
    raw = rng.integers(0, 256, size=cm.INPUT_SHAPE + (3,)).astype(np.float64)
    x = cm.prepare_input(raw, params.variant).astype(np.float32)
    for _ in range(args.warmup):
        cm.forward(params, x)
    times = np.empty(args.iters)
    for i in range(args.iters):
        t0 = time.perf_counter()
        cm.forward(params, x)
        times[i] = time.perf_counter() - t0
    ms = times * 1e3
    rows = [("iters", args.iters), ("mean_ms", ms.mean()), ("median_ms", np.median(ms)),
            ("p99_ms", np.percentile(ms, 99)), ("load_ms", np.median(loads) * 1e3),
            ("model_bytes", len(blob))]
    text = "metric,value\n" + "".join(
        f"{k},{v}\n" if isinstance(v, int) else f"{k},{v:.6f}\n" for k, v in rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_synth(args):
    spec = data.MondrianSpec(height=args.height, width=args.width)
    dataset = data.synth_generate(args.seed, args.n, spec)
    data.save_dataset(dataset, args.out)
    logger.info("wrote %d images to %s", len(dataset), args.out)
    return EXIT_OK


def cmd_features(args):
    params = cm.load(args.model)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    img = data.make_thumbnail(data.LabeledImage(data.read_ppm(args.image), (1, 1, 1), image_id))
    x = cm.prepare_input(img.pixels, params.variant).astype(np.float32)
    features, response, focus = cm.dump_feature_maps(params, x)
    os.makedirs(args.out, exist_ok=True)
    for c in range(features.shape[2]):
        data.write_ppm(os.path.join(args.out, f"feature_{c:02d}.ppm"), data.to_ppm_pixels(features[..., c]))
    data.write_ppm(os.path.join(args.out, "response.ppm"), data.to_ppm_pixels(response))
    data.write_ppm(os.path.join(args.out, "focus.ppm"), data.to_ppm_pixels(focus))
    logger.info("wrote %d feature maps, response and focus to %s", features.shape[2], args.out)
    return EXIT_OK


def cmd_thumbs(args):
    dataset = data.load_dataset(args.input)
    data.save_dataset(dataset.thumbnails(), args.out)
    logger.info("wrote %d thumbnails to %s", len(dataset), args.out)
    return EXIT_OK


def _variant(value):
    try:
        return cm.Variant.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    parser = _Parser(prog="convmean", description="Convolutional Mean illuminant estimation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train (and optionally cross-validate) a CM model")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=3, help="k for cross-validation; 1 skips it")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--variant", type=_variant, default=cm.Variant.CM,
                   help="cm, cm-a, cm-b, cm-c or cm-d")
    p.add_argument("--no-test-select", action="store_true",
                   help="keep the final epoch instead of the best thumbnail-test epoch")
    p.add_argument("--selection-metric", choices=("mean", "median"), default="mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the model trained on all data (CMW1)")
    p.add_argument("--report", help="per-epoch CSV for the all-data model")
    p.add_argument("--stats", help="cross-validation stats CSV (default stdout)")
    p.add_argument("--errors", help="per-image held-out errors CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model or baseline on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--p", type=float, help="Minkowski norm for sog / ge1 / ge2")
    p.add_argument("--out", help="stats CSV path (default stdout)")
    p.add_argument("--errors", help="per-image errors CSV")
    p.add_argument("--per-camera-geomean", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="estimate the illuminant of one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--gt", help="ground-truth CSV (default: ground_truth.csv beside the image)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="single-image forward latency")
    p.add_argument("--model", required=True)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--load-repeats", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic Mondrian dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--height", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="export feature, response and focus maps")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("thumbs", help="write 48x32 thumbnails of a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_thumbs)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, argument errors exit EXIT_USAGE
        return exc.code
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    _log_config(args)
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, FormatError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .autoencoder import TrainConfig, write_log
from .config import describe, load_config
from .dataset_io import load_video, validate_manifest
from .errors import DataError, DepthGazeError, MissingPredictions, NumericError
from .evaluation import METRICS, evaluate_split
from .fixations import frame_qualities
from .synth import generate_dataset, read_synth_spec
from .transition import load_svm, save_svm
from . import workflow


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["cnn_epochs"] = args.epochs
    return cfg.with_overrides(**overrides)


def cmd_ingest(args):
    manifest = validate_manifest(args.root, deep=True)
    print("video,frames,split")
    for v in manifest.videos:
        print(f"{v.video_id},{v.frames},{manifest.split[v.video_id]}")
    return 0


def cmd_quality(args):
    cfg = load_config(args.config).with_overrides(homogeneity_splits=args.splits, seed=args.seed)
    hcfg = cfg.homogeneity()
    print("video,quality,frames_scored,frames_skipped")
    for lv in workflow.load_dataset(args.root):
        scores, skipped = frame_qualities(lv.fixsets, hcfg, cfg["sigma_fraction"])
        if scores:
            q = sum(scores[k] for k in sorted(scores)) / len(scores)
            print(f"{lv.video_id},{q:.6f},{len(scores)},{len(skipped)}")
        else:
            print(f"{lv.video_id},nan,0,{len(skipped)}")
    return 0


def cmd_train_baseline(args):
    cfg = _config(args)
    videos = workflow.load_dataset(args.root, split="train")
    model = workflow.train_svm_baseline(videos, cfg.baseline(), not args.no_depth)
    save_svm(model, args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_train_cnn(args):
    cfg = _config(args)
    tcfg = cfg.train()
    videos = workflow.load_dataset(args.root, split="train")

    def progress(entry):
        if args.verbose:
            print("epoch {} lr {:g} loss {:.6g}".format(*entry), file=sys.stderr)

    result = workflow.train_cnn(videos, tcfg, not args.no_depth, progress)
    workflow.save_network(result.net, args.out)
    write_log(result.log, args.log or str(args.out) + ".log.csv")
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_predict(args):
    cfg = _config(args)
    use_depth = not args.no_depth
    manifest = validate_manifest(args.root, deep=False)
    ids = args.video or manifest.ids_for("test")
    if args.model == "cnn":
        net, ncfg = workflow.load_network(args.weights)
        tcfg = TrainConfig(interval=cfg["interval"], network=ncfg, flow=cfg.flow())
        for vid in ids:
            video = load_video(args.root, vid)
            workflow.write_predictions(args.out, vid, workflow.predict_cnn(net, video, tcfg, use_depth))
    else:
        model = load_svm(args.weights)
        for lv in workflow.load_dataset(args.root, ids=ids):
            maps = workflow.predict_baseline(model, lv, cfg.baseline(), use_depth)
            workflow.write_predictions(args.out, lv.video_id, maps)
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise UsageError(f"unknown metrics: {', '.join(bad)}")
    pred_dirs = [Path(p) for p in args.pred.split(",") if p]
    for d in pred_dirs:
        if not d.is_dir():
            raise MissingPredictions(f"prediction directory {d} does not exist")
    videos = workflow.load_dataset(args.root, split="test")
    lengths = {lv.video_id: len(lv.video) for lv in videos}
    methods = {}
    for d in pred_dirs:
        methods[d.name] = (lambda vid, d=d: workflow.read_predictions(d, vid, lengths[vid]))
    report = evaluate_split(methods, [lv.eval_video() for lv in videos], metrics, cfg["seed"],
                            gt_bound=args.gt_bound, n_neg_per_pos=int(cfg["auc_negatives"]),
                            homogeneity=cfg.homogeneity(), sigma_fraction=cfg["sigma_fraction"])
    report.write(args.out)
    for (method, metric), (mean, std) in sorted(report.summary().items()):
        print(f"{method}\t{metric}\t{mean:.4f} +- {std:.4f}")
    return 0


def cmd_overlay(args):
    video = load_video(args.root, args.video)
    maps = workflow.read_predictions(args.pred, args.video, len(video))
    workflow.write_overlays(video, maps, args.out)
    return 0


def cmd_synth(args):
    specs, split = read_synth_spec(args.spec)
    generate_dataset(specs, split, args.out)
    print(f"wrote {len(specs)} videos to {args.out}", file=sys.stderr)
    return 0


def cmd_config(args):
    print(describe())
    return 0


def build_parser():
    p = _Parser(prog="depthgaze", description="Depth-aware video saliency toolkit.")
    p.add_argument("--threads", type=int, default=None, help="cap on numeric worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="validate a dataset root")
    s.add_argument("--root", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("quality", help="per-video split-half homogeneity")
    s.add_argument("--root", required=True)
    s.add_argument("--splits", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_quality)

    s = sub.add_parser("train-baseline", help="train the transition SVM")
    s.add_argument("--root", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--no-depth", action="store_true")
    s.set_defaults(func=cmd_train_baseline)

    s = sub.add_parser("train-cnn", help="train the autoencoder")
    s.add_argument("--root", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--no-depth", action="store_true")
    s.add_argument("--epochs", type=int)
    s.add_argument("--log", help="training log CSV (default: OUT.log.csv)")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train_cnn)

    s = sub.add_parser("predict", help="write per-frame saliency PNGs")
    s.add_argument("--weights", required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--video", action="append", help="video id (repeatable; default: test split)")
    s.add_argument("--out", required=True)
    s.add_argument("--no-depth", action="store_true")
    s.add_argument("--model", choices=("baseline", "cnn"), default="cnn")
    s.add_argument("--config")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score prediction directories on the test split")
    s.add_argument("--root", required=True)
    s.add_argument("--pred", required=True, help="comma-separated prediction directories")
    s.add_argument("--metrics", default="auc,chi2")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--gt-bound", action="store_true", help="add the split-half ground-truth row")
    s.add_argument("--config")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("overlay", help="blend predictions over the frames")
    s.add_argument("--root", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_overlay)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("config", help="list configuration keys and defaults")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"depthgaze: error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"depthgaze: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (DataError, DepthGazeError) as exc:
        print(f"depthgaze: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"depthgaze: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

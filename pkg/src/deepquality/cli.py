"""Operator surface: synthesize corpora, train, evaluate, score single
images, and verify gradients.

Exit codes are a stable contract: 0 success, 1 check or accuracy-gate
failure, 2 input error, 3 corrupt model artifact.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

# Thread setup must precede the first numpy import: the thin per-layer GEMMs
# here run fastest with a single BLAS thread while the compiled kernels own
# loop-level parallelism, and spinning OpenMP waits starve them. These are
# process-level knobs, separate from --workers (which fans out per-image
# work and never changes results).
os.environ.setdefault("OMP_WAIT_POLICY", "PASSIVE")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_CORRUPT = 3

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

log = logging.getLogger("deepquality")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import ConfigError
    from .dataset import DatasetError
    from .imgio import ImageReadError
    from .model_io import ModelFormatError
    try:
        return args.func(args)
    except ModelFormatError as e:
        print(f"error: corrupt model: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ConfigError, DatasetError, ImageReadError, FileNotFoundError,
            NotADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepquality",
        description="No-reference image quality grading (c0 best .. c4 worst).")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, help="TOML config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--workers", type=int,
                       help="worker count for per-image stages "
                            "(default: DEEPQUALITY_WORKERS or CPU count)")
        p.add_argument("--out", type=Path, required=out_required,
                       help="run directory for outputs and the effective config")

    p = sub.add_parser("synth", help="render the distortion ladder over clean images")
    common(p)
    p.add_argument("--input-dir", type=Path, required=True,
                   help="directory of clean images")
    p.add_argument("--kinds", help="comma-separated distortion kinds to render")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the patch classifier and aggregator")
    common(p)
    p.add_argument("--synth-manifest", type=Path, help="corpus manifest.jsonl")
    p.add_argument("--csiq-root", type=Path, help="CSIQ dataset root")
    p.add_argument("--dmos", type=Path, help="CSIQ DMOS CSV file")
    p.add_argument("--kinds", help="restrict training to these distortion kinds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--split-mode", choices=["patch-random", "image-disjoint"])
    p.add_argument("--train-count", type=int, help="target training patches (0 = no cap)")
    p.add_argument("--test-count", type=int, help="target test patches (0 = no cap)")
    p.add_argument("--patch-only", action="store_true",
                   help="skip fitting/embedding the image-level aggregator")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a labeled dataset")
    common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--synth-manifest", type=Path)
    p.add_argument("--csiq-root", type=Path)
    p.add_argument("--dmos", type=Path)
    p.add_argument("--kinds", help="restrict evaluation to these distortion kinds")
    p.add_argument("--min-patch-accuracy", type=float,
                   help="exit 1 if patch accuracy falls below this")
    p.add_argument("--min-image-accuracy", type=float,
                   help="exit 1 if image accuracy falls below this")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="grade one image with a trained model")
    common(p, out_required=False)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("image", type=Path)
    p.add_argument("--per-patch", type=Path,
                   help="also write per-patch scores to this CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _load_run_config(args):
    from .config import RunConfig
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "kinds", None):
        overrides.setdefault("distortions", {})["kinds"] = args.kinds.split(",")
    training = {}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("learning_rate", "learning_rate")):
        value = getattr(args, flag, None)
        if value is not None:
            training[key] = value
    if training:
        overrides["training"] = training
    ds = {}
    for flag, key in (("split_mode", "split_mode"), ("train_count", "train_count"),
                      ("test_count", "test_count")):
        value = getattr(args, flag, None)
        if value is not None:
            ds[key] = value
    if ds:
        overrides["dataset"] = ds
    return RunConfig.load(getattr(args, "config", None), overrides)


def _prepare_out(args, cfg):
    # the effective config lands on disk before any computation starts
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.write(args.out / "config.toml")


def _load_records(args, cfg):
    from .dataset import load_csiq, load_synth_manifest, map_dmos_to_grades
    bin_edges = None
    if args.synth_manifest:
        records = load_synth_manifest(args.synth_manifest)
    elif args.csiq_root:
        if not args.dmos:
            raise ValueError("--csiq-root needs --dmos pointing at the DMOS CSV")
        records = load_csiq(args.csiq_root, args.dmos)
        records, bin_edges = map_dmos_to_grades(records, cfg.dmos_strategy)
    else:
        raise ValueError("no dataset given: pass --synth-manifest or --csiq-root")
    kinds = cfg.kinds_filter()
    if kinds is None:
        return records, bin_edges
    filtered = [r for r in records if r.kind in set(kinds)]
    if not filtered:
        raise ValueError(f"no records left after restricting to kinds {sorted(kinds)}")
    if len(filtered) != len(records):
        log.info("kind filter kept %d of %d records", len(filtered), len(records))
    return filtered, bin_edges


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args):
    cfg = _load_run_config(args)
    from .distortions import synthesize_corpus
    from .imgio import ImageReadError, load_luminance

    files = sorted(p for p in args.input_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES) if args.input_dir.is_dir() else []
    if not files:
        print(f"error: no input images in {args.input_dir}", file=sys.stderr)
        return EXIT_INPUT
    _prepare_out(args, cfg)

    sources = {}
    failures = 0
    for path in files:
        try:
            sources[path.stem] = load_luminance(path)
        except ImageReadError as e:
            failures += 1
            log.error("%s", e)
    if not sources:
        print("error: every input image failed to load", file=sys.stderr)
        return EXIT_INPUT

    manifest, records = synthesize_corpus(
        sources, args.out, seed=cfg.seed, kinds=cfg.kinds,
        ladders=cfg.ladders, workers=cfg.workers)
    print(json.dumps({"images": len(records), "manifest": str(manifest),
                      "sources": len(sources), "unreadable_sources": failures}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    cfg = _load_run_config(args)
    import numpy as np

    from .aggregator import collect_image_scores, fit_aggregator, image_features
    from .dataset import build_patch_dataset
    from .model_io import save_model
    from .network import init_network
    from .reports import save_training_curves, write_csv
    from .training import TrainingDivergedError, train

    records, bin_edges = _load_records(args, cfg)
    _prepare_out(args, cfg)
    pooling = cfg.pooling_config()
    split = cfg.split_spec()
    train_cfg = cfg.train_config()

    log.info("pooling patches from %d records", len(records))
    train_set, test_set, split_info = build_patch_dataset(
        records, pooling, split, cfg.seed, cfg.workers)
    split_manifest = split_info.as_dict()
    split_manifest["dmos_bin_edges"] = bin_edges
    split_manifest["dmos_strategy"] = cfg.dmos_strategy if bin_edges else None
    (args.out / "split.json").write_text(json.dumps(split_manifest, indent=2))
    log.info("train %d patches %s / test %d patches %s",
             len(train_set), split_info.train_counts,
             len(test_set), split_info.test_counts)

    net = init_network(cfg.seed, cfg.network_config())
    metrics_path = args.out / "metrics.jsonl"
    metrics_file = open(metrics_path, "w")

    def on_epoch(m):
        metrics_file.write(json.dumps(m.as_dict(), sort_keys=True) + "\n")
        metrics_file.flush()
        log.info("epoch %d: loss %.4f train %.3f test %.3f (%.1fs)",
                 m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy,
                 m.wall_seconds)

    try:
        result = train(net, train_set, test_set, train_cfg, on_epoch)
    except TrainingDivergedError as e:
        metrics_file.close()
        save_model(e.last_good, args.out / "model_diverged.dqm1", seed=cfg.seed)
        print(f"error: {e}; last good checkpoint saved to model_diverged.dqm1",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    metrics_file.close()

    write_csv(args.out / "summary.csv",
              ["epoch", "train_loss", "train_accuracy", "test_accuracy", "wall_seconds"],
              [[m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.wall_seconds]
               for m in result.metrics])
    save_training_curves(result.metrics, args.out / "curves.png")

    aggregator = None
    agg_meta = None
    if not args.patch_only:
        test_keys = set(split_info.test_keys)
        fit_records = [r for r in records
                       if (r.source_id or r.image_id) not in test_keys]
        log.info("fitting aggregator on %d images", len(fit_records))
        include_std = cfg.feature_dim == 10
        scores, errors = collect_image_scores(result.net, fit_records, pooling,
                                              cfg.workers)
        feats = np.stack([image_features(s.patch_probs, include_std) for s in scores])
        labels = np.array([int(s.record.grade) for s in scores])
        fit = fit_aggregator(feats, labels)
        aggregator = fit.aggregator
        agg_meta = {"converged": fit.converged, "iterations": fit.iterations,
                    "unreadable_images": len(errors)}

    final = result.metrics[-1]
    training_meta = {
        "config": cfg.data,
        "final_train_accuracy": final.train_accuracy,
        "final_test_accuracy": final.test_accuracy,
        "best_epoch": result.best_epoch,
        "aggregator_fit": agg_meta,
    }
    model_path = args.out / "model.dqm1"
    save_model(result.net, model_path, aggregator=aggregator, seed=cfg.seed,
               training_meta=training_meta)
    save_model(result.best_net, args.out / "model_best.dqm1", seed=cfg.seed,
               training_meta=training_meta)
    print(json.dumps({
        "model": str(model_path),
        "model_sha256": _sha256(model_path),
        "final_train_accuracy": final.train_accuracy,
        "final_test_accuracy": final.test_accuracy,
        "best_epoch": result.best_epoch,
    }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    cfg = _load_run_config(args)
    import numpy as np

    from .aggregator import collect_image_scores, predict_image
    from .grades import NUM_GRADES
    from .model_io import load_model
    from .reports import (save_confusion_figure, save_ladder_figure, write_csv)

    loaded = load_model(args.model)
    records, _ = _load_records(args, cfg)
    _prepare_out(args, cfg)
    pooling = cfg.pooling_config()

    scores, errors = collect_image_scores(loaded.net, records, pooling, cfg.workers)
    if not scores:
        raise ValueError("no images could be evaluated")

    patch_conf = np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64)
    image_conf = np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64)
    image_rows = []
    by_kind_patch = {}
    for s in scores:
        true = int(s.record.grade)
        pred_patches = np.argmax(s.patch_probs, axis=1)
        np.add.at(patch_conf, (np.full(pred_patches.shape, true), pred_patches), 1)
        kc = by_kind_patch.setdefault(s.record.kind, np.zeros((NUM_GRADES, NUM_GRADES), np.int64))
        np.add.at(kc, (np.full(pred_patches.shape, true), pred_patches), 1)
        if loaded.aggregator is not None:
            grade, probs = predict_image(loaded.aggregator, s.patch_probs)
            expected = float(np.arange(NUM_GRADES) @ probs)
            image_conf[true, int(grade)] += 1
            image_rows.append((s.record, int(grade), probs, expected))

    patch_total = int(patch_conf.sum())
    patch_acc = float(np.trace(patch_conf)) / patch_total
    report = {
        "patch": {"accuracy": patch_acc, "count": patch_total,
                  "confusion": patch_conf.tolist()},
        "image": None,
        "per_distortion": [],
        "unreadable_images": [{"image_id": r.image_id, "error": msg} for r, msg in errors],
    }

    ladder = {}
    per_kind_rows = []
    if loaded.aggregator is None:
        log.warning("model carries no aggregator; image-level metrics skipped")
    else:
        image_acc = float(np.trace(image_conf)) / len(image_rows)
        report["image"] = {"accuracy": image_acc, "count": len(image_rows),
                           "confusion": image_conf.tolist()}
        # per (kind, level): probability-weighted expected grade, plus accuracy
        for kind in sorted({rec.kind for rec, _, _, _ in image_rows}):
            rows_k = [(rec, pred, probs, exp) for rec, pred, probs, exp in image_rows
                      if rec.kind == kind]
            levels = {}
            for rec, pred, probs, exp in rows_k:
                levels.setdefault(rec.level if rec.level is not None else int(rec.grade),
                                  []).append((rec, pred, exp))
            kind_ladder = []
            for level in sorted(levels):
                entries = levels[level]
                mean_exp = float(np.mean([e for _, _, e in entries]))
                acc = float(np.mean([int(int(rec.grade) == pred) for rec, pred, _ in entries]))
                kind_ladder.append((level, mean_exp, acc, len(entries)))
            expected_series = [v for _, v, _, _ in kind_ladder]
            inversions = sum(1 for a, b in zip(expected_series, expected_series[1:]) if b < a)
            kc = by_kind_patch[kind]
            patch_acc_k = float(np.trace(kc)) / int(kc.sum())
            img_acc_k = float(np.mean([int(int(rec.grade) == pred)
                                       for rec, pred, _, _ in rows_k]))
            report["per_distortion"].append({
                "kind": kind, "images": len(rows_k),
                "patch_accuracy": patch_acc_k, "image_accuracy": img_acc_k,
                "expected_grade_by_level": expected_series,
                "inversions": inversions,
            })
            ladder[kind] = [(lvl, exp) for lvl, exp, _, _ in kind_ladder]
            per_kind_rows += [[kind, lvl, n, exp, acc] for lvl, exp, acc, n in kind_ladder]

    (args.out / "eval_report.json").write_text(json.dumps(report, indent=2))
    write_csv(args.out / "per_image.csv",
              ["image_id", "kind", "level", "true_grade", "predicted_grade",
               "p0", "p1", "p2", "p3", "p4", "expected_grade", "patch_count"],
              [[rec.image_id, rec.kind, rec.level, int(rec.grade), pred,
                *[f"{p:.6f}" for p in probs], f"{exp:.4f}",
                next(s.patch_probs.shape[0] for s in scores if s.record is rec)]
               for rec, pred, probs, exp in image_rows])
    write_csv(args.out / "per_distortion.csv",
              ["kind", "level", "images", "mean_expected_grade", "image_accuracy"],
              per_kind_rows)
    save_confusion_figure(patch_conf, args.out / "confusion_patch.png",
                          "patch-level confusion")
    if loaded.aggregator is not None:
        save_confusion_figure(image_conf, args.out / "confusion_image.png",
                              "image-level confusion")
        if ladder:
            save_ladder_figure(ladder, args.out / "ladder.png")

    print(json.dumps({"patch_accuracy": patch_acc,
                      "image_accuracy": report["image"]["accuracy"] if report["image"] else None,
                      "report": str(args.out / "eval_report.json")}))
    if args.min_patch_accuracy is not None and patch_acc < args.min_patch_accuracy:
        return EXIT_CHECK_FAILED
    if args.min_image_accuracy is not None and (
            report["image"] is None
            or report["image"]["accuracy"] < args.min_image_accuracy):
        return EXIT_CHECK_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# score


def cmd_score(args):
    cfg = _load_run_config(args)
    import numpy as np

    from .aggregator import predict_image
    from .imgio import load_luminance
    from .model_io import load_model
    from .network import predict_batch
    from .pooling import select_patches
    from .reports import write_csv

    loaded = load_model(args.model)
    if loaded.aggregator is None:
        raise ValueError("model carries no aggregator; retrain without --patch-only")
    image = load_luminance(args.image)
    if args.out:
        _prepare_out(args, cfg)

    selection = select_patches(image, cfg.pooling_config())
    patches = np.stack([s.patch for s in selection.patches])[:, None, :, :]
    probs, patch_grades = predict_batch(loaded.net, patches)
    grade, image_probs = predict_image(loaded.aggregator, probs)

    result = {
        "image": str(args.image),
        "grade": grade.label,
        "grade_index": int(grade),
        "probabilities": [float(p) for p in image_probs],
        "patch_count": len(selection.patches),
        "shortfall": selection.shortfall,
    }
    print(json.dumps(result))
    per_patch_rows = [
        [s.location.row, s.location.col, f"{s.variance:.8f}",
         *[f"{p:.6f}" for p in probs[i]], int(patch_grades[i])]
        for i, s in enumerate(selection.patches)]
    header = ["row", "col", "variance", "p0", "p1", "p2", "p3", "p4", "predicted_grade"]
    if args.per_patch:
        write_csv(args.per_patch, header, per_patch_rows)
    if args.out:
        (args.out / "score.json").write_text(json.dumps(result, indent=2))
        write_csv(args.out / "per_patch.csv", header, per_patch_rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args):
    cfg = _load_run_config(args)
    import numpy as np

    from .network import NetworkConfig
    from .training import gradcheck_network, make_gradcheck_net

    # width-reduced net in float64; the self-contained batch keeps the
    # finite-difference sweep fast while still touching all ten groups
    net = make_gradcheck_net(cfg.seed, NetworkConfig(conv_channels=(4, 6, 8), fc_hidden=4))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6C]))
    patches = rng.random((2, 1, 64, 64))
    labels = rng.integers(0, 5, size=2)
    report = gradcheck_network(net, patches, labels)
    for line in report.lines():
        print(line)
    worst_name, worst_err = report.worst()
    print(f"worst: {worst_name} ({worst_err:.3e}), tolerance {report.tolerance:.0e}: "
          f"{'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())

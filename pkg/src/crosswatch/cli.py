"""Operator command line: generate, train, eval, predict, gradcheck.

Exit codes: 0 on success, 2 for validation problems (bad flags, malformed
files, incompatible settings), 3 for numerical failures (training divergence,
failed gradient check).  Every command validates its inputs before touching
the filesystem, and every command is deterministic under a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

import numpy as np

from . import data as data_mod
from .autodiff import relaxed_gc
from .diagnostics import end_to_end_gradcheck
from .metrics import MetricsReport, evaluate
from .model import CheckpointError, load_checkpoint
from .synthetic import GeneratorConfig, generate_synthetic
from .training import DivergenceError, TrainConfig, desk_config, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

GRADCHECK_TOLERANCE = 1e-3


class CliError(Exception):
    """Validation failure surfaced to the user with exit code 2."""


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from None


def _load_dataset(data_dir):
    ann = os.path.join(data_dir, "annotations.jsonl")
    feat = os.path.join(data_dir, "features.bin")
    for path in (ann, feat):
        if not os.path.exists(path):
            raise CliError(f"missing {path}")
    return data_mod.load_annotations(ann), data_mod.load_features(feat)


def cmd_generate(args) -> int:
    config = GeneratorConfig.from_json(_load_json(args.config)) if args.config else GeneratorConfig()
    config.validate()
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise CliError(f"{args.out} is not empty; pass --force to overwrite")
    dataset, features = generate_synthetic(config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    data_mod.write_annotations(dataset, os.path.join(args.out, "annotations.jsonl"))
    data_mod.write_features(features, os.path.join(args.out, "features.bin"))
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"generator_config": config.to_json(), "seed": args.seed}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(dataset.tracks)} tracks / {len(features)} feature rows to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset, features = _load_dataset(args.data)
    if args.config:
        config = TrainConfig.from_json(_load_json(args.config))
    else:
        config = desk_config()
    if args.ablation:
        config.ablation = args.ablation
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    result = train(config, dataset, features, out_dir=args.out)
    print(f"best {result.metric_name}={result.best_metric:.4f} at epoch {result.best_epoch}; "
          f"checkpoint written to {os.path.join(args.out, 'checkpoint.bin')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset, features = _load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    with relaxed_gc():
        report = evaluate(model, dataset, features, setting=args.setting)
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if args.csv:
        print(MetricsReport.csv_header())
        print(report.to_csv_row())
    else:
        print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    dataset, features = _load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    try:
        track = dataset.track(args.track)
    except KeyError as exc:
        raise CliError(str(exc)) from None
    runner = model.runner(track.track_id, features)
    rows = []
    latencies = []
    with relaxed_gc():
        for frame in track.frames:
            t0 = time.perf_counter()
            out = runner.step(frame)
            latencies.append((time.perf_counter() - t0) * 1e3)
            row = {"t": frame.frame_index}
            if out.intent_score is not None:
                row["intent"] = out.intent_score
            if out.action_dist is not None:
                row["actions"] = [float(v) for v in out.action_dist]
            if out.future_action_dists is not None:
                row["future"] = [[float(v) for v in dist] for dist in out.future_action_dists]
            if out.attention is not None:
                row["attention"] = {t.value: [[int(i), float(w)] for i, w in pairs]
                                    for t, pairs in out.attention.items()}
            rows.append(row)
    text = "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    mean = statistics.fmean(latencies)
    std = statistics.pstdev(latencies)
    print(f"per-frame inference: {mean:.2f} ms +/- {std:.2f} ms over {len(latencies)} frames",
          file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    with relaxed_gc():
        errors = end_to_end_gradcheck(seed=args.seed, corrupt_group=args.corrupt)
    width = max(len(g) for g in errors)
    failed = []
    for group in sorted(errors):
        err = errors[group]
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        if status == "FAIL":
            failed.append(group)
        print(f"{group:<{width}}  {err:12.3e}  {status}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosswatch",
        description="Pedestrian crossing-intent and action detection toolkit.",
        epilog="CROSSWATCH_THREADS caps internal read-only parallelism.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="train config JSON (desk-scale defaults otherwise)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=["i", "ia", "af", "iaf", "full"])
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--setting", choices=["original", "event"], default="original")
    p.add_argument("--out", help="also write the report JSON here")
    p.add_argument("--csv", action="store_true", help="print a CSV row instead of JSON")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="per-frame prediction dump for one track")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--size", choices=["toy"], default="toy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault-injection test hook
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, data_mod.AnnotationError, data_mod.FeatureError,
            CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

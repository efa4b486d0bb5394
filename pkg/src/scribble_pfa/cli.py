"""Command line entry point: ``scribble-pfa {curate,features,promote,evaluate,gap}``.

Exit codes: 0 success, 1 when some (or all) images failed, 2 on a
configuration error. Reports go to stdout as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, MissingGroundTruth, MissingPrediction, PfaError
from .pipeline import cmd_curate, cmd_evaluate, cmd_features, cmd_gap, cmd_promote, load_config

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _config_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline config (flags override the config file)")
    g.add_argument("--config", help="INI file with [corpus] [features] [forest] [fusion] [potts] [crf] [run]")
    g.add_argument("--manifest", help="TSV manifest: id, image, scribble, gt?, globalprob?")
    g.add_argument("--num-classes", type=int)
    g.add_argument("--class-names", help="comma separated")
    g.add_argument("--bank", help="'synthetic' or an FBK1 filter-bank file")
    g.add_argument("--bank-seed", type=int)
    g.add_argument("--n-trees", type=int)
    g.add_argument("--n-selected-features", type=int)
    g.add_argument("--min-leaf", type=int)
    g.add_argument("--variant", choices=("local", "global", "combined"))
    g.add_argument("--regularizer", choices=("none", "potts", "crf"))
    g.add_argument("--w-local", type=float)
    g.add_argument("--lam", type=float, help="Potts weight (default depends on the input map)")
    g.add_argument("--eta", type=float, help="Potts edge-stop strength")
    g.add_argument("--max-iters", type=int, help="Potts iteration cap")
    g.add_argument("--crf-iters", type=int, help="mean-field iterations")
    g.add_argument("--out", help="output directory")
    g.add_argument("--workers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--save-local", dest="save_local", action="store_true", default=None)
    g.add_argument("--no-save-local", dest="save_local", action="store_false")
    return p


def _overrides(args) -> dict:
    return {
        "manifest": args.manifest,
        "num_classes": args.num_classes,
        "class_names": args.class_names,
        "bank": args.bank,
        "bank_seed": args.bank_seed,
        "forest.n_trees": args.n_trees,
        "forest.n_selected_features": args.n_selected_features,
        "forest.min_leaf": args.min_leaf,
        "variant": args.variant,
        "regularizer": args.regularizer,
        "w_local": args.w_local,
        "potts.lam": args.lam,
        "potts.eta": args.eta,
        "potts.max_iters": args.max_iters,
        "crf.n_iters": args.crf_iters,
        "output_dir": args.out,
        "workers": args.workers,
        "seed": args.seed,
        "save_local": args.save_local,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scribble-pfa", description="Promote scribbles to dense annotations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _config_flags()

    sub.add_parser("curate", parents=[flags], help="relabel scribbles to GT, drop class-deficient images")
    f = sub.add_parser("features", parents=[flags], help="write per-image feature stacks")
    f.add_argument("--export-bank", help="also write the filter bank in FBK1 format")
    sub.add_parser("promote", parents=[flags], help="run the PFA pipeline")

    e = sub.add_parser("evaluate", help="score a directory of PFAs against ground truth")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--num-classes", type=int, required=True)
    e.add_argument("--json", help="also write the report here")
    e.add_argument("--csv", help="write per-class IoU as CSV")

    g = sub.add_parser("gap", help="full-vs-weak gap arithmetic")
    g.add_argument("full", type=float, help="mIoU of full supervision (%%)")
    g.add_argument("weak", type=float, help="mIoU of the scribble baseline (%%)")
    g.add_argument("strategy", type=float, help="mIoU of the strategy (%%)")
    return parser


def _run(args) -> int:
    if args.command == "gap":
        _dump(cmd_gap(args.full, args.weak, args.strategy).to_dict())
        return EXIT_OK
    if args.command == "evaluate":
        try:
            report = cmd_evaluate(args.pred_dir, args.gt_dir, args.num_classes)
        except MissingPrediction as exc:
            _dump({"error": "missing predictions", "missing": list(exc.missing)})
            return EXIT_PARTIAL
        if args.json:
            Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")
        if args.csv:
            report.write_csv(args.csv)
        _dump(report.to_dict())
        return EXIT_OK

    cfg = load_config(args.config, _overrides(args))
    if args.command == "curate":
        summary = cmd_curate(cfg.manifest, cfg.output_dir, cfg.num_classes)
        _dump(summary.to_dict())
        return EXIT_PARTIAL if summary.failed else EXIT_OK
    if args.command == "features":
        res = cmd_features(cfg.manifest, cfg.output_dir, cfg.bank, cfg.bank_seed, args.export_bank)
        _dump(res)
        return EXIT_PARTIAL if res["failed"] else EXIT_OK
    result = cmd_promote(cfg)
    rep = result.report
    _dump({k: rep[k] for k in ("config_hash", "n_images", "n_ok", "n_failed", "evaluation")})
    if result.n_ok == 0:
        print("all images failed", file=sys.stderr)
    return result.exit_code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, MissingGroundTruth) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PfaError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

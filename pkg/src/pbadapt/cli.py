"""Command-line entry point.

Verbs: ``rank``, ``bound``, ``flatness``, ``oracle-check`` and ``demo``.
``oracle-check`` exits with status 1 if any exact equality fails; every verb
exits with status 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import PbAdaptError
from .experiments import (
    ExperimentConfig,
    _atomic_write,
    _csv_text,
    _dump,
    default_demo_config,
    default_flatness_config,
    default_ranking_config,
    run_bounds_suite,
    run_demo,
    run_flatness_suite,
    run_oracle_check,
    run_ranking_suite,
    write_ranking,
)

log = logging.getLogger("pbadapt")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--research-mode", action="store_true",
                        help="use target labels for adaptability, flatness and validity checks")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pbadapt", description="Domain-adaptation bound toolkit.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("rank", parents=[common], help="correlate divergence estimates with error gaps")
    sub.add_parser("bound", parents=[common], help="assemble bound reports over a task suite")
    sub.add_parser("flatness", parents=[common], help="estimate Gibbs-vs-mean flatness")
    oc = sub.add_parser("oracle-check", parents=[common], help="exact finite-class equalities")
    oc.add_argument("--instances", type=int, help="random instances (default: config or 100)")
    sub.add_parser("demo", parents=[common], help="one synthetic end-to-end run")
    return p


def _config(args, fallback) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else fallback(args.seed or 0)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out"] = str(args.out)
    if args.research_mode:
        kw["research_mode"] = True
    return cfg.replace(**kw) if kw else cfg


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except PbAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.verb == "oracle-check":
        seed = args.seed or 0
        n = args.instances
        if n is None:
            n = ExperimentConfig.load(args.config).oracle_instances if args.config else 100
        res = run_oracle_check(n, seed)
        out = Path(args.out or "runs/oracle")
        _atomic_write(out / "oracle_summary.json", _dump(res))
        print(json.dumps(res, sort_keys=True))
        return 0 if res["ok"] else 1

    if args.verb == "demo":
        cfg = _config(args, default_demo_config)
        summary = run_demo(cfg, Path(cfg.out))
        for r in summary["rows"]:
            if r["status"] == "ok":
                print(f"{r['theorem']:>8}  total={r['total']:.4f}  target_gibbs_risk={r['target_gibbs_risk']}")
            else:
                print(f"{r['theorem']:>8}  {r['status']}")
        return 0

    if args.verb == "rank":
        cfg = _config(args, default_ranking_config)
        res = run_ranking_suite(cfg, args.jobs)
        write_ranking(res, Path(cfg.out), cfg)
        for est, v in res.spearman.items():
            print(f"{est}: spearman={v:.4f}  shuffled-median-abs={res.permutation_null[est]:.4f}")
        for c in res.caveats:
            print(f"caveat: {c}")
        return 0

    if args.verb == "bound":
        cfg = _config(args, default_demo_config)
        rows = run_bounds_suite(cfg, Path(cfg.out), args.jobs)
        failed = sum(r["status"] != "ok" for r in rows)
        print(f"{len(rows)} cells, {failed} failed; summary at {Path(cfg.out) / 'summary.csv'}")
        return 0

    if args.verb == "flatness":
        cfg = _config(args, default_flatness_config)
        res = run_flatness_suite(cfg, args.jobs)
        out = Path(cfg.out)
        cols = ["task", "seed", "status", "rho_source", "rho_target"]
        _atomic_write(out / "flatness.csv", _csv_text(res["rows"], cols))
        _atomic_write(out / "flatness.json", _dump({k: v for k, v in res.items() if k != "rows"}))
        print(f"median rho (source) = {res['median_rho_source']}")
        return 0
    raise AssertionError(args.verb)  # argparse rejects unknown verbs


if __name__ == "__main__":
    sys.exit(main())

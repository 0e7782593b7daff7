"""Command line entry point: ``shapeunfold {envelope,coverage,baseline,tables}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .baselines import gaussian_intervals
from .experiments import (StudyConfig, fit_baseline, prepare_study, run_coverage,
                          write_coverage_csv, write_manifest)
from .forward import cached_forward_tables, tables_key
from .sampler import sample_counts
from .smeared_set import build_box
from .strict_bounds import envelope, write_interval_csv

logger = logging.getLogger("shapeunfold")


def _parse_reg(value):
    if value == "cv":
        return "cv"
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--reg must be a number or 'cv', got {value!r}") from None


def _load_config(args):
    cfg = StudyConfig.from_json(args.config) if args.config else StudyConfig()
    d = cfg.to_dict()
    if getattr(args, "alpha", None) is not None:
        d["alpha"] = args.alpha
    if getattr(args, "reps", None) is not None:
        d["reps"] = args.reps
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "family", None):
        d["families"] = [args.family]
        if args.mode:
            d["modes"] = {**d["modes"], args.family: args.mode}
    elif getattr(args, "mode", None):
        d["modes"] = {f: args.mode for f in "pdc"}
    if getattr(args, "method", None):
        d["baseline"] = {**d["baseline"], "methods": [args.method]}
    if getattr(args, "reg", None) is not None:
        d["baseline"] = {**d["baseline"], "reg": args.reg}
    return StudyConfig.from_dict(d)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(setup, rep=0):
    return sample_counts(setup.mu, setup.config.seed, rep).counts


def cmd_envelope(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    setup = prepare_study(cfg, args.cache_dir)
    counts = _dataset(setup)
    box = build_box(counts, cfg.alpha)
    written = []
    for fam in cfg.families:
        env = envelope(fam, setup.tables, box, mode=cfg.modes[fam], method=cfg.lp_method)
        path = out / f"envelope_{fam}_{cfg.modes[fam]}.csv"
        env.to_csv(path, lambda_true=setup.lam)
        written.append(str(path))
    write_manifest(out / "manifest.json", cfg, "envelope", {"outputs": written})
    return 0


def cmd_coverage(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    methods = cfg.baseline["methods"] if args.method else []
    families = cfg.families if (args.family or not args.method) else []
    reports = run_coverage(cfg, families=families, methods=methods, cache_dir=args.cache_dir,
                           log_path=out / "replications.csv")
    write_coverage_csv(out / "coverage.csv", reports)
    for r in reports:
        lo, hi = r.cp_interval
        print(f"{r.method:14s} {r.family:2s} {r.mode:14s} {r.hits}/{r.trials} "
              f"= {r.coverage:.3f} ({lo:.3f}, {hi:.3f})")
    write_manifest(out / "manifest.json", cfg, "coverage",
                   {"failures": {f"{r.method}:{r.family}": r.failures for r in reports},
                    "implication_violations": {r.family: r.implication_violations
                                               for r in reports if r.family}})
    return 0


def cmd_baseline(args):
    cfg = _load_config(args)
    if not cfg.baseline["methods"]:
        cfg = StudyConfig.from_dict({**cfg.to_dict(),
                                     "baseline": {**cfg.baseline, "methods": ["svd"]}})
    out = _out_dir(args)
    setup = prepare_study(cfg, args.cache_dir)
    counts = _dataset(setup).astype(float)
    written = []
    for method in cfg.baseline["methods"]:
        est = fit_baseline(method, counts, setup, cfg.baseline["reg"])
        lo, hi = gaussian_intervals(est, cfg.alpha, cfg.baseline["bonferroni"])
        p = lo.size
        path = out / f"baseline_{method}.csv"
        write_interval_csv(path, cfg.true_bins.edges, lo, hi, ["gaussian"] * p,
                           lambda_true=setup.lam,
                           extra={"method": method, "regularization": repr(est.regularization)})
        written.append(str(path))
    write_manifest(out / "manifest.json", cfg, "baseline", {"outputs": written})
    return 0


def cmd_tables(args):
    cfg = _load_config(args)
    cache = args.cache_dir or args.out
    tables = cached_forward_tables(cfg.resolution_params, cfg.smeared_bins, cfg.true_bins,
                                   cfg.m, cache)
    key = tables_key(cfg.resolution_params, cfg.smeared_bins, cfg.true_bins, cfg.m)
    print(f"tables-{key}.npz: m={tables.m} n={tables.n} in {cache}")
    write_manifest(Path(cache) / "manifest.json", cfg, "tables", {"tables_key": key})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="shapeunfold", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="study configuration (JSON)")
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--cache-dir", help="directory for cached forward tables")
        return p

    p = common(sub.add_parser("envelope", help="envelope CSV for one simulated dataset"))
    p.add_argument("--family", choices=["p", "d", "c"])
    p.add_argument("--mode", choices=["conservative", "grid"])
    p.set_defaults(func=cmd_envelope)

    p = common(sub.add_parser("coverage", help="Monte Carlo coverage study"))
    p.add_argument("--family", choices=["p", "d", "c"])
    p.add_argument("--mode", choices=["conservative", "grid"])
    p.add_argument("--reps", type=int)
    p.add_argument("--method", choices=["svd", "dagostini"])
    p.add_argument("--reg", type=_parse_reg)
    p.set_defaults(func=cmd_coverage)

    p = common(sub.add_parser("baseline", help="SVD or D'Agostini estimate with intervals"))
    p.add_argument("--method", choices=["svd", "dagostini"])
    p.add_argument("--reg", type=_parse_reg)
    p.set_defaults(func=cmd_baseline)

    p = common(sub.add_parser("tables", help="precompute and cache forward tables"))
    p.set_defaults(func=cmd_tables)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

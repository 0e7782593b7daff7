"""Monte Carlo coverage studies and their bookkeeping.

A study is described by a :class:`StudyConfig`, usually read from JSON::

    {
      "spectrum":     {"variant": "inclusive_jet" | "linear" | "constant",
                       "params": {...}},          # optional overrides
      "resolution":   {"c1": 1.0, "c2": 1.0, "c3": 0.05},
      "true_grid":    {"lo": 400, "hi": 1000, "bins": 30},
      "smeared_grid": {"lo": 400, "hi": 1000, "bins": 30},   # optional
      "m": null,                                  # default 10 per true bin
      "alpha": 0.05,
      "families": ["p", "d", "c"],
      "modes": {"p": "conservative", "d": "conservative", "c": "grid"},
      "reps": 200,
      "seed": 20160101,
      "lp_method": "highs",
      "baseline": {"methods": ["svd", "dagostini"], "reg": "cv",
                   "mc_params": {"n0": 5.5e19, "alpha": 6, "beta": 12},
                   "delta_grid": null, "max_iter": 20000, "bonferroni": true}
    }

Every key is optional.  Linear and constant spectra without an explicit
``scale`` are matched to the expected jet total over the true domain.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

from . import __version__
from ._exceptions import DomainError
from .baselines import (DELTA_GRID, MAX_ITERATIONS, dagostini, gaussian_intervals,
                        iteration_grid, loo_cv_select, svd_unfold)
from .forward import ResolutionParams, cached_forward_tables, response_matrix, smeared_means
from .sampler import sample_counts
from .smeared_set import build_box
from .spectrum import BinGrid, IntensityModel, Variant, matched_model, true_bin_means
from .strict_bounds import Family, Mode, envelope

logger = logging.getLogger(__name__)

DEFAULT_MODES = {"p": "conservative", "d": "conservative", "c": "grid"}
DEFAULT_MC_PARAMS = {"n0": 5.5e19, "alpha": 6.0, "beta": 12.0}


def _grid_spec(d):
    d = {"lo": 400.0, "hi": 1000.0, "bins": 30, **(d or {})}
    return {"lo": float(d["lo"]), "hi": float(d["hi"]), "bins": int(d["bins"])}


@dataclass
class StudyConfig:
    spectrum: dict = field(default_factory=lambda: {"variant": "inclusive_jet", "params": {}})
    resolution: dict = field(default_factory=lambda: {"c1": 1.0, "c2": 1.0, "c3": 0.05})
    true_grid: dict = field(default_factory=dict)
    smeared_grid: dict | None = None
    m: int | None = None
    alpha: float = 0.05
    families: list = field(default_factory=lambda: ["p", "d", "c"])
    modes: dict = field(default_factory=lambda: dict(DEFAULT_MODES))
    reps: int = 200
    seed: int = 20160101
    lp_method: str = "highs"
    baseline: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spectrum = {"variant": "inclusive_jet", "params": {}, **(self.spectrum or {})}
        Variant(self.spectrum["variant"])
        self.true_grid = _grid_spec(self.true_grid)
        self.smeared_grid = _grid_spec(self.smeared_grid or self.true_grid)
        self.modes = {**DEFAULT_MODES, **(self.modes or {})}
        for f in self.families:
            Family(f)
        for v in self.modes.values():
            Mode(v)
        self.baseline = {"methods": [], "reg": "cv", "mc_params": dict(DEFAULT_MC_PARAMS),
                         "delta_grid": None, "max_iter": MAX_ITERATIONS, "bonferroni": True,
                         **(self.baseline or {})}
        if int(self.reps) < 1:
            raise DomainError("reps must be >= 1")
        if not 0 < float(self.alpha) < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if int(self.seed) < 0:
            raise DomainError("seed must be nonnegative")
        self.reps, self.seed, self.alpha = int(self.reps), int(self.seed), float(self.alpha)
        ResolutionParams(**self.resolution)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def resolution_params(self):
        return ResolutionParams(**self.resolution)

    @property
    def true_bins(self):
        g = self.true_grid
        return BinGrid.uniform(g["lo"], g["hi"], g["bins"])

    @property
    def smeared_bins(self):
        g = self.smeared_grid
        return BinGrid.uniform(g["lo"], g["hi"], g["bins"])

    @property
    def true_domain(self):
        return self.true_grid["lo"], self.true_grid["hi"]

    def intensity(self):
        variant = Variant(self.spectrum["variant"])
        params = dict(self.spectrum.get("params") or {})
        lo, hi = self.true_domain
        if variant is Variant.INCLUSIVE_JET:
            return IntensityModel.inclusive_jet(**params)
        if "scale" in params:
            ctor = IntensityModel.linear if variant is Variant.LINEAR else IntensityModel.constant
            return ctor(params["scale"], lo, hi)
        return matched_model(variant, IntensityModel.inclusive_jet(), lo, hi)

    def mc_intensity(self):
        return IntensityModel.inclusive_jet(**self.baseline["mc_params"])


def clopper_pearson(hits, trials, level=0.95):
    """Exact binomial confidence interval for a success probability."""
    hits, trials = int(hits), int(trials)
    if trials < 1 or not 0 <= hits <= trials:
        raise DomainError("need 0 <= hits <= trials and trials >= 1")
    a = 1.0 - level
    lo = 0.0 if hits == 0 else float(beta_dist.ppf(a / 2, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(beta_dist.ppf(1 - a / 2, hits + 1, trials - hits))
    return lo, hi


@dataclass
class CoverageReport:
    method: str
    family: str
    mode: str
    hits: int
    trials: int
    binwise: np.ndarray | None = None  # per-bin coverage of the unadjusted intervals
    mean_lengths: np.ndarray | None = None
    failures: int = 0
    implication_violations: int = 0

    @property
    def coverage(self):
        return self.hits / self.trials if self.trials else float("nan")

    @property
    def cp_interval(self):
        return clopper_pearson(self.hits, self.trials)

    def row(self):
        lo, hi = self.cp_interval
        return {"method": self.method, "family": self.family, "mode": self.mode,
                "hits": self.hits, "trials": self.trials, "coverage": repr(self.coverage),
                "cp_lo": repr(lo), "cp_hi": repr(hi)}


def in_family(model, family, lo, hi, n_points=20001, rel_tol=1e-9):
    """Numerical check that `model` restricted to ``[lo, hi]`` satisfies the shape family."""
    family = Family(family)
    t = np.linspace(lo, hi, n_points)
    f = np.asarray(model(t), dtype=float)
    scale = np.abs(f).max()
    tol = rel_tol * max(scale, 1e-300)
    ok = bool(np.all(f >= -tol))
    if family in (Family.DECREASING, Family.CONVEX):
        ok &= bool(np.all(np.diff(f) <= tol))
    if family is Family.CONVEX:
        ok &= bool(np.all(np.diff(f, 2) >= -tol))
    return ok


@dataclass
class StudySetup:
    """Everything shared read-only across replications."""

    config: StudyConfig
    model: IntensityModel
    tables: object
    mu: np.ndarray
    lam: np.ndarray
    shape_ok: dict
    K: np.ndarray | None = None
    lam_mc: np.ndarray | None = None


def prepare_study(config, cache_dir=None):
    model = config.intensity()
    res = config.resolution_params
    tables = cached_forward_tables(res, config.smeared_bins, config.true_bins, config.m, cache_dir)
    mu = smeared_means(model, res, config.smeared_bins, config.true_domain)
    lam = true_bin_means(model, config.true_bins)
    shape_ok = {f: in_family(model, f, *config.true_domain) for f in "pdc"}
    K = lam_mc = None
    if config.baseline["methods"]:
        mc = config.mc_intensity()
        K = response_matrix(mc, res, config.smeared_bins, config.true_bins)
        lam_mc = true_bin_means(mc, config.true_bins)
    return StudySetup(config, model, tables, mu, lam, shape_ok, K, lam_mc)


def fit_baseline(method, y, setup, reg):
    b = setup.config.baseline
    if reg == "cv":
        if method == "svd":
            cand = DELTA_GRID if b["delta_grid"] is None else np.asarray(b["delta_grid"], float)
        else:
            cand = iteration_grid(int(b["max_iter"]))
        reg, info = loo_cv_select(method, y, setup.K, setup.lam_mc, cand)
    else:
        info = {}
    if method == "svd":
        est = svd_unfold(y, setup.K, setup.lam_mc, float(reg))
    else:
        est = dagostini(y, setup.K, setup.lam_mc, int(reg))
    est.info["cv"] = info
    return est


def run_replication(setup, rep, families=None, methods=None, reg=None):
    """One simulated dataset: envelopes and baseline intervals with hit records."""
    cfg = setup.config
    families = cfg.families if families is None else families
    methods = cfg.baseline["methods"] if methods is None else methods
    reg = cfg.baseline["reg"] if reg is None else reg
    sample = sample_counts(setup.mu, cfg.seed, rep)
    box = build_box(sample.counts, cfg.alpha)
    box_hit = box.contains(setup.mu)
    record = {"rep": rep, "box_covers_mu": box_hit, "strict": {}, "baseline": {}}
    for fam in families:
        mode = cfg.modes[fam]
        env = envelope(fam, setup.tables, box, mode=mode, method=cfg.lp_method)
        hit = env.covers(setup.lam)
        premise = box_hit and setup.shape_ok[fam]
        record["strict"][fam] = {"mode": mode, "hit": hit, "implication_ok": hit or not premise,
                                 "lengths": env.lengths, "envelope": env}
        if premise and not hit:
            logger.warning("rep %d family %s (%s): box covers mu but envelope misses lambda",
                           rep, fam, mode)
    for method in methods:
        est = fit_baseline(method, sample.counts.astype(float), setup, reg)
        # simultaneous hits use the (Bonferroni) joint intervals, binwise hits the plain ones
        lo, hi = gaussian_intervals(est, cfg.alpha, cfg.baseline["bonferroni"])
        joint = (lo <= setup.lam) & (setup.lam <= hi)
        blo, bhi = gaussian_intervals(est, cfg.alpha, bonferroni=False)
        each = (blo <= setup.lam) & (setup.lam <= bhi)
        record["baseline"][method] = {"hit": bool(joint.all()), "each": each, "lengths": hi - lo,
                                      "regularization": est.regularization,
                                      "cv_info": est.info.get("cv", {})}
    return record


def run_coverage(config, families=None, methods=None, reg=None, setup=None, cache_dir=None,
                 log_path=None, keep_records=False):
    """Replicate the study ``config.reps`` times and aggregate coverage reports.

    Replication ``r`` draws from the stream keyed by ``(config.seed, r)``, so
    results do not depend on execution order.  Failed replications are
    logged and counted, and excluded from ``trials``.
    """
    setup = setup or prepare_study(config, cache_dir)
    families = config.families if families is None else families
    methods = config.baseline["methods"] if methods is None else methods
    strict = {f: {"hits": 0, "trials": 0, "fail": 0, "viol": 0, "len": []} for f in families}
    base = {m: {"hits": 0, "trials": 0, "fail": 0, "each": [], "len": []} for m in methods}
    log_rows, records = [], []
    for rep in range(config.reps):
        try:
            rec = run_replication(setup, rep, families, methods, reg)
        except Exception as exc:  # noqa: BLE001  counted, never dropped silently
            logger.error("replication %d failed: %s", rep, exc)
            for acc in (*strict.values(), *base.values()):
                acc["fail"] += 1
            log_rows.append({"rep": rep, "kind": "error", "name": type(exc).__name__,
                             "mode": "", "hit": "", "box_covers_mu": "", "implication_ok": "",
                             "regularization": ""})
            continue
        if keep_records:
            records.append(rec)
        for fam, r in rec["strict"].items():
            acc = strict[fam]
            acc["trials"] += 1
            acc["hits"] += r["hit"]
            acc["viol"] += not r["implication_ok"]
            acc["len"].append(r["lengths"])
            log_rows.append({"rep": rep, "kind": "strict", "name": fam, "mode": r["mode"],
                             "hit": int(r["hit"]), "box_covers_mu": int(rec["box_covers_mu"]),
                             "implication_ok": int(r["implication_ok"]), "regularization": ""})
        for m, r in rec["baseline"].items():
            acc = base[m]
            acc["trials"] += 1
            acc["hits"] += r["hit"]
            acc["each"].append(r["each"])
            acc["len"].append(r["lengths"])
            log_rows.append({"rep": rep, "kind": "baseline", "name": m, "mode": "",
                             "hit": int(r["hit"]), "box_covers_mu": int(rec["box_covers_mu"]),
                             "implication_ok": "", "regularization": repr(r["regularization"])})
    reports = []
    for fam, acc in strict.items():
        reports.append(CoverageReport(
            "strict_bounds", fam, config.modes[fam], acc["hits"], acc["trials"], None,
            np.mean(acc["len"], axis=0) if acc["len"] else None, acc["fail"], acc["viol"]))
    reg = config.baseline["reg"] if reg is None else reg
    for m, acc in base.items():
        reports.append(CoverageReport(
            m, "", f"reg={reg}", acc["hits"], acc["trials"],
            np.mean(acc["each"], axis=0) if acc["each"] else None,
            np.mean(acc["len"], axis=0) if acc["len"] else None, acc["fail"], 0))
    if log_path is not None:
        write_rows(log_path, log_rows)
    return (reports, records) if keep_records else reports


def write_rows(path, rows, header=None):
    rows = list(rows)
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)
    return Path(path)


COVERAGE_COLUMNS = ["method", "family", "mode", "hits", "trials", "coverage", "cp_lo", "cp_hi"]


def write_coverage_csv(path, reports):
    return write_rows(path, [r.row() for r in reports], COVERAGE_COLUMNS)


def write_manifest(path, config, command, extra=None):
    """JSON record of what produced an output directory."""
    manifest = {"command": command, "config_hash": config.config_hash(), "seed": config.seed,
                "version": __version__, "config": config.to_dict(), **(extra or {})}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return Path(path)

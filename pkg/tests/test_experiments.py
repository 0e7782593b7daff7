import csv
import json

import numpy as np
import pytest

from shapeunfold import DomainError
from shapeunfold.cli import main
from shapeunfold.experiments import (COVERAGE_COLUMNS, StudyConfig, clopper_pearson, in_family,
                                     prepare_study, run_coverage, write_coverage_csv)
from shapeunfold.spectrum import IntensityModel

SMALL = {"true_grid": {"lo": 400, "hi": 1000, "bins": 10}, "reps": 3, "seed": 99}


@pytest.mark.parametrize("hits,trials,expected", [(1000, 1000, (0.996, 1.000)),
                                                  (947, 1000, (0.931, 0.960))])
def test_clopper_pearson_reference_values(hits, trials, expected):
    lo, hi = clopper_pearson(hits, trials)
    assert (round(lo, 3), round(hi, 3)) == expected


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(3, 10)
    assert lo < 0.3 < hi
    with pytest.raises(DomainError):
        clopper_pearson(11, 10)


def test_config_validation_and_hash(tmp_path):
    with pytest.raises(DomainError):
        StudyConfig(reps=0)
    with pytest.raises(DomainError):
        StudyConfig(alpha=1.5)
    with pytest.raises(DomainError):
        StudyConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        StudyConfig(families=["q"])
    a = StudyConfig(seed=1)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(a.to_dict()))
    assert StudyConfig.from_json(path).config_hash() == a.config_hash()
    assert StudyConfig(seed=2).config_hash() != a.config_hash()
    assert a.modes["c"] == "grid"


def test_shape_membership_of_fixtures():
    jet = IntensityModel.inclusive_jet()
    assert all(in_family(jet, f, 400, 1000) for f in "pdc")
    assert in_family(IntensityModel.constant(5.0, 400, 1000), "c", 400, 1000)
    assert in_family(lambda t: t, "p", 400, 1000) and not in_family(lambda t: t, "d", 400, 1000)
    assert not in_family(lambda t: -(t - 700.0) ** 2, "c", 400, 1000)


def test_single_replication_positivity_hit():
    cfg = StudyConfig(families=["p"], reps=1, seed=2016)
    reports, records = run_coverage(cfg, keep_records=True)
    assert reports[0].hits == 1 and reports[0].trials == 1
    rec = records[0]
    assert rec["box_covers_mu"] and rec["strict"]["p"]["implication_ok"]


def test_coverage_is_deterministic(tmp_path):
    cfg = StudyConfig.from_dict({**SMALL, "families": ["p", "d"],
                                 "baseline": {"methods": ["svd"], "reg": 1.0}})
    outs = []
    for name in ("a", "b"):
        reports = run_coverage(cfg, log_path=tmp_path / f"{name}_log.csv")
        outs.append(write_coverage_csv(tmp_path / f"{name}.csv", reports).read_bytes())
        outs.append((tmp_path / f"{name}_log.csv").read_bytes())
    assert outs[0] == outs[2] and outs[1] == outs[3]
    rows = list(csv.DictReader((tmp_path / "a.csv").open()))
    assert list(rows[0]) == COVERAGE_COLUMNS
    assert [r["method"] for r in rows] == ["strict_bounds", "strict_bounds", "svd"]
    for r in rows:
        assert float(r["cp_lo"]) <= float(r["coverage"]) <= float(r["cp_hi"])


def test_failures_are_counted(monkeypatch):
    import shapeunfold.experiments as ex
    cfg = StudyConfig.from_dict({**SMALL, "families": ["d"]})
    setup = prepare_study(cfg)
    real = ex.run_replication

    def flaky(setup, rep, *a):
        if rep == 1:
            raise RuntimeError("boom")
        return real(setup, rep, *a)

    monkeypatch.setattr(ex, "run_replication", flaky)
    (rep,) = run_coverage(cfg, setup=setup)
    assert rep.failures == 1 and rep.trials == 2


def test_linear_and_constant_are_matched_to_jet_total():
    jet = prepare_study(StudyConfig())
    for v in ("linear", "constant"):
        s = prepare_study(StudyConfig(spectrum={"variant": v}))
        assert s.lam.sum() == pytest.approx(jet.lam.sum(), rel=1e-9)
        assert all(s.shape_ok.values())


def _read_csv(path):
    return list(csv.DictReader(open(path)))


def test_cli_envelope(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["envelope", "--config", str(cfg), "--family", "d", "--mode", "grid",
                 "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "envelope_d_grid.csv")
    assert list(rows[0]) == ["bin_lo_gev", "bin_hi_gev", "lambda_true", "lower", "upper", "status"]
    assert len(rows) == 10
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert {"config_hash", "seed", "version"} <= set(man) and man["seed"] == 99


def test_cli_coverage_and_baseline(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "cov"
    assert main(["coverage", "--config", str(cfg), "--family", "p", "--reps", "2",
                 "--out", str(out)]) == 0
    rows = _read_csv(out / "coverage.csv")
    assert rows[0]["trials"] == "2" and rows[0]["family"] == "p"
    assert (out / "replications.csv").exists()
    assert main(["baseline", "--config", str(cfg), "--method", "dagostini", "--reg", "4",
                 "--out", str(tmp_path / "b")]) == 0
    rows = _read_csv(tmp_path / "b" / "baseline_dagostini.csv")
    assert list(rows[0])[-2:] == ["method", "regularization"]
    assert rows[0]["method"] == "dagostini" and float(rows[0]["regularization"]) == 4
    assert main(["coverage", "--config", str(cfg), "--method", "svd", "--reg", "cv",
                 "--reps", "2", "--out", str(out)]) == 0
    assert _read_csv(out / "coverage.csv")[0]["method"] == "svd"


def test_cli_tables_and_bad_reg(tmp_path):
    assert main(["tables", "--out", str(tmp_path)]) == 0
    assert list(tmp_path.glob("tables-*.npz"))
    with pytest.raises(SystemExit):
        main(["baseline", "--reg", "lots"])


def test_envelope_csv_inf_literal(tmp_path):
    from shapeunfold.strict_bounds import write_interval_csv
    path = write_interval_csv(tmp_path / "x.csv", (0.0, 1.0, 2.0), np.zeros(2),
                              np.array([1.5, np.inf]), ["optimal", "no_feasible_point"])
    rows = _read_csv(path)
    assert rows[1]["upper"] == "inf" and rows[0]["lambda_true"] == ""


def test_binwise_hits_use_unadjusted_intervals():
    from shapeunfold.baselines import gaussian_intervals, svd_unfold
    from shapeunfold.experiments import run_replication
    from shapeunfold.sampler import sample_counts
    cfg = StudyConfig.from_dict({**SMALL, "families": [],
                                 "baseline": {"methods": ["svd"], "reg": 10.0}})
    setup = prepare_study(cfg)
    rec = run_replication(setup, 0)["baseline"]["svd"]
    y = sample_counts(setup.mu, cfg.seed, 0).counts.astype(float)
    est = svd_unfold(y, setup.K, setup.lam_mc, 10.0)
    lo, hi = gaussian_intervals(est, 0.05, bonferroni=False)
    assert np.array_equal(rec["each"], (lo <= setup.lam) & (setup.lam <= hi))
    lo, hi = gaussian_intervals(est, 0.05, bonferroni=True)
    assert rec["hit"] == bool(np.all((lo <= setup.lam) & (setup.lam <= hi)))

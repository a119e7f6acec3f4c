import json
import shutil

import numpy as np
import pytest

from dgplan import harness
from dgplan.caseio import read_results_csv
from dgplan.cli import main
from dgplan.powerflow import solve


def read_csv(path):
    return read_results_csv(path.read_text())


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    code = main(["optimize", "ieee14", "--algo", "pso", "--mode", "technical", "--seeds", "0", "--quiet", "--out", str(out)])
    assert code == 0
    return out


def test_run_directory_contract(single_run):
    names = {p.name for p in single_run.iterdir()}
    assert {"report.json", "losses.csv", "dg_sizes.csv", "voltage_profile.csv", "convergence.csv",
            "branch_losses.csv", "lsf.csv", "summary.csv", "timing.json"} <= names
    _, sizes = read_csv(single_run / "dg_sizes.csv")
    _, volts = read_csv(single_run / "voltage_profile.csv")
    _, conv = read_csv(single_run / "convergence.csv")
    assert len(sizes) == 4 and len(volts) == 14 and len(conv) == 150
    header, losses = read_csv(single_run / "losses.csv")
    assert header[:2] == ["label", "algorithm"] and len(losses) == 2


def test_branch_rows_follow_network_order(single_run, ieee14):
    _, rows = read_csv(single_run / "branch_losses.csv")
    assert [(int(r[1]), int(r[2])) for r in rows] == [(b.from_bus, b.to_bus) for b in ieee14.branches]


def test_base_voltage_column_is_stage_one_solve(single_run, ieee14):
    _, rows = read_csv(single_run / "voltage_profile.csv")
    v = solve(ieee14).v
    assert [r[1] for r in rows] == [f"{x:.6f}" for x in v]


def test_dg_sizes_within_bounds(single_run):
    _, rows = read_csv(single_run / "dg_sizes.csv")
    assert all(1.0 <= float(r[1]) <= 50.0 for r in rows)


def test_unknown_algorithm_is_usage_error(capsys):
    assert main(["optimize", "ieee14", "--algo", "ga"]) == 2


def test_bad_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"population": 3}))
    assert main(["optimize", "ieee14", "--config", str(cfg)]) == 2


def test_missing_case_file_is_usage_error(capsys):
    assert main(["solve", "no-such-case.m"]) == 2
    assert "no-such-case.m" in capsys.readouterr().err


def test_solve_prints_bus_table(capsys):
    assert main(["solve", "ieee14"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 15


def test_lsf_command(capsys):
    assert main(["lsf", "ieee30", "--k", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 30


def test_verify_untampered(single_run, capsys):
    assert main(["verify", str(single_run)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_detects_perturbed_loss(single_run, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(single_run, bad)
    doc = json.loads((bad / "report.json").read_text())
    doc["runs"][0]["p_loss"] += 1e-6
    (bad / "report.json").write_text(json.dumps(doc))
    assert main(["verify", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "row pso-technical seed 0" in out


def test_verify_empty_report_passes(single_run, tmp_path):
    empty = tmp_path / "empty"
    shutil.copytree(single_run, empty)
    doc = json.loads((empty / "report.json").read_text())
    doc["runs"] = []
    (empty / "report.json").write_text(json.dumps(doc))
    res = harness.verify_report(empty)
    assert res.ok and res.checked == 0


def test_report_command(single_run, capsys):
    assert main(["report", str(single_run)]) == 0
    assert "pso-technical" in capsys.readouterr().out


def test_rerun_is_byte_identical(single_run, tmp_path, monkeypatch):
    monkeypatch.setenv("DGPLAN_OUT", str(tmp_path / "again"))
    assert main(["optimize", "ieee14", "--algo", "pso", "--mode", "technical", "--seeds", "0", "--quiet"]) == 0
    again = tmp_path / "again"
    for name in sorted(p.name for p in single_run.iterdir()):
        if name != "timing.json":
            assert (again / name).read_bytes() == (single_run / name).read_bytes(), name


def test_config_output_dir_honours_environment(monkeypatch, tmp_path):
    cfg = harness.ExperimentConfig(case="ieee14", out_dir="elsewhere")
    monkeypatch.setenv("DGPLAN_OUT", str(tmp_path))
    assert cfg.output_dir() == tmp_path
    monkeypatch.delenv("DGPLAN_OUT")
    assert str(cfg.output_dir()) == "elsewhere"


def test_config_validation():
    with pytest.raises(harness.ConfigError):
        harness.ExperimentConfig(case="ieee14", algorithms="ga")
    with pytest.raises(harness.ConfigError):
        harness.ExperimentConfig(case="ieee14", pso={"swarm": 3})
    with pytest.raises(harness.ConfigError):
        harness.ExperimentConfig.from_dict({"algorithms": "pso"})
    cfg = harness.ExperimentConfig(case="ieee30", algorithms="both", modes="technical")
    assert harness.ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_failed_seed_is_recorded_not_raised(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(harness, "pso_optimize", boom)
    cfg = harness.ExperimentConfig(case="ieee14", algorithms="pso", modes="technical", seeds=[0, 1])
    report = harness.run_experiment(cfg)
    assert [r.ok for r in report.runs] == [False, False]
    assert "solver exploded" in report.runs[0].error
    assert report.summary_rows()[0][2] == 2


def test_discrepancy_note_when_ranking_differs(ieee14):
    cfg = harness.ExperimentConfig(case="ieee14", algorithms="pso", modes="technical", seeds=[0],
                                   pso={"population": 4, "max_iterations": 2})
    report = harness.run_experiment(cfg)
    if set(report.computed_candidates) != set(report.reference_candidates):
        assert any("candidate discrepancy" in n for n in report.notes)
    assert report.candidates == report.computed_candidates


def test_woa_techno_economic_ieee30(full_studies):
    report, _ = full_studies["ieee30"]
    assert report.best("woa-techno-economic").p_loss <= 12.0


def test_full_study_tables(full_studies):
    report, run_dir = full_studies["ieee14"]
    _, rows = read_csv(run_dir / "losses.csv")
    assert len(rows) == 1 + 40
    _, summary = read_csv(run_dir / "summary.csv")
    assert [r[0] for r in summary] == ["pso-technical", "woa-technical", "pso-techno-economic", "woa-techno-economic"]
    assert all(r[2] == "0" for r in summary)
    best = report.best("pso-technical")
    assert best.fitness == min(r.fitness for r in report.runs if r.label == "pso-technical")
    assert np.isfinite(best.p_loss)

import hashlib
import json
import subprocess
import sys

import pytest

from sizeflags.cli import main


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--seed", "3", "--articles", "150", "--weeks", "5", "--weekly-orders", "40",
                 "--feedback-fraction", "0.1", "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def did_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("did")
    assert main(["simulate", "--kind", "did", "--seed", "7", "--treated", "60", "--controls", "200",
                 "-o", str(out)]) == 0
    return out


def test_solve_bounds(capsys):
    assert main(["solve-bounds", "--pi-low", "0.08", "--pi-high", "0.3", "--theta", "15"]) == 0
    cap = capsys.readouterr()
    assert "alpha_max=8 beta_max=3" in cap.err
    (rec,) = [json.loads(line) for line in cap.out.splitlines()]
    assert (rec["alpha_max"], rec["beta_max"]) == (8, 3)
    assert rec["record_type"] == "prior_bounds" and len(rec["config_fingerprint"]) == 64


def test_solve_bounds_from_snapshots(fixtures_dir, capsys):
    assert main(["solve-bounds", "--snapshots", str(fixtures_dir / "three_articles.jsonl")]) == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert {r["direction"] for r in recs} == {"too_big", "too_small"}


def test_run_empty_fixture(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    code = main(["run", "--variant", "V0", "--theta", "machine_epsilon",
                 "--snapshots", str(fixtures_dir / "empty.jsonl"), "-o", str(out)])
    assert code == 0
    recs = records(out)
    assert [r["record_type"] for r in recs] == ["summary"]
    assert recs[0]["total_flags"] == 0
    assert "warning:" in capsys.readouterr().err


def test_stats(fixtures_dir, capsys):
    assert main(["stats", "--snapshots", str(fixtures_dir / "three_articles.jsonl")]) == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(recs) == 2 and all(r["category_id"] == "dresses" for r in recs)
    big = next(r for r in recs if r["direction"] == "too_big")
    assert big["article_count"] == 3


def test_simulate_writes_directory(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    assert names == {"snapshots.jsonl", "truth.jsonl", "feedback.jsonl", "cues.jsonl", "manifest.jsonl"}
    (manifest,) = records(sim_dir / "manifest.jsonl")
    assert manifest["seed"] == 3 and manifest["record_type"] == "simulation"
    digest = hashlib.sha256((sim_dir / "snapshots.jsonl").read_bytes()).hexdigest()
    assert manifest["files"]["snapshots.jsonl"] == digest


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        main(["simulate", "--seed", "9", "--articles", "50", "--weeks", "2", "-o", str(tmp_path / name)])
    for f in ("snapshots.jsonl", "truth.jsonl", "cues.jsonl", "manifest.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("variant", ["V0", "V_Base", "V_HF", "V_SN", "V_TH", "SizeFlags"])
def test_run_every_variant(sim_dir, tmp_path, variant):
    out = tmp_path / "d.jsonl"
    argv = ["run", "--variant", variant, "--snapshots", str(sim_dir / "snapshots.jsonl"),
            "--feedback", str(sim_dir / "feedback.jsonl"), "--cues", str(sim_dir / "cues.jsonl"), "-o", str(out)]
    assert main(argv) == 0
    recs = records(out)
    fps = {r["config_fingerprint"] for r in recs}
    assert len(fps) == 1
    decisions = [r for r in recs if r["record_type"] == "decision"]
    if variant == "V_HF":
        # only articles with expert feedback are scored
        expected = {r["article_id"] for r in records(sim_dir / "feedback.jsonl")}
    else:
        expected = {f"A{i:06d}" for i in range(150)}
    assert len(decisions) == 2 * len(expected)
    assert {r["article_id"] for r in decisions} == expected
    assert all(r["model_variant"] == variant for r in decisions)
    summary = recs[-1]
    assert summary["record_type"] == "summary"
    assert summary["total_flags"] == sum(r["flagged"] for r in decisions)
    solutions = [r for r in recs if r["record_type"] == "threshold_solution"]
    assert bool(solutions) == (variant in ("V_TH", "SizeFlags"))


def test_run_fixed_theta_and_determinism(sim_dir, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"d{i}.jsonl"
        main(["run", "--variant", "V_Base", "--theta", "7.5", "--snapshots", str(sim_dir / "snapshots.jsonl"), "-o", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert all(r["threshold_used"] == 7.5 for r in records(tmp_path / "d0.jsonl") if r["record_type"] == "decision")


def test_optimize_threshold(sim_dir, capsys):
    assert main(["optimize-threshold", "--snapshots", str(sim_dir / "snapshots.jsonl")]) == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert {r["direction"] for r in recs} == {"too_big", "too_small"}
    assert all(r["theta_star"] <= r["theta_max"] for r in recs)


def test_fingerprint_follows_content_not_path(sim_dir, tmp_path, capsys):
    copy = tmp_path / "copy.jsonl"
    copy.write_bytes((sim_dir / "snapshots.jsonl").read_bytes())
    fps = []
    for path in (sim_dir / "snapshots.jsonl", copy):
        main(["stats", "--snapshots", str(path)])
        fps.append({json.loads(line)["config_fingerprint"] for line in capsys.readouterr().out.splitlines()})
    assert fps[0] == fps[1] and len(fps[0]) == 1


def test_evaluate_did(did_dir, capsys):
    code = main(["evaluate-did", "--snapshots", str(did_dir / "snapshots.jsonl"),
                 "--treatments", str(did_dir / "treatments.jsonl")])
    assert code == 0
    (rec,) = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert rec["record_type"] == "did_report"
    assert rec["treated_count"] == 60
    assert rec["included_count"] + rec["excluded_count"] == 60
    assert rec["srr_effect"] == pytest.approx(0.05, abs=0.02)


def test_cold_start_compare(sim_dir, capsys):
    code = main(["cold-start-compare", "--snapshots", str(sim_dir / "snapshots.jsonl"),
                 "--cues", str(sim_dir / "cues.jsonl"), "--truth", str(sim_dir / "truth.jsonl"),
                 "--variants", "SizeFlags", "--baseline-concentration", "0"])
    assert code == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    by_variant = {r["variant"]: r for r in recs if r["record_type"] == "cold_start"}
    assert set(by_variant) == {"V_Base", "SizeFlags"}
    assert "precision" in by_variant["SizeFlags"] and "recall" in by_variant["V_Base"]
    assert recs[-1]["record_type"] == "summary"


# -- failure modes ------------------------------------------------------------


def test_config_error_exit_code(sim_dir, capsys):
    code = main(["run", "--variant", "V_SN", "--snapshots", str(sim_dir / "snapshots.jsonl")])
    assert code == 2
    assert "error[config]" in capsys.readouterr().err


def test_half_interval_is_config_error():
    assert main(["solve-bounds", "--pi-low", "0.1"]) == 2


def test_missing_file_exit_code(tmp_path):
    assert main(["stats", "--snapshots", str(tmp_path / "nope.jsonl")]) == 3


def test_parse_error_exit_code(fixtures_dir, capsys):
    assert main(["stats", "--snapshots", str(fixtures_dir / "malformed.jsonl")]) == 3
    assert ":2:" in capsys.readouterr().err


def test_validation_error_exit_code(fixtures_dir, capsys):
    assert main(["stats", "--snapshots", str(fixtures_dir / "decreasing.jsonl")]) == 4
    assert "a2" in capsys.readouterr().err


def test_numerical_error_exit_code(capsys):
    code = main(["solve-bounds", "--pi-low", "0.5", "--pi-high", "0.6", "--theta", "1e6"])
    assert code == 5
    assert "error[numerical]" in capsys.readouterr().err


def test_module_entry_point(fixtures_dir):
    proc = subprocess.run(
        [sys.executable, "-m", "sizeflags.cli", "solve-bounds", "--pi-low", "0.08", "--pi-high", "0.3", "--theta", "15"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert "alpha_max=8 beta_max=3" in proc.stderr

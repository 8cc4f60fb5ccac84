import csv
import json

import numpy as np
import pytest

from posekit.errors import IoFailure, PoseKitError
from posekit.experiment import (
    ExperimentConfig,
    ExperimentResult,
    emit_reports,
    load_results,
    parse_predictor,
    run_experiment,
    thread_count,
)


@pytest.fixture(scope="module")
def oracle_run():
    return run_experiment(ExperimentConfig(object_id="cube", trials=50, seed=1, pool_size=64))


def test_oracle_is_exact(oracle_run):
    s = oracle_run.summary
    assert s["trials"] == 50 and s["failed"] == 0
    assert s["accuracy_0.1d"] == 1.0 and s["accuracy_0.02d"] == 1.0
    assert s["auc"] > 0.999
    for r in oracle_run.records:
        assert r.errors["final"]["add"] < 1e-9
        assert len(r.history) == 4 and len(r.candidates) == 4


def test_records_are_ordered_and_seeded(oracle_run):
    assert [r.index for r in oracle_run.records] == list(range(50))
    assert len({r.seed for r in oracle_run.records}) == 50


def test_summaries_are_reproducible():
    cfg = ExperimentConfig(predictor="noisy:10,0.05", trials=12, seed=3, pool_size=32)
    a, b = run_experiment(cfg, threads=1), run_experiment(cfg, threads=4)
    assert json.dumps(a.summary) == json.dumps(b.summary)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_noisy_comparison_table():
    res = run_experiment(ExperimentConfig(predictor="noisy:10,0.05", trials=60, seed=0, pool_size=32))
    cmp = res.summary["medoid_vs_candidate0"]
    assert cmp["medoid"]["rot_err"] < cmp["candidate0"]["rot_err"]
    assert 0 <= cmp["medoid_win_rate"] <= 1 and 0 <= cmp["tie_rate"] <= 1
    assert cmp["rot_err_reduction"] == pytest.approx(1 - cmp["medoid"]["rot_err"] / cmp["candidate0"]["rot_err"])


def test_reports(oracle_run, tmp_path):
    d = emit_reports(oracle_run, tmp_path / "out")
    with open(d / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "value"]
    names = [r[0] for r in rows[1:]]
    assert names == [
        "accuracy_0.02d", "accuracy_0.05d", "accuracy_0.1d", "auc_0.1m",
        "mean_ms_multi_reference", "mean_ms_iterative", "mean_ms_total",
    ]
    assert float(rows[3][1]) == 1.0
    with open(d / "curves.csv") as fh:
        curves = list(csv.reader(fh))
    assert curves[0] == ["threshold_m", "accuracy_candidate0", "accuracy_medoid", "accuracy_final"]
    assert len(curves) == 102
    with open(d / "comparison.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    timings = json.loads((d / "timings.json").read_text())
    assert len(timings["per_trial_ms"]) == 50
    text = (d / "results.json").read_text()
    assert "times_ms" not in text


def test_results_reload(oracle_run, tmp_path):
    d = emit_reports(oracle_run, tmp_path / "out")
    summary, records = load_results(d / "results.json")
    assert summary == json.loads(json.dumps(oracle_run.summary))
    assert records == oracle_run.records


def test_empty_reports_are_headers_only(tmp_path):
    res = ExperimentResult(ExperimentConfig(), [], {"trials": 0, "failed": 0}, {})
    d = emit_reports(res, tmp_path / "empty")
    for name, header in [
        ("summary.csv", "metric,value"),
        ("comparison.csv", "stage,mean_rot_err_rad,mean_trans_err_m,mean_error_m"),
    ]:
        assert (d / name).read_text().splitlines() == [header]
    assert len((d / "curves.csv").read_text().splitlines()) == 1


def test_report_dir_not_writable(oracle_run, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        emit_reports(oracle_run, blocker / "sub")


def test_occluded_trials_run():
    res = run_experiment(ExperimentConfig(trials=6, occlusion=True, pool_size=16, seed=2))
    assert res.summary["failed"] == 0
    occluded = [r for r in res.records if r.scene.occluder is not None]
    assert occluded and res.summary["accuracy_0.1d"] == 1.0


def test_symmetric_object_uses_add_s():
    res = run_experiment(
        ExperimentConfig(mesh="builtin:sphere", symmetric=True, predictor="noisy:5,0.02", trials=4, pool_size=16)
    )
    for r in res.records:
        assert r.errors["final"]["error"] == r.errors["final"]["add_s"]


@pytest.mark.parametrize(
    "spec,expect",
    [("oracle", ("oracle", ())), ("noisy:10,0.05", ("noisy", (10.0, 0.05))),
     ("noisy:10,0.05,0.5", ("noisy", (10.0, 0.05, 0.5))), ("search:500", ("search", (500.0,))),
     ("search", ("search", ()))],
)
def test_parse_predictor(spec, expect):
    assert parse_predictor(spec) == expect


@pytest.mark.parametrize("spec", ["magic", "oracle:1", "noisy:10", "search:0", "search:x", "noisy:1,2,3,4"])
def test_parse_predictor_rejects(spec):
    with pytest.raises(PoseKitError):
        parse_predictor(spec)


@pytest.mark.parametrize(
    "kwargs",
    [{"N": 0}, {"raster": 4}, {"pool_size": 2, "M": 4}, {"depth_range": (2.0, 1.0)},
     {"focal_range": (0.0, 1.0)}, {"margin": 0.5}, {"predictor": "x"}],
)
def test_config_validation(kwargs):
    with pytest.raises(PoseKitError):
        ExperimentConfig(**kwargs)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(mesh="builtin:sphere", symmetric=True, trials=3)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    (tmp_path / "c.json").write_text(json.dumps({"trials": 2, "bogus": 1}))
    with pytest.raises(PoseKitError):
        ExperimentConfig.load(tmp_path / "c.json")
    with pytest.raises(IoFailure):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_mesh_file_relative_to_config(tmp_path):
    from posekit.geometry import cube_mesh
    from posekit.meshio import write_ply

    v, f = cube_mesh(100.0)  # millimeters
    write_ply(tmp_path / "box.ply", v, f)
    (tmp_path / "c.json").write_text(json.dumps({"mesh": "box.ply", "mesh_scale": 0.001, "trials": 2, "pool_size": 8}))
    res = run_experiment(ExperimentConfig.load(tmp_path / "c.json"))
    assert res.summary["accuracy_0.1d"] == 1.0


def test_thread_count(monkeypatch):
    monkeypatch.delenv("POSEKIT_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("POSEKIT_THREADS", "8")
    assert thread_count() == 8
    monkeypatch.setenv("POSEKIT_THREADS", "many")
    with pytest.raises(PoseKitError):
        thread_count()

"""Experiment harness: seeding, mode wiring, artifacts, overhead stage."""

import json

import numpy as np
import pytest

from c2lab import detector as det
from c2lab.adversarial import StuffSide, plan_from_adversarial
from c2lab.harness import (
    Artifacts,
    ExperimentConfig,
    attack_config,
    build_dataset,
    mode_for,
    report_bytes,
    run_overhead,
    seed_for,
)
from c2lab.model import FeatureVector, Label, Provenance
from c2lab.sim import (
    Adversarial,
    FixedReqPerConn,
    RandReqPerConn,
    Regular,
    StuffFixed,
    StuffRandom,
)


# ---------------------------------------------------------------------------
# seeding

def test_seed_for_deterministic():
    assert seed_for(7, "tm1-regular") == seed_for(7, "tm1-regular")


def test_seed_for_distinguishes_names_and_masters():
    seeds = {
        seed_for(7, "tm1-regular"),
        seed_for(7, "tm1-web"),
        seed_for(8, "tm1-regular"),
    }
    assert len(seeds) == 3


def test_seed_for_fits_int32():
    for master in (0, 7, 2**40):
        for name in ("a", "overhead-19", "tm2-eps0.05"):
            s = seed_for(master, name)
            assert 0 <= s < 2**31 - 1


# ---------------------------------------------------------------------------
# attack config

def test_attack_config_floors_follow_smallest_messages():
    ec = ExperimentConfig()
    cfg = attack_config(ec, 0.05)
    # smallest request 283-12=271 frames to 288, smallest response 171-4=167 to 192
    assert cfg.position_floors == (288, 192)
    assert cfg.epsilon == 0.05
    assert cfg.size_model == ec.sim.size_model


def test_attack_config_tracks_sim_overrides():
    from dataclasses import replace

    ec = ExperimentConfig()
    ec = replace(ec, sim=replace(ec.sim, url_jitter=0, response_jitter=0))
    cfg = attack_config(ec, 0.01)
    assert cfg.position_floors == (304, 192)  # framed(283), framed(171)


# ---------------------------------------------------------------------------
# provenance -> traffic mode

def test_mode_for_naive_modes():
    assert isinstance(mode_for(Provenance.REGULAR), Regular)
    stuff = mode_for(Provenance.STUFF50)
    assert isinstance(stuff, StuffFixed) and stuff.amount == 50
    rand = mode_for(Provenance.STUFF_RAND)
    assert isinstance(rand, StuffRandom) and (rand.low, rand.high) == (1, 1400)
    fixed = mode_for(Provenance.FIXED3_REQ)
    assert isinstance(fixed, FixedReqPerConn) and fixed.requests == 3
    rr = mode_for(Provenance.RAND_REQ)
    assert isinstance(rr, RandReqPerConn) and (rr.low, rr.high) == (2, 6)


def _toy_plan():
    fv = FeatureVector.from_sizes([640, 480, 720, 512])
    return plan_from_adversarial(fv, StuffSide.TWO_SIDE)


def test_mode_for_adversarial_provenances():
    lib = (_toy_plan(),)
    for prov, side in (
        (Provenance.ADV_FRAMEWORK, StuffSide.FRAMEWORK_ONLY),
        (Provenance.ADV_PAYLOAD, StuffSide.PAYLOAD_ONLY),
        (Provenance.ADV_TWO_SIDE, StuffSide.TWO_SIDE),
    ):
        mode = mode_for(prov, lib)
        assert isinstance(mode, Adversarial)
        assert mode.side is side
        assert mode.library == lib


def test_mode_for_adversarial_requires_library():
    with pytest.raises(ValueError):
        mode_for(Provenance.ADV_TWO_SIDE)


def test_mode_for_rejects_web():
    with pytest.raises(ValueError, match="no traffic mode"):
        mode_for(Provenance.WEB)


# ---------------------------------------------------------------------------
# dataset assembly

SMALL = ExperimentConfig(master_seed=11)


def test_build_dataset_c2_labels():
    ds, flows = build_dataset(Provenance.REGULAR, 6, SMALL, "stage-x")
    assert len(ds) == 6
    assert all(s.label is Label.C2 for s in ds.samples)
    assert all(s.provenance is Provenance.REGULAR for s in ds.samples)
    assert len(flows.traces) == 6


def test_build_dataset_web_labels():
    ds, _ = build_dataset(Provenance.WEB, 5, SMALL, "stage-x")
    assert all(s.label is Label.NON_C2 for s in ds.samples)
    assert all(s.provenance is Provenance.WEB for s in ds.samples)


def test_build_dataset_deterministic_per_stage():
    a, _ = build_dataset(Provenance.RAND_REQ, 8, SMALL, "stage-x")
    b, _ = build_dataset(Provenance.RAND_REQ, 8, SMALL, "stage-x")
    c, _ = build_dataset(Provenance.RAND_REQ, 8, SMALL, "stage-y")
    mat = lambda d: np.stack([s.features.values for s in d.samples])
    assert np.array_equal(mat(a), mat(b))
    assert not np.array_equal(mat(a), mat(c))


# ---------------------------------------------------------------------------
# scaled copies

def test_scaled_applies_floors():
    tiny = ExperimentConfig().scaled(1e-9)
    assert tiny.n_train == 200
    assert tiny.n_test == 80
    assert tiny.n_eval == 80
    assert tiny.n_aware_regular == 100
    assert tiny.n_aware_randreq == 100
    assert tiny.n_adv_eval == 80
    assert tiny.overhead_runs == 3


def test_scaled_keeps_structure():
    base = ExperimentConfig()
    half = base.scaled(0.5)
    assert half.n_train == 3000
    assert half.epsilon_sweep == base.epsilon_sweep
    assert half.master_seed == base.master_seed
    assert half.sim == base.sim


# ---------------------------------------------------------------------------
# artifacts

def test_artifacts_none_root_is_noop(tmp_path):
    art = Artifacts(None)
    ds, _ = build_dataset(Provenance.REGULAR, 2, SMALL, "noop")
    art.save_dataset("x", ds)
    art.save_json("y.json", {"a": 1})
    art.save_rows("z.csv", ["a"], [[1]])
    art.write_manifest()
    assert art.files == []
    assert list(tmp_path.iterdir()) == []


def test_artifacts_collects_and_manifests(tmp_path):
    art = Artifacts(tmp_path)
    ds, _ = build_dataset(Provenance.REGULAR, 2, SMALL, "art")
    art.save_dataset("sample", ds)
    art.save_json("report/part.json", {"k": [1, 2]})
    art.save_rows("rows.csv", ["a", "b"], [[1, 2], [3, 4]])
    params = det.DetectorParams.initialize(np.random.default_rng(0), hidden_sizes=(4,))
    art.save_detector("net", params)
    art.notes.append("note-b")
    art.notes.append("note-a")
    art.write_manifest()

    assert (tmp_path / "datasets/sample.csv").exists()
    assert (tmp_path / "report/part.json").exists()
    assert (tmp_path / "rows.csv").exists()
    assert (tmp_path / "net.bin").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"] == sorted(art.files)
    assert manifest["notes"] == ["note-a", "note-b"]
    assert "datasets/sample.csv" in manifest["files"]


# ---------------------------------------------------------------------------
# canonical report serialization

def test_report_bytes_ignores_insertion_order():
    a = {"x": 1, "y": {"b": 2, "a": 3}}
    b = {"y": {"a": 3, "b": 2}, "x": 1}
    assert report_bytes(a) == report_bytes(b)
    assert report_bytes(a).endswith(b"\n")


def test_report_bytes_differs_on_values():
    assert report_bytes({"x": 1}) != report_bytes({"x": 2})


# ---------------------------------------------------------------------------
# overhead stage

def _toy_library():
    shapes = [
        [640, 480, 720, 512],
        [608, 496, 688, 480, 752, 512],
        [592, 464],
    ]
    return [plan_from_adversarial(FeatureVector.from_sizes(s), StuffSide.TWO_SIDE) for s in shapes]


def test_run_overhead_summary_and_files(tmp_path):
    ec = ExperimentConfig(master_seed=3, overhead_runs=2)
    art = Artifacts(tmp_path)
    result = run_overhead(ec, _toy_library(), art)
    summary = result["summary"]
    for key in (
        "appdata_ratio",
        "wire_bytes_lower",
        "connection_ratio",
        "runtime_max_abs_delta",
    ):
        assert key in summary
    # reshaping moves bytes around but never stretches the operator's session
    assert summary["runtime_max_abs_delta"] == 0.0
    assert summary["appdata_ratio"] > 1.0
    assert len(result["per_run"]) == 2
    for run in result["per_run"]:
        assert run["exchanges_regular"] == run["exchanges_adversarial"]
        assert run["connections_adversarial"] <= run["connections_regular"]
    assert (tmp_path / "overhead/runs.csv").exists()
    for name in (
        "conn_appdata_regular",
        "conn_appdata_adversarial",
        "conn_gap_regular",
        "conn_gap_adversarial",
    ):
        assert (tmp_path / f"overhead/cdf_{name}.csv").exists()


def test_run_overhead_zero_runs_notes_skip():
    ec = ExperimentConfig(overhead_runs=0)
    art = Artifacts(None)
    assert run_overhead(ec, _toy_library(), art) is None
    assert any("skipped" in n for n in art.notes)

"""End-to-end experiment orchestration.

Three stages: a baseline detector against naive reshaping, a reshaping-aware
detector against gradient-guided stuffing, and wire-cost accounting of the
winning configuration. Every stage draws its randomness from named
substreams of one master seed, and every reported number can be recomputed
from the files the run leaves behind.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adversarial as adv
from . import detector as det
from .adversarial import FgsmConfig, StuffSide
from .model import Dataset, Label, LabeledSample, Provenance, evasion_rate, features_from_trace
from .sim import (
    Adversarial,
    FixedReqPerConn,
    GeneratedFlows,
    Mode,
    RandReqPerConn,
    Regular,
    SimConfig,
    StuffFixed,
    StuffRandom,
    WebConfig,
    conn_open_close,
    conn_wire_bytes,
    generate_c2_traces,
    generate_web_traces,
    interactive_script,
    simulate_session,
    substream,
)


def seed_for(master: int, name: str) -> int:
    return (master * 1_000_003 + zlib.crc32(name.encode())) % (2**31 - 1)


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 7
    n_train: int = 6000  # per class, baseline detector
    n_test: int = 1500  # per class, held-out accuracy
    n_eval: int = 2000  # per reshaping mode
    n_aware_regular: int = 3000
    n_aware_randreq: int = 3000
    n_adv_eval: int = 1500  # per stuffing side per epsilon
    # Larger steps keep gaining evasion but cost wire bytes roughly linearly;
    # past 0.05 the stuffing outruns what connection coalescing saves.
    epsilon_sweep: tuple[float, ...] = (0.01, 0.03, 0.05)
    overhead_runs: int = 20
    sim: SimConfig = field(default_factory=SimConfig)
    web: WebConfig = field(default_factory=WebConfig)
    train: det.TrainConfig = field(default_factory=det.TrainConfig)

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Shrink every dataset size for quick runs; structure unchanged."""

        def s(n: int, floor: int = 40) -> int:
            return max(floor, int(n * factor))

        return replace(
            self,
            n_train=s(self.n_train, 200),
            n_test=s(self.n_test, 80),
            n_eval=s(self.n_eval, 80),
            n_aware_regular=s(self.n_aware_regular, 100),
            n_aware_randreq=s(self.n_aware_randreq, 100),
            n_adv_eval=s(self.n_adv_eval, 80),
            overhead_runs=max(3, int(self.overhead_runs * factor)),
        )


MODE_PROVENANCES = (
    Provenance.REGULAR,
    Provenance.STUFF50,
    Provenance.STUFF_RAND,
    Provenance.FIXED3_REQ,
    Provenance.RAND_REQ,
)

_ADV_PROVENANCE = {
    StuffSide.FRAMEWORK_ONLY: Provenance.ADV_FRAMEWORK,
    StuffSide.PAYLOAD_ONLY: Provenance.ADV_PAYLOAD,
    StuffSide.TWO_SIDE: Provenance.ADV_TWO_SIDE,
}


def attack_config(ec: ExperimentConfig, epsilon: float) -> FgsmConfig:
    """FGSM projection bounds implied by the beacon's smallest messages.

    A crafted target below the bare poll or ack is unrealizable: stuffing
    only grows records, so the wire would overshoot it every time.
    """
    frame = ec.sim.size_model.framed_size
    req_floor = frame(min(ec.sim.get_base, ec.sim.post_base) - ec.sim.url_jitter)
    resp_floor = frame(ec.sim.response_base - ec.sim.response_jitter)
    return FgsmConfig(
        epsilon=epsilon,
        size_model=ec.sim.size_model,
        position_floors=(req_floor, resp_floor),
    )


def mode_for(provenance: Provenance, library: tuple = ()) -> Mode:
    if provenance is Provenance.REGULAR:
        return Regular()
    if provenance is Provenance.STUFF50:
        return StuffFixed(50)
    if provenance is Provenance.STUFF_RAND:
        return StuffRandom(1, 1400)
    if provenance is Provenance.FIXED3_REQ:
        return FixedReqPerConn(3)
    if provenance is Provenance.RAND_REQ:
        return RandReqPerConn(2, 6)
    for side, prov in _ADV_PROVENANCE.items():
        if prov is provenance:
            return Adversarial(side, tuple(library))
    raise ValueError(f"no traffic mode for provenance {provenance}")


class Artifacts:
    """Collects the run's files; a None root disables persistence."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self.files: list[str] = []
        self.notes: list[str] = []

    def _path(self, rel: str) -> Path | None:
        if self.root is None:
            return None
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(rel)
        return p

    def save_dataset(self, name: str, ds: Dataset) -> None:
        p = self._path(f"datasets/{name}.csv")
        if p is not None:
            ds.to_csv(p)

    def save_predictions(self, name: str, ds: Dataset, predictions: list[Label]) -> None:
        p = self._path(f"predictions/{name}.csv")
        if p is None:
            return
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "provenance", "label", "predicted"])
            for i, (sample, pred) in enumerate(zip(ds.samples, predictions)):
                w.writerow([i, sample.provenance.value, sample.label.value, pred.value])

    def save_json(self, rel: str, obj) -> None:
        p = self._path(rel)
        if p is not None:
            with open(p, "w") as fh:
                json.dump(obj, fh, sort_keys=True, indent=1)
                fh.write("\n")

    def save_rows(self, rel: str, header: list[str], rows: list[list]) -> None:
        p = self._path(rel)
        if p is not None:
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)

    def save_detector(self, name: str, params: det.DetectorParams) -> None:
        p = self._path(f"{name}.bin")
        if p is not None:
            params.save(p)

    def write_manifest(self) -> None:
        if self.root is None:
            return
        manifest = {"files": sorted(self.files), "notes": sorted(self.notes)}
        with open(self.root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")


# ---------------------------------------------------------------------------
# dataset construction

def build_dataset(
    provenance: Provenance,
    n: int,
    ec: ExperimentConfig,
    stage: str,
    library: tuple = (),
) -> tuple[Dataset, GeneratedFlows]:
    """Labeled flows of one provenance, seeded by (master, stage, provenance)."""
    seed = seed_for(ec.master_seed, f"{stage}-{provenance.value}")
    if provenance is Provenance.WEB:
        cfg = replace(ec.sim, seed=seed)
        flows = generate_web_traces(n, cfg, ec.web)
        label = Label.NON_C2
    else:
        cfg = replace(ec.sim, mode=mode_for(provenance, library), seed=seed)
        flows = generate_c2_traces(n, cfg)
        label = Label.C2
    samples = [LabeledSample(features_from_trace(t), label, provenance) for t in flows.traces]
    return Dataset(samples, seed), flows


def _concat(*datasets: Dataset) -> Dataset:
    samples = [s for d in datasets for s in d.samples]
    return Dataset(samples, datasets[0].seed)


def _evaluate_evasion(
    params: det.DetectorParams, ds: Dataset, artifacts: Artifacts, name: str
) -> dict:
    predictions = det.predict(params, [s.features for s in ds.samples])
    artifacts.save_predictions(name, ds, predictions)
    rate = evasion_rate(ds, predictions)
    return {
        "n": len(ds),
        "missed": int(round(rate * len(ds))),
        "evasion_rate": rate,
    }


# ---------------------------------------------------------------------------
# stage 1: baseline detector vs naive reshaping

def run_threat_model_1(ec: ExperimentConfig, artifacts: Artifacts) -> tuple[dict, det.DetectorParams]:
    reg_ds, _ = build_dataset(Provenance.REGULAR, ec.n_train + ec.n_test, ec, "tm1")
    web_ds, _ = build_dataset(Provenance.WEB, ec.n_train + ec.n_test, ec, "tm1")
    train_ds = _concat(
        Dataset(reg_ds.samples[: ec.n_train], reg_ds.seed),
        Dataset(web_ds.samples[: ec.n_train], web_ds.seed),
    )
    test_ds = _concat(
        Dataset(reg_ds.samples[ec.n_train :], reg_ds.seed),
        Dataset(web_ds.samples[ec.n_train :], web_ds.seed),
    )
    artifacts.save_dataset("tm1_train", train_ds)
    artifacts.save_dataset("tm1_test", test_ds)

    params, history = det.train(train_ds, replace(ec.train, seed=seed_for(ec.master_seed, "tm1-train")))
    artifacts.save_detector("detector_baseline", params)
    acc = det.accuracy(params, test_ds)

    evasion = {}
    for prov in MODE_PROVENANCES:
        eval_ds, _ = build_dataset(prov, ec.n_eval, ec, "tm1-eval")
        artifacts.save_dataset(f"eval_{prov.value}", eval_ds)
        evasion[prov.value] = _evaluate_evasion(params, eval_ds, artifacts, f"tm1_{prov.value}")

    report = {
        "baseline_accuracy": acc,
        "train_size": len(train_ds),
        "test_size": len(test_ds),
        "epochs_trained": len(history),
        "history": history,
        "evasion": evasion,
    }
    return report, params


# ---------------------------------------------------------------------------
# stage 2: aware detector vs gradient-guided stuffing

def run_threat_model_2(
    ec: ExperimentConfig, artifacts: Artifacts
) -> tuple[dict, det.DetectorParams, dict[StuffSide, list]]:
    n_c2 = ec.n_aware_regular + ec.n_aware_randreq
    test_reg = max(1, ec.n_test // 2)
    reg_ds, _ = build_dataset(Provenance.REGULAR, ec.n_aware_regular + test_reg, ec, "tm2")
    rr_ds, _ = build_dataset(Provenance.RAND_REQ, ec.n_aware_randreq + test_reg, ec, "tm2")
    web_ds, _ = build_dataset(Provenance.WEB, n_c2 + 2 * test_reg, ec, "tm2")

    train_ds = _concat(
        Dataset(reg_ds.samples[: ec.n_aware_regular], reg_ds.seed),
        Dataset(rr_ds.samples[: ec.n_aware_randreq], rr_ds.seed),
        Dataset(web_ds.samples[:n_c2], web_ds.seed),
    )
    test_ds = _concat(
        Dataset(reg_ds.samples[ec.n_aware_regular :], reg_ds.seed),
        Dataset(rr_ds.samples[ec.n_aware_randreq :], rr_ds.seed),
        Dataset(web_ds.samples[n_c2:], web_ds.seed),
    )
    artifacts.save_dataset("tm2_train", train_ds)
    artifacts.save_dataset("tm2_test", test_ds)

    params, history = det.train(train_ds, replace(ec.train, seed=seed_for(ec.master_seed, "tm2-train")))
    artifacts.save_detector("detector_aware", params)
    acc = det.accuracy(params, test_ds)

    rr_eval, _ = build_dataset(Provenance.RAND_REQ, ec.n_eval, ec, "tm2-eval")
    artifacts.save_dataset("eval_randreq_aware", rr_eval)
    rr_result = _evaluate_evasion(params, rr_eval, artifacts, "tm2_randreq")

    attack_samples = [s for s in rr_ds.samples[: ec.n_aware_randreq]]
    sweep: dict[str, dict] = {}
    libraries: dict[float, dict[StuffSide, list]] = {}
    for eps in ec.epsilon_sweep:
        crafted = {
            side: adv.build_plan_library(
                params,
                attack_samples,
                side,
                attack_config(ec, eps),
                source_tag=Provenance.RAND_REQ.value,
                # The framework decides connection splits, so it can refuse to
                # isolate one exchange per connection.  A payload-only implant
                # cannot: it follows whatever flow shapes the unmodified
                # framework emits, single-exchange stragglers included.
                min_exchanges=1 if side is StuffSide.PAYLOAD_ONLY else 2,
            )
            for side in (StuffSide.FRAMEWORK_ONLY, StuffSide.PAYLOAD_ONLY, StuffSide.TWO_SIDE)
        }
        # Stuffing both directions subsumes stuffing one: the two-side
        # operator may also schedule response-only plans when queued
        # transfers would blow through a crafted request size.
        crafted[StuffSide.TWO_SIDE] = (
            crafted[StuffSide.TWO_SIDE] + crafted[StuffSide.FRAMEWORK_ONLY]
        )
        libraries[eps] = crafted
        sweep[f"{eps}"] = {}
        for side in (StuffSide.FRAMEWORK_ONLY, StuffSide.PAYLOAD_ONLY, StuffSide.TWO_SIDE):
            prov = _ADV_PROVENANCE[side]
            adv_ds, flows = build_dataset(prov, ec.n_adv_eval, ec, f"tm2-eps{eps}", library=tuple(crafted[side]))
            entry = _evaluate_evasion(params, adv_ds, artifacts, f"tm2_{prov.value}_eps{eps}")
            entry["missing_next_size"] = flows.missing_next_size
            sweep[f"{eps}"][side.value] = entry

    best_eps = max(
        ec.epsilon_sweep,
        key=lambda e: sweep[f"{e}"][StuffSide.FRAMEWORK_ONLY.value]["evasion_rate"],
    )
    for side in (StuffSide.FRAMEWORK_ONLY, StuffSide.PAYLOAD_ONLY, StuffSide.TWO_SIDE):
        prov = _ADV_PROVENANCE[side]
        adv_ds, _ = build_dataset(prov, ec.n_adv_eval, ec, f"tm2-eps{best_eps}", library=tuple(libraries[best_eps][side]))
        artifacts.save_dataset(f"eval_{prov.value}", adv_ds)
        if artifacts.root is not None:
            rel = f"plans/{side.value}_eps{best_eps}.json"
            adv.save_plan_library(
                artifacts.root / rel,
                libraries[best_eps][side],
                {"epsilon": best_eps, "side": side.value, "source": Provenance.RAND_REQ.value},
            )
            artifacts.files.append(rel)

    report = {
        "aware_accuracy": acc,
        "train_size": len(train_ds),
        "epochs_trained": len(history),
        "randreq_vs_aware": rr_result,
        "sweep": sweep,
        "best_epsilon": best_eps,
        "best": sweep[f"{best_eps}"],
    }
    return report, params, libraries[best_eps]


# ---------------------------------------------------------------------------
# stage 3: wire cost of the winning configuration

def run_overhead(
    ec: ExperimentConfig,
    two_side_library: list,
    artifacts: Artifacts,
) -> dict | None:
    if ec.overhead_runs <= 0:
        artifacts.notes.append("overhead stage skipped: zero runs configured")
        return None
    runs = []
    cdf_pool: dict[str, list[float]] = {
        "conn_appdata_regular": [],
        "conn_appdata_adversarial": [],
        "conn_gap_regular": [],
        "conn_gap_adversarial": [],
    }
    for run_idx in range(ec.overhead_runs):
        run_seed = seed_for(ec.master_seed, f"overhead-{run_idx}")
        script = interactive_script(substream(run_seed, "overhead-script"))
        per_mode = {}
        for mode_name, mode in (
            ("regular", Regular()),
            ("adversarial", Adversarial(StuffSide.TWO_SIDE, tuple(two_side_library))),
        ):
            cfg = replace(ec.sim, mode=mode, seed=run_seed)
            result = simulate_session(script, cfg, session_index=0)
            conn_records = [
                tuple((m.time, m.direction, m.size) for m in conn.records()) for conn in result.conns
            ]
            appdata = [sum(r[2] for r in records) for records in conn_records]
            opens = [conn_open_close(records)[0] for records in conn_records]
            per_mode[mode_name] = {
                "appdata_bytes": int(sum(appdata)),
                "wire_bytes": int(sum(conn_wire_bytes(records, cfg) for records in conn_records)),
                "connections": len(conn_records),
                "runtime": result.runtime,
                "exchanges": result.n_exchanges(),
            }
            cdf_pool[f"conn_appdata_{mode_name}"].extend(appdata)
            cdf_pool[f"conn_gap_{mode_name}"].extend(
                round(b - a, 6) for a, b in zip(opens, opens[1:])
            )
        runs.append({"run": run_idx, **{f"{k}_{m}": v for m, d in per_mode.items() for k, v in d.items()}})

    def mean(values):
        return float(np.mean(values))

    reg_app = mean([r["appdata_bytes_regular"] for r in runs])
    adv_app = mean([r["appdata_bytes_adversarial"] for r in runs])
    reg_wire = mean([r["wire_bytes_regular"] for r in runs])
    adv_wire = mean([r["wire_bytes_adversarial"] for r in runs])
    reg_conns = mean([r["connections_regular"] for r in runs])
    adv_conns = mean([r["connections_adversarial"] for r in runs])
    runtime_delta = max(abs(r["runtime_regular"] - r["runtime_adversarial"]) for r in runs)

    summary = {
        "runs": ec.overhead_runs,
        "appdata_ratio": adv_app / reg_app,
        "appdata_bytes_regular_mean": reg_app,
        "appdata_bytes_adversarial_mean": adv_app,
        "wire_bytes_regular_mean": reg_wire,
        "wire_bytes_adversarial_mean": adv_wire,
        "wire_bytes_lower": adv_wire < reg_wire,
        "connection_ratio": reg_conns / adv_conns,
        "connections_regular_mean": reg_conns,
        "connections_adversarial_mean": adv_conns,
        "runtime_max_abs_delta": runtime_delta,
    }

    header = sorted(runs[0].keys())
    artifacts.save_rows("overhead/runs.csv", header, [[r[k] for k in header] for r in runs])
    for name, values in cdf_pool.items():
        values = sorted(values)
        rows = [[v, (i + 1) / len(values)] for i, v in enumerate(values)] if values else []
        artifacts.save_rows(f"overhead/cdf_{name}.csv", ["value", "cumulative_fraction"], rows)
    return {"per_run": runs, "summary": summary}


# ---------------------------------------------------------------------------
# whole experiment

def _config_echo(ec: ExperimentConfig) -> dict:
    sim = ec.sim
    return {
        "master_seed": ec.master_seed,
        "n_train": ec.n_train,
        "n_test": ec.n_test,
        "n_eval": ec.n_eval,
        "n_aware_regular": ec.n_aware_regular,
        "n_aware_randreq": ec.n_aware_randreq,
        "n_adv_eval": ec.n_adv_eval,
        "epsilon_sweep": list(ec.epsilon_sweep),
        "overhead_runs": ec.overhead_runs,
        "sim": {
            "poll_initial": sim.poll_initial,
            "poll_max": sim.poll_max,
            "rtt": sim.rtt,
            "exec_delay": sim.exec_delay,
            "get_base": sim.get_base,
            "post_base": sim.post_base,
            "response_base": sim.response_base,
            "url_jitter": sim.url_jitter,
            "response_jitter": sim.response_jitter,
            "handshake_wire_bytes": sim.handshake_wire_bytes,
            "mss": sim.mss,
            "tag_len": sim.size_model.tag_len,
            "block_len": sim.size_model.block_len,
        },
        "web": dict(vars(ec.web)),
        "train": {
            "hidden_sizes": list(ec.train.hidden_sizes),
            "learning_rate": ec.train.learning_rate,
            "dropout_rate": ec.train.dropout_rate,
            "batch_size": ec.train.batch_size,
            "max_epochs": ec.train.max_epochs,
            "val_fraction": ec.train.val_fraction,
            "patience": ec.train.patience,
        },
    }


def run_full_experiment(ec: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    artifacts = Artifacts(out_dir)
    tm1, _baseline = run_threat_model_1(ec, artifacts)
    tm2, _aware, best_libs = run_threat_model_2(ec, artifacts)
    overhead = run_overhead(ec, best_libs[StuffSide.TWO_SIDE], artifacts)

    report = {"config": _config_echo(ec), "threat_model_1": tm1, "threat_model_2": tm2}
    if overhead is not None:
        report["overhead"] = overhead
    if artifacts.root is not None:
        with open(artifacts.root / "report.json", "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")
        artifacts.files.append("report.json")
        artifacts.write_manifest()
    return report


def report_bytes(report: dict) -> bytes:
    """Canonical serialization used by the determinism checks."""
    buf = io.StringIO()
    json.dump(report, buf, sort_keys=True, indent=1)
    buf.write("\n")
    return buf.getvalue().encode()

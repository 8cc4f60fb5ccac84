"""Experiment orchestration: config, seeded trials, summaries and report files.

Randomness is split up front with :class:`numpy.random.SeedSequence`: one
stream builds the reference bank and each trial gets its own child stream,
so a trial's outcome does not depend on which thread runs it or in what
order.  Wall-clock timings are kept out of ``results.json`` (they go to
``timings.json`` and ``summary.csv``) so that file is byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from posekit.errors import IoFailure, PoseKitError
from posekit.geometry import (
    Intrinsics,
    NormalizedModel,
    Pose,
    cube_mesh,
    geodesic_distance,
    icosphere_mesh,
    normalize_model,
    random_rotation,
)
from posekit.meshio import load_mesh
from posekit.metrics import THRESHOLDS, accuracy_curve, auc_add, evaluate_pose, threshold_accuracy
from posekit.predictors import NoisyOraclePredictor, OraclePredictor, SearchPredictor
from posekit.reference_bank import ReferenceBank, build_bank
from posekit.refinement import QueryContext, iterative_refine, multi_reference_refine
from posekit.scenes import QueryObservation, Scene, render_query, sample_occluder, sample_scene

log = logging.getLogger(__name__)

AUC_MAX = 0.10
STAGES = ("candidate0", "medoid", "final")
BUILTIN_MESHES = {
    "builtin:cube": lambda: cube_mesh(0.1),
    "builtin:sphere": lambda: icosphere_mesh(0.05, 2),
}


@dataclass
class ExperimentConfig:
    mesh: str = "builtin:cube"
    object_id: str = "object"
    symmetric: bool = False
    N: int = 5
    M: int = 4
    iterations: int = 4
    raster: int = 64
    predictor: str = "oracle"
    trials: int = 10
    seed: int = 0
    pool_size: int = 256
    depth_range: tuple[float, float] = (1.0, 1.3)
    focal_range: tuple[float, float] = (300.0, 400.0)
    margin: float = 0.1
    occlusion: bool = False
    occluder_mesh: str | None = None  # defaults to the object mesh
    mesh_scale: float = 1.0  # multiplies file coordinates, e.g. 0.001 for millimeters
    base_dir: str = field(default=".", compare=False)  # resolves relative mesh paths

    def __post_init__(self):
        self.depth_range = tuple(float(x) for x in self.depth_range)
        self.focal_range = tuple(float(x) for x in self.focal_range)
        for name in ("N", "M", "iterations", "trials", "pool_size"):
            if int(getattr(self, name)) < 1:
                raise PoseKitError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.raster < 8:
            raise PoseKitError(f"raster must be >= 8, got {self.raster}")
        if self.pool_size < self.M:
            raise PoseKitError(f"pool_size {self.pool_size} is smaller than M={self.M}")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise PoseKitError(f"invalid depth range {self.depth_range}")
        lo, hi = self.focal_range
        if not 0 < lo <= hi:
            raise PoseKitError(f"invalid focal range {self.focal_range}")
        if not 0 <= self.margin < 0.5:
            raise PoseKitError(f"margin must be in [0, 0.5), got {self.margin}")
        parse_predictor(self.predictor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d["depth_range"] = list(self.depth_range)
        d["focal_range"] = list(self.focal_range)
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise PoseKitError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise IoFailure(f"cannot read {p}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PoseKitError(f"{p.name} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise PoseKitError(f"{p.name} must hold a JSON object")
        return cls.from_dict(d, base_dir=str(p.resolve().parent))


def parse_predictor(spec: str) -> tuple[str, tuple[float, ...]]:
    """``oracle`` | ``noisy[:sigma_rot_deg,sigma_t_frac[,decay]]`` | ``search[:budget]``."""
    kind, _, rest = spec.partition(":")
    try:
        args = tuple(float(x) for x in rest.split(",")) if rest else ()
    except ValueError:
        raise PoseKitError(f"bad predictor arguments in {spec!r}") from None
    limits = {"oracle": 0, "noisy": 3, "search": 1}
    if kind not in limits or len(args) > limits[kind]:
        raise PoseKitError(f"unknown predictor spec {spec!r}")
    if kind == "noisy" and len(args) == 1:
        raise PoseKitError("noisy predictor needs both sigma_rot_deg and sigma_t_frac")
    if kind == "search" and args and args[0] < 1:
        raise PoseKitError("search budget must be >= 1")
    return kind, args


def make_predictor(
    spec: str,
    scene: Scene,
    obs: QueryObservation,
    model: NormalizedModel,
    n_freq: int,
    seed: int,
):
    """Build a per-query predictor.  Only the oracle kinds see the true pose."""
    kind, args = parse_predictor(spec)
    if kind == "oracle":
        return OraclePredictor(scene.gt_pose, scene.intrinsics)
    if kind == "noisy":
        sr, st, *decay = args or (10.0, 0.05)
        return NoisyOraclePredictor(
            scene.gt_pose, scene.intrinsics, sr, st, seed=seed, decay=decay[0] if decay else 1.0
        )
    K = scene.intrinsics
    return SearchPredictor(
        obs.geo,
        K,
        model,
        n_freq,
        raster=(K.height, K.width),
        budget=int(args[0]) if args else 2000,
        seed=seed,
        symmetric=scene.symmetric,
        weight=obs.weight,
    )


def resolve_mesh(ref: str, base_dir: str = ".", scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    if ref in BUILTIN_MESHES:
        v, f = BUILTIN_MESHES[ref]()
        return v, f
    p = Path(ref)
    if not p.is_absolute():
        p = Path(base_dir) / p
    v, f = load_mesh(p)
    return v * scale, f


def build_experiment_bank(config: ExperimentConfig, model: NormalizedModel, seed_seq) -> ReferenceBank:
    """FPS over a random rotation pool viewed head-on at mid depth, one camera per pose."""
    rng = np.random.default_rng(seed_seq)
    depth = 0.5 * sum(config.depth_range)
    size = config.raster
    pool, cams = [], []
    for _ in range(config.pool_size):
        pool.append(Pose(random_rotation(rng), [0.0, 0.0, depth]))
        cams.append(Intrinsics.square(rng.uniform(*config.focal_range), size / 2, size / 2, size, size))
    return build_bank(model, pool, cams, config.M, config.N, (size, size), config.object_id)


# ---------------------------------------------------------------------------
# records


def _pose_dict(P: Pose) -> dict:
    return {"R": P.R.ravel().tolist(), "t": P.t.tolist()}


def _pose_from(d: dict) -> Pose:
    return Pose(np.asarray(d["R"], dtype=np.float64).reshape(3, 3), d["t"])


@dataclass(frozen=True)
class ResultRecord:
    index: int
    seed: int
    scene: Scene
    P_m: Pose | None = None
    P_q: Pose | None = None
    history: tuple[Pose, ...] = ()
    candidates: tuple[Pose, ...] = ()
    errors: dict = field(default_factory=dict)  # stage -> {add, add_s, error, rot_err, trans_err}
    failure: str | None = None
    times_ms: dict = field(default_factory=dict, compare=False)

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {
            "index": self.index,
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "P_m": None if self.P_m is None else _pose_dict(self.P_m),
            "P_q": None if self.P_q is None else _pose_dict(self.P_q),
            "history": [_pose_dict(p) for p in self.history],
            "candidates": [_pose_dict(p) for p in self.candidates],
            "errors": {s: dict(self.errors[s]) for s in STAGES if s in self.errors},
            "failure": self.failure,
        }
        if include_timings:
            d["times_ms"] = dict(self.times_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(
            index=int(d["index"]),
            seed=int(d["seed"]),
            scene=Scene.from_dict(d["scene"]),
            P_m=None if d["P_m"] is None else _pose_from(d["P_m"]),
            P_q=None if d["P_q"] is None else _pose_from(d["P_q"]),
            history=tuple(_pose_from(p) for p in d["history"]),
            candidates=tuple(_pose_from(p) for p in d["candidates"]),
            errors={k: dict(v) for k, v in d["errors"].items()},
            failure=d["failure"],
            times_ms=dict(d.get("times_ms", {})),
        )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[ResultRecord]
    summary: dict  # deterministic
    timing: dict  # mean milliseconds per stage


def _stage_errors(P: Pose, scene: Scene, model: NormalizedModel) -> dict:
    rep = evaluate_pose(P, scene.gt_pose, model, scene.symmetric)
    return {
        "add": rep.add,
        "add_s": rep.add_s,
        "error": rep.error,
        "rot_err": geodesic_distance(P.R, scene.gt_pose.R),
        "trans_err": float(np.linalg.norm(P.t - scene.gt_pose.t)),
    }


class _Context:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        v, f = resolve_mesh(config.mesh, config.base_dir, config.mesh_scale)
        self.model = normalize_model(v, f)
        self.occluder_model = self.model
        if config.occlusion and config.occluder_mesh:
            v, f = resolve_mesh(config.occluder_mesh, config.base_dir, config.mesh_scale)
            self.occluder_model = normalize_model(v, f)
        bank_ss, trial_ss = np.random.SeedSequence(config.seed).spawn(2)
        t0 = time.perf_counter()
        self.bank = build_experiment_bank(config, self.model, bank_ss)
        self.bank_ms = (time.perf_counter() - t0) * 1e3
        self.trial_seeds = [int(s.generate_state(1)[0]) for s in trial_ss.spawn(config.trials)]


def run_trial(ctx: _Context, index: int) -> ResultRecord:
    cfg = ctx.config
    seed = ctx.trial_seeds[index]
    rng = np.random.default_rng(seed)
    scene = sample_scene(cfg, rng, seed)
    try:
        if cfg.occlusion:
            mesh_ref = cfg.occluder_mesh or cfg.mesh
            scene = sample_occluder(scene, ctx.model, ctx.occluder_model, rng, mesh_ref)
        t0 = time.perf_counter()
        obs = render_query(scene, ctx.model, cfg.N, ctx.occluder_model)
        query = QueryContext(scene.intrinsics, obs.feature, scene.symmetric)
        predictor = make_predictor(cfg.predictor, scene, obs, ctx.model, cfg.N, seed)
        t1 = time.perf_counter()
        mr = multi_reference_refine(query, ctx.bank, predictor)
        t2 = time.perf_counter()
        trace = iterative_refine(query, mr.pose, predictor, ctx.model, cfg.N, cfg.iterations, (cfg.raster, cfg.raster))
        t3 = time.perf_counter()
    except PoseKitError as exc:
        log.warning("trial %d failed: %s", index, exc)
        return ResultRecord(index, seed, scene, failure=f"{type(exc).__name__}: {exc}")
    times = {
        "query": (t1 - t0) * 1e3,
        "multi_reference": (t2 - t1) * 1e3,
        "iterative": (t3 - t2) * 1e3,
        "total": (t3 - t0) * 1e3,
    }
    errors = {
        "candidate0": _stage_errors(mr.candidates[0].pose, scene, ctx.model),
        "medoid": _stage_errors(mr.pose, scene, ctx.model),
        "final": _stage_errors(trace.pose, scene, ctx.model),
    }
    return ResultRecord(
        index,
        seed,
        scene,
        mr.pose,
        trace.pose,
        trace.history,
        tuple(c.pose for c in mr.candidates),
        errors,
        None,
        times,
    )


def _stage_values(records: list[ResultRecord], stage: str, key: str) -> np.ndarray:
    # failed trials count as unbounded error
    return np.array([r.errors[stage][key] if r.ok else np.inf for r in records], dtype=np.float64)


def summarize(records: list[ResultRecord], diameter: float) -> dict:
    """Deterministic summary: ADD(-S) accuracies, AUC and the medoid comparison."""
    summary: dict = {"trials": len(records), "failed": sum(not r.ok for r in records)}
    if not records:
        return summary
    final = _stage_values(records, "final", "error")
    for k in THRESHOLDS:
        summary[f"accuracy_{k:g}d"] = threshold_accuracy(final, diameter, k)
    summary["auc"] = auc_add(final, AUC_MAX)
    ok = [r for r in records if r.ok]
    if ok:
        comparison = {}
        for stage in ("candidate0", "medoid"):
            comparison[stage] = {
                key: float(_stage_values(ok, stage, key).mean()) for key in ("rot_err", "trans_err", "error")
            }
        e0 = _stage_values(ok, "candidate0", "rot_err")
        em = _stage_values(ok, "medoid", "rot_err")
        comparison["medoid_win_rate"] = float((em < e0).mean())
        comparison["tie_rate"] = float((em == e0).mean())
        m0 = comparison["candidate0"]["rot_err"]
        comparison["rot_err_reduction"] = float(1.0 - comparison["medoid"]["rot_err"] / m0) if m0 > 0 else 0.0
        summary["medoid_vs_candidate0"] = comparison
    return summary


def _timing(records: list[ResultRecord]) -> dict:
    ok = [r for r in records if r.ok]
    keys = ("multi_reference", "iterative", "total")
    if not ok:
        return {k: float("nan") for k in keys}
    return {k: float(np.mean([r.times_ms[k] for r in ok])) for k in keys}


def thread_count() -> int:
    raw = os.environ.get("POSEKIT_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise PoseKitError(f"POSEKIT_THREADS must be an integer, got {raw!r}") from None


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    ctx = _Context(config)
    n = threads if threads is not None else thread_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(lambda i: run_trial(ctx, i), range(config.trials)))
    else:
        records = [run_trial(ctx, i) for i in range(config.trials)]
    records.sort(key=lambda r: r.index)
    return ExperimentResult(config, records, summarize(records, ctx.model.diameter), _timing(records))


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    return format(float(x), ".17g")


def emit_reports(result: ExperimentResult, directory) -> Path:
    """Write ``results.json``, ``timings.json``, ``summary.csv``, ``comparison.csv`` and ``curves.csv``."""
    d = Path(directory)
    records = result.records
    try:
        d.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": result.config.to_dict(),
            "summary": result.summary,
            "records": [r.to_dict() for r in records],
        }
        (d / "results.json").write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n")
        timings = {"mean_ms": result.timing, "per_trial_ms": [r.times_ms for r in records]}
        (d / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")

        with open(d / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            if records:
                for k in THRESHOLDS:
                    w.writerow([f"accuracy_{k:g}d", _fmt(result.summary[f"accuracy_{k:g}d"])])
                w.writerow([f"auc_{AUC_MAX:g}m", _fmt(result.summary["auc"])])
                for stage, ms in result.timing.items():
                    w.writerow([f"mean_ms_{stage}", _fmt(ms)])

        with open(d / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "mean_rot_err_rad", "mean_trans_err_m", "mean_error_m"])
            cmp = result.summary.get("medoid_vs_candidate0")
            if cmp:
                for stage in ("candidate0", "medoid"):
                    c = cmp[stage]
                    w.writerow([stage, _fmt(c["rot_err"]), _fmt(c["trans_err"]), _fmt(c["error"])])

        with open(d / "curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold_m"] + [f"accuracy_{s}" for s in STAGES])
            if records:
                curves = [accuracy_curve(_stage_values(records, s, "error"), AUC_MAX)[1] for s in STAGES]
                th = accuracy_curve([], AUC_MAX)[0]
                for i, t in enumerate(th):
                    w.writerow([_fmt(t)] + [_fmt(c[i]) for c in curves])
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {d}: {exc}") from exc
    return d


def load_results(path) -> tuple[dict, list[ResultRecord]]:
    p = Path(path)
    try:
        payload = json.loads(p.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {p}: {exc}") from exc
    return payload["summary"], [ResultRecord.from_dict(r) for r in payload["records"]]

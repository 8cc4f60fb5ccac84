"""Command-line entry point: ``posekit <subcommand> ...`` or ``python -m posekit``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from posekit.errors import IoFailure, PoseKitError
from posekit.experiment import (
    ExperimentConfig,
    _stage_errors,
    emit_reports,
    make_predictor,
    resolve_mesh,
    run_experiment,
)
from posekit.geometry import Intrinsics, Pose, normalize_model, random_rotation
from posekit.meshio import write_ply
from posekit.reference_bank import build_bank, load_bank, save_bank, space_carve
from posekit.refinement import QueryContext, iterative_refine, multi_reference_refine
from posekit.rendering import FeatureMap
from posekit.scenes import Scene, load_scene, render_query, sample_scene, save_scene

log = logging.getLogger("posekit")


def _pose_json(P: Pose) -> dict:
    return {"R": P.R.ravel().tolist(), "t": P.t.tolist()}


def _write_json(path: Path, payload) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def cmd_gen_refs(args) -> None:
    v, f = resolve_mesh(args.mesh, scale=args.mesh_scale)
    model = normalize_model(v, f)
    rng = np.random.default_rng(args.seed)
    size = args.raster
    lo, hi = args.focal
    pool = [Pose(random_rotation(rng), [0.0, 0.0, args.depth]) for _ in range(args.pool_size)]
    cams = [Intrinsics.square(rng.uniform(lo, hi), size / 2, size / 2, size, size) for _ in pool]
    object_id = args.object_id or Path(args.mesh).stem.split(":")[-1]
    bank = build_bank(model, pool, cams, args.count, args.frequencies, (size, size), object_id)
    save_bank(bank, args.out)
    print(f"wrote {bank.M} references for {object_id!r} to {args.out}")


def cmd_refine(args) -> None:
    bank = load_bank(args.bank)
    scene = load_scene(args.scene)
    if (scene.intrinsics.height, scene.intrinsics.width) != tuple(bank.raster):
        raise PoseKitError(f"scene raster does not match the bank raster {bank.raster}")
    occluder_model = None
    if scene.occluder is not None:
        base = str(Path(args.scene).resolve().parent)
        ref = scene.occluder.mesh
        occluder_model = bank.model if ref == "same" else normalize_model(*resolve_mesh(ref, base))
    obs = render_query(scene, bank.model, bank.n_freq, occluder_model)
    query = QueryContext(scene.intrinsics, obs.feature, scene.symmetric)
    predictor = make_predictor(args.predictor, scene, obs, bank.model, bank.n_freq, args.seed)
    mr = multi_reference_refine(query, bank, predictor)
    trace = iterative_refine(query, mr.pose, predictor, bank.model, bank.n_freq, args.iters, bank.raster)
    payload = {
        "scene": scene.to_dict(),
        "predictor": args.predictor,
        "P_m": _pose_json(mr.pose),
        "P_q": _pose_json(trace.pose),
        "history": [_pose_json(p) for p in trace.history],
        "candidates": [_pose_json(c.pose) for c in mr.candidates],
        "errors": {
            "medoid": _stage_errors(mr.pose, scene, bank.model),
            "final": _stage_errors(trace.pose, scene, bank.model),
        },
    }
    _write_json(Path(args.out), payload)
    e = payload["errors"]["final"]
    print(f"ADD(-S) {e['error']:.6g} m ({e['error'] / bank.model.diameter:.4g} d)")


def cmd_run(args) -> None:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    result = run_experiment(config)
    emit_reports(result, args.out)
    s = result.summary
    if result.records:
        print(
            f"{s['trials']} trials, {s['failed']} failed; ADD(-S) "
            f"0.02d {s['accuracy_0.02d']:.3f}  0.05d {s['accuracy_0.05d']:.3f}  "
            f"0.1d {s['accuracy_0.1d']:.3f}  AUC {s['auc']:.4f}"
        )


def _load_mask(path: Path) -> np.ndarray:
    try:
        if path.suffix == ".npy":
            return np.load(path)
        if path.suffix == ".fmap":
            return FeatureMap.read(path).data[0]
    except (OSError, ValueError) as exc:
        if isinstance(exc, PoseKitError):
            raise
        raise IoFailure(f"cannot read mask {path}: {exc}") from exc
    raise PoseKitError(f"mask {path.name}: use .npy or .fmap")


def cmd_carve(args) -> None:
    d = Path(args.views)
    try:
        spec = json.loads((d / "views.json").read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {d / 'views.json'}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PoseKitError(f"views.json is not valid JSON: {exc}") from exc
    try:
        views = [
            (
                _load_mask(d / v["mask"]),
                Pose(np.asarray(v["pose"]["R"], dtype=np.float64).reshape(3, 3), v["pose"]["t"]),
                Intrinsics.from_dict(v["K"]),
            )
            for v in spec["views"]
        ]
        scale = float(spec.get("scale", 1.0))
        offset = spec.get("offset", [0.0, 0.0, 0.0])
    except (KeyError, TypeError) as exc:
        raise PoseKitError(f"views.json has missing or invalid fields: {exc!r}") from exc
    pts = space_carve(views, args.resolution, scale, offset)
    write_ply(args.out, pts * scale + np.asarray(offset, dtype=np.float64))
    print(f"carved {len(pts)} surface voxels into {args.out}")


def cmd_synth(args) -> None:
    config = ExperimentConfig(
        mesh=args.mesh,
        object_id=args.object_id or Path(args.mesh).stem.split(":")[-1],
        symmetric=args.symmetric,
        N=args.frequencies,
        raster=args.raster,
    )
    v, f = resolve_mesh(args.mesh, scale=args.mesh_scale)
    model = normalize_model(v, f)
    out = Path(args.out)
    seeds = np.random.SeedSequence(args.seed).spawn(args.trials)
    for i, ss in enumerate(seeds):
        seed = int(ss.generate_state(1)[0])
        scene: Scene = sample_scene(config, seed)
        save_scene(scene, out / f"scene_{i:04d}.json")
        obs = render_query(scene, model, args.frequencies)
        try:
            obs.feature.write(out / f"query_{i:04d}.fmap")
        except OSError as exc:
            raise IoFailure(f"cannot write query {i}: {exc}") from exc
    print(f"wrote {args.trials} scenes to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posekit", description="Render-and-compare pose refinement toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-refs", help="select and render a reference bank")
    g.add_argument("--mesh", required=True, help="PLY/OBJ path or builtin:cube / builtin:sphere")
    g.add_argument("--count", type=int, default=4, help="number of references M")
    g.add_argument("--frequencies", type=int, default=5, help="encoding frequencies N")
    g.add_argument("--raster", type=int, default=64)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--pool-size", type=int, default=256)
    g.add_argument("--focal", type=float, nargs=2, default=(300.0, 400.0), metavar=("LO", "HI"))
    g.add_argument("--depth", type=float, default=1.15)
    g.add_argument("--mesh-scale", type=float, default=1.0)
    g.add_argument("--object-id")
    g.set_defaults(func=cmd_gen_refs)

    r = sub.add_parser("refine", help="refine one scene against a bank")
    r.add_argument("--bank", required=True)
    r.add_argument("--scene", required=True)
    r.add_argument("--predictor", default="oracle", help="oracle | noisy:SR,ST | search:BUDGET")
    r.add_argument("--iters", type=int, default=4)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("run", help="run a seeded experiment and write reports")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, help="overrides the config seed")
    e.set_defaults(func=cmd_run)

    c = sub.add_parser("carve", help="space-carve a point model from silhouettes")
    c.add_argument("--views", required=True, help="directory holding views.json and masks")
    c.add_argument("--resolution", type=int, default=32)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_carve)

    s = sub.add_parser("synth", help="sample synthetic scenes and their query features")
    s.add_argument("--mesh", required=True)
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--frequencies", type=int, default=5)
    s.add_argument("--raster", type=int, default=64)
    s.add_argument("--symmetric", action="store_true")
    s.add_argument("--mesh-scale", type=float, default=1.0)
    s.add_argument("--object-id")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PoseKitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Synthetic query scenes: sampling, occluders, query feature rendering, JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from posekit.errors import IoFailure, PoseKitError
from posekit.geometry import Intrinsics, NormalizedModel, Pose, random_rotation
from posekit.losses import error_target
from posekit.rendering import (
    FeatureMap,
    RenderResult,
    assemble_query,
    composite_occlusion,
    encode_geometric,
    render,
    shade_rgb,
)

OVERLAP_RANGE = (0.2, 0.6)
OCCLUDER_ATTEMPTS = 100


@dataclass(frozen=True)
class Occluder:
    mesh: str  # mesh reference, as in the experiment config
    pose: Pose


@dataclass(frozen=True)
class Scene:
    object_id: str
    gt_pose: Pose
    intrinsics: Intrinsics
    symmetric: bool = False
    seed: int = 0
    occluder: Occluder | None = None

    def to_dict(self) -> dict:
        P = self.gt_pose
        d = {
            "object": self.object_id,
            "pose": {"R": P.R.ravel().tolist(), "t": P.t.tolist()},
            "K": self.intrinsics.to_dict(),
            "symmetric": self.symmetric,
            "seed": int(self.seed),
        }
        if self.occluder is not None:
            O = self.occluder.pose
            d["occluder"] = {"mesh": self.occluder.mesh, "pose": {"R": O.R.ravel().tolist(), "t": O.t.tolist()}}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        def pose(p):
            return Pose(np.asarray(p["R"], dtype=np.float64).reshape(3, 3), np.asarray(p["t"], dtype=np.float64))

        if not isinstance(d, dict):
            raise PoseKitError(f"a scene must be a JSON object, got {type(d).__name__}")
        try:
            occ = d.get("occluder")
            return cls(
                object_id=str(d["object"]),
                gt_pose=pose(d["pose"]),
                intrinsics=Intrinsics.from_dict(d["K"]),
                symmetric=bool(d.get("symmetric", False)),
                seed=int(d.get("seed", 0)),
                occluder=None if occ is None else Occluder(str(occ["mesh"]), pose(occ["pose"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PoseKitError):
                raise
            raise PoseKitError(f"invalid scene description: {exc!r}") from exc


def save_scene(scene: Scene, path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(scene.to_dict(), indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write {p}: {exc}") from exc
    return p


def load_scene(path) -> Scene:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {p}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PoseKitError(f"{p.name} is not valid JSON: {exc}") from exc
    return Scene.from_dict(d)


def sample_scene(config, rng: np.random.Generator | int, seed: int | None = None) -> Scene:
    """Draw a random object pose and camera.

    ``config`` needs ``depth_range``, ``focal_range``, ``raster``,
    ``object_id`` and ``symmetric``; ``margin`` (fraction of the raster kept
    free between the projected object center and the border) defaults to 0.1.
    Passing an int as ``rng`` seeds a fresh generator and records the seed.
    """
    if not isinstance(rng, np.random.Generator):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(int(rng))
    size = int(config.raster)
    margin = float(getattr(config, "margin", 0.1))
    R = random_rotation(rng)
    z = rng.uniform(*config.depth_range)
    f = rng.uniform(*config.focal_range)
    center = size / 2.0
    cx, cy = center + rng.uniform(-0.25, 0.25, 2) * center
    u, v = rng.uniform(margin * size, (1.0 - margin) * size, 2)
    t = np.array([(u - cx) / f * z, (v - cy) / f * z, z])
    K = Intrinsics.square(f, cx, cy, size, size)
    return Scene(config.object_id, Pose(R, t), K, bool(config.symmetric), int(seed or 0))


def occlusion_overlap(target: RenderResult, occluder: RenderResult) -> float:
    """Fraction of the target's amodal area hidden behind the occluder."""
    amodal = target.amodal_bool()
    area = amodal.sum()
    if area == 0:
        return 0.0
    front = occluder.amodal_bool() & (occluder.depth < target.depth)
    return float((front & amodal).sum() / area)


def sample_occluder(
    scene: Scene,
    model: NormalizedModel,
    occluder_model: NormalizedModel,
    rng: np.random.Generator,
    mesh_ref: str = "same",
    overlap: tuple[float, float] = OVERLAP_RANGE,
    attempts: int = OCCLUDER_ATTEMPTS,
) -> Scene:
    """Rejection-sample an occluder pose hiding ``overlap`` of the target.

    The occluder sits between 55% and 85% of the target's depth, centered
    near the target's projection.  Returns the scene unchanged if no draw
    lands in range within ``attempts``.
    """
    K = scene.intrinsics
    P = scene.gt_pose
    target = render(model, P, K, K.height, K.width)
    if not target.amodal_bool().any():
        return scene
    u0 = K.fx * P.t[0] / P.t[2] + K.cx
    v0 = K.fy * P.t[1] / P.t[2] + K.cy
    reach = K.fx * 0.5 * (model.diameter + occluder_model.diameter) / P.t[2]
    for _ in range(attempts):
        z = P.t[2] * rng.uniform(0.55, 0.85)
        du, dv = rng.uniform(-reach, reach, 2)
        t = np.array([(u0 + du - K.cx) / K.fx * z, (v0 + dv - K.cy) / K.fy * z, z])
        O = Pose(random_rotation(rng), t)
        try:
            occ = render(occluder_model, O, K, K.height, K.width)
        except PoseKitError:
            continue
        if overlap[0] <= occlusion_overlap(target, occ) <= overlap[1]:
            return Scene(scene.object_id, P, K, scene.symmetric, scene.seed, Occluder(mesh_ref, O))
    return scene


@dataclass(frozen=True, eq=False)
class QueryObservation:
    """Ground-truth query features as a perfect feature extractor would emit them."""

    feature: FeatureMap  # QUERY layout
    geo: FeatureMap  # GEO, restricted to visible pixels
    render: RenderResult  # target render; modal mask accounts for the occluder
    rgb: FeatureMap
    weight: np.ndarray = field(repr=False)  # 0 where the object is occluded, else 1


def render_query(
    scene: Scene,
    model: NormalizedModel,
    n_freq: int,
    occluder_model: NormalizedModel | None = None,
) -> QueryObservation:
    K = scene.intrinsics
    h, w = K.height, K.width
    r = render(model, scene.gt_pose, K, h, w)
    rgb = shade_rgb(r)
    if scene.occluder is not None:
        if occluder_model is None:
            raise ValueError("scene has an occluder but no occluder model was given")
        o = render(occluder_model, scene.occluder.pose, K, h, w)
        rgb, r = composite_occlusion(r, rgb, o, shade_rgb(o))
    G_full = encode_geometric(r, n_freq)
    G = FeatureMap(G_full.data * r.modal.data, "GEO")
    E = error_target(G, G)
    F = assemble_query(G, E, rgb, r.modal, r.amodal)
    weight = 1.0 - (r.amodal_bool() & ~r.modal_bool()).astype(np.float64)
    return QueryObservation(F, G, r, rgb, weight)

"""Offline reference selection, rendering and persistence; space carving.

On-disk bank layout (one directory per object)::

    bank.json      manifest: object_id, M, N, raster, model, and per
                   reference its pose (12 floats, [R|t] row-major),
                   intrinsics (fx, fy, cx, cy, w, h), file name and sha256
    ref_<i>.fmap   REF feature map of reference i in the fmap wire format
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from posekit.errors import CorruptBank, EmptyCarving, InsufficientPool, IoFailure
from posekit.geometry import Intrinsics, NormalizedModel, Pose, _diameter, pairwise_geodesic
from posekit.rendering import FeatureMap, RenderResult, reference_feature

DEFAULT_M = 4
DEFAULT_N = 5


@dataclass(frozen=True, eq=False)
class Reference:
    pose: Pose
    intrinsics: Intrinsics
    feature: FeatureMap
    render: RenderResult


@dataclass(frozen=True, eq=False)
class ReferenceBank:
    object_id: str
    model: NormalizedModel
    n_freq: int
    references: tuple[Reference, ...]
    raster: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if not self.references:
            raise ValueError("a bank needs at least one reference")
        for r in self.references:
            if r.feature.layout != "REF" or r.feature.n_freq != self.n_freq:
                raise ValueError("all references must carry REF features with the bank's N")
            if (r.feature.height, r.feature.width) != tuple(self.raster):
                raise ValueError("all references must share the bank raster size")

    @property
    def M(self) -> int:
        return len(self.references)

    def __eq__(self, other):
        if not isinstance(other, ReferenceBank):
            return NotImplemented
        m1, m2 = self.model, other.model
        return (
            self.object_id == other.object_id
            and self.n_freq == other.n_freq
            and tuple(self.raster) == tuple(other.raster)
            and np.array_equal(m1.vertices, m2.vertices)
            and np.array_equal(m1.triangles, m2.triangles)
            and m1.scale == m2.scale
            and m1.diameter == m2.diameter
            and np.array_equal(m1.center_offset, m2.center_offset)
            and len(self.references) == len(other.references)
            and all(
                a.pose == b.pose and a.intrinsics == b.intrinsics and a.feature == b.feature
                for a, b in zip(self.references, other.references)
            )
        )

    __hash__ = None


def fps_select(pool: Sequence[Pose], M: int, seed: int | None = None, random_first: bool = False) -> list[int]:
    """Greedy farthest-point sampling of poses under rotation geodesic distance.

    The first pick is the pose with the largest summed distance to the rest
    of the pool (or a seeded random pick with ``random_first``); each later
    pick maximizes its distance to the nearest already-selected pose.  Ties
    go to the lowest index.
    """
    n = len(pool)
    if M < 1 or n < M:
        raise InsufficientPool(f"cannot pick {M} from a pool of {n}")
    D = pairwise_geodesic([p.R for p in pool])
    if random_first:
        first = int(np.random.default_rng(seed).integers(n))
    else:
        first = int(np.argmax(D.sum(axis=1)))
    chosen = [first]
    mind = D[first].copy()
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    while len(chosen) < M:
        score = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        taken[nxt] = True
        mind = np.minimum(mind, D[nxt])
    return chosen


def build_bank(
    model: NormalizedModel,
    pose_pool: Sequence[Pose],
    intrinsics: Intrinsics | Sequence[Intrinsics],
    M: int = DEFAULT_M,
    n_freq: int = DEFAULT_N,
    raster: tuple[int, int] = (64, 64),
    object_id: str = "object",
    seed: int | None = None,
) -> ReferenceBank:
    """Select ``M`` diverse poses from the pool and render their REF features.

    ``intrinsics`` is either one camera for all poses or one per pool entry.
    """
    if isinstance(intrinsics, Intrinsics):
        intrinsics = [intrinsics] * len(pose_pool)
    if len(intrinsics) != len(pose_pool):
        raise ValueError("need one Intrinsics per pool pose")
    h, w = raster
    refs = []
    for i in fps_select(pose_pool, M, seed):
        F, r = reference_feature(model, pose_pool[i], intrinsics[i], n_freq, h, w)
        refs.append(Reference(pose_pool[i], intrinsics[i], F, r))
    return ReferenceBank(object_id, model, int(n_freq), tuple(refs), (int(h), int(w)))


# ---------------------------------------------------------------------------
# persistence


def _model_to_json(m: NormalizedModel) -> dict:
    return {
        "vertices": m.vertices.ravel().tolist(),
        "triangles": m.triangles.ravel().tolist(),
        "scale": m.scale,
        "center_offset": m.center_offset.tolist(),
        "diameter": m.diameter,
    }


def _model_from_json(d: dict) -> NormalizedModel:
    return NormalizedModel(
        vertices=np.asarray(d["vertices"], dtype=np.float64).reshape(-1, 3),
        triangles=np.asarray(d["triangles"], dtype=np.int64).reshape(-1, 3),
        diameter=d["diameter"],
        scale=d["scale"],
        center_offset=d["center_offset"],
    )


def _intrinsics_list(K: Intrinsics) -> list:
    return [K.fx, K.fy, K.cx, K.cy, K.width, K.height]


def save_bank(bank: ReferenceBank, directory) -> Path:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, ref in enumerate(bank.references):
            name = f"ref_{i}.fmap"
            blob = ref.feature.to_bytes()
            (d / name).write_bytes(blob)
            entries.append(
                {
                    "pose": ref.pose.to_list(),
                    "intrinsics": _intrinsics_list(ref.intrinsics),
                    "file": name,
                    "sha256": hashlib.sha256(blob).hexdigest(),
                }
            )
        manifest = {
            "object_id": bank.object_id,
            "M": bank.M,
            "N": bank.n_freq,
            "raster": list(bank.raster),
            "model": _model_to_json(bank.model),
            "references": entries,
        }
        (d / "bank.json").write_text(json.dumps(manifest, indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write bank to {d}: {exc}") from exc
    return d


def load_bank(directory) -> ReferenceBank:
    d = Path(directory)
    try:
        manifest = json.loads((d / "bank.json").read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {d / 'bank.json'}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptBank(f"bank.json is not valid JSON: {exc}") from exc
    try:
        M = int(manifest["M"])
        n_freq = int(manifest["N"])
        h, w = (int(x) for x in manifest["raster"])
        entries = manifest["references"]
        model = _model_from_json(manifest["model"])
        object_id = str(manifest["object_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBank(f"bank.json is missing or has invalid fields: {exc}") from exc
    if len(entries) != M:
        raise CorruptBank(f"manifest declares M={M} but lists {len(entries)} references")

    refs = []
    for i, e in enumerate(entries):
        path = d / e.get("file", f"ref_{i}.fmap")
        if not path.exists():
            raise CorruptBank(f"reference file {path.name} is missing")
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        if "sha256" in e and hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise CorruptBank(f"checksum mismatch for {path.name}")
        F = FeatureMap.from_bytes(blob)
        if F.layout != "REF" or F.n_freq != n_freq or (F.height, F.width) != (h, w):
            raise CorruptBank(f"{path.name} does not match the manifest's N/raster")
        try:
            pose = Pose.from_list(e["pose"])
            fx, fy, cx, cy, kw, kh = e["intrinsics"]
            K = Intrinsics(float(fx), float(fy), float(cx), float(cy), int(kw), int(kh))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptBank(f"reference {i} has invalid pose/intrinsics: {exc}") from exc
        _, r = reference_feature(model, pose, K, n_freq, h, w)
        refs.append(Reference(pose, K, F, r))
    return ReferenceBank(object_id, model, n_freq, tuple(refs), (h, w))


# ---------------------------------------------------------------------------
# space carving


def space_carve(
    views: Sequence[tuple[np.ndarray, Pose, Intrinsics]],
    resolution: int = 32,
    scale: float = 1.0,
    offset=(0.0, 0.0, 0.0),
    bounds: tuple[float, float] = (-1.0, 1.0),
) -> np.ndarray:
    """Surface voxel centers (normalized coords) of the silhouette-consistent hull.

    ``views`` holds (amodal mask ``(h, w)``, pose, intrinsics) triples.  A
    voxel survives if its center projects inside every mask (bilinear value
    above 0.5); surviving voxels with at least one non-surviving 6-neighbor
    (grid boundary included) form the surface.
    """
    if len(views) < 2:
        raise ValueError("space carving needs at least two views")
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    lo, hi = bounds
    pitch = (hi - lo) / resolution
    ax = lo + (np.arange(resolution) + 0.5) * pitch
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    centers = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    world = centers * scale + np.asarray(offset, dtype=np.float64)

    keep = np.ones(len(centers), dtype=bool)
    for mask, P, K in views:
        mask = np.asarray(mask, dtype=np.float64)
        cam = P.transform(world)
        z = cam[:, 2]
        front = z > 1e-9
        zs = np.where(front, z, 1.0)
        u = K.fx * cam[:, 0] / zs + K.cx
        v = K.fy * cam[:, 1] / zs + K.cy
        # pixel (i, j) is centered at (j + 0.5, i + 0.5)
        val = map_coordinates(mask, [v - 0.5, u - 0.5], order=1, mode="constant", cval=0.0)
        keep &= front & (val > 0.5)

    grid = keep.reshape(resolution, resolution, resolution)
    if not grid.any():
        raise EmptyCarving("no voxel is consistent with every silhouette")
    padded = np.pad(grid, 1, constant_values=False)
    interior = grid.copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    surface = grid & ~interior
    return centers[surface.ravel()]


def carved_model(points: np.ndarray, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> NormalizedModel:
    """Wrap carved surface points as a point-set model for splat rendering."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    off = np.asarray(offset, dtype=np.float64)
    diam = _diameter(pts * scale + off) if len(pts) > 1 else 0.0
    return NormalizedModel(pts, np.zeros((0, 3), dtype=np.int64), max(diam, 1e-12), scale, off)

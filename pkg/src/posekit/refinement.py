"""Intrinsics-untangled pose updates, medoid voting and the refinement pipeline.

A reference (or the current estimate) is moved to a query candidate by a
:class:`RefinementParams` delta:

* ``v_z`` rescales depth, corrected for the focal-length ratio between
  query and reference cameras;
* ``(v_x, v_y)`` shift the reference's projected object center in pixels,
  and the shifted center is lifted back through the *query* intrinsics;
* ``v_rot`` is a 6D rotation applied in the allocentric frame, so the same
  delta means the same apparent rotation wherever the object sits in the
  image.

Because the translation is composed on the image plane and the rotation in
the allocentric frame, references rendered with any camera can be used for
any query camera.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol

import numpy as np

from posekit.errors import EmptyCandidates
from posekit.geometry import (
    Intrinsics,
    NormalizedModel,
    Pose,
    allocentric_to_egocentric,
    egocentric_to_allocentric,
    geodesic_distance,
    matrix_to_rot6d,
    rot6d_to_matrix,
)
from posekit.rendering import FeatureMap, medoid_feature, split_channels

log = logging.getLogger(__name__)

_IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

DEFAULT_ITERATIONS = 4


@dataclass(frozen=True, eq=False)
class RefinementParams:
    """Rotation delta (6D) and image-plane translation/scale delta."""

    v_rot: np.ndarray = field(default_factory=lambda: _IDENTITY_6D.copy())
    v_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "v_rot", np.array(self.v_rot, dtype=np.float64).reshape(6))
        object.__setattr__(self, "v_xyz", np.array(self.v_xyz, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RefinementParams":
        return cls()

    def to_vector(self) -> np.ndarray:
        """9-vector ``(v_x, v_y, v_z, v_rot)``."""
        return np.concatenate([self.v_xyz, self.v_rot])

    @classmethod
    def from_vector(cls, x) -> "RefinementParams":
        x = np.asarray(x, dtype=np.float64)
        return cls(v_rot=x[3:9], v_xyz=x[:3])


@dataclass(frozen=True)
class Candidate:
    pose: Pose
    source_reference: int


def untangled_update(
    params: RefinementParams, ref_pose: Pose, ref_K: Intrinsics, query_K: Intrinsics
) -> Pose:
    """Move a reference pose by ``params`` into the query camera."""
    t_r = ref_pose.t
    if t_r[2] <= 0:
        raise ValueError(f"reference depth must be positive, got {t_r[2]}")
    vx, vy, vz = params.v_xyz
    t_cz = t_r[2] * (vz + 1.0) * query_K.focal / ref_K.focal
    o_r = ref_K.matrix @ t_r / t_r[2]
    o_c = o_r + np.array([vx, vy, 0.0])
    t_cxy = t_cz * (query_K.inverse @ o_c)[:2]
    t_c = np.array([t_cxy[0], t_cxy[1], t_cz])

    R_ra = egocentric_to_allocentric(ref_pose.R, t_r)
    R_ca = rot6d_to_matrix(params.v_rot) @ R_ra
    return Pose(allocentric_to_egocentric(R_ca, t_c), t_c)


def oracle_params(
    ref_pose: Pose, ref_K: Intrinsics, target_pose: Pose, target_K: Intrinsics
) -> RefinementParams:
    """Exact inverse of :func:`untangled_update`: the delta reaching ``target_pose``."""
    t_r, t_q = ref_pose.t, target_pose.t
    vz = (t_q[2] * ref_K.focal) / (t_r[2] * target_K.focal) - 1.0
    vxy = (target_K.matrix @ t_q / t_q[2] - ref_K.matrix @ t_r / t_r[2])[:2]
    R_ra = egocentric_to_allocentric(ref_pose.R, t_r)
    R_qa = egocentric_to_allocentric(target_pose.R, t_q)
    return RefinementParams(v_rot=matrix_to_rot6d(R_qa @ R_ra.T), v_xyz=[vxy[0], vxy[1], vz])


def plain_update(params: RefinementParams, pose: Pose, K: Intrinsics) -> Pose:
    """Single-camera update, used when estimate and query share intrinsics."""
    return untangled_update(params, pose, K, K)


def medoid_vote(candidates) -> Pose:
    """Per-component medoid: the rotation and the translation with the least
    summed distance to the other candidates, possibly from different ones.
    Ties resolve to the lowest index."""
    cands = list(candidates)
    if not cands:
        raise EmptyCandidates("no candidates to vote on")
    poses = [c.pose if isinstance(c, Candidate) else c for c in cands]
    n = len(poses)
    if n == 1:
        return poses[0]
    t = np.stack([p.t for p in poses])
    d_t = np.linalg.norm(t[:, None, :] - t[None, :, :], axis=-1).sum(axis=1)
    d_R = np.zeros(n)
    for i in range(n):
        for k in range(i + 1, n):
            g = geodesic_distance(poses[i].R, poses[k].R)
            d_R[i] += g
            d_R[k] += g
    return Pose(poses[int(np.argmin(d_R))].R, poses[int(np.argmin(d_t))].t)


# ---------------------------------------------------------------------------
# predictor contract


@dataclass(frozen=True, eq=False)
class QueryContext:
    """What a pose head sees of the query: its camera and its feature map."""

    K: Intrinsics
    feature: FeatureMap  # QUERY layout
    symmetric: bool = False

    @cached_property
    def parts(self) -> dict[str, FeatureMap]:
        return split_channels(self.feature)


@dataclass(frozen=True, eq=False)
class ReferenceContext:
    """A posed, rendered reference (REF layout) or current estimate (MEDOID)."""

    pose: Pose
    K: Intrinsics
    feature: FeatureMap
    index: int = 0
    iteration: int = 0  # 0 for the multi-reference stage, k >= 1 afterwards

    @cached_property
    def parts(self) -> dict[str, FeatureMap]:
        return split_channels(self.feature)


class Predictor(Protocol):
    thread_safe: bool

    def predict(self, query: QueryContext, ref: ReferenceContext) -> RefinementParams: ...


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class MultiReferenceResult:
    pose: Pose
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class RefinementTrace:
    pose: Pose
    history: tuple[Pose, ...]  # estimate after each iteration


def multi_reference_refine(
    query: QueryContext, bank, predictor: Predictor, max_workers: int = 1
) -> MultiReferenceResult:
    """One candidate per bank reference, then medoid voting."""
    refs = [
        ReferenceContext(r.pose, r.intrinsics, r.feature, index=i, iteration=0)
        for i, r in enumerate(bank.references)
    ]
    if not refs:
        raise EmptyCandidates("reference bank is empty")

    def one(ref: ReferenceContext) -> Candidate:
        params = predictor.predict(query, ref)
        return Candidate(untangled_update(params, ref.pose, ref.K, query.K), ref.index)

    if max_workers > 1 and getattr(predictor, "thread_safe", False):
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            cands = list(pool.map(one, refs))
    else:
        cands = [one(r) for r in refs]
    return MultiReferenceResult(medoid_vote(cands), tuple(cands))


def iterative_refine(
    query: QueryContext,
    initial: Pose,
    predictor: Predictor,
    model: NormalizedModel,
    n_freq: int,
    iterations: int = DEFAULT_ITERATIONS,
    raster: tuple[int, int] = (64, 64),
) -> RefinementTrace:
    """Re-render the estimate in the query camera and apply plain updates."""
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    h, w = raster
    pose = initial
    history = []
    for k in range(1, iterations + 1):
        F_m, _ = medoid_feature(model, pose, query.K, n_freq, h, w)
        ref = ReferenceContext(pose, query.K, F_m, index=-1, iteration=k)
        pose = plain_update(predictor.predict(query, ref), pose, query.K)
        history.append(pose)
        log.debug("iteration %d: t=%s", k, pose.t)
    return RefinementTrace(pose, tuple(history))

"""ADD / ADD-S pose errors, threshold accuracies and AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from posekit.errors import EmptyInput
from posekit.geometry import NormalizedModel, Pose

THRESHOLDS = (0.02, 0.05, 0.1)


def _model_points(model: NormalizedModel, max_vertices: int | None, seed: int) -> np.ndarray:
    v = model.vertices_m
    if max_vertices is not None and len(v) > max_vertices:
        idx = np.sort(np.random.default_rng(seed).choice(len(v), max_vertices, replace=False))
        v = v[idx]
    return v


def add(
    P_est: Pose, P_gt: Pose, model: NormalizedModel, max_vertices: int | None = None, seed: int = 0
) -> float:
    """Mean distance between corresponding model vertices (meters)."""
    v = _model_points(model, max_vertices, seed)
    return float(np.linalg.norm(P_est.transform(v) - P_gt.transform(v), axis=1).mean())


def add_s(
    P_est: Pose, P_gt: Pose, model: NormalizedModel, max_vertices: int | None = None, seed: int = 0
) -> float:
    """Mean distance from each estimated vertex to the nearest ground-truth vertex."""
    v = _model_points(model, max_vertices, seed)
    est, gt = P_est.transform(v), P_gt.transform(v)
    gt_sq = (gt**2).sum(axis=1)
    nearest = np.empty(len(est))
    # chunked brute force: exact, and memory stays bounded on dense meshes
    for i in range(0, len(est), 512):
        e = est[i : i + 512]
        d2 = (e**2).sum(axis=1)[:, None] - 2.0 * e @ gt.T + gt_sq[None, :]
        j = np.argmin(d2, axis=1)
        nearest[i : i + 512] = np.linalg.norm(e - gt[j], axis=1)
    return float(nearest.mean())


def threshold_accuracy(errors, diameter: float, k: float) -> float:
    """Fraction of errors strictly below ``k * diameter``."""
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(e) == 0:
        raise EmptyInput("no errors to score")
    if diameter <= 0:
        raise ValueError(f"diameter must be positive, got {diameter}")
    return float((e < k * diameter).mean())


def auc_add(errors, max_threshold: float = 0.10) -> float:
    """Area under the accuracy-vs-threshold curve on ``[0, max_threshold]``, normalized.

    The curve is a step function, so the integral is exact:
    each error ``e`` contributes ``max(0, max_threshold - e)``.
    """
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(e) == 0:
        raise EmptyInput("no errors to score")
    if max_threshold <= 0:
        raise ValueError(f"max_threshold must be positive, got {max_threshold}")
    # normalize per error first so the mean cannot round past 1
    return float(np.clip(1.0 - e / max_threshold, 0.0, 1.0).mean())


def accuracy_curve(errors, max_threshold: float = 0.10, samples: int = 101) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    th = np.linspace(0.0, max_threshold, samples)
    if len(e) == 0:
        return th, np.zeros_like(th)
    return th, (e[None, :] < th[:, None]).mean(axis=1)


@dataclass(frozen=True)
class PoseErrorReport:
    add: float
    add_s: float
    diameter: float
    symmetric: bool = False
    max_vertices: int | None = None

    @property
    def error(self) -> float:
        """ADD(-S): ADD-S for symmetric objects, ADD otherwise."""
        return self.add_s if self.symmetric else self.add

    @property
    def passes_002d(self) -> bool:
        return self.error < 0.02 * self.diameter

    @property
    def passes_005d(self) -> bool:
        return self.error < 0.05 * self.diameter

    @property
    def passes_01d(self) -> bool:
        return self.error < 0.1 * self.diameter


def evaluate_pose(
    P_est: Pose,
    P_gt: Pose,
    model: NormalizedModel,
    symmetric: bool = False,
    max_vertices: int | None = None,
) -> PoseErrorReport:
    return PoseErrorReport(
        add=add(P_est, P_gt, model, max_vertices),
        add_s=add_s(P_est, P_gt, model, max_vertices),
        diameter=model.diameter,
        symmetric=symmetric,
        max_vertices=max_vertices,
    )

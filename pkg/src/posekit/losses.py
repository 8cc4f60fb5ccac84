"""Training objectives and AdaIN, as plain numpy reference implementations.

Feature losses take either :class:`~posekit.rendering.FeatureMap` objects or
``(channels, h, w)`` arrays.  Masked L1 losses are means over the whole
raster (``h * w * channels``), not over masked pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from posekit.errors import NegativeLoss, ShapeMismatch
from posekit.geometry import NormalizedModel, Pose
from posekit.rendering import FeatureMap

DEFAULT_LAMBDA = 20.0
ADAIN_EPS = 1e-6

_GRID_XY = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
_GRID_Z = np.array([-1.0, 1.0])


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, FeatureMap) else x
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def _same_shape(*arrays) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


def masked_l1_geo(G, G_gt, modal_gt) -> float:
    g, gt, m = _arr(G), _arr(G_gt), _arr(modal_gt)
    _same_shape(g, gt)
    if m.shape != (1,) + g.shape[1:]:
        raise ShapeMismatch(f"mask {m.shape} does not match raster {g.shape[1:]}")
    return float(np.abs(m * (g - gt)).mean())


def error_target(G, G_gt) -> FeatureMap:
    """Per-channel absolute error of a geometric feature: the ERR target."""
    g, gt = _arr(G), _arr(G_gt)
    _same_shape(g, gt)
    return FeatureMap(np.abs(g - gt), "ERR")


def masked_l1_err(E, G, G_gt, modal_gt) -> float:
    g, gt = _arr(G), _arr(G_gt)
    _same_shape(g, gt)
    return masked_l1_geo(E, np.abs(g - gt), modal_gt)


def mask_l1(modal, modal_gt, amodal, amodal_gt) -> float:
    a, b, c, d = _arr(modal), _arr(modal_gt), _arr(amodal), _arr(amodal_gt)
    _same_shape(a, b)
    _same_shape(c, d)
    return float(np.abs(a - b).mean() + np.abs(c - d).mean())


def make_grid(P: Pose, model: NormalizedModel) -> np.ndarray:
    """The 4 x 4 x 2 lattice over the normalized cube, in the camera frame.

    Order is x fastest, then y, then z; returns ``(32, 3)`` meters.
    """
    z, y, x = np.meshgrid(_GRID_Z, _GRID_XY, _GRID_XY, indexing="ij")
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    return P.transform(model.denormalize(pts))


def grid_loss(P_est: Pose, P_gt: Pose, model: NormalizedModel) -> float:
    """Mean lattice-point distance plus the gap between translation norms."""
    g_est, g_gt = make_grid(P_est, model), make_grid(P_gt, model)
    match = np.linalg.norm(g_gt - g_est, axis=1).mean()
    dist = abs(np.linalg.norm(P_gt.t) - np.linalg.norm(P_est.t))
    return float(match + dist)


@dataclass(frozen=True)
class LossBreakdown:
    l_g: float
    l_e: float
    l_m: float
    l_pc: tuple[float, ...]
    l_pq: float
    total: float
    lam: float = DEFAULT_LAMBDA


def total_loss(
    l_g: float, l_e: float, l_m: float, l_pc: Sequence[float], l_pq: float, lam: float = DEFAULT_LAMBDA
) -> LossBreakdown:
    """Feature terms weighted by ``lam`` plus every candidate pose term and the final pose term."""
    parts = [l_g, l_e, l_m, l_pq, *l_pc]
    if any(p < 0 for p in parts):
        raise NegativeLoss(f"loss terms must be non-negative, got {parts}")
    total = lam * (l_g + l_e + l_m) + sum(l_pc) + l_pq
    return LossBreakdown(l_g, l_e, l_m, tuple(float(x) for x in l_pc), l_pq, float(total), lam)


def adain(X, alpha, beta) -> np.ndarray:
    """Adaptive instance normalization over ``(channels, h, w)``.

    Each channel is standardized by its own mean and population standard
    deviation, then scaled by ``alpha`` and shifted by ``beta``.  Constant
    channels use ``ADAIN_EPS`` as their deviation, so they map to ``beta``.
    Always returns float64.
    """
    x = _arr(X)
    C = x.shape[0]
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if alpha.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"alpha/beta need {C} entries, got {alpha.shape}, {beta.shape}")
    mu = x.mean(axis=(1, 2), keepdims=True)
    sigma = x.std(axis=(1, 2), keepdims=True)
    sigma = np.where(sigma > 1e-12, sigma, ADAIN_EPS)
    return alpha[:, None, None] * (x - mu) / sigma + beta[:, None, None]

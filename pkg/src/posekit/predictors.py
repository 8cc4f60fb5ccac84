"""Non-learned stand-ins for the pose-estimation head.

Every predictor maps ``(QueryContext, ReferenceContext)`` to
:class:`~posekit.refinement.RefinementParams`.

* :class:`OraclePredictor` knows the true query pose and returns the exact
  delta; it exists to verify the update algebra end to end.
* :class:`NoisyOraclePredictor` perturbs the oracle's target pose, which
  simulates a head whose per-reference estimates scatter.
* :class:`SearchPredictor` only sees the query's geometric feature and fits
  the delta by Nelder-Mead on a rendered-feature L1 objective.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize

from posekit import _kernels
from posekit.errors import PoseKitError
from posekit.geometry import (
    Intrinsics,
    NormalizedModel,
    Pose,
    egocentric_to_allocentric,
    matrix_to_rot6d,
    random_rotation,
    rot6d_to_matrix,
    so3_exp,
    view_rotation,
)
from posekit.rendering import FeatureMap, _raw_render_Rt
from posekit.refinement import (
    QueryContext,
    ReferenceContext,
    RefinementParams,
    oracle_params,
    untangled_update,
)

log = logging.getLogger(__name__)


class OraclePredictor:
    thread_safe = True

    def __init__(self, target_pose: Pose, target_K: Intrinsics):
        self.target_pose = target_pose
        self.target_K = target_K

    def predict(self, query: QueryContext, ref: ReferenceContext) -> RefinementParams:
        return oracle_params(ref.pose, ref.K, self.target_pose, self.target_K)


class NoisyOraclePredictor:
    """Oracle aimed at a randomly perturbed copy of the true pose.

    Rotation noise is an axis-angle vector with i.i.d. normal components of
    ``sigma_rot_deg``; translation noise is i.i.d. normal per axis with
    standard deviation ``sigma_t_frac * |t|``.  Both shrink by
    ``decay ** ref.iteration``.  The random stream is keyed on
    ``(seed, iteration, reference index)``, so results do not depend on the
    order in which references are processed.
    """

    thread_safe = True

    def __init__(
        self,
        target_pose: Pose,
        target_K: Intrinsics,
        sigma_rot_deg: float = 10.0,
        sigma_t_frac: float = 0.05,
        seed: int = 0,
        decay: float = 1.0,
    ):
        self.target_pose = target_pose
        self.target_K = target_K
        self.sigma_rot = np.deg2rad(sigma_rot_deg)
        self.sigma_t = sigma_t_frac
        self.seed = seed
        self.decay = decay

    def noisy_target(self, index: int, iteration: int) -> Pose:
        rng = np.random.default_rng([self.seed, iteration, index + 1])
        s = self.decay**iteration
        P = self.target_pose
        R = so3_exp(rng.normal(0.0, self.sigma_rot * s, 3)) @ P.R
        t = P.t + rng.normal(0.0, self.sigma_t * s * np.linalg.norm(P.t), 3)
        if t[2] <= 1e-6:
            t[2] = P.t[2]
        return Pose(R, t)

    def predict(self, query: QueryContext, ref: ReferenceContext) -> RefinementParams:
        noisy = self.noisy_target(ref.index, ref.iteration)
        return oracle_params(ref.pose, ref.K, noisy, self.target_K)


class _BudgetExhausted(Exception):
    """Raised inside the objective once the budget is spent or the fit converged."""


# object-frame half turns: they leave every cosine channel unchanged, so the
# encoding alone cannot rule them out and they trap local search
_HALF_TURNS = (np.diag([1.0, -1.0, -1.0]), np.diag([-1.0, 1.0, -1.0]), np.diag([-1.0, -1.0, 1.0]))

# restart perturbation scales, in units of the stage step
_KICKS = (0.5, 1.0, 2.0, 4.0)


class _CandidatePose:
    """``untangled_update`` specialised to one reference, for the inner loop."""

    def __init__(self, ref: ReferenceContext, query_K: Intrinsics):
        t_r = ref.pose.t
        self.R_ra = egocentric_to_allocentric(ref.pose.R, t_r)
        self.z_gain = t_r[2] * query_K.focal / ref.K.focal
        self.o_r = (ref.K.matrix @ t_r / t_r[2])[:2]
        self.K = query_K

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K = self.K
        t_cz = self.z_gain * (x[2] + 1.0)
        t = np.array(
            [
                t_cz * (self.o_r[0] + x[0] - K.cx) / K.fx,
                t_cz * (self.o_r[1] + x[1] - K.cy) / K.fy,
                t_cz,
            ]
        )
        R = view_rotation(t) @ rot6d_to_matrix(x[3:]) @ self.R_ra
        return R, t

    def rot6d_for(self, R_c: np.ndarray, t: np.ndarray) -> np.ndarray:
        """6D delta that gives egocentric rotation ``R_c`` at translation ``t``."""
        return matrix_to_rot6d(view_rotation(t).T @ R_c @ self.R_ra.T)


class _Run:
    """Budgeted objective that remembers the best point seen."""

    def __init__(self, cost, budget: int, tol: float = 0.0):
        self.cost = cost
        self.budget = budget
        self.tol = tol
        self.evals = 0
        self.best_x = RefinementParams.identity().to_vector()
        self.best_f = np.inf

    @property
    def remaining(self) -> int:
        return self.budget - self.evals

    def __call__(self, x) -> float:
        if self.evals >= self.budget or self.best_f <= self.tol:
            raise _BudgetExhausted
        self.evals += 1
        try:
            val = self.cost(np.asarray(x, dtype=np.float64))
        except (PoseKitError, ValueError):
            val = np.inf
        if val < self.best_f:
            self.best_f, self.best_x = val, np.array(x, dtype=np.float64)
        return val


class SearchPredictor:
    """Derivative-free fit of the refinement delta against a target feature.

    The objective renders the candidate pose produced by
    ``untangled_update(x, ref)`` and takes the mean L1 distance between its
    positional encoding and the query's geometric feature over the whole
    raster, so silhouette mismatch is penalized too.  Pixels the query marks
    as occluded (amodal but not modal) are ignored; for symmetric objects
    only the cosine channels are compared.

    Search, all within ``budget`` objective evaluations:

    1. score identity, a mask-moment translation guess and, in the
       multi-reference stage, seeded random rotation hypotheses;
    2. short Nelder-Mead runs from the best ``starts`` of those;
    3. a run of at most ``run_evals`` from the winner, then restarts from
       the incumbent's object-axis half turns and from seeded perturbations
       whose size grows each time a restart fails to improve.

    Runs are capped and stop early on flat stretches, because a fresh
    restart escapes a shallow plateau faster than a long run crawls it.
    """

    thread_safe = True

    def __init__(
        self,
        query_geo: FeatureMap,
        query_K: Intrinsics,
        model: NormalizedModel,
        n_freq: int,
        raster: tuple[int, int] = (64, 64),
        budget: int = 2000,
        seed: int = 0,
        symmetric: bool = False,
        weight: np.ndarray | None = None,
        rotation_hypotheses: int = 48,
        starts: int = 6,
        probe_evals: int = 120,
        run_evals: int = 500,
        tol: float = 1e-6,
    ):
        if query_geo.layout != "GEO":
            raise ValueError(f"expected a GEO map, got {query_geo.layout}")
        self.model = model
        self.n_freq = int(n_freq)
        self.h, self.w = raster
        self.query_K = query_K
        self.budget = int(budget)
        self.seed = seed
        self.symmetric = symmetric
        self.rotation_hypotheses = rotation_hypotheses
        self.starts = starts
        self.probe_evals = probe_evals
        self.run_evals = run_evals
        self.tol = tol

        self._target = np.ascontiguousarray(query_geo.channel_last(), dtype=np.float64)
        C = self._target.shape[-1]
        cmask = np.ones(C)
        if symmetric:
            cmask[0::2] = 0.0
        self._channel_mask = cmask
        wt = np.ones((self.h, self.w)) if weight is None else np.asarray(weight, dtype=np.float64)
        self._weight = np.ascontiguousarray(wt)
        self._bg_cost = np.ascontiguousarray(
            (np.abs(self._target) * cmask).sum(axis=-1) * self._weight
        )
        self._query_mask = np.any(self._target != 0.0, axis=-1)

    # -- objective --------------------------------------------------------

    def _cost_Rt(self, R: np.ndarray, t: np.ndarray) -> float:
        if not t[2] > 1e-3:
            return np.inf
        try:
            coords, _, index = _raw_render_Rt(self.model, R, t, self.query_K, self.h, self.w)
        except PoseKitError:
            return np.inf
        return _kernels.encoded_l1(
            coords, index >= 0, self._target, self._weight, self._bg_cost, self.n_freq,
            self._channel_mask,
        )

    def cost_of_pose(self, pose: Pose) -> float:
        return self._cost_Rt(pose.R, pose.t)

    def objective(self, x: np.ndarray, ref: ReferenceContext) -> float:
        try:
            pose = untangled_update(RefinementParams.from_vector(x), ref.pose, ref.K, self.query_K)
        except (PoseKitError, ValueError):
            return np.inf
        return self.cost_of_pose(pose)

    # -- starts -----------------------------------------------------------

    def _moment_guess(self, ref: ReferenceContext) -> np.ndarray | None:
        q = self._query_mask
        r = ref.parts["amodal"].data[0] > 0.5
        if not q.any() or not r.any():
            return None
        ii, jj = np.nonzero(q)
        cq = np.array([jj.mean() + 0.5, ii.mean() + 0.5])
        ii, jj = np.nonzero(r)
        cr = np.array([jj.mean() + 0.5, ii.mean() + 0.5])
        ratio = np.sqrt(q.sum() / r.sum())  # apparent size, query over reference
        o_r = (ref.K.matrix @ ref.pose.t / ref.pose.t[2])[:2]
        vxy = cq + (o_r - cr) * ratio - o_r
        x = RefinementParams.identity().to_vector()
        x[:2] = vxy
        x[2] = 1.0 / ratio - 1.0
        return x

    # -- search -----------------------------------------------------------

    def predict(self, query: QueryContext, ref: ReferenceContext) -> RefinementParams:
        rng = np.random.default_rng([self.seed, ref.iteration, ref.index + 1])
        update = _CandidatePose(ref, self.query_K)
        run = _Run(lambda x: self._cost_Rt(*update(x)), self.budget, self.tol)

        global_stage = ref.iteration == 0
        if global_stage:
            step = np.array([2.0, 2.0, 0.03] + [0.2] * 6)
        else:
            step = np.array([0.5, 0.5, 0.01] + [0.04] * 6)
        try:
            x_id = RefinementParams.identity().to_vector()
            starts = [(run(x_id), x_id)]
            guess = self._moment_guess(ref)
            if guess is not None:
                starts.append((run(guess), guess))
            if global_stage:
                base = starts[-1][1]
                for _ in range(self.rotation_hypotheses):
                    x = base.copy()
                    x[3:] = matrix_to_rot6d(random_rotation(rng))
                    starts.append((run(x), x))
                starts.sort(key=lambda s: s[0])
                for _, x0 in starts[: self.starts]:
                    self._nelder_mead(run, x0, step, self.probe_evals)
                x0 = run.best_x
            else:
                x0 = min(starts, key=lambda s: s[0])[1]
            self._nelder_mead(run, x0, step, self.run_evals)

            if not self.symmetric:
                x_inc = run.best_x
                R, t = update(x_inc)
                for H in _HALF_TURNS:
                    x = x_inc.copy()
                    x[3:] = update.rot6d_for(R @ H, t)
                    self._nelder_mead(run, x, step, self.probe_evals)
                if run.best_x is not x_inc:
                    self._nelder_mead(run, run.best_x, step, self.run_evals)

            # perturbed restarts; each round without progress widens the kick
            stale = 0
            while run.remaining > 0 and stale < len(_KICKS):
                before = run.best_f
                kick = _KICKS[stale]
                x0 = run.best_x.copy()
                x0[:3] += rng.normal(0.0, kick, 3) * step[:3]
                x0[3:] = matrix_to_rot6d(
                    so3_exp(rng.normal(0.0, kick * step[3], 3)) @ rot6d_to_matrix(x0[3:])
                )
                self._nelder_mead(run, x0, step * max(kick, 0.5), self.run_evals)
                stale = stale + 1 if run.best_f > before * (1.0 - 1e-3) else 0
        except _BudgetExhausted:
            pass
        log.debug(
            "search ref=%d it=%d evals=%d cost=%.6g", ref.index, ref.iteration, run.evals, run.best_f
        )
        return RefinementParams.from_vector(run.best_x)

    @staticmethod
    def _nelder_mead(run: _Run, x0, step, remaining):
        """Nelder-Mead in a minimal chart around ``x0``.

        The 9-vector carries three redundant rotation directions (column
        scale and skew) that flatten the simplex, so the search moves the
        translation part directly and the rotation by an axis-angle offset
        applied to ``x0``'s rotation.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        anchor = rot6d_to_matrix(x0[3:])

        def to9(y):
            x = np.empty(9)
            x[:3] = y[:3]
            x[3:] = matrix_to_rot6d(so3_exp(y[3:]) @ anchor)
            return x

        def g(y):
            return run(to9(y))

        remaining = min(remaining, run.remaining)
        if remaining <= 10:
            if remaining > 0:
                run(x0)
            return
        y0 = np.concatenate([x0[:3], np.zeros(3)])
        steps = np.concatenate([step[:3], np.full(3, step[3])])
        simplex = np.vstack([y0, y0 + np.diag(steps)])
        minimize(
            g,
            y0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxfev": remaining,
                "xatol": 1e-7,
                # relative: on near-flat stretches a restart beats crawling
                "fatol": max(1e-10, 1e-4 * run.best_f),
            },
        )

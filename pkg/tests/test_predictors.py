import numpy as np
import pytest

from posekit.geometry import Intrinsics, Pose, so3_exp
from posekit.metrics import add
from posekit.predictors import NoisyOraclePredictor, OraclePredictor, SearchPredictor
from posekit.refinement import QueryContext, ReferenceContext, RefinementParams, untangled_update
from posekit.rendering import FeatureMap, encode_geometric, medoid_feature, reference_feature, render

K = Intrinsics.square(320.0, 32.0, 32.0, 64, 64)
GT = Pose(so3_exp([0.4, -0.7, 0.2]), [0.01, -0.02, 1.1])


def _query():
    return QueryContext(K, FeatureMap(np.zeros((65, 64, 64)), "QUERY"))


def _search(model, budget, target=GT, seed=0):
    geo = encode_geometric(render(model, target, K), 5)
    return SearchPredictor(geo, K, model, 5, budget=budget, seed=seed)


def test_zero_budget_returns_identity(cube):
    F, _ = reference_feature(cube, GT, K, 5)
    ref = ReferenceContext(GT, K, F)
    out = _search(cube, 0).predict(_query(), ref)
    assert np.array_equal(out.to_vector(), RefinementParams.identity().to_vector())


def test_identity_is_a_global_minimum_bound(cube):
    F, _ = reference_feature(cube, GT, K, 5)
    ref = ReferenceContext(GT, K, F)
    s = _search(cube, 300)
    x = s.predict(_query(), ref).to_vector()
    ident = RefinementParams.identity().to_vector()
    assert s.objective(ident, ref) < 1e-6  # float32 storage of the target
    assert s.objective(x, ref) <= s.objective(ident, ref)


def test_small_rotation_is_recovered(cube):
    start = Pose(so3_exp(np.deg2rad(5.0) * np.array([0.6, 0.0, 0.8])) @ GT.R, GT.t)
    F, _ = medoid_feature(cube, start, K, 5)
    ref = ReferenceContext(start, K, F, index=-1, iteration=1)
    s = _search(cube, 2000)
    pose = untangled_update(s.predict(_query(), ref), start, K, K)
    assert add(start, GT, cube) > 0.02 * cube.diameter
    assert add(pose, GT, cube) < 0.02 * cube.diameter


def test_search_is_seeded(cube):
    start = Pose(so3_exp([0.1, 0.0, 0.0]) @ GT.R, GT.t + [0.01, 0, 0])
    F, _ = reference_feature(cube, start, K, 5)
    ref = ReferenceContext(start, K, F)
    a = _search(cube, 400, seed=3).predict(_query(), ref)
    b = _search(cube, 400, seed=3).predict(_query(), ref)
    assert np.array_equal(a.to_vector(), b.to_vector())


def test_search_rejects_non_geo(cube):
    with pytest.raises(ValueError):
        SearchPredictor(FeatureMap(np.zeros((1, 64, 64)), "MASK1"), K, cube, 5)


def test_symmetric_objective_ignores_half_turn(sphere):
    # a sphere's coordinates change under rotation, but the cosine channels of
    # a half turn about z agree with the target wherever x and y flip sign
    geo = encode_geometric(render(sphere, GT, K), 5)
    s = SearchPredictor(geo, K, sphere, 5, symmetric=True)
    assert s.cost_of_pose(GT) < 1e-6
    flipped = Pose(GT.R @ np.diag([-1.0, -1.0, 1.0]), GT.t)
    assert s.cost_of_pose(flipped) < 1e-3
    plain = SearchPredictor(geo, K, sphere, 5)
    assert plain.cost_of_pose(flipped) > 10 * max(s.cost_of_pose(flipped), 1e-6)


def test_oracle_predictors(cube):
    F, _ = reference_feature(cube, GT, K, 5)
    ref = ReferenceContext(Pose(np.eye(3), [0, 0, 1.0]), K, F)
    p = OraclePredictor(GT, K).predict(_query(), ref)
    out = untangled_update(p, ref.pose, K, K)
    assert np.allclose(out.t, GT.t) and np.allclose(out.R, GT.R)
    noisy = NoisyOraclePredictor(GT, K, 0.0, 0.0)
    q = noisy.predict(_query(), ref)
    assert np.allclose(q.to_vector(), p.to_vector())

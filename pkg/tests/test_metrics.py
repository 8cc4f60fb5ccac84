import numpy as np
import pytest
from conftest import random_pose
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from posekit.errors import EmptyInput
from posekit.geometry import Pose, normalize_model, rot_z
from posekit.metrics import THRESHOLDS, accuracy_curve, add, add_s, auc_add, evaluate_pose, threshold_accuracy

errors_st = st.lists(st.floats(0.0, 0.3, allow_nan=False), min_size=1, max_size=30)


def test_thresholds():
    assert THRESHOLDS == (0.02, 0.05, 0.1)


def test_add_zero_and_shift(cube, rng):
    P = random_pose(rng)
    assert add(P, P, cube) == 0.0 and add_s(P, P, cube) == 0.0
    d = np.array([0.01, -0.02, 0.03])
    assert add(Pose(P.R, P.t + d), P, cube) == pytest.approx(np.linalg.norm(d), abs=1e-15)


def test_cube_quarter_turn_symmetry(cube):
    gt = Pose(np.eye(3), [0, 0, 1.0])
    est = Pose(rot_z(np.pi / 2), gt.t)
    assert add(est, gt, cube) > 0.1 * cube.diameter
    assert add_s(est, gt, cube) < 1e-9
    rep = evaluate_pose(est, gt, cube, symmetric=True)
    assert rep.error == rep.add_s and rep.passes_002d
    assert not evaluate_pose(est, gt, cube).passes_01d


def _nn_oracle(est, gt, model):
    v = model.vertices_m
    return cdist(est.transform(v), gt.transform(v)).min(axis=1).mean()


def test_add_s_matches_brute_force():
    rng = np.random.default_rng(7)
    model = normalize_model(rng.normal(size=(100, 3)) * 0.05)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        assert abs(add_s(a, b, model) - _nn_oracle(a, b, model)) < 1e-12
        assert add_s(a, b, model) <= add(a, b, model) + 1e-15


def test_add_s_chunking_on_dense_cloud():
    rng = np.random.default_rng(8)
    model = normalize_model(rng.normal(size=(1500, 3)) * 0.05)
    a, b = random_pose(rng), random_pose(rng)
    assert abs(add_s(a, b, model) - _nn_oracle(a, b, model)) < 1e-12


def test_vertex_cap_is_seeded():
    rng = np.random.default_rng(9)
    model = normalize_model(rng.normal(size=(300, 3)) * 0.05)
    a, b = random_pose(rng), random_pose(rng)
    assert add(a, b, model, 50, seed=1) == add(a, b, model, 50, seed=1)
    assert add(a, b, model, 1000) == add(a, b, model)


@given(st.integers(0, 2**32 - 1))
def test_add_is_a_pseudometric(seed):
    rng = np.random.default_rng(seed)
    model = normalize_model(rng.normal(size=(20, 3)) * 0.05)
    a, b, c = (random_pose(rng) for _ in range(3))
    assert add(a, b, model) == pytest.approx(add(b, a, model), abs=1e-15)
    assert add(a, c, model) <= add(a, b, model) + add(b, c, model) + 1e-15


def test_threshold_accuracy():
    assert threshold_accuracy([0.0, 0.0], 1.0, 0.02) == 1.0
    d = 0.2
    assert threshold_accuracy([0.05 * d, 0.2 * d], d, 0.1) == 0.5
    assert threshold_accuracy([0.1 * d], d, 0.1) == 0.0  # strict
    with pytest.raises(EmptyInput):
        threshold_accuracy([], d, 0.1)
    with pytest.raises(ValueError):
        threshold_accuracy([0.1], 0.0, 0.1)


def test_auc():
    assert auc_add([0.0, 0.0]) == 1.0
    assert auc_add([0.05], 0.10) == pytest.approx(0.5)
    assert auc_add([0.2, 0.11]) == 0.0
    with pytest.raises(EmptyInput):
        auc_add([])
    with pytest.raises(ValueError):
        auc_add([0.1], 0.0)


@given(errors_st)
def test_auc_halving_never_decreases(errs):
    e = np.array(errs)
    assert auc_add(e / 2) >= auc_add(e) - 1e-15
    assert 0.0 <= auc_add(e) <= 1.0


@given(errors_st)
def test_auc_is_step_integral(errs):
    # a dense midpoint sum of the step curve converges to the exact value
    n = 20000
    th = (np.arange(n) + 0.5) * 0.1 / n
    approx = (np.array(errs)[None, :] < th[:, None]).mean(axis=1).mean()
    assert auc_add(errs) == pytest.approx(approx, abs=2e-4)


def test_accuracy_curve():
    th, acc = accuracy_curve([0.0, 0.05, 0.2])
    assert len(th) == 101 and th[0] == 0 and th[-1] == pytest.approx(0.1)
    assert acc[0] == 0.0 and acc[-1] == pytest.approx(2 / 3)
    assert np.all(np.diff(acc) >= 0)
    assert np.all(accuracy_curve([])[1] == 0)

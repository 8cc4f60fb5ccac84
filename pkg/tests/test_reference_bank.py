import itertools
import json

import numpy as np
import pytest
from conftest import random_pose, sphere_silhouette, surrounding_views
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from posekit.errors import CorruptBank, EmptyCarving, InsufficientPool, IoFailure
from posekit.geometry import Intrinsics, Pose, geodesic_distance, look_at, pairwise_geodesic, random_rotation, rot_z
from posekit.reference_bank import build_bank, carved_model, fps_select, load_bank, save_bank, space_carve
from posekit.rendering import render


def _poses(Rs):
    return [Pose(R, [0, 0, 1.0]) for R in Rs]


def test_fps_three_rotations():
    pool = _poses([np.eye(3), rot_z(np.pi / 2), rot_z(np.pi)])
    assert sorted(fps_select(pool, 2)) == [0, 2]
    assert sorted(fps_select(pool, 3)) == [0, 1, 2]


def test_fps_first_pick_is_max_sum(rng):
    pool = _poses([random_rotation(rng) for _ in range(20)])
    D = np.array([[geodesic_distance(a.R, b.R) for b in pool] for a in pool])
    assert fps_select(pool, 1) == [int(np.argmax(D.sum(axis=1)))]


def test_fps_errors():
    pool = _poses([np.eye(3)] * 3)
    with pytest.raises(InsufficientPool):
        fps_select(pool, 4)
    with pytest.raises(InsufficientPool):
        fps_select(pool, 0)


def test_fps_random_first_is_seeded(rng):
    pool = _poses([random_rotation(rng) for _ in range(30)])
    a = fps_select(pool, 5, seed=3, random_first=True)
    assert a == fps_select(pool, 5, seed=3, random_first=True)
    assert len(set(a)) == 5


@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 6))
def test_fps_greedy_maximin(seed, n, M):
    rng = np.random.default_rng(seed)
    M = min(M, n)
    pool = _poses([random_rotation(rng) for _ in range(n)])
    D = pairwise_geodesic([p.R for p in pool])
    chosen = fps_select(pool, M)
    assert len(set(chosen)) == M
    for k in range(1, M):
        prev = chosen[:k]
        best = max(D[i, prev].min() for i in range(n) if i not in prev)
        assert D[chosen[k], prev].min() == best


def test_fps_brute_force_pairs():
    # M = 2 from the max-sum start reaches the farthest partner of that start
    rng = np.random.default_rng(5)
    pool = _poses([random_rotation(rng) for _ in range(12)])
    D = pairwise_geodesic([p.R for p in pool])
    a, b = fps_select(pool, 2)
    assert D[a, b] == max(D[a, j] for j in range(12))
    assert D[a, b] <= max(D[i, j] for i, j in itertools.combinations(range(12), 2))


# -- bank ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bank(cube):
    rng = np.random.default_rng(0)
    pool = [random_pose(rng, (1.0, 1.0), 0.0) for _ in range(32)]
    cams = [Intrinsics.square(300.0 if i % 2 else 600.0, 32, 32, 64, 64) for i in range(32)]
    return build_bank(cube, pool, cams, 4, 5, (64, 64), "cube")


def test_build_bank_defaults(bank):
    assert bank.M == 4 and bank.n_freq == 5
    assert all(r.feature.channels == 35 and r.feature.layout == "REF" for r in bank.references)
    assert {r.intrinsics.focal for r in bank.references} <= {300.0, 600.0}
    assert all(r.render.amodal_bool().any() for r in bank.references)


def test_build_bank_identical_pool(cube, K64):
    pool = [Pose(np.eye(3), [0, 0, 1.0])] * 6
    b = build_bank(cube, pool, K64, 4, 5)
    assert b.M == 4
    assert all(r.feature == b.references[0].feature for r in b.references)


def test_build_bank_intrinsics_length(cube, K64):
    with pytest.raises(ValueError):
        build_bank(cube, [Pose.identity()] * 3, [K64] * 2, 2)


def test_bank_round_trip(bank, tmp_path):
    save_bank(bank, tmp_path / "b")
    manifest = json.loads((tmp_path / "b" / "bank.json").read_text())
    assert manifest["M"] == 4 and manifest["N"] == 5 and manifest["raster"] == [64, 64]
    assert len(manifest["references"][0]["pose"]) == 12
    assert len(manifest["references"][0]["intrinsics"]) == 6
    loaded = load_bank(tmp_path / "b")
    assert loaded == bank
    for a, b in zip(loaded.references, bank.references):
        assert np.array_equal(a.pose.R, b.pose.R) and np.array_equal(a.pose.t, b.pose.t)


def test_bank_truncated_fmap(bank, tmp_path):
    d = save_bank(bank, tmp_path / "b")
    blob = (d / "ref_1.fmap").read_bytes()
    (d / "ref_1.fmap").write_bytes(blob[:-10])
    with pytest.raises(CorruptBank):
        load_bank(d)


def test_bank_missing_file(bank, tmp_path):
    d = save_bank(bank, tmp_path / "b")
    (d / "ref_3.fmap").unlink()
    with pytest.raises(CorruptBank):
        load_bank(d)


def test_bank_checksum_and_fields(bank, tmp_path):
    d = save_bank(bank, tmp_path / "b")
    blob = bytearray((d / "ref_0.fmap").read_bytes())
    blob[-1] ^= 0xFF
    (d / "ref_0.fmap").write_bytes(bytes(blob))
    with pytest.raises(CorruptBank):
        load_bank(d)
    (d / "bank.json").write_text("{")
    with pytest.raises(CorruptBank):
        load_bank(d)
    (d / "bank.json").write_text(json.dumps({"M": 4}))
    with pytest.raises(CorruptBank):
        load_bank(d)


def test_bank_missing_directory(tmp_path):
    with pytest.raises(IoFailure):
        load_bank(tmp_path / "nope")


# -- carving ---------------------------------------------------------------------------


def test_carve_sphere_radii():
    pts = space_carve(surrounding_views(), 32)
    r = np.linalg.norm(pts, axis=1)
    pitch = 2.0 / 32
    assert np.all(np.abs(r - 0.8) <= 2 * pitch)


def test_carve_is_conservative():
    pts = space_carve(surrounding_views(), 32)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(2000, 3))
    s = 0.8 * s / np.linalg.norm(s, axis=1, keepdims=True)
    dist, _ = cKDTree(pts).query(s)
    assert dist.max() <= np.sqrt(3) * 2.0 / 32


def test_carve_two_orthogonal_views_contain_cube():
    from posekit.geometry import cube_mesh, normalize_model

    model = normalize_model(*cube_mesh(1.0))
    K = Intrinsics.square(2000.0, 64, 64, 128, 128)
    views = []
    for eye in ([0, 0, -40.0], [40.0, 0, 0]):
        P = look_at(eye)
        views.append((render(model, P, K, 128, 128).amodal.data[0], P, K))
    pts = space_carve(views, 16, scale=model.scale)
    # the hull of two square prisms is the whole cube: its shell touches every face
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    assert np.allclose(lo, -1 + 1.0 / 16) and np.allclose(hi, 1 - 1.0 / 16)
    assert len(pts) == 16**3 - 14**3


def test_carve_all_ones_is_grid_shell():
    K = Intrinsics.square(10.0, 32, 32, 64, 64)
    ones = np.ones((64, 64))
    views = [(ones, look_at([0, 0, -50.0]), K), (ones, look_at([50.0, 0, 0]), K)]
    n = 8
    pts = space_carve(views, n)
    assert len(pts) == n**3 - (n - 2) ** 3
    assert np.all(np.isclose(np.abs(pts).max(axis=1), 1 - 1.0 / n))


def test_carve_errors():
    K = Intrinsics.square(100.0, 32, 32, 64, 64)
    zeros = np.zeros((64, 64))
    P = look_at([0, 0, -5.0])
    with pytest.raises(EmptyCarving):
        space_carve([(zeros, P, K), (zeros, P, K)], 8)
    with pytest.raises(ValueError):
        space_carve([(zeros, P, K)], 8)
    with pytest.raises(ValueError):
        space_carve([(zeros, P, K)] * 2, 4)


def test_carved_model_renders():
    pts = space_carve(surrounding_views(), 16)
    model = carved_model(pts, 0.05)
    assert model.triangles.shape == (0, 3)
    K = Intrinsics.square(300.0, 32, 32, 64, 64)
    r = render(model, Pose(np.eye(3), [0, 0, 1.0]), K)
    assert r.amodal_bool().sum() > 20


def test_look_at_centers_target():
    P = look_at([1.0, 2.0, -3.0], [0.1, 0.0, 0.2])
    c = P.transform([0.1, 0.0, 0.2])
    assert np.allclose(c[:2], 0, atol=1e-12) and c[2] > 0
    assert np.isclose(np.linalg.det(P.R), 1.0)
    K = Intrinsics.square(100.0, 32, 32, 64, 64)
    assert sphere_silhouette(K, P, 0.2, [0.1, 0.0, 0.2])[31:33, 31:33].all()

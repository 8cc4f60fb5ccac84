import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from posekit.geometry import Intrinsics, Pose, cube_mesh, icosphere_mesh, look_at, normalize_model, random_rotation

# numba compiles on first call, so the first example of a property can be slow
settings.register_profile(
    "posekit", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("posekit")


@pytest.fixture(scope="session")
def cube():
    return normalize_model(*cube_mesh(0.1))


@pytest.fixture(scope="session")
def unit_cube():
    return normalize_model(*cube_mesh(1.0))


@pytest.fixture(scope="session")
def sphere():
    return normalize_model(*icosphere_mesh(0.05, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def K64():
    return Intrinsics.square(300.0, 32.0, 32.0, 64, 64)


def random_pose(rng, depth=(0.8, 1.5), lateral=0.1) -> Pose:
    z = rng.uniform(*depth)
    return Pose(random_rotation(rng), [rng.uniform(-lateral, lateral), rng.uniform(-lateral, lateral), z])


def random_camera(rng, f=(300.0, 1200.0), offset=64.0, size=256) -> Intrinsics:
    c = size / 2 + rng.uniform(-offset, offset, 2)
    return Intrinsics.square(rng.uniform(*f), c[0], c[1], size, size)


def sphere_silhouette(K: Intrinsics, P: Pose, radius: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Analytic amodal mask of a sphere: pixel rays passing closer than ``radius``."""
    j, i = np.meshgrid(np.arange(K.width) + 0.5, np.arange(K.height) + 0.5)
    d = np.stack([(j - K.cx) / K.fx, (i - K.cy) / K.fy, np.ones_like(j)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    c = P.R @ np.asarray(center, dtype=np.float64) + P.t
    along = d @ c
    miss = np.linalg.norm(c - along[..., None] * d, axis=-1)
    return ((miss < radius) & (along > 0)).astype(np.float64)


def surrounding_views(radius: float = 0.8, distance: float = 10.0, f: float = 600.0, size: int = 128):
    """Eight cameras on the cube-corner directions looking at the origin."""
    K = Intrinsics.square(f, size / 2, size / 2, size, size)
    views = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                P = look_at(np.array([sx, sy, sz]) * distance / np.sqrt(3.0))
                views.append((sphere_silhouette(K, P, radius), P, K))
    return views


# acceptance verdicts, echoed once more at the end of the run
ACCEPTANCE: list[str] = []


def acceptance(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

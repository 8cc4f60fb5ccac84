"""Rotations, poses, pinhole cameras and object-coordinate normalization.

Conventions used throughout the package:

* Rotations are 3x3 ``float64`` arrays acting on column vectors.
* A :class:`Pose` maps object-frame meters into the camera frame:
  ``x_cam = R @ x_obj + t``.
* Pixel ``(row i, col j)`` has its center at ``(u, v) = (j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from posekit.errors import (
    BehindCamera,
    DegenerateDirection,
    DegenerateMesh,
    DegenerateRotation,
    InvalidFrequency,
    NonSquarePixels,
)

_Z = np.array([0.0, 0.0, 1.0])
# cos(179 deg): viewing rays closer than this to -z are rejected
_ANTIPARALLEL_COS = np.cos(np.deg2rad(179.0))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform of an object in the camera frame (meters)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, depth: float = 1.0) -> "Pose":
        return cls(np.eye(3), [0.0, 0.0, depth])

    def transform(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def to_list(self) -> list[float]:
        """12 floats, ``[R | t]`` row-major."""
        return np.hstack([self.R, self.t[:, None]]).ravel().tolist()

    @classmethod
    def from_list(cls, values) -> "Pose":
        Rt = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(Rt[:, :3], Rt[:, 3])

    def allclose(self, other: "Pose", atol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.R, other.R, rtol=0.0, atol=atol)
            and np.allclose(self.t, other.t, rtol=0.0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t))

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def square(cls, f: float, cx: float, cy: float, width: int, height: int) -> "Intrinsics":
        return cls(float(f), float(f), float(cx), float(cy), int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def focal(self) -> float:
        """Scalar focal length; only defined for square pixels."""
        if abs(self.fx - self.fy) / self.fx >= 1e-6:
            raise NonSquarePixels(f"fx={self.fx} and fy={self.fy} differ")
        return float(self.fx)

    def scaled(self, factor: float) -> "Intrinsics":
        return Intrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            self.width,
            self.height,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "w": self.width,
            "h": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["w"]), int(d["h"])
        )


@dataclass(frozen=True, eq=False)
class NormalizedModel:
    """Object geometry in normalized coordinates.

    ``vertices`` live in ``[-1, 1]^3``; ``vertices * scale + center_offset``
    gives the source mesh in meters.  ``triangles`` may be empty, in which
    case the model is a point set (e.g. a space-carved surface) and is
    rendered by splatting.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    diameter: float
    scale: float
    center_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        c = np.array(self.center_offset, dtype=np.float64).reshape(3)
        for a in (v, f, c):
            a.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "center_offset", c)
        object.__setattr__(self, "diameter", float(self.diameter))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def is_point_set(self) -> bool:
        return len(self.triangles) == 0

    @cached_property
    def vertices_m(self) -> np.ndarray:
        """Vertices denormalized to meters in the object frame."""
        v = self.denormalize(self.vertices)
        v.flags.writeable = False
        return v

    def denormalize(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) * self.scale + self.center_offset


# ---------------------------------------------------------------------------
# rotations


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (much cheaper than ``np.cross`` for one pair)."""
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-12:
        return np.eye(3) + W
    return np.eye(3) + np.sin(th) / th * W + (1.0 - np.cos(th)) / th**2 * (W @ W)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3) from a random unit quaternion."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    w, x, y, z = (
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
        b * np.cos(2 * np.pi * u3),
    )
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    """Pose of the world frame in a camera at ``eye`` whose optical axis meets ``target``.

    Camera y points away from ``up`` (image rows grow downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(float(np.dot(up, z))) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    x = cross3(z, up)
    x /= np.linalg.norm(x)
    y = cross3(z, x)
    R = np.stack([x, y, z])
    return Pose(R, -R @ eye)


def rot6d_to_matrix(v) -> np.ndarray:
    """Recover a rotation from its 6D representation by Gram-Schmidt.

    The first three entries are the first column, the last three the second
    column; neither needs to be normalized or orthogonal.
    """
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-12:
        raise DegenerateRotation("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 < 1e-12:
        raise DegenerateRotation("6D columns are (near) parallel")
    b2 = u2 / n2
    b3 = cross3(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def view_rotation(t) -> np.ndarray:
    """Minimal rotation taking the optical axis onto the ray through ``t``."""
    t = np.asarray(t, dtype=np.float64)
    n = np.linalg.norm(t)
    if n < 1e-9:
        raise DegenerateDirection("translation is (near) zero")
    d = t / n
    c = d[2]
    if c < _ANTIPARALLEL_COS:
        raise DegenerateDirection("viewing ray is (near) anti-parallel to the optical axis")
    v = np.array([-d[1], d[0], 0.0])  # z x d
    if np.hypot(v[0], v[1]) < 1e-9 and c > 0:
        return np.eye(3)
    V = hat(v)
    return np.eye(3) + V + (V @ V) / (1.0 + c)


def egocentric_to_allocentric(R, t) -> np.ndarray:
    return view_rotation(t).T @ np.asarray(R, dtype=np.float64)


def allocentric_to_egocentric(R_a, t) -> np.ndarray:
    return view_rotation(t) @ np.asarray(R_a, dtype=np.float64)


def geodesic_distance(R1, R2) -> float:
    """Angle in ``[0, pi]`` of the relative rotation ``R1^T R2``.

    Evaluated as ``atan2(sin, cos)`` rather than ``arccos`` of the trace
    alone, which loses about half the significant digits near zero.
    """
    D = np.asarray(R1, dtype=np.float64).T @ np.asarray(R2, dtype=np.float64)
    cos = np.clip((np.trace(D) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    sin = min(np.linalg.norm(axis) / 2.0, 1.0)
    return float(np.arctan2(sin, cos))


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    return bool(
        R.shape == (3, 3)
        and np.abs(R.T @ R - np.eye(3)).max() < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


# ---------------------------------------------------------------------------
# positional encoding


def positional_encode(p, n_freq: int) -> np.ndarray:
    """Sinusoidal encoding ``[sin(2^k pi p), cos(2^k pi p)]`` for k < n_freq.

    Works elementwise: an input of shape ``S`` gives ``S + (2 * n_freq,)``.
    """
    if int(n_freq) != n_freq or n_freq < 1:
        raise InvalidFrequency(f"frequency count must be >= 1, got {n_freq}")
    p = np.asarray(p, dtype=np.float64)
    ang = p[..., None] * (np.pi * 2.0 ** np.arange(int(n_freq)))
    out = np.empty(p.shape + (2 * int(n_freq),))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def encode_coords(xyz, n_freq: int) -> np.ndarray:
    """Encode ``(..., 3)`` coordinates into ``(..., 6 * n_freq)`` channels.

    Channel blocks are X, then Y, then Z; each block holds the (sin, cos)
    pairs in ascending frequency.
    """
    enc = positional_encode(np.asarray(xyz, dtype=np.float64), n_freq)
    return enc.reshape(enc.shape[:-2] + (6 * int(n_freq),))


# ---------------------------------------------------------------------------
# pinhole camera


def project(K: Intrinsics, P: Pose, pts, model: NormalizedModel) -> np.ndarray:
    """Project normalized object points; returns ``(n, 3)`` rows of (u, v, depth)."""
    x = P.transform(model.denormalize(np.atleast_2d(pts)))
    z = x[:, 2]
    if np.any(z <= 1e-6):
        raise BehindCamera("point at or behind the camera plane")
    u = K.fx * x[:, 0] / z + K.cx
    v = K.fy * x[:, 1] / z + K.cy
    return np.stack([u, v, z], axis=1)


def unproject(K: Intrinsics, uvd) -> np.ndarray:
    """Camera-frame points from ``(n, 3)`` rows of (u, v, depth)."""
    uvd = np.atleast_2d(np.asarray(uvd, dtype=np.float64))
    z = uvd[:, 2]
    x = (uvd[:, 0] - K.cx) / K.fx * z
    y = (uvd[:, 1] - K.cy) / K.fy * z
    return np.stack([x, y, z], axis=1)


# ---------------------------------------------------------------------------
# model normalization


def _diameter(v: np.ndarray) -> float:
    pts = v
    if len(v) > 64:
        try:
            pts = v[ConvexHull(v).vertices]
        except QhullError:
            pass
    if len(pts) > 4000:
        # chunked brute force keeps memory bounded
        best = 0.0
        for i in range(0, len(pts), 1024):
            d = np.linalg.norm(pts[i : i + 1024, None, :] - pts[None, :, :], axis=-1)
            best = max(best, float(d.max()))
        return best
    return float(pdist(pts).max())


def normalize_model(vertices, triangles=()) -> NormalizedModel:
    """Center a mesh on its bounding box and scale it into ``[-1, 1]^3``."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(v) < 3:
        raise DegenerateMesh(f"need at least 3 vertices, got {len(v)}")
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = hi - lo
    if extent.max() <= 0.0:
        raise DegenerateMesh("bounding box has zero extent")
    if np.linalg.matrix_rank(v - v.mean(axis=0), tol=1e-12 * extent.max()) < 2:
        raise DegenerateMesh("vertices are collinear")
    center = (lo + hi) / 2.0
    scale = extent.max() / 2.0
    normalized = (v - center) / scale
    return NormalizedModel(
        vertices=np.clip(normalized, -1.0, 1.0),
        triangles=np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
        diameter=_diameter(v),
        scale=scale,
        center_offset=center,
    )


# ---------------------------------------------------------------------------
# primitive meshes used by the synthetic harness and tests


def cube_mesh(edge: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned cube centered at the origin: 8 vertices, 12 outward triangles."""
    h = edge / 2.0
    v = np.array(
        [[x, y, z] for z in (-h, h) for y in (-h, h) for x in (-h, h)], dtype=np.float64
    )
    f = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # z-
            [4, 5, 6], [5, 7, 6],  # z+
            [0, 1, 4], [1, 5, 4],  # y-
            [2, 6, 3], [3, 6, 7],  # y+
            [0, 4, 2], [2, 4, 6],  # x-
            [1, 3, 5], [3, 7, 5],  # x+
        ],
        dtype=np.int64,
    )
    return v, f


def icosphere_mesh(radius: float = 1.0, subdivisions: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Geodesic sphere built by subdividing an icosahedron."""
    g = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
        (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
        (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts) * radius, np.array(faces, dtype=np.int64)


def pairwise_geodesic(Rs) -> np.ndarray:
    """Matrix of geodesic distances between every pair of rotations."""
    Rs = np.asarray(Rs, dtype=np.float64).reshape(-1, 3, 3)
    D = np.einsum("iab,kac->ikbc", Rs, Rs)
    cos = np.clip((np.trace(D, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.stack(
        [D[..., 2, 1] - D[..., 1, 2], D[..., 0, 2] - D[..., 2, 0], D[..., 1, 0] - D[..., 0, 1]],
        axis=-1,
    )
    sin = np.minimum(np.linalg.norm(axis, axis=-1) / 2.0, 1.0)
    out = np.arctan2(sin, cos)
    np.fill_diagonal(out, 0.0)
    return out

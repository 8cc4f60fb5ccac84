"""Ray-cast rendering of coordinate maps and masks, and feature-map assembly.

A :class:`FeatureMap` stores channels planar, ``data[c, i, j]``, as float32.
Layouts and channel counts for ``N`` encoding frequencies:

=========  ==========  =======================================
tag        channels    content
=========  ==========  =======================================
COORD3     3           normalized object coordinates
GEO        6N          positional-encoded coordinates
ERR        6N          per-channel error of a GEO estimate
RGB3       3           shaded image
MASK1      1           binary mask
REF        6N + 5      GEO | RGB | modal | amodal
QUERY      12N + 5     GEO | ERR | RGB | modal | amodal
MEDOID     6N + 2      GEO | modal | amodal
=========  ==========  =======================================
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from posekit import _kernels
from posekit.errors import BehindCamera, CorruptBank, InvalidFrequency, IoFailure, ShapeMismatch
from posekit.geometry import Intrinsics, NormalizedModel, Pose, encode_coords

LAYOUTS = ("COORD3", "GEO", "ERR", "RGB3", "MASK1", "REF", "QUERY", "MEDOID")

LIGHT_DIR = np.array([0.0, 0.0, -1.0])
ALBEDO = 0.8


def channel_count(layout: str, n_freq: int | None = None) -> int:
    fixed = {"COORD3": 3, "RGB3": 3, "MASK1": 1}
    if layout in fixed:
        return fixed[layout]
    if n_freq is None or n_freq < 1:
        raise InvalidFrequency(f"layout {layout} needs a frequency count >= 1")
    return {"GEO": 6, "ERR": 6, "REF": 6, "QUERY": 12, "MEDOID": 6}[layout] * n_freq + {
        "GEO": 0,
        "ERR": 0,
        "REF": 5,
        "QUERY": 5,
        "MEDOID": 2,
    }[layout]


def _infer_n_freq(layout: str, channels: int) -> int | None:
    if layout in ("COORD3", "RGB3", "MASK1"):
        return None
    per, extra = {"GEO": (6, 0), "ERR": (6, 0), "REF": (6, 5), "QUERY": (12, 5), "MEDOID": (6, 2)}[
        layout
    ]
    n, rem = divmod(channels - extra, per)
    if rem or n < 1:
        raise ShapeMismatch(f"{channels} channels do not fit layout {layout}")
    return n


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray
    layout: str

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout tag {self.layout!r}")
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3:
            raise ShapeMismatch(f"feature data must be (channels, h, w), got {d.shape}")
        n = _infer_n_freq(self.layout, d.shape[0])
        if n is None and d.shape[0] != channel_count(self.layout):
            raise ShapeMismatch(f"{d.shape[0]} channels do not fit layout {self.layout}")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def n_freq(self) -> int | None:
        return _infer_n_freq(self.layout, self.channels)

    def channel_last(self) -> np.ndarray:
        return np.ascontiguousarray(np.moveaxis(self.data, 0, -1))

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.layout == other.layout and self.data.shape == other.data.shape and (
            self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None

    # -- wire format -------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = f"fmap {self.height} {self.width} {self.channels} {self.layout}\n".encode("ascii")
        return header + self.data.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FeatureMap":
        nl = buf.find(b"\n")
        if nl < 0:
            raise CorruptBank("feature map header is missing")
        fields = buf[:nl].decode("ascii", errors="replace").split()
        if len(fields) != 5 or fields[0] != "fmap":
            raise CorruptBank(f"bad feature map header {buf[:nl]!r}")
        try:
            h, w, c = (int(x) for x in fields[1:4])
        except ValueError as exc:
            raise CorruptBank(f"bad feature map header {buf[:nl]!r}") from exc
        layout = fields[4]
        body = buf[nl + 1 :]
        expected = 4 * h * w * c
        if len(body) != expected:
            raise CorruptBank(f"feature map body has {len(body)} bytes, expected {expected}")
        try:
            return cls(np.frombuffer(body, dtype="<f4").reshape(c, h, w), layout)
        except (ShapeMismatch, ValueError) as exc:
            raise CorruptBank(str(exc)) from exc

    def write(self, path) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def read(cls, path) -> "FeatureMap":
        try:
            buf = Path(path).read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return cls.from_bytes(buf)


@dataclass(frozen=True, eq=False)
class RenderResult:
    coords: FeatureMap  # COORD3
    depth: np.ndarray  # (h, w) meters, inf where empty
    amodal: FeatureMap  # MASK1
    modal: FeatureMap  # MASK1
    shading: np.ndarray | None = None  # (h, w) gray level, 0 where empty

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def amodal_bool(self) -> np.ndarray:
        return self.amodal.data[0] > 0.5

    def modal_bool(self) -> np.ndarray:
        return self.modal.data[0] > 0.5


def _camera_vertices(model: NormalizedModel, P: Pose) -> np.ndarray:
    return np.ascontiguousarray(P.transform(model.vertices_m))


def _raw_render(model: NormalizedModel, P: Pose, K: Intrinsics, h: int, w: int):
    """Render without building feature maps: (coords[h,w,3] f64, depth, index)."""
    return _raw_render_Rt(model, P.R, P.t, K, h, w)


def _raw_render_Rt(model: NormalizedModel, R, t, K: Intrinsics, h: int, w: int):
    cam = np.ascontiguousarray(model.vertices_m @ R.T + t)
    if np.all(cam[:, 2] <= 0.0):
        raise BehindCamera("the whole model is behind the camera")
    norm = np.ascontiguousarray(model.vertices)
    if model.is_point_set:
        return _kernels.splat(cam, norm, K.fx, K.fy, K.cx, K.cy, h, w)
    return _kernels.raycast(cam, norm, model.triangles, K.fx, K.fy, K.cx, K.cy, h, w)


def _flat_shading(model: NormalizedModel, P: Pose, index: np.ndarray) -> np.ndarray:
    hit = index >= 0
    out = np.zeros(index.shape)
    if model.is_point_set:
        out[hit] = ALBEDO
        return out
    cam = _camera_vertices(model, P)
    tri = cam[model.triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1)
    n = n / np.where(norm > 0, norm, 1.0)[:, None]
    # two-sided: orient each normal toward the camera at the face centroid
    centroid = tri.mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centroid) > 0
    n[flip] *= -1
    intensity = ALBEDO * np.clip(n @ LIGHT_DIR, 0.0, None)
    out[hit] = intensity[index[hit]]
    return out


def render(model: NormalizedModel, P: Pose, K: Intrinsics, h: int = 64, w: int = 64) -> RenderResult:
    """Render normalized coordinates, depth and masks of ``model`` at pose ``P``.

    Triangle meshes are ray cast through every pixel center; point sets
    (``model.triangles`` empty) are splatted with a one-pixel footprint.
    """
    if h < 8 or w < 8:
        raise ValueError(f"raster must be at least 8x8, got {h}x{w}")
    coords, depth, index = _raw_render(model, P, K, h, w)
    mask = (index >= 0).astype(np.float32)
    amodal = FeatureMap(mask, "MASK1")
    return RenderResult(
        coords=FeatureMap(np.moveaxis(coords, -1, 0), "COORD3"),
        depth=depth,
        amodal=amodal,
        modal=amodal,
        shading=_flat_shading(model, P, index),
    )


def shade_rgb(r: RenderResult) -> FeatureMap:
    """Gray Lambertian image of a render as an RGB3 map."""
    s = r.shading if r.shading is not None else r.amodal.data[0] * ALBEDO
    return FeatureMap(np.repeat(np.asarray(s, dtype=np.float32)[None], 3, axis=0), "RGB3")


def encode_geometric(r: RenderResult, n_freq: int) -> FeatureMap:
    if int(n_freq) != n_freq or n_freq < 1:
        raise InvalidFrequency(f"frequency count must be >= 1, got {n_freq}")
    mask = r.amodal_bool()
    out = np.zeros((6 * int(n_freq), r.height, r.width), dtype=np.float32)
    xyz = r.coords.data[:, mask].T.astype(np.float64)
    out[:, mask] = encode_coords(xyz, n_freq).T
    return FeatureMap(out, "GEO")


def _check_same_raster(*maps: FeatureMap) -> None:
    shapes = {(m.height, m.width) for m in maps}
    if len(shapes) != 1:
        raise ShapeMismatch(f"feature maps disagree in raster size: {sorted(shapes)}")


def _expect(m: FeatureMap, layout: str) -> None:
    if m.layout != layout:
        raise ShapeMismatch(f"expected a {layout} map, got {m.layout}")


def assemble_reference(G: FeatureMap, image: FeatureMap, modal: FeatureMap, amodal: FeatureMap) -> FeatureMap:
    for m, tag in ((G, "GEO"), (image, "RGB3"), (modal, "MASK1"), (amodal, "MASK1")):
        _expect(m, tag)
    _check_same_raster(G, image, modal, amodal)
    return FeatureMap(np.concatenate([G.data, image.data, modal.data, amodal.data]), "REF")


def assemble_query(
    G: FeatureMap, E: FeatureMap, image: FeatureMap, modal: FeatureMap, amodal: FeatureMap
) -> FeatureMap:
    for m, tag in ((G, "GEO"), (E, "ERR"), (image, "RGB3"), (modal, "MASK1"), (amodal, "MASK1")):
        _expect(m, tag)
    if G.channels != E.channels:
        raise ShapeMismatch(f"GEO has {G.channels} channels but ERR has {E.channels}")
    _check_same_raster(G, E, image, modal, amodal)
    return FeatureMap(
        np.concatenate([G.data, E.data, image.data, modal.data, amodal.data]), "QUERY"
    )


def assemble_medoid(G: FeatureMap, modal: FeatureMap, amodal: FeatureMap) -> FeatureMap:
    for m, tag in ((G, "GEO"), (modal, "MASK1"), (amodal, "MASK1")):
        _expect(m, tag)
    _check_same_raster(G, modal, amodal)
    return FeatureMap(np.concatenate([G.data, modal.data, amodal.data]), "MEDOID")


def split_channels(F: FeatureMap) -> dict[str, FeatureMap]:
    """Inverse of the ``assemble_*`` functions."""
    n = F.n_freq
    d = F.data
    g = 6 * n if n else 0
    if F.layout == "REF":
        parts = {"geo": (d[:g], "GEO"), "rgb": (d[g : g + 3], "RGB3"),
                 "modal": (d[g + 3 : g + 4], "MASK1"), "amodal": (d[g + 4 :], "MASK1")}
    elif F.layout == "QUERY":
        parts = {"geo": (d[:g], "GEO"), "err": (d[g : 2 * g], "ERR"),
                 "rgb": (d[2 * g : 2 * g + 3], "RGB3"),
                 "modal": (d[2 * g + 3 : 2 * g + 4], "MASK1"),
                 "amodal": (d[2 * g + 4 :], "MASK1")}
    elif F.layout == "MEDOID":
        parts = {"geo": (d[:g], "GEO"), "modal": (d[g : g + 1], "MASK1"),
                 "amodal": (d[g + 1 :], "MASK1")}
    else:
        raise ShapeMismatch(f"layout {F.layout} is not a composite")
    return {k: FeatureMap(v, tag) for k, (v, tag) in parts.items()}


def composite_occlusion(
    target: RenderResult, target_rgb: FeatureMap, occluder: RenderResult, occluder_rgb: FeatureMap
) -> tuple[FeatureMap, RenderResult]:
    """Paste an occluder over a target where it is nearer to the camera.

    Returns the composited RGB and the target render with its modal mask
    reduced accordingly; the amodal mask is left untouched.
    """
    _check_same_raster(target.amodal, target_rgb, occluder.amodal, occluder_rgb)
    front = occluder.amodal_bool() & (occluder.depth < target.depth)
    rgb = target_rgb.data.copy()
    rgb[:, front] = occluder_rgb.data[:, front]
    modal = target.modal.data.copy()
    modal[0, front] = 0.0
    return FeatureMap(rgb, "RGB3"), replace(target, modal=FeatureMap(modal, "MASK1"))


def reference_feature(
    model: NormalizedModel, P: Pose, K: Intrinsics, n_freq: int, h: int = 64, w: int = 64
) -> tuple[FeatureMap, RenderResult]:
    r = render(model, P, K, h, w)
    F = assemble_reference(encode_geometric(r, n_freq), shade_rgb(r), r.modal, r.amodal)
    return F, r


def medoid_feature(
    model: NormalizedModel, P: Pose, K: Intrinsics, n_freq: int, h: int = 64, w: int = 64
) -> tuple[FeatureMap, RenderResult]:
    r = render(model, P, K, h, w)
    return assemble_medoid(encode_geometric(r, n_freq), r.modal, r.amodal), r


import struct

import numpy as np
import pytest

from posekit.errors import IoFailure, MalformedMesh, UnsupportedFormat
from posekit.geometry import cube_mesh
from posekit.meshio import load_mesh, write_ply


def _ascii_ply(v, f, extra=""):
    head = [
        "ply", "format ascii 1.0", "comment test", f"element vertex {len(v)}",
        "property float x", "property float y", "property float z",
    ]
    if extra:
        head.append(extra)
    head += [f"element face {len(f)}", "property list uchar int vertex_indices", "end_header"]
    rows = [" ".join(f"{c:.6f}" for c in p) + (" 7" if extra else "") for p in v]
    rows += [f"{len(t)} " + " ".join(map(str, t)) for t in f]
    return "\n".join(head + rows) + "\n"


def test_cube_ascii_ply(tmp_path):
    v, f = cube_mesh(0.1)
    (tmp_path / "c.ply").write_text(_ascii_ply(v, f))
    lv, lf = load_mesh(tmp_path / "c.ply")
    assert lv.shape == (8, 3) and lf.shape == (12, 3)
    assert lv.dtype == np.float64 and lf.dtype == np.int64
    assert np.allclose(lv, v, atol=1e-6) and np.array_equal(lf, f)


def test_ascii_ply_extra_property_and_quad(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]])
    (tmp_path / "q.ply").write_text(_ascii_ply(v, [[0, 1, 2, 3]], "property uchar red"))
    _, f = load_mesh(tmp_path / "q.ply")
    assert f.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_cube_binary_ply(tmp_path):
    v, f = cube_mesh(0.1)
    head = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(v)}\nproperty double x\nproperty double y\nproperty double z\n"
        f"element face {len(f)}\nproperty list uchar uint vertex_index\nend_header\n"
    ).encode()
    body = b"".join(struct.pack("<3d", *p) for p in v)
    body += b"".join(struct.pack("<B3I", 3, *t) for t in f)
    (tmp_path / "c.ply").write_bytes(head + body)
    lv, lf = load_mesh(tmp_path / "c.ply")
    assert np.array_equal(lv, v) and np.array_equal(lf, f)


def test_binary_ply_truncated(tmp_path):
    v, f = cube_mesh(0.1)
    head = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(v)}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    ).encode()
    (tmp_path / "c.ply").write_bytes(head + struct.pack("<3f", 0, 0, 0))
    with pytest.raises(MalformedMesh):
        load_mesh(tmp_path / "c.ply")


def test_big_endian_unsupported(tmp_path):
    (tmp_path / "c.ply").write_text("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(UnsupportedFormat):
        load_mesh(tmp_path / "c.ply")


def test_obj_quad_fan_and_tokens(tmp_path):
    (tmp_path / "q.obj").write_text(
        "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3/2 4\n"
    )
    v, f = load_mesh(tmp_path / "q.obj")
    assert v.shape == (4, 3)
    assert f.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_negative_indices(tmp_path):
    (tmp_path / "t.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    _, f = load_mesh(tmp_path / "t.obj")
    assert f.tolist() == [[0, 1, 2]]


def test_obj_out_of_range(tmp_path):
    (tmp_path / "t.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
    with pytest.raises(MalformedMesh, match="line 4"):
        load_mesh(tmp_path / "t.obj")


def test_ply_out_of_range_and_nan(tmp_path):
    v, f = cube_mesh(0.1)
    bad = f.copy()
    bad[3, 1] = 8
    (tmp_path / "c.ply").write_text(_ascii_ply(v, bad))
    with pytest.raises(MalformedMesh, match="face 3"):
        load_mesh(tmp_path / "c.ply")
    (tmp_path / "n.obj").write_text("v 0 nan 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(MalformedMesh):
        load_mesh(tmp_path / "n.obj")


def test_unsupported_and_missing(tmp_path):
    with pytest.raises(UnsupportedFormat):
        load_mesh(tmp_path / "m.stl")
    with pytest.raises(IoFailure):
        load_mesh(tmp_path / "missing.ply")


def test_write_ply_round_trip(tmp_path):
    v, f = cube_mesh(0.1)
    write_ply(tmp_path / "c.ply", v, f)
    lv, lf = load_mesh(tmp_path / "c.ply")
    assert np.array_equal(lv, v) and np.array_equal(lf, f)
    pts = np.random.default_rng(0).normal(size=(10, 3))
    write_ply(tmp_path / "p.ply", pts)
    lv, lf = load_mesh(tmp_path / "p.ply")
    assert np.array_equal(lv, pts) and lf.shape == (0, 3)

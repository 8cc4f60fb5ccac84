"""Compiled inner loops for the renderer and the search objective."""

import math

import numpy as np
from numba import njit

_EPS = 1e-12


@njit(cache=True, nogil=True)
def raycast(verts_cam, verts_norm, tris, fx, fy, cx, cy, h, w):
    """Nearest-hit ray casting through pixel centers (Moller-Trumbore).

    Triangles are visited in index order and a hit replaces the current one
    only when strictly nearer, so ties go to the smallest triangle index.
    Returns (coords[h, w, 3], depth[h, w], tri_index[h, w]).
    """
    coords = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)
    tri_idx = np.full((h, w), -1, dtype=np.int64)
    for k in range(tris.shape[0]):
        a, b, c = tris[k, 0], tris[k, 1], tris[k, 2]
        v0x, v0y, v0z = verts_cam[a, 0], verts_cam[a, 1], verts_cam[a, 2]
        e1x = verts_cam[b, 0] - v0x
        e1y = verts_cam[b, 1] - v0y
        e1z = verts_cam[b, 2] - v0z
        e2x = verts_cam[c, 0] - v0x
        e2y = verts_cam[c, 1] - v0y
        e2z = verts_cam[c, 2] - v0z

        # pixel window from the projected triangle; full frame if it crosses z=0
        i0, i1, j0, j1 = 0, h - 1, 0, w - 1
        za, zb, zc = v0z, verts_cam[b, 2], verts_cam[c, 2]
        if za <= 0.0 and zb <= 0.0 and zc <= 0.0:
            continue
        if za > 1e-9 and zb > 1e-9 and zc > 1e-9:
            ua = fx * v0x / za + cx
            ub = fx * verts_cam[b, 0] / zb + cx
            uc = fx * verts_cam[c, 0] / zc + cx
            va = fy * v0y / za + cy
            vb = fy * verts_cam[b, 1] / zb + cy
            vc = fy * verts_cam[c, 1] / zc + cy
            umin = min(ua, min(ub, uc))
            umax = max(ua, max(ub, uc))
            vmin = min(va, min(vb, vc))
            vmax = max(va, max(vb, vc))
            j0 = max(j0, int(math.floor(umin - 0.5)) - 1)
            j1 = min(j1, int(math.ceil(umax - 0.5)) + 1)
            i0 = max(i0, int(math.floor(vmin - 0.5)) - 1)
            i1 = min(i1, int(math.ceil(vmax - 0.5)) + 1)
        for i in range(i0, i1 + 1):
            dy = (i + 0.5 - cy) / fy
            for j in range(j0, j1 + 1):
                dx = (j + 0.5 - cx) / fx
                # p = d x e2, with d = (dx, dy, 1)
                px = dy * e2z - e2y
                py = e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if abs(det) < _EPS:
                    continue
                inv = 1.0 / det
                sx, sy, sz = -v0x, -v0y, -v0z
                u = (sx * px + sy * py + sz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * e1z - sz * e1y
                qy = sz * e1x - sx * e1z
                qz = sx * e1y - sy * e1x
                v = (dx * qx + dy * qy + qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t > 1e-9 and t < depth[i, j]:
                    depth[i, j] = t
                    tri_idx[i, j] = k
                    wa = 1.0 - u - v
                    for d in range(3):
                        val = (
                            wa * verts_norm[a, d]
                            + u * verts_norm[b, d]
                            + v * verts_norm[c, d]
                        )
                        coords[i, j, d] = min(1.0, max(-1.0, val))
    return coords, depth, tri_idx


@njit(cache=True, nogil=True)
def splat(pts_cam, pts_norm, fx, fy, cx, cy, h, w):
    """One-pixel z-buffered point splatting; ties go to the smallest index."""
    coords = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)
    idx = np.full((h, w), -1, dtype=np.int64)
    for k in range(pts_cam.shape[0]):
        z = pts_cam[k, 2]
        if z <= 1e-9:
            continue
        u = fx * pts_cam[k, 0] / z + cx
        v = fy * pts_cam[k, 1] / z + cy
        j = int(math.floor(u))
        i = int(math.floor(v))
        if i < 0 or i >= h or j < 0 or j >= w:
            continue
        if z < depth[i, j]:
            depth[i, j] = z
            idx[i, j] = k
            for d in range(3):
                coords[i, j, d] = pts_norm[k, d]
    return coords, depth, idx


@njit(cache=True, nogil=True)
def encoded_l1(coords, hit, target, weight, bg_cost, n_freq, channel_mask):
    """Mean over ``weight * |encode(coords) - target|`` on the full raster.

    ``target`` is channel-last ``(h, w, 6N)``; ``bg_cost[i, j]`` is the
    precomputed masked L1 of the target at a pixel the candidate misses.
    Frequencies are generated by angle doubling from one sin/cos pair.
    """
    h, w = hit.shape
    C = 6 * n_freq
    total = 0.0
    for i in range(h):
        for j in range(w):
            wt = weight[i, j]
            if wt == 0.0:
                continue
            if not hit[i, j]:
                total += bg_cost[i, j]
                continue
            acc = 0.0
            for d in range(3):
                ang = math.pi * coords[i, j, d]
                s = math.sin(ang)
                c = math.cos(ang)
                base = d * 2 * n_freq
                for k in range(n_freq):
                    ch = base + 2 * k
                    acc += channel_mask[ch] * abs(s - target[i, j, ch])
                    acc += channel_mask[ch + 1] * abs(c - target[i, j, ch + 1])
                    s, c = 2.0 * s * c, c * c - s * s
            total += wt * acc
    return total / (h * w * C)

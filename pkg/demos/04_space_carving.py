"""
A model from silhouettes alone
==============================

Without a mesh, a point model can be carved from a few calibrated masks.  Here
eight cameras look at a sphere of radius 0.8 from the corners of a cube.
"""

import numpy as np

from posekit.geometry import Intrinsics, look_at
from posekit.reference_bank import carved_model, space_carve
from posekit.rendering import render

K = Intrinsics.square(600.0, 64.0, 64.0, 128, 128)


def sphere_mask(P, radius=0.8):
    # a pixel is inside when its ray passes closer than the radius to the center
    j, i = np.meshgrid(np.arange(128) + 0.5, np.arange(128) + 0.5)
    d = np.stack([(j - K.cx) / K.fx, (i - K.cy) / K.fy, np.ones_like(j)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    c = P.t
    miss = np.linalg.norm(c - (d @ c)[..., None] * d, axis=-1)
    return (miss < radius).astype(float)


views = []
for corner in np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).T.reshape(-1, 3):
    P = look_at(corner * 10.0 / np.sqrt(3.0))
    views.append((sphere_mask(P), P, K))

pts = space_carve(views, resolution=32)
r = np.linalg.norm(pts, axis=1)
print(f"{len(pts)} surface voxels, radius {r.min():.3f} .. {r.max():.3f} (true 0.8)")

# the carved points render as 1-px splats, e.g. as a 5 cm object
model = carved_model(pts, scale=0.05 / 0.8)
view = render(model, look_at([0, 0, -1.0]), Intrinsics.square(300.0, 32, 32, 64, 64))
print("splatted pixels:", int(view.amodal_bool().sum()))

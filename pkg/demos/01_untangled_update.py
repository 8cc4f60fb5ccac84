"""
Moving a reference into a different camera
===========================================

A reference rendered with one camera is moved onto a query seen by another.
The translation delta is a pixel shift plus a depth ratio, and the rotation
delta is applied relative to the viewing ray, so the same delta means the
same thing whatever the two cameras are.
"""

import numpy as np

from posekit.geometry import Intrinsics, Pose, geodesic_distance, rot_y, rot_z
from posekit.refinement import RefinementParams, oracle_params, untangled_update

# a reference rendered with a short lens and an off-center principal point
K_ref = Intrinsics.square(300.0, 140.0, 110.0, 256, 256)
ref = Pose(rot_y(0.4), [0.05, -0.02, 0.9])

# the query camera has twice the focal length
K_q = Intrinsics.square(600.0, 128.0, 128.0, 256, 256)

# the identity delta keeps the apparent size, so the object moves twice as far away
out = untangled_update(RefinementParams.identity(), ref, K_ref, K_q)
print("identity delta, depth", ref.t[2], "->", out.t[2])

# the closed-form inverse finds the delta that lands exactly on a target pose
target = Pose(rot_z(0.3) @ rot_y(-0.2), [-0.03, 0.04, 1.4])
delta = oracle_params(ref, K_ref, target, K_q)
print("pixel shift", np.round(delta.v_xyz[:2], 3), "scale", round(delta.v_xyz[2], 4))

hit = untangled_update(delta, ref, K_ref, K_q)
print("translation error", np.linalg.norm(hit.t - target.t))
print("rotation error", geodesic_distance(hit.R, target.R))

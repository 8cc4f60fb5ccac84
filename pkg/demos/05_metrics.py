"""
Scoring poses of symmetric objects
==================================

ADD compares corresponding vertices; ADD-S matches each vertex to its nearest
neighbor, so a quarter turn of a cube costs nothing.
"""

import numpy as np

from posekit.geometry import Pose, cube_mesh, normalize_model, rot_z
from posekit.metrics import accuracy_curve, auc_add, evaluate_pose, threshold_accuracy

cube = normalize_model(*cube_mesh(0.1))
gt = Pose(np.eye(3), [0.0, 0.0, 1.0])

for angle in (0.0, np.pi / 8, np.pi / 2):
    rep = evaluate_pose(Pose(rot_z(angle), gt.t), gt, cube)
    print(f"turn {np.degrees(angle):5.1f} deg: ADD {rep.add * 1000:6.2f} mm, ADD-S {rep.add_s * 1000:6.2f} mm")

# accuracy at a fraction of the diameter and the area under the curve up to 10 cm
errors = np.array([0.001, 0.004, 0.012, 0.03, 0.2])
print("0.1d accuracy", threshold_accuracy(errors, cube.diameter, 0.1))
print("AUC", round(auc_add(errors), 4))
th, acc = accuracy_curve(errors)
print("curve at 5 cm:", acc[50])

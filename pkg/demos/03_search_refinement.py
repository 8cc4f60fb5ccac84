"""
Render-and-compare without a network
====================================

The search predictor fits each delta by rendering candidate poses and comparing
their encoded coordinates with the query's.  Four references vote, then four
single-reference steps polish the estimate.

The scene below is a hard one: the cube sits in a corner of the image and is
cut by the border, so every reference settles too far away.  The later steps
render the estimate in the query camera itself, which is what pulls it in.
"""

import numpy as np

from posekit.experiment import ExperimentConfig, build_experiment_bank, make_predictor, resolve_mesh
from posekit.geometry import normalize_model
from posekit.metrics import evaluate_pose
from posekit.refinement import QueryContext, iterative_refine, multi_reference_refine
from posekit.scenes import render_query, sample_scene

cfg = ExperimentConfig(object_id="cube", predictor="search:2000")
model = normalize_model(*resolve_mesh(cfg.mesh))
bank = build_experiment_bank(cfg, model, np.random.SeedSequence(0))

scene = sample_scene(cfg, 11)
obs = render_query(scene, model, cfg.N)
query = QueryContext(scene.intrinsics, obs.feature)
predictor = make_predictor(cfg.predictor, scene, obs, model, cfg.N, seed=11)

mr = multi_reference_refine(query, bank, predictor)
for c in mr.candidates:
    rep = evaluate_pose(c.pose, scene.gt_pose, model)
    print(f"reference {c.source_reference}: ADD {rep.add / model.diameter:.3f} d")
print(f"medoid:      ADD {evaluate_pose(mr.pose, scene.gt_pose, model).add / model.diameter:.3f} d")

trace = iterative_refine(query, mr.pose, predictor, model, cfg.N, cfg.iterations)
for k, P in enumerate(trace.history, 1):
    print(f"iteration {k}: ADD {evaluate_pose(P, scene.gt_pose, model).add / model.diameter:.4f} d")

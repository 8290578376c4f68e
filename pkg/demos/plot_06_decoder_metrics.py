"""
Anchors, modes and metrics
==========================

The decoder starts from intention anchors: k-means centers of where agents of
each type ended up in the training data. It predicts one trajectory and one
score per anchor and keeps the top K. The metrics follow the usual motion
forecasting set: minADE, minFDE, miss rate, overlap rate, mAP and Soft-mAP.
"""

import numpy as np

from heteroloc.decoder import PredictionSet, fit_anchors
from heteroloc.metrics import ThresholdSchedule, evaluate_predictions
from heteroloc.scene import ScenarioKind, ScenarioSpec, generate_corpus
from heteroloc.training import constant_velocity_predictions, ground_truth_predictions

specs = [ScenarioSpec(kind, n_agents=6, future_len=40) for kind in ScenarioKind]
scenes = generate_corpus(specs, 12, seed=0)

anchors = fit_anchors(scenes, num_anchors=4, seed=0)
for atype, centers in anchors.anchors.items():
    print(f"{atype.value:<10} endpoint anchors (agent frame):", np.round(centers, 1).tolist())

# horizons in seconds, each with its miss threshold in meters
schedule = ThresholdSchedule((1.0, 2.0, 4.0), (1.0, 1.8, 3.0))

print()
print("ground truth as the only mode")
print(evaluate_predictions(scenes, ground_truth_predictions(scenes), schedule).table())

print("constant velocity")
print(evaluate_predictions(scenes, constant_velocity_predictions(scenes), schedule).table())

# two modes per agent: the truth shifted sideways, scored lower than a worse guess
def two_modes(scene):
    out = []
    for a in scene.agents:
        gt = a.future[:, :2]
        trajs = np.stack([gt + [0.0, 4.0], gt + [0.0, 0.5]])
        out.append(PredictionSet(a.id, trajs, np.array([0.7, 0.3]), np.arange(2)))
    return out


print("a close mode ranked second")
print(evaluate_predictions(scenes, [two_modes(s) for s in scenes], schedule).table())

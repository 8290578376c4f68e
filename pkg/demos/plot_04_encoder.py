"""
Encoding tracks and lanes
=========================

A track is a small point set: every valid history state becomes one row of
features in the agent's own frame, a shared network lifts each row, and a
max over rows gives one vector. Lanes are chunked and encoded the same way.
"""

import math

import numpy as np

from heteroloc.polyline import EncoderDims, agent_point_features, encode_agent_history, init_polyline_params
from heteroloc.scene import AgentTrack, AgentType

params = init_polyline_params(np.random.default_rng(0), EncoderDims(d_model=16, d_type=4, point_widths=(16, 16)), {})

t = np.arange(11) * 0.1
states = np.column_stack([5 * t, 0.5 * t ** 2, np.zeros(11), np.full(11, 5.0), t, np.ones(11)])
track = AgentTrack("car", AgentType.VEHICLE, states)
emb, pose = encode_agent_history(track, None, params)
print("reference pose (last valid state):", pose)
print("features per state:", agent_point_features(track).shape, "-> embedding", emb.shape)

# an invalid state is dropped, whatever values it holds
noisy = AgentTrack("car", AgentType.VEHICLE, states.copy())
noisy.history[4, 5] = 0
noisy.history[4, :5] = 1e6
clean = AgentTrack("car", AgentType.VEHICLE, states.copy())
clean.history[4, 5] = 0
print("garbage in an invalid state is never read:",
      np.array_equal(encode_agent_history(noisy, None, params)[0].data, encode_agent_history(clean, None, params)[0].data))

# moving the whole track rigidly leaves the embedding alone (up to rounding)
th = 1.1
rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
moved = states.copy()
moved[:, :2] = states[:, :2] @ rot.T + [300.0, -40.0]
moved[:, 3:5] = states[:, 3:5] @ rot.T
moved[:, 2] += th
e2, _ = encode_agent_history(AgentTrack("car", AgentType.VEHICLE, moved), None, params)
print(f"rigid motion changes the embedding by {np.abs(e2.data - emb.data).max():.1e}")

# the type embedding tells a pedestrian from a car on the same path
walker, _ = encode_agent_history(AgentTrack("p", AgentType.PEDESTRIAN, states), None, params)
print(f"same path, other type: difference {np.abs(walker.data - emb.data).max():.2f}")

"""PointNet-style set encoder for agent histories and map polylines.

A shared per-point network runs on every valid point, expressed in a
reference frame, and a max over the point set produces one vector per
track or map chunk. Invalid points never enter the network; the max is
taken over valid rows only, so the result equals the encoding of the
filtered point set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import MlpParams, init_linear, init_mlp, linear, mlp_apply
from .scene import HEADING, VALID, VX, VY, X, Y, AgentTrack, AgentType, Polyline, PolylineKind, ValidationError

POS_SCALE = 0.1  # meters -> network units
AGENT_POINT_DIM = 11  # rel xy, dt, rel vxy, cos/sin dheading, valid, one-hot type
MAP_POINT_DIM = 8  # rel xy, cos/sin dheading, has-heading, one-hot kind
CHUNK_POINTS = 20


@dataclass
class EncoderDims:
    d_model: int = 64
    d_type: int = 16
    point_widths: tuple = (32, 64)


def init_polyline_params(rng, dims: EncoderDims, store: dict) -> dict:
    widths = tuple(dims.point_widths)
    init_mlp(rng, (AGENT_POINT_DIM,) + widths, store, "agent_points", activate_last=True)
    init_mlp(rng, (MAP_POINT_DIM,) + widths, store, "map_points", activate_last=True)
    store["type_table"] = rng.normal(0.0, 1.0, size=(len(AgentType), dims.d_type))
    init_linear(rng, widths[-1] + dims.d_type, dims.d_model, store, "agent_proj")
    init_linear(rng, widths[-1], dims.d_model, store, "map_proj")
    return store


def _rotate(vecs, heading):
    c, s = math.cos(heading), math.sin(heading)
    return np.stack([c * vecs[..., 0] + s * vecs[..., 1], -s * vecs[..., 0] + c * vecs[..., 1]], axis=-1)


def to_frame(points, pose):
    """World points (..., 2) into the frame of ``pose = (x, y, heading)``."""
    return _rotate(np.asarray(points, dtype=float) - np.array(pose[:2]), pose[2])


def from_frame(points, pose):
    return _rotate(np.asarray(points, dtype=float), -pose[2]) + np.array(pose[:2])


def agent_point_features(track: AgentTrack, pose=None) -> np.ndarray:
    """Features of the valid history points; reference pose defaults to the last valid state."""
    h = track.history
    valid = np.flatnonzero(h[:, VALID] > 0)
    if not len(valid):
        raise ValidationError(f"agent {track.id}: no valid history state")
    if pose is None:
        pose = track.reference_pose()
    last = valid[-1]
    rows = h[valid]
    rel = to_frame(rows[:, [X, Y]], pose) * POS_SCALE
    vel = np.nan_to_num(rows[:, [VX, VY]], nan=0.0, posinf=0.0, neginf=0.0)
    vel = _rotate(vel, pose[2]) * POS_SCALE
    dh = rows[:, HEADING] - pose[2]
    dt = (valid - last) * track.timestep
    onehot = np.zeros((len(rows), len(AgentType)))
    onehot[:, track.type.index] = 1.0
    return np.column_stack([rel, dt, vel, np.cos(dh), np.sin(dh), np.ones(len(rows)), onehot])


def map_point_features(points, kind: PolylineKind, pose) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    rel = to_frame(points[:, :2], pose) * POS_SCALE
    if points.shape[1] == 3:
        dh = points[:, 2] - pose[2]
        head = np.column_stack([np.cos(dh), np.sin(dh), np.ones(len(points))])
    else:
        head = np.zeros((len(points), 3))
    onehot = np.zeros((len(points), len(PolylineKind)))
    onehot[:, kind.index] = 1.0
    return np.column_stack([rel, head, onehot])


def split_polyline(points, max_points: int = CHUNK_POINTS) -> list[np.ndarray]:
    """Chunks of at most ``max_points``; consecutive chunks share one point."""
    points = np.asarray(points, dtype=float)
    if len(points) <= max_points:
        return [points]
    chunks = []
    start = 0
    while start < len(points) - 1:
        chunks.append(points[start:start + max_points])
        start += max_points - 1
    return chunks


def chunk_pose(points) -> tuple[float, float, float]:
    """Reference pose of a map chunk: centroid, heading of the first-to-last chord."""
    points = np.asarray(points, dtype=float)
    c = points[:, :2].mean(axis=0)
    d = points[-1, :2] - points[0, :2]
    return float(c[0]), float(c[1]), math.atan2(d[1], d[0])


def nearest_point(points, xy) -> np.ndarray:
    """Point on the polyline (segments, not just vertices) closest to ``xy``; lower segment on ties.

    Vertex snapping would tie whenever ``xy`` is equidistant from two vertices,
    as the centroid of an evenly sampled straight chunk always is.
    """
    pts = np.asarray(points, dtype=float)[:, :2]
    xy = np.asarray(xy, dtype=float)
    if len(pts) == 1:
        return pts[0].copy()
    a, seg = pts[:-1], np.diff(pts, axis=0)
    length2 = seg[:, 0] * seg[:, 0] + seg[:, 1] * seg[:, 1]
    rel = xy - a
    t = np.clip((rel[:, 0] * seg[:, 0] + rel[:, 1] * seg[:, 1]) / np.maximum(length2, 1e-300), 0.0, 1.0)
    foot = a + t[:, None] * seg
    d = foot - xy
    return foot[int(np.argmin(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]))]


def pad_index(lengths) -> np.ndarray:
    """(S, Lmax) row index into the stacked points; padding repeats a segment's first row."""
    lengths = np.asarray(lengths, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    width = int(lengths.max()) if len(lengths) else 0
    offs = np.arange(width)[None, :]
    idx = starts[:, None] + np.where(offs < lengths[:, None], offs, 0)
    return idx


def pooled_sets(mlp: MlpParams, feats, index) -> ad.Tensor:
    """Per-point network on stacked rows, then a max over each set of rows."""
    h = mlp_apply(mlp, feats)
    return ad.max_reduce(ad.gather(h, index), axis=1)


def encode_agents(params, feats, index, type_idx) -> ad.Tensor:
    """Batched agent encoding: (S, d_model) from stacked point features."""
    pooled = pooled_sets(MlpParams.from_store(params, "agent_points", activate_last=True), feats, index)
    types = ad.gather(params["type_table"], np.asarray(type_idx, dtype=np.int64))
    return linear(params, "agent_proj", ad.concat([pooled, types], axis=1))


def encode_maps(params, feats, index) -> ad.Tensor:
    pooled = pooled_sets(MlpParams.from_store(params, "map_points", activate_last=True), feats, index)
    return linear(params, "map_proj", pooled)


def encode_agent_history(track: AgentTrack, table, params) -> tuple[ad.Tensor, tuple]:
    """Embedding (1 x d_model) of one track and its reference pose.

    ``table`` overrides ``params['type_table']`` when given.
    """
    track.validate()
    pose = track.reference_pose()
    feats = agent_point_features(track, pose)
    if table is not None:
        params = _Overlay(params, {"type_table": table})
    emb = encode_agents(params, feats, pad_index([len(feats)]), [track.type.index])
    return emb, pose


def encode_map_polyline(polyline: Polyline, reference, params) -> tuple[ad.Tensor, np.ndarray]:
    """Embedding (1 x d_model) of one polyline in the ``reference`` frame, and its vertex nearest the reference."""
    polyline.validate()
    feats = map_point_features(polyline.points, polyline.kind, reference)
    emb = encode_maps(params, feats, pad_index([len(feats)]))
    return emb, nearest_point(polyline.points, reference[:2])


class _Overlay:
    def __init__(self, base, extra: dict):
        self.base, self.extra = base, extra

    def __getitem__(self, k):
        return self.extra[k] if k in self.extra else self.base[k]

    def __contains__(self, k):
        return k in self.extra or k in self.base

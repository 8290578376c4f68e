"""Full encoder-decoder: scene preparation, batching, forward, loss and prediction.

A scene is first reduced to plain arrays (``PreparedScene``); everything
that does not depend on parameters is computed once there. A batch is the
disjoint union of prepared scenes with indices shifted, so no edge,
neighborhood or attention row ever crosses a scene boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .decoder import (IntentionAnchorSet, PredictionSet, decode, future_in_agent_frame, init_decoder_params,
                      loss_terms, match_anchor, modes_of, select_topk)
from .fusion import AttentionDims, Neighborhoods, init_fusion_params, local_attention, project_by_category, \
    relative_positions, select_neighborhood
from .graphs import GraphConfig, build_multiscale_from_positions, reference_positions
from .message_passing import MessagePassingDims, edge_geometry, init_message_passing_params, propagate
from .polyline import (EncoderDims, agent_point_features, chunk_pose, encode_agents, encode_maps, from_frame,
                       init_polyline_params, map_point_features, nearest_point, pad_index, split_polyline)
from .scene import Scene, ValidationError


@dataclass
class PreparedScene:
    scene_id: str
    nodes: np.ndarray  # compact -> scene agent index
    poses: np.ndarray  # (N, 3)
    types: np.ndarray  # (N,)
    agent_feats: np.ndarray
    agent_lengths: np.ndarray
    map_feats: np.ndarray
    map_lengths: np.ndarray
    map_positions: np.ndarray  # (Mc, 2)
    members: list  # per edge family, (E, w) compact member matrix
    neigh_index: np.ndarray
    neigh_mask: np.ndarray
    relpos: np.ndarray
    target_rows: np.ndarray  # compact rows of the targets
    target_ids: list
    anchors: np.ndarray  # (n_t, A, 2)
    gt: np.ndarray  # (n_t, T_f, 2) agent frame
    gt_valid: np.ndarray  # (n_t, T_f)
    matched: np.ndarray  # (n_t,), -1 without valid future

    @property
    def n_agents(self) -> int:
        return len(self.nodes)


def map_tokens(scene: Scene):
    """Chunk features, chunk lengths and token positions for every map chunk."""
    feats, lengths, positions = [], [], []
    for poly in scene.polylines:
        for chunk in split_polyline(poly.points):
            pose = chunk_pose(chunk)
            f = map_point_features(chunk, poly.kind, pose)
            feats.append(f)
            lengths.append(len(f))
            positions.append(nearest_point(chunk, pose[:2]))
    if not feats:
        return np.zeros((0, 8)), np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    return np.concatenate(feats), np.array(lengths, dtype=np.int64), np.array(positions)


def prepare_scene(scene: Scene, config: ExperimentConfig, anchors: IntentionAnchorSet | None) -> PreparedScene:
    scene.validate()
    nodes, skipped, pos = reference_positions(scene)
    if not len(nodes):
        raise ValidationError(f"scene {scene.seed}: no agent has a valid history state")
    graph = build_multiscale_from_positions(nodes, skipped, pos, GraphConfig(config.graph.k, tuple(config.graph.scales)))
    agents = [scene.agents[i] for i in nodes]
    poses = np.array([a.reference_pose() for a in agents], dtype=float).reshape(-1, 3)
    types = np.array([a.type.index for a in agents], dtype=np.int64)
    feats = [agent_point_features(a, tuple(p)) for a, p in zip(agents, poses)]
    map_feats, map_lengths, map_pos = map_tokens(scene)
    neigh = select_neighborhood(pos, map_pos, config.model.neighborhood)
    relpos = relative_positions(neigh, poses, map_pos)

    row_of = {int(s): c for c, s in enumerate(nodes)}
    rows, ids = [], []
    for tid in scene.target_ids:
        s = scene.agent_index(tid)
        if s in row_of:
            rows.append(row_of[s])
            ids.append(tid)
    t_f = scene.future_len
    a_count = anchors.size if anchors is not None else 0
    anc = np.zeros((len(rows), a_count, 2))
    gt = np.zeros((len(rows), t_f, 2))
    valid = np.zeros((len(rows), t_f), dtype=bool)
    matched = np.full(len(rows), -1, dtype=np.int64)
    for j, r in enumerate(rows):
        track = agents[r]
        if anchors is not None:
            anc[j] = anchors.for_type(track.type)
        if track.future is not None and t_f:
            gt[j], valid[j] = future_in_agent_frame(track)
            gt[j][~valid[j]] = 0.0
            if valid[j].any() and anchors is not None:
                matched[j] = match_anchor(anc[j], gt[j], valid[j])
    return PreparedScene(
        scene_id=str(scene.seed), nodes=nodes, poses=poses, types=types,
        agent_feats=np.concatenate(feats), agent_lengths=np.array([len(f) for f in feats], dtype=np.int64),
        map_feats=map_feats, map_lengths=map_lengths, map_positions=map_pos,
        members=graph.member_arrays(), neigh_index=neigh.index, neigh_mask=neigh.mask, relpos=relpos,
        target_rows=np.array(rows, dtype=np.int64), target_ids=ids, anchors=anc, gt=gt, gt_valid=valid,
        matched=matched,
    )


@dataclass
class Batch:
    scenes: list
    agent_feats: np.ndarray
    agent_index: np.ndarray
    types: np.ndarray
    map_feats: np.ndarray
    map_index: np.ndarray
    families: list  # per family: list of (E, w) blocks
    geometries: list  # matching per-block geometry vectors
    neighborhoods: Neighborhoods
    relpos: np.ndarray
    target_rows: np.ndarray
    anchors: np.ndarray
    gt: np.ndarray
    gt_valid: np.ndarray
    matched: np.ndarray
    target_scene: np.ndarray  # index into ``scenes`` per target

    @property
    def n_agents(self) -> int:
        return len(self.types)


def collate(scenes: list[PreparedScene]) -> Batch:
    if not scenes:
        raise ValidationError("empty batch")
    n_total = sum(s.n_agents for s in scenes)
    a_off = np.cumsum([0] + [s.n_agents for s in scenes])
    m_off = np.cumsum([0] + [len(s.map_lengths) for s in scenes])
    positions = np.concatenate([s.poses[:, :2] for s in scenes])

    n_fam = len(scenes[0].members)
    families, geometries = [], []
    for f in range(n_fam):
        by_width: dict[int, list] = {}
        for s, off in zip(scenes, a_off):
            m = s.members[f]
            if m.size:
                by_width.setdefault(m.shape[1], []).append(m + off)
        blocks = [np.concatenate(by_width[w]) for w in sorted(by_width)]
        families.append(blocks)
        geometries.append([edge_geometry(b, positions) for b in blocks])

    width = max(s.neigh_index.shape[1] for s in scenes)
    index = np.zeros((n_total, width), dtype=np.int64)
    mask = np.zeros((n_total, width), dtype=bool)
    relpos = np.zeros((n_total, width, 2))
    for s, ao, mo in zip(scenes, a_off, m_off):
        w = s.neigh_index.shape[1]
        idx = s.neigh_index
        shifted = np.where(idx < s.n_agents, idx + ao, idx - s.n_agents + n_total + mo)
        index[ao:ao + s.n_agents, :w] = np.where(s.neigh_mask, shifted, 0)
        mask[ao:ao + s.n_agents, :w] = s.neigh_mask
        relpos[ao:ao + s.n_agents, :w] = s.relpos

    agent_lengths = np.concatenate([s.agent_lengths for s in scenes])
    map_lengths = np.concatenate([s.map_lengths for s in scenes])
    return Batch(
        scenes=scenes,
        agent_feats=np.concatenate([s.agent_feats for s in scenes]),
        agent_index=pad_index(agent_lengths),
        types=np.concatenate([s.types for s in scenes]),
        map_feats=np.concatenate([s.map_feats for s in scenes]),
        map_index=pad_index(map_lengths) if len(map_lengths) else np.zeros((0, 1), dtype=np.int64),
        families=families, geometries=geometries,
        neighborhoods=Neighborhoods(index, mask, n_total), relpos=relpos,
        target_rows=np.concatenate([s.target_rows + ao for s, ao in zip(scenes, a_off)]),
        anchors=np.concatenate([s.anchors for s in scenes]),
        gt=np.concatenate([s.gt for s in scenes]),
        gt_valid=np.concatenate([s.gt_valid for s in scenes]),
        matched=np.concatenate([s.matched for s in scenes]),
        target_scene=np.concatenate([np.full(len(s.target_rows), i) for i, s in enumerate(scenes)]).astype(np.int64),
    )


def init_params(config: ExperimentConfig, future_len: int, seed: int = 0) -> dict:
    m = config.model
    rng = np.random.default_rng(seed)
    store: dict = {}
    init_polyline_params(rng, EncoderDims(m.d_model, m.d_type, tuple(m.point_widths)), store)
    init_message_passing_params(rng, MessagePassingDims(m.d_model, m.rounds, 1 + len(config.graph.scales)), store)
    init_fusion_params(rng, AttentionDims(m.d_model, m.heads, m.layers, m.neighborhood), store)
    init_decoder_params(rng, m.d_model, m.decoder_hidden, future_len, store)
    return store


def encode(params, batch: Batch, config: ExperimentConfig):
    """Final agent embeddings (N x D) for every agent in the batch."""
    m = config.model
    h = encode_agents(params, batch.agent_feats, batch.agent_index, batch.types)
    if len(batch.map_index):
        maps = encode_maps(params, batch.map_feats, batch.map_index)
    else:
        maps = np.zeros((0, m.d_model))
    h = propagate(batch.families, h, batch.types, params, rounds=m.rounds, geometries=batch.geometries)
    h = project_by_category(h, batch.types, params)
    return local_attention(h, maps, batch.neighborhoods, batch.relpos, params, heads=m.heads, layers=m.layers)


def decode_targets(params, batch: Batch, config: ExperimentConfig):
    fused = encode(params, batch, config)
    emb = ad.gather(fused.features, batch.target_rows)
    return decode(emb, batch.anchors, params, batch.gt.shape[1])


def batch_loss(params, batch: Batch, config: ExperimentConfig):
    """Mean loss over targets with a valid future, plus per-target values (for diagnostics).

    Returns ``(loss Tensor or None, per_target ndarray)``; per-target entries of
    targets without a valid future are NaN.
    """
    traj, logits = decode_targets(params, batch, config)
    keep = np.flatnonzero(batch.matched >= 0)
    per = np.full(len(batch.matched), np.nan)
    if not len(keep):
        return None, per
    traj_k = ad.gather(traj, keep) if len(keep) < len(batch.matched) else traj
    logit_k = ad.gather(logits, keep) if len(keep) < len(batch.matched) else logits
    cls, reg = loss_terms(traj_k, logit_k, batch.gt[keep], batch.gt_valid[keep], batch.matched[keep])
    total = ad.add(cls, ad.scale(reg, config.model.reg_weight))
    per[keep] = total.data
    return ad.mean(total), per


def predict(params, batch: Batch, config: ExperimentConfig) -> list[list[PredictionSet]]:
    """World-frame prediction sets, grouped per scene in batch order."""
    traj, logits = decode_targets(params, batch, config)
    out = [[] for _ in batch.scenes]
    cursor = [0] * len(batch.scenes)
    for j, row in enumerate(batch.target_rows):
        s = int(batch.target_scene[j])
        scene = batch.scenes[s]
        local = cursor[s]
        cursor[s] += 1
        pose = scene.poses[scene.target_rows[local]]
        ps = select_topk(modes_of(traj.data[j], logits.data[j]), config.model.k_modes, scene.target_ids[local])
        ps.trajectories = from_frame(ps.trajectories, pose)
        out[s].append(ps)
    return out

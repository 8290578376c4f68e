"""Aggregation-decomposition message passing over pairwise and group edges.

Per edge: pool member features (mean and max) plus a scalar geometry
summary, project, and let one shared network emit a bank of messages, one
slot per agent category. Each member receives the slot of its own
category. Incoming messages are mean-pooled per agent and fed to a
residual node update. Every scale (the pairwise graph, then each
hyperedge size) runs its own rounds from the same input features; the
results are concatenated and fused back onto the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError
from .nn import MlpParams, init_linear, init_mlp, linear, mlp_apply
from .polyline import POS_SCALE
from .scene import AgentType

N_CATEGORIES = len(AgentType)


@dataclass
class MessagePassingDims:
    d_model: int = 64
    rounds: int = 2
    n_scales: int = 3  # pairwise + hyperedge sizes


def scale_names(n_scales: int) -> list[str]:
    return ["mp.pair"] + [f"mp.hyper{i}" for i in range(1, n_scales)]


def init_message_passing_params(rng, dims: MessagePassingDims, store: dict) -> dict:
    d = dims.d_model
    for name in scale_names(dims.n_scales):
        init_linear(rng, 2 * d + 1, d, store, f"{name}.agg")
        init_linear(rng, d, N_CATEGORIES * d, store, f"{name}.decomp", out_scale=0.5)
        init_mlp(rng, (2 * d, d, d), store, f"{name}.update", out_scale=0.5)
    init_linear(rng, dims.n_scales * d, d, store, "mp.fuse", out_scale=0.5)
    return store


def geometry_summary(member_positions) -> float:
    """Mean pairwise distance between members (canonical order, in network units)."""
    pos = np.asarray(member_positions, dtype=float)
    pos = pos[np.lexsort((pos[:, 1], pos[:, 0]))]
    n = len(pos)
    if n < 2:
        return 0.0
    iu, ju = np.triu_indices(n, 1)
    d = pos[iu] - pos[ju]
    return float(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]).mean()) * POS_SCALE


def edge_geometry(members: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Mean pairwise member distance for every row of an (E, S) member matrix.

    Rows are sorted by agent index first, so member order does not matter.
    """
    members = np.sort(np.asarray(members, dtype=np.int64), axis=1)
    e_count, width = members.shape
    if width < 2 or e_count == 0:
        return np.zeros(e_count)
    pos = np.asarray(positions, dtype=float)[members]
    iu, ju = np.triu_indices(width, 1)
    d = pos[:, iu] - pos[:, ju]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]).mean(axis=1) * POS_SCALE


def aggregate_edge(member_features, member_positions) -> ad.Tensor:
    """Order-independent edge representation: mean ⊕ max ⊕ geometry, width 2D+1."""
    feats = ad.as_tensor(member_features)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ContractError(f"aggregate_edge needs >= 2 member rows, got shape {feats.shape}")
    order = np.lexsort(feats.data.T[::-1])
    canon = ad.gather(feats, order)
    geo = np.array([geometry_summary(member_positions)])
    return ad.concat([ad.mean(canon, axis=0), ad.max_reduce(canon, axis=0), geo], axis=0)


def decompose_messages(aggregate, params, scale: str = "mp.pair") -> ad.Tensor:
    """Map an aggregate (..., 2D+1) to a message bank (..., C, D)."""
    agg = ad.as_tensor(aggregate)
    w = params[f"{scale}.agg.w"]
    if agg.shape[-1] != w.shape[0]:
        raise ShapeError(f"decompose_messages: aggregate width {agg.shape[-1]}, expected {w.shape[0]}")
    z = ad.relu(linear(params, f"{scale}.agg", agg))
    bank = linear(params, f"{scale}.decomp", z)
    d = bank.shape[-1] // N_CATEGORIES
    return ad.reshape(bank, bank.shape[:-1] + (N_CATEGORIES, d))


def _as_blocks(members) -> list[np.ndarray]:
    """Edge families may mix widths (e.g. scenes batched together); keep one matrix per width."""
    if isinstance(members, (list, tuple)):
        blocks = [np.asarray(b, dtype=np.int64) for b in members]
    else:
        blocks = [np.asarray(members, dtype=np.int64)]
    return [np.sort(b.reshape(len(b), -1), axis=1) for b in blocks if b.size]


def _one_scale(h0, blocks, geometries, types, params, scale, rounds):
    """R rounds on one edge family given as (E_w, w) member blocks with sorted rows."""
    n, d = h0.shape
    receivers = np.concatenate([b.reshape(-1) for b in blocks])
    counts = np.bincount(receivers, minlength=n).astype(float)
    active = (counts > 0).astype(float)[:, None]
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)[:, None]
    # row of the flattened (E*C, D) message bank delivered to each (edge, member) slot
    offsets = np.cumsum([0] + [len(b) for b in blocks])
    slot_rows = np.concatenate([
        (np.repeat(np.arange(len(b)), b.shape[1]) + off) * N_CATEGORIES for b, off in zip(blocks, offsets)
    ]) + types[receivers]
    e_total = int(offsets[-1])
    update = MlpParams.from_store(params, f"{scale}.update")
    h = h0
    for _ in range(rounds):
        aggs = []
        for b, geo in zip(blocks, geometries):
            f = ad.gather(h, b)  # E x w x D
            aggs.append(ad.concat([ad.mean(f, axis=1), ad.max_reduce(f, axis=1), geo[:, None]], axis=1))
        agg = aggs[0] if len(aggs) == 1 else ad.concat(aggs, axis=0)
        bank = ad.reshape(decompose_messages(agg, params, scale), (e_total * N_CATEGORIES, d))
        incoming = ad.scatter_add(ad.gather(bank, slot_rows), receivers, n)
        pooled = ad.mul(incoming, inv)
        delta = mlp_apply(update, ad.concat([h, pooled], axis=1))
        h = ad.add(h, ad.mul(delta, active))
    return h, active


def propagate(member_arrays, features, types, params, rounds: int = 2,
              positions=None, geometries=None) -> ad.Tensor:
    """Socially-aware features (N x D) from per-scale edge member matrices.

    ``member_arrays[0]`` holds the pairwise 2-member edges, later entries the
    hyperedge families; an entry may be a list of member blocks of different
    widths. Either ``positions`` (N x 2) or per-block ``geometries`` must be
    supplied. Agents with no incident edge in any scale come out unchanged.
    """
    h0 = ad.as_tensor(features)
    types = np.asarray(types, dtype=np.int64)
    n = h0.shape[0]
    if len(types) != n:
        raise ShapeError(f"propagate: {len(types)} types for {n} feature rows")
    families = [_as_blocks(m) for m in member_arrays]
    if geometries is None:
        geometries = [[edge_geometry(b, positions) for b in blocks] for blocks in families]
    names = scale_names(len(families))
    outs = []
    any_active = np.zeros((n, 1))
    for name, blocks, geos in zip(names, families, geometries):
        if not blocks:
            outs.append(h0)
            continue
        if not isinstance(geos, (list, tuple)):
            geos = [geos]
        geos = [np.asarray(g, dtype=float) for g in geos]
        h, active = _one_scale(h0, blocks, geos, types, params, name, rounds)
        outs.append(h)
        any_active = np.maximum(any_active, active)
    if not any_active.any():
        return h0
    fused = linear(params, "mp.fuse", ad.concat(outs, axis=1))
    return ad.add(h0, ad.mul(fused, any_active))

"""Category-specific projection and local attention over nearby agents and map tokens."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graphs import GridIndex
from .nn import MlpParams, init_linear, init_mlp, linear, mlp_apply
from .polyline import POS_SCALE
from .scene import AgentType, ValidationError

N_CATEGORIES = len(AgentType)


@dataclass
class AttentionDims:
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    neighborhood: int = 16

    def validate(self):
        if self.d_model % self.heads:
            raise ValidationError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.neighborhood < 1:
            raise ValidationError("neighborhood size must be >= 1")


def init_fusion_params(rng, dims: AttentionDims, store: dict) -> dict:
    d = dims.d_model
    for c in range(N_CATEGORIES):
        init_mlp(rng, (d, d, d), store, f"proj.{c}")
    init_mlp(rng, (2, d, d), store, "attn.relpos")
    for layer in range(dims.layers):
        p = f"attn.{layer}"
        for name in ("q", "k", "v"):
            init_linear(rng, d, d, store, f"{p}.{name}")
        init_linear(rng, d, d, store, f"{p}.o", out_scale=0.5)
        init_mlp(rng, (d, 2 * d, d), store, f"{p}.ffn", out_scale=0.5)
        for ln in ("ln1", "ln2"):
            store[f"{p}.{ln}.g"] = np.ones(d)
            store[f"{p}.{ln}.b"] = np.zeros(d)
    return store


def project_by_category(features, types, params, coverage: Counter | None = None) -> ad.Tensor:
    """Route row i through the projection network of category ``types[i]``."""
    x = ad.as_tensor(features)
    types = np.asarray(types, dtype=np.int64)
    n = x.shape[0]
    if len(types) != n:
        raise ValidationError(f"{len(types)} categories for {n} rows")
    bad = types[(types < 0) | (types >= N_CATEGORIES)]
    if len(bad):
        raise ValidationError(f"unknown agent category index {int(bad[0])}")
    parts = []
    for c in range(N_CATEGORIES):
        rows = np.flatnonzero(types == c)
        if not len(rows):
            continue
        if coverage is not None:
            coverage[c] += len(rows)
        out = mlp_apply(MlpParams.from_store(params, f"proj.{c}"), ad.gather(x, rows))
        parts.append(ad.scatter_add(out, rows, n))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total


@dataclass
class Neighborhoods:
    """Per-agent token lists. Token ids < n_agents are agents, the rest map tokens (offset by n_agents)."""

    index: np.ndarray  # (N, M) token ids, padded with 0
    mask: np.ndarray  # (N, M) bool
    n_agents: int

    def tokens(self, i) -> list[int]:
        return [int(t) for t in self.index[i][self.mask[i]]]


def select_neighborhood(agent_positions, map_positions, m: int, index: GridIndex | None = None) -> Neighborhoods:
    """The m nearest tokens to each agent among the other agents and all map tokens.

    Ties go to agent tokens before map tokens, then to the lower index.
    """
    agents = np.asarray(agent_positions, dtype=float).reshape(-1, 2)
    maps = np.asarray(map_positions, dtype=float).reshape(-1, 2)
    if not (np.all(np.isfinite(agents)) and np.all(np.isfinite(maps))):
        raise ValidationError("token positions must be finite")
    n = len(agents)
    tokens = np.concatenate([agents, maps])
    width = max(0, min(m, len(tokens) - 1))
    idx = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    if width == 0:
        return Neighborhoods(idx, mask, n)
    if len(tokens) <= 64 and index is None:
        all_ids = np.arange(len(tokens))
        for i in range(n):
            cand = all_ids[all_ids != i]
            d = tokens[cand] - agents[i]
            d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]
            sel = cand[np.lexsort((cand, d2))[:width]]
            idx[i, : len(sel)] = sel
            mask[i, : len(sel)] = True
        return Neighborhoods(idx, mask, n)
    index = index or GridIndex(tokens)
    for i in range(n):
        sel, _ = index.query(agents[i], width, exclude=i)
        idx[i, : len(sel)] = sel
        mask[i, : len(sel)] = True
    return Neighborhoods(idx, mask, n)


def relative_positions(neigh: Neighborhoods, agent_poses, map_positions) -> np.ndarray:
    """(N, M, 2) token positions in each agent's heading frame, network units."""
    poses = np.asarray(agent_poses, dtype=float).reshape(-1, 3)
    tokens = np.concatenate([poses[:, :2], np.asarray(map_positions, dtype=float).reshape(-1, 2)])
    rel = tokens[neigh.index] - poses[:, None, :2]
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    out = np.stack([c * rel[..., 0] + s * rel[..., 1], -s * rel[..., 0] + c * rel[..., 1]], axis=-1)
    return np.where(neigh.mask[..., None], out, 0.0) * POS_SCALE


@dataclass
class FusedEmbedding:
    features: ad.Tensor  # (N, D)
    neighborhoods: Neighborhoods
    weights: list = field(default_factory=list)  # per layer (N, M, H) attention weights


def _affine_norm(x, params, prefix):
    return ad.add(ad.mul(ad.layer_norm(x), params[f"{prefix}.g"]), params[f"{prefix}.b"])


def local_attention(agent_features, map_features, neigh: Neighborhoods, relpos, params,
                    heads: int = 4, layers: int = 2) -> FusedEmbedding:
    """Each agent attends only to its neighborhood tokens.

    Keys and values see the token feature plus an encoding of the token's
    position relative to the querying agent. Map tokens are never updated.
    """
    h = ad.as_tensor(agent_features)
    maps = ad.as_tensor(map_features)
    n, d = h.shape
    dh = d // heads
    m = neigh.index.shape[1]
    has = neigh.mask.any(axis=1).astype(float)[:, None]
    weights = []
    rp = mlp_apply(MlpParams.from_store(params, "attn.relpos"), relpos) if m else None
    mask = neigh.mask[:, :, None]
    for layer in range(layers):
        p = f"attn.{layer}"
        if m:
            table = ad.concat([h, maps], axis=0) if maps.shape[0] else h
            kv = ad.add(ad.gather(table, neigh.index), rp)  # N x M x D
            q = ad.reshape(linear(params, f"{p}.q", h), (n, 1, heads, dh))
            k = ad.reshape(linear(params, f"{p}.k", kv), (n, m, heads, dh))
            v = ad.reshape(linear(params, f"{p}.v", kv), (n, m, heads, dh))
            scores = ad.scale(ad.sum(ad.mul(q, k), axis=-1), 1.0 / math.sqrt(dh))  # N x M x H
            w = ad.softmax(scores, axis=1, mask=mask)
            weights.append(w.data)
            mixed = ad.sum(ad.mul(ad.reshape(w, (n, m, heads, 1)), v), axis=1)  # N x H x dh
            attn = ad.mul(linear(params, f"{p}.o", ad.reshape(mixed, (n, d))), has)
            h = _affine_norm(ad.add(h, attn), params, f"{p}.ln1")
        else:
            weights.append(np.zeros((n, 0, heads)))
            h = _affine_norm(h, params, f"{p}.ln1")
        ff = mlp_apply(MlpParams.from_store(params, f"{p}.ffn"), h)
        h = _affine_norm(ad.add(h, ff), params, f"{p}.ln2")
    return FusedEmbedding(h, neigh, weights)

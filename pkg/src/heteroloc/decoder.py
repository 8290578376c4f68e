"""Anchor-based trajectory decoder, top-K selection and the winner-take-all loss.

Everything here works in the agent-centric frame of each target (origin at
its last valid history position, x axis along its heading).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError
from .kmeans import kmeans
from .nn import MlpParams, init_mlp, mlp_apply
from .polyline import POS_SCALE, to_frame
from .scene import VALID, X, Y, AgentType, Scene, ValidationError


@dataclass
class IntentionAnchorSet:
    anchors: dict  # AgentType -> (A, 2)

    def for_type(self, atype: AgentType) -> np.ndarray:
        return self.anchors[atype]

    @property
    def size(self) -> int:
        return len(next(iter(self.anchors.values())))


@dataclass
class ModePrediction:
    trajectory: np.ndarray  # (T_f, 2)
    logit: float


@dataclass
class PredictionSet:
    agent_id: str
    trajectories: np.ndarray  # (K, T_f, 2), sorted by descending probability
    probabilities: np.ndarray  # (K,)
    anchor_ids: np.ndarray  # (K,) source anchor of each mode


@dataclass
class LossBreakdown:
    classification: float
    regression: float
    total: float
    matched_anchor: int
    skipped: bool = False


def future_in_agent_frame(track):
    """Ground-truth future (T_f, 2) in the track's reference frame, with its validity mask."""
    fut = track.future
    pose = track.reference_pose()
    return to_frame(fut[:, [X, Y]], pose), fut[:, VALID] > 0


def endpoints_by_type(corpus) -> dict:
    out = {t: [] for t in AgentType}
    for scene in corpus:
        for a in scene.agents:
            if a.future is None or not a.has_valid_history:
                continue
            gt, valid = future_in_agent_frame(a)
            idx = np.flatnonzero(valid)
            if len(idx):
                out[a.type].append(gt[idx[-1]])
    return {t: np.array(v).reshape(-1, 2) for t, v in out.items()}


def fit_anchors(corpus: list[Scene], num_anchors: int, seed: int = 0) -> IntentionAnchorSet:
    """k-means over final ground-truth positions, one anchor set per category.

    Categories with fewer than ``num_anchors`` endpoints fall back to the
    anchors fitted on all endpoints pooled.
    """
    ends = endpoints_by_type(corpus)
    pooled = np.concatenate(list(ends.values()))
    if len(pooled) < num_anchors:
        raise ValidationError(f"need at least {num_anchors} ground-truth endpoints, corpus has {len(pooled)}")
    shared = kmeans(pooled, num_anchors, seed=seed)
    anchors = {}
    for t in AgentType:
        pts = ends[t]
        anchors[t] = kmeans(pts, num_anchors, seed=seed) if len(pts) >= num_anchors else shared.copy()
    return IntentionAnchorSet(anchors)


def init_decoder_params(rng, d_model: int, hidden: int, future_len: int, store: dict) -> dict:
    init_mlp(rng, (d_model + 2, hidden, hidden, 2 * future_len + 1), store, "dec", out_scale=0.1)
    return store


def anchor_lines(anchors: np.ndarray, future_len: int) -> np.ndarray:
    """Straight lines from the origin to each anchor: (..., T_f, 2)."""
    frac = np.arange(1, future_len + 1) / future_len
    return anchors[..., None, :] * frac[:, None]


def decode(embedding, anchors: np.ndarray, params, future_len: int):
    """Modes for every (target, anchor).

    ``embedding`` is (n, D), ``anchors`` (n, A, 2). Returns trajectories
    (n, A, T_f, 2) and logits (n, A), both as Tensors.
    """
    emb = ad.as_tensor(embedding)
    anchors = np.asarray(anchors, dtype=float)
    if anchors.ndim == 2:
        anchors = np.broadcast_to(anchors, (emb.shape[0],) + anchors.shape)
    n, a = anchors.shape[:2]
    if emb.shape[0] != n:
        raise ShapeError(f"decode: {emb.shape[0]} embeddings for {n} anchor sets")
    rep = ad.gather(emb, np.repeat(np.arange(n), a))  # (n*A, D)
    x = ad.concat([rep, anchors.reshape(n * a, 2) * POS_SCALE], axis=1)
    out = mlp_apply(MlpParams.from_store(params, "dec"), x)
    expect = 2 * future_len + 1
    if out.shape[-1] != expect:
        raise ShapeError(f"decode: head emits {out.shape[-1]} values, expected {expect}")
    out = ad.reshape(out, (n, a, expect))
    offsets = ad.reshape(ad.gather(ad.reshape(out, (n * a, expect)), (slice(None), slice(0, 2 * future_len))),
                         (n, a, future_len, 2))
    logits = ad.reshape(ad.gather(ad.reshape(out, (n * a, expect)), (slice(None), 2 * future_len)), (n, a))
    traj = ad.add(offsets, anchor_lines(anchors, future_len))
    return traj, logits


def modes_of(traj: np.ndarray, logits: np.ndarray) -> list[ModePrediction]:
    return [ModePrediction(t, float(lg)) for t, lg in zip(traj, logits)]


def select_topk(modes: list[ModePrediction], k: int, agent_id: str = "") -> PredictionSet:
    """Top ``k`` modes by logit (ties to the lower anchor index), softmax over the kept logits."""
    if len(modes) < k:
        raise ValidationError(f"cannot keep {k} modes out of {len(modes)}")
    logits = np.array([m.logit for m in modes])
    order = np.lexsort((np.arange(len(modes)), -logits))[:k]
    kept = logits[order]
    e = np.exp(kept - kept.max())
    probs = e / e.sum()
    traj = np.stack([modes[i].trajectory for i in order])
    return PredictionSet(agent_id, traj, probs, order.astype(np.int64))


def match_anchor(anchors: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> int:
    """Index of the anchor nearest to the final valid ground-truth position."""
    end = gt[np.flatnonzero(valid)[-1]]
    d = anchors - end
    return int(np.argmin(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]))


def loss_terms(traj, logits, gt: np.ndarray, valid: np.ndarray, matched: np.ndarray):
    """Batched classification and regression terms, each a Tensor of shape (n,).

    ``gt`` is (n, T_f, 2), ``valid`` (n, T_f) and ``matched`` (n,) anchor indices.
    """
    traj, logits = ad.as_tensor(traj), ad.as_tensor(logits)
    n, a, t_f, _ = traj.shape
    rows = np.arange(n) * a + matched
    logp = ad.reshape(ad.log_softmax(logits, axis=-1), (n * a,))
    cls = ad.scale(ad.gather(logp, rows), -1.0)
    chosen = ad.gather(ad.reshape(traj, (n * a, t_f, 2)), rows)  # n x T x 2
    mask = valid.astype(float)
    diff = ad.sub(chosen, np.where(valid[..., None], gt, 0.0))
    per_step = ad.sum(ad.smooth_l1(diff), axis=-1)  # n x T
    counts = np.maximum(mask.sum(axis=1), 1.0)
    reg = ad.mul(ad.sum(ad.mul(per_step, mask), axis=1), 1.0 / counts)
    return cls, reg


def compute_loss(modes: list[ModePrediction], gt: np.ndarray, valid: np.ndarray, anchors: np.ndarray,
                 reg_weight: float = 1.0) -> LossBreakdown:
    """Winner-take-all loss for one agent; a future without valid states is skipped with zero loss."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        return LossBreakdown(0.0, 0.0, 0.0, -1, skipped=True)
    matched = match_anchor(anchors, gt, valid)
    traj = np.stack([m.trajectory for m in modes])[None]
    logits = np.array([m.logit for m in modes])[None]
    cls, reg = loss_terms(traj, logits, np.asarray(gt)[None], valid[None], np.array([matched]))
    c, r = float(cls.data[0]), float(reg.data[0])
    return LossBreakdown(c, r, c + reg_weight * r, matched)

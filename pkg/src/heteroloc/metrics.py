"""Motion-forecasting metrics over world-frame prediction sets.

Conventions:
  * the measurement horizon of an agent is its final valid future step;
  * a mode matches when its displacement there is within the schedule's
    threshold for that horizon;
  * AP is interpolated (maximum precision at equal or higher recall), with
    one positive per agent that has at least one matching mode.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .scene import VALID, X, Y, AgentType, Scene, ValidationError

STATIONARY_DISPLACEMENT = 2.0


@dataclass(frozen=True)
class ThresholdSchedule:
    horizons: tuple = (3.0, 5.0, 8.0)
    thresholds: tuple = (2.0, 3.6, 6.0)

    def __post_init__(self):
        h, t = np.asarray(self.horizons, float), np.asarray(self.thresholds, float)
        if len(h) != len(t) or not len(h):
            raise ValidationError("threshold schedule needs matching, non-empty horizons and thresholds")
        if np.any(np.diff(h) <= 0):
            raise ValidationError("schedule horizons must be strictly increasing")
        if np.any(t <= 0) or np.any(np.diff(t) < 0):
            raise ValidationError("schedule thresholds must be positive and non-decreasing")

    def __call__(self, horizon: float) -> float:
        """Threshold in meters, linear between knots and clamped outside."""
        return float(np.interp(horizon, self.horizons, self.thresholds))


class BehaviorBucket(enum.Enum):
    STATIONARY = "stationary"
    STRAIGHT = "straight"
    STRAIGHT_LEFT = "straight_left"
    STRAIGHT_RIGHT = "straight_right"
    LEFT = "left"
    RIGHT = "right"
    U_TURN = "u_turn"


def _valid_idx(valid):
    return np.flatnonzero(np.asarray(valid, dtype=bool))


def _displacements(trajectories, gt, idx):
    d = np.asarray(trajectories, float)[:, idx] - np.asarray(gt, float)[idx]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])  # K x n_valid


def min_ade(trajectories, gt, valid) -> float | None:
    """Best mean displacement over modes; ``None`` when nothing is valid."""
    idx = _valid_idx(valid)
    if not len(idx):
        return None
    return float(_displacements(trajectories, gt, idx).mean(axis=1).min())


def min_fde(trajectories, gt, valid) -> float | None:
    idx = _valid_idx(valid)
    if not len(idx):
        return None
    return float(_displacements(trajectories, gt, idx[-1:])[:, 0].min())


def mode_matches(trajectories, gt, valid, schedule: ThresholdSchedule, timestep: float) -> np.ndarray | None:
    idx = _valid_idx(valid)
    if not len(idx):
        return None
    tau = schedule((idx[-1] + 1) * timestep)
    return _displacements(trajectories, gt, idx[-1:])[:, 0] <= tau


def is_miss(trajectories, gt, valid, schedule: ThresholdSchedule, timestep: float) -> bool | None:
    m = mode_matches(trajectories, gt, valid, schedule, timestep)
    return None if m is None else not bool(m.any())


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def classify_behavior(gt, valid) -> BehaviorBucket:
    idx = _valid_idx(valid)
    if len(idx) < 2:
        return BehaviorBucket.STATIONARY
    pts = np.asarray(gt, float)[idx]
    total = pts[-1] - pts[0]
    if math.hypot(total[0], total[1]) < STATIONARY_DISPLACEMENT:
        return BehaviorBucket.STATIONARY
    seg = np.diff(pts, axis=0)
    moving = np.flatnonzero(np.hypot(seg[:, 0], seg[:, 1]) > 1e-9)
    first, last = seg[moving[0]], seg[moving[-1]]
    dtheta = _wrap(math.atan2(last[1], last[0]) - math.atan2(first[1], first[0]))
    a = abs(dtheta)
    if a < math.pi / 12:
        return BehaviorBucket.STRAIGHT
    if a < math.pi / 4:
        return BehaviorBucket.STRAIGHT_LEFT if dtheta > 0 else BehaviorBucket.STRAIGHT_RIGHT
    if a < 3 * math.pi / 4:
        return BehaviorBucket.LEFT if dtheta > 0 else BehaviorBucket.RIGHT
    return BehaviorBucket.U_TURN


def overlaps(top_traj, own_valid, own_radius, others) -> bool:
    """Does the top mode's disc meet any other agent's ground-truth disc at the same step?

    ``others`` is a list of (gt, valid, radius). Steps invalid on either side are skipped.
    """
    top = np.asarray(top_traj, float)
    own_valid = np.asarray(own_valid, dtype=bool)
    for gt, valid, radius in others:
        both = own_valid & np.asarray(valid, dtype=bool)
        if not both.any():
            continue
        d = top[both] - np.asarray(gt, float)[both]
        if np.any(np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) <= own_radius + radius):
            return True
    return False


@dataclass
class AgentRecord:
    """Per-agent inputs to the corpus metrics, all in the world frame."""

    agent_id: str
    category: AgentType
    trajectories: np.ndarray  # K x T x 2
    probabilities: np.ndarray  # K
    gt: np.ndarray  # T x 2
    valid: np.ndarray  # T
    timestep: float
    others: list = field(default_factory=list)  # (gt, valid, radius) of the other agents in the scene


def average_precision(triples, npos: int) -> float:
    """Interpolated AP from ranked (is_tp) flags; ``triples`` are already in rank order."""
    if npos == 0:
        return 0.0
    tp = fp = 0
    prec, rec = [], []
    for is_tp in triples:
        if is_tp:
            tp += 1
        else:
            fp += 1
        prec.append(tp / (tp + fp))
        rec.append(tp / npos)
    # sweep from the right so ``best`` is the max precision at this rank or later
    best = 0.0
    interp = [0.0] * len(prec)
    for i in range(len(prec) - 1, -1, -1):
        best = max(best, prec[i])
        interp[i] = best
    ap = prev_recall = 0.0
    for i, is_tp in enumerate(triples):
        if is_tp:
            ap += (rec[i] - prev_recall) * interp[i]
            prev_recall = rec[i]
    return ap


def _ranked_flags(records, schedule, soft: bool):
    """Pooled (probability, agent, mode, is_tp) with ignored modes removed, in rank order."""
    pooled = []
    npos = 0
    for a, r in enumerate(records):
        m = mode_matches(r.trajectories, r.gt, r.valid, schedule, r.timestep)
        probs = np.asarray(r.probabilities, float)
        tp_mode = -1
        if m.any():
            npos += 1
            cand = np.flatnonzero(m)
            tp_mode = int(cand[np.lexsort((cand, -probs[cand]))[0]])
        for k in range(len(probs)):
            if k == tp_mode:
                pooled.append((-probs[k], a, k, True))
            elif m[k] and soft:
                continue
            else:
                pooled.append((-probs[k], a, k, False))
    pooled.sort(key=lambda t: (t[0], t[1], t[2]))
    return [t[3] for t in pooled], npos


def bucket_ap(records, schedule, soft: bool) -> float:
    flags, npos = _ranked_flags(records, schedule, soft)
    return average_precision(flags, npos)


def map_and_soft_map(records: list[AgentRecord], schedule: ThresholdSchedule) -> tuple[float, float]:
    """Bucket-averaged AP with extra matching modes penalized (mAP) or ignored (Soft mAP)."""
    records = [r for r in records if _valid_idx(r.valid).size]
    if not records:
        raise ValidationError("no agent with a valid future to evaluate")
    buckets: dict = {}
    for r in records:
        buckets.setdefault(classify_behavior(r.gt, r.valid), []).append(r)
    order = [b for b in BehaviorBucket if b in buckets]
    hard = [bucket_ap(buckets[b], schedule, soft=False) for b in order]
    soft = [bucket_ap(buckets[b], schedule, soft=True) for b in order]
    return float(np.mean(hard)), float(np.mean(soft))


METRIC_COLUMNS = ("minADE", "minFDE", "MR", "OR", "mAP", "SoftmAP")


@dataclass
class MetricsReport:
    overall: dict
    per_category: dict  # category value -> metric dict
    bucket_counts: dict
    evaluated: int
    skipped: int
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"overall": self.overall, "per_category": self.per_category, "buckets": self.bucket_counts,
               "evaluated": self.evaluated, "skipped": self.skipped}
        rec.update(self.extra)
        return rec

    def to_json_line(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"

    def table(self) -> str:
        head = f"{'category':<12}" + "".join(f"{c:>10}" for c in METRIC_COLUMNS)
        rows = [head]
        for name, vals in [("all", self.overall)] + sorted(self.per_category.items()):
            cells = "".join(f"{vals[c]:>10.4f}" if vals[c] is not None else f"{'-':>10}" for c in METRIC_COLUMNS)
            rows.append(f"{name:<12}" + cells)
        rows.append(f"evaluated {self.evaluated}, skipped {self.skipped}")
        rows.append("buckets " + " ".join(f"{k}={v}" for k, v in self.bucket_counts.items()))
        return "\n".join(rows) + "\n"


def _summary(records, schedule) -> dict:
    if not records:
        return {c: None for c in METRIC_COLUMNS}
    ade = [min_ade(r.trajectories, r.gt, r.valid) for r in records]
    fde = [min_fde(r.trajectories, r.gt, r.valid) for r in records]
    miss = [is_miss(r.trajectories, r.gt, r.valid, schedule, r.timestep) for r in records]
    ovl = [overlaps(r.trajectories[int(np.argmax(r.probabilities))], r.valid, r.category.radius, r.others)
           for r in records]
    m, s = map_and_soft_map(records, schedule)
    return {"minADE": float(np.mean(ade)), "minFDE": float(np.mean(fde)), "MR": float(np.mean(miss)),
            "OR": float(np.mean(ovl)), "mAP": m, "SoftmAP": s}


def evaluate_records(records: list[AgentRecord], schedule: ThresholdSchedule, skipped: int = 0) -> MetricsReport:
    if not records:
        raise ValidationError("empty corpus: nothing to evaluate")
    usable = [r for r in records if _valid_idx(r.valid).size]
    skipped += len(records) - len(usable)
    if not usable:
        raise ValidationError("no agent with a valid future to evaluate")
    per_cat = {}
    for t in AgentType:
        sub = [r for r in usable if r.category is t]
        if sub:
            per_cat[t.value] = _summary(sub, schedule)
    counts = {b.value: 0 for b in BehaviorBucket}
    for r in usable:
        counts[classify_behavior(r.gt, r.valid).value] += 1
    return MetricsReport(_summary(usable, schedule), per_cat, counts, len(usable), skipped)


def scene_records(scene: Scene, predictions) -> tuple[list[AgentRecord], int]:
    """Pair each prediction set with its agent's future; returns records and the skipped count."""
    fut = {}
    for a in scene.agents:
        if a.future is not None:
            fut[a.id] = (a.future[:, [X, Y]], a.future[:, VALID] > 0, a.type.radius)
    records, skipped = [], 0
    for p in predictions:
        if p.agent_id not in fut or not fut[p.agent_id][1].any():
            skipped += 1
            continue
        gt, valid, _ = fut[p.agent_id]
        track = scene.agents[scene.agent_index(p.agent_id)]
        others = [v for k, v in fut.items() if k != p.agent_id]
        records.append(AgentRecord(p.agent_id, track.type, np.asarray(p.trajectories), np.asarray(p.probabilities),
                                   gt, valid, scene.timestep, others))
    return records, skipped


def evaluate_predictions(scenes: list[Scene], predictions: list[list], schedule: ThresholdSchedule) -> MetricsReport:
    """Metrics for per-scene prediction lists; targets that got no prediction count as skipped."""
    records, skipped = [], 0
    for scene, preds in zip(scenes, predictions):
        r, s = scene_records(scene, preds)
        records.extend(r)
        predicted = {p.agent_id for p in preds}
        skipped += s + sum(1 for t in scene.target_ids if t not in predicted)
    if not records:
        raise ValidationError("empty corpus: nothing to evaluate")
    return evaluate_records(records, schedule, skipped)

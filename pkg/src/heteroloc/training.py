"""Training and evaluation loops."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, check_compatible, save_checkpoint
from .config import ExperimentConfig
from .decoder import PredictionSet, fit_anchors
from .metrics import MetricsReport, ThresholdSchedule, evaluate_predictions, min_ade
from .model import collate, init_params, prepare_scene, predict, batch_loss
from .nn import bind
from .polyline import to_frame
from .optim import OptimizerState, adamw_step, clip_global_norm, step_decay_lr
from .scene import X, Y, Scene, ValidationError, constant_velocity_baseline, quantize

PREDICTION_SCHEMA = 1


class TrainingAborted(ad.NumericalFault):
    def __init__(self, epoch: int, scene_ids: list):
        self.epoch, self.scene_ids = epoch, scene_ids
        super().__init__(f"non-finite loss at epoch {epoch} in scene(s) {', '.join(scene_ids)}")


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # best validation minADE
    final: Checkpoint
    log: list = field(default_factory=list)


def schedule_of(config: ExperimentConfig) -> ThresholdSchedule:
    return ThresholdSchedule(tuple(config.metrics.horizons), tuple(config.metrics.thresholds))


def batches(prepared, batch_size, order):
    for start in range(0, len(order), batch_size):
        yield collate([prepared[i] for i in order[start:start + batch_size]])


def mean_min_ade(params, prepared, config: ExperimentConfig) -> float | None:
    """Mean minADE over targets with a valid future, computed in the agent frame."""
    values = []
    for b in batches(prepared, config.train.batch_size, range(len(prepared))):
        preds = predict(params, b, config)
        for scene, sets in zip(b.scenes, preds):
            for j, ps in enumerate(sets):
                local = to_frame(ps.trajectories, scene.poses[scene.target_rows[j]])
                v = min_ade(local, scene.gt[j], scene.gt_valid[j])
                if v is not None:
                    values.append(v)
    return float(np.mean(values)) if values else None


def _faulty_scenes(params, batch, config) -> list:
    """Scene ids of a faulted batch whose loss fails on its own; all of them if none does."""
    bad = []
    for scene in batch.scenes:
        try:
            loss, per = batch_loss(params, collate([scene]), config)
            if loss is not None and ((~np.isfinite(per) & (scene.matched >= 0)).any()
                                     or not math.isfinite(float(loss.data))):
                bad.append(scene.scene_id)
        except ad.NumericalFault:
            bad.append(scene.scene_id)
    return sorted(bad) or sorted(s.scene_id for s in batch.scenes)


def log_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def train(config: ExperimentConfig, train_scenes: list[Scene], val_scenes: list[Scene] | None = None,
          checkpoint_path=None, log_path=None) -> TrainResult:
    """Seeded training run; returns the best-on-validation and final checkpoints plus the log records."""
    config.validate()
    if not train_scenes:
        raise ValidationError("no training scenes")
    val_scenes = train_scenes if val_scenes is None else val_scenes
    t = config.train
    anchors = fit_anchors(train_scenes, config.model.anchors, seed=t.seed)
    future_len = train_scenes[0].future_len
    if future_len < 1:
        raise ValidationError("training scenes carry no future")
    params = init_params(config, future_len, seed=t.seed)
    prepared = [prepare_scene(s, config, anchors) for s in train_scenes]
    val_prepared = [prepare_scene(s, config, anchors) for s in val_scenes]
    state = OptimizerState.for_params(params, lr=t.lr, weight_decay=t.weight_decay)
    rng = np.random.default_rng(t.seed)

    log = []
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    best = None
    try:
        if log_fh:
            log_fh.write(log_line({"config": config.to_dict(), "schema": PREDICTION_SCHEMA, "type": "header"}))
        for epoch in range(t.epochs):
            state.lr = step_decay_lr(t.lr, epoch, t.milestones, t.gamma)
            order = rng.permutation(len(prepared))
            total, count = 0.0, 0
            for b in batches(prepared, t.batch_size, order):
                bound = bind(params)
                try:
                    loss, per = batch_loss(bound, b, config)
                except ad.NumericalFault:
                    raise TrainingAborted(epoch + 1, _faulty_scenes(params, b, config)) from None
                if loss is None:
                    continue
                bad = ~np.isfinite(per) & (b.matched >= 0)
                if bad.any() or not math.isfinite(float(loss.data)):
                    ids = sorted({b.scenes[int(s)].scene_id for s in b.target_scene[bad]} or
                                 {s.scene_id for s in b.scenes})
                    raise TrainingAborted(epoch + 1, ids)
                ad.backward(loss)
                grads = clip_global_norm(bound.grads(), t.clip)
                adamw_step(state, params, grads)
                kept = per[np.isfinite(per)]
                total += float(kept.sum())
                count += len(kept)
            val = mean_min_ade(params, val_prepared, config)
            improved = val is not None and (best is None or val < best.val_min_ade)
            rec = {"epoch": epoch + 1, "lr": state.lr, "loss": total / count if count else None,
                   "val_minADE": val, "best": improved}
            log.append(rec)
            if log_fh:
                log_fh.write(log_line(rec))
            if improved or best is None:
                best = Checkpoint(config, {k: v.copy() for k, v in params.items()}, anchors, future_len,
                                  epoch + 1, val, copy.deepcopy(state))
                if checkpoint_path:
                    save_checkpoint(best, checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    final = Checkpoint(config, params, anchors, future_len, t.epochs, log[-1]["val_minADE"] if log else None, state)
    if best is None:
        best = final
        if checkpoint_path:
            save_checkpoint(best, checkpoint_path)
    return TrainResult(best, final, log)


def run_inference(ckpt: Checkpoint, scenes: list[Scene], config: ExperimentConfig | None = None):
    config = config or ckpt.config
    check_compatible(ckpt, config)
    prepared = [prepare_scene(s, config, ckpt.anchors) for s in scenes]
    if any(s.future_len and s.future_len != ckpt.future_len for s in scenes):
        raise ValidationError(f"scenes have a different future length than the checkpoint ({ckpt.future_len})")
    out = []
    for b in batches(prepared, config.train.batch_size, range(len(prepared))):
        out.extend(predict(ckpt.params, b, config))
    return out


def evaluate(ckpt: Checkpoint, scenes: list[Scene], config: ExperimentConfig | None = None):
    """Deterministic inference plus the metrics report; returns ``(report, predictions)``."""
    config = config or ckpt.config
    preds = run_inference(ckpt, scenes, config)
    report = evaluate_predictions(scenes, preds, schedule_of(config))
    report.extra["config"] = config.to_dict()
    return report, preds


def constant_velocity_predictions(scenes: list[Scene]) -> list[list[PredictionSet]]:
    """Single-mode constant-velocity predictions for every target with a valid history."""
    out = []
    for s in scenes:
        sets = []
        for tid in s.target_ids:
            a = s.agents[s.agent_index(tid)]
            if a.has_valid_history:
                traj = constant_velocity_baseline(a, s.future_len)
                sets.append(PredictionSet(tid, traj[None], np.ones(1), np.zeros(1, dtype=np.int64)))
        out.append(sets)
    return out


def ground_truth_predictions(scenes: list[Scene]) -> list[list[PredictionSet]]:
    """Single-mode predictions equal to the recorded future (invalid steps copied as stored)."""
    out = []
    for s in scenes:
        sets = []
        for tid in s.target_ids:
            a = s.agents[s.agent_index(tid)]
            if a.future is not None:
                sets.append(PredictionSet(tid, a.future[None, :, [X, Y]].copy(), np.ones(1),
                                          np.zeros(1, dtype=np.int64)))
        out.append(sets)
    return out


def prediction_records(scenes: list[Scene], predictions) -> list[dict]:
    recs = []
    for scene, sets in zip(scenes, predictions):
        for p in sets:
            recs.append({"schema": PREDICTION_SCHEMA, "scene": int(scene.seed), "agent_id": p.agent_id,
                         "probabilities": quantize(np.asarray(p.probabilities)).tolist(),
                         "trajectories": quantize(np.asarray(p.trajectories)).tolist()})
    return recs


def save_predictions(scenes, predictions, path, config: ExperimentConfig | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if config is not None:
            fh.write(log_line({"config": config.to_dict(), "schema": PREDICTION_SCHEMA, "type": "header"}))
        for rec in prediction_records(scenes, predictions):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_predictions(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != PREDICTION_SCHEMA:
                raise ValidationError(f"line {lineno}: unsupported prediction schema {rec.get('schema')!r}")
            if rec.get("type") == "header":
                continue
            out.append(rec)
    return out


def save_report(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json_line())

import numpy as np
import pytest

from heteroloc import autodiff as ad
from heteroloc.checkpoint import IncompatibleCheckpointError, load_checkpoint, to_bytes
from heteroloc.metrics import ThresholdSchedule, evaluate_predictions
from heteroloc.model import init_params
from heteroloc.scene import ScenarioKind, ScenarioSpec, ValidationError, generate_corpus
from heteroloc.training import (
    TrainingAborted, constant_velocity_predictions, evaluate, ground_truth_predictions, load_predictions,
    save_predictions, save_report, train,
)

from conftest import small_config


def corpus(count=4, future_len=10, kinds=(ScenarioKind.PLATOON, ScenarioKind.CROWD_CROSSING), seed=0, **kw):
    specs = [ScenarioSpec(k, n_agents=4, future_len=future_len, speed=5.0 if k is ScenarioKind.PLATOON else 1.4,
                          **kw) for k in kinds]
    return generate_corpus(specs, count, seed)


def quick_config(epochs=2, **train_kw):
    cfg = small_config()
    cfg.train.epochs = epochs
    cfg.train.batch_size = 2
    cfg.train.lr = 1e-3
    for k, v in train_kw.items():
        setattr(cfg.train, k, v)
    return cfg


@pytest.fixture(scope="module")
def scenes():
    return corpus()


@pytest.fixture(scope="module")
def trained(scenes, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    res = train(quick_config(), scenes, checkpoint_path=d / "ckpt.bin", log_path=d / "log.jsonl")
    return res, d


def test_zero_lr_leaves_params(scenes):
    cfg = quick_config(epochs=3, lr=0.0)
    res = train(cfg, scenes)
    init = init_params(cfg, scenes[0].future_len, seed=cfg.train.seed)
    for k, v in init.items():
        assert np.array_equal(res.final.params[k], v)


def test_determinism(scenes, trained, tmp_path):
    res, d = trained
    again = train(quick_config(), scenes, checkpoint_path=tmp_path / "ckpt.bin", log_path=tmp_path / "log.jsonl")
    assert again.log == res.log
    assert (tmp_path / "log.jsonl").read_bytes() == (d / "log.jsonl").read_bytes()
    assert (tmp_path / "ckpt.bin").read_bytes() == (d / "ckpt.bin").read_bytes()


def test_log_records(trained):
    res, d = trained
    lines = (d / "log.jsonl").read_text().splitlines()
    assert '"type":"header"' in lines[0] and len(lines) == 3
    assert [r["epoch"] for r in res.log] == [1, 2]
    assert all(np.isfinite(r["loss"]) and r["loss"] > 0 for r in res.log)


def test_best_checkpoint_on_disk(trained):
    res, d = trained
    ckpt = load_checkpoint(d / "ckpt.bin")
    assert to_bytes(ckpt) == to_bytes(res.checkpoint)
    assert ckpt.val_min_ade == min(r["val_minADE"] for r in res.log)


def test_checkpoint_round_trip_evaluates_identically(scenes, trained, tmp_path):
    res, d = trained
    rep_a, preds_a = evaluate(res.checkpoint, scenes)
    rep_b, preds_b = evaluate(load_checkpoint(d / "ckpt.bin"), scenes)
    save_report(rep_a, tmp_path / "a.jsonl")
    save_report(rep_b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    save_predictions(scenes, preds_a, tmp_path / "pa.jsonl", res.checkpoint.config)
    save_predictions(scenes, preds_b, tmp_path / "pb.jsonl", res.checkpoint.config)
    assert (tmp_path / "pa.jsonl").read_bytes() == (tmp_path / "pb.jsonl").read_bytes()
    recs = load_predictions(tmp_path / "pa.jsonl")
    assert len(recs) == sum(len(s.target_ids) for s in scenes)
    assert all(abs(sum(r["probabilities"]) - 1) < 1e-8 and len(r["trajectories"]) == 3 for r in recs)
    assert rep_a.extra["config"] == res.checkpoint.config.to_dict()


def test_incompatible_checkpoint(scenes, trained):
    res, _ = trained
    other = small_config(d_model=16)
    with pytest.raises(IncompatibleCheckpointError, match="d_model"):
        evaluate(res.checkpoint, scenes, other)


def test_future_length_mismatch(trained):
    res, _ = trained
    with pytest.raises(ValidationError):
        evaluate(res.checkpoint, corpus(future_len=7))


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_non_finite_loss_aborts_with_scene_id(scenes):
    bad = corpus(count=2)
    bad[1].agents[0].future[4, 0] = np.inf  # mid-future, so the anchors stay finite
    with pytest.raises(TrainingAborted) as info:
        train(quick_config(epochs=1), bad)
    assert info.value.scene_ids == [str(bad[1].seed)]
    assert isinstance(info.value, ad.NumericalFault)
    bad[1].agents[0].future[4, 0] = 0.0
    bad[1].agents[1].history[-1, 3] = 1e308  # finite input that overflows inside the encoder
    with pytest.raises(TrainingAborted) as info:
        train(quick_config(epochs=1), bad)
    assert str(bad[1].seed) in info.value.scene_ids


def test_constant_velocity_on_straight_scenes():
    straight = [s for s in corpus(count=12, future_len=30, kinds=(ScenarioKind.PLATOON,))
                if all(abs(a.future[-1, 1] - a.history[-1, 1]) < 1e-9 for a in s.agents)]
    assert straight
    rep = evaluate_predictions(straight, constant_velocity_predictions(straight), ThresholdSchedule())
    assert rep.overall["minADE"] < 1e-6 and rep.overall["MR"] == 0.0


def test_ground_truth_fixpoint():
    sc = corpus(count=3, future_len=30, kinds=tuple(ScenarioKind), invalid_prob=0.2, noise_sigma=0.2)
    rep = evaluate_predictions(sc, ground_truth_predictions(sc), ThresholdSchedule()).overall
    assert rep["minADE"] == rep["minFDE"] == rep["MR"] == 0.0 and rep["mAP"] == rep["SoftmAP"] == 1.0


def test_training_needs_futures():
    with pytest.raises(ValidationError):
        train(quick_config(), corpus(future_len=0))

"""
Training, checkpoints and the command line
==========================================

A seeded training run on a few dozen synthetic scenes. The same run is
available from the shell as ``heteroloc train`` and ``heteroloc eval``;
identical config and seed give byte-identical logs, checkpoints and reports.
"""

import io
import tempfile
import time
from pathlib import Path

from heteroloc.checkpoint import load_checkpoint, save_checkpoint
from heteroloc.cli import main
from heteroloc.config import ExperimentConfig, save_config
from heteroloc.metrics import evaluate_predictions
from heteroloc.scene import ScenarioKind, ScenarioSpec, generate_corpus, save_scenes
from heteroloc.training import constant_velocity_predictions, evaluate, schedule_of, train

specs = [ScenarioSpec(ScenarioKind.PLATOON, n_agents=5),
         ScenarioSpec(ScenarioKind.CROWD_CROSSING, n_agents=5, speed=1.4, spacing=3.0)]
scenes = generate_corpus(specs, 24, seed=0)

cfg = ExperimentConfig()
cfg.model.d_model, cfg.model.decoder_hidden, cfg.model.anchors = 32, 64, 6
cfg.train.epochs, cfg.train.lr, cfg.train.batch_size, cfg.train.milestones = 60, 1e-3, 8, (45, 55)

t0 = time.perf_counter()
result = train(cfg, scenes)
print(f"{cfg.train.epochs} epochs in {time.perf_counter() - t0:.0f} s")
for rec in result.log[::10] + result.log[-1:]:
    print(f"epoch {rec['epoch']:>3}  loss {rec['loss']:.3f}  train minADE {rec['val_minADE']:.3f}")

base = evaluate_predictions(scenes, constant_velocity_predictions(scenes), schedule_of(cfg)).overall
report, _ = evaluate(result.final, scenes)
print(f"minADE {report.overall['minADE']:.3f} vs constant velocity {base['minADE']:.3f}")

# checkpoints are a plain binary format; loading gives the same predictions
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    save_checkpoint(result.final, tmp / "final.bin")
    again, _ = evaluate(load_checkpoint(tmp / "final.bin"), scenes)
    print("reloaded checkpoint gives the same report:", again.to_json_line() == report.to_json_line())

    # the same pipeline from the command line, run twice
    save_scenes(scenes[:8], tmp / "scenes.jsonl")
    cfg.train.epochs = 3
    save_config(cfg, tmp / "config.ini")
    outputs = []
    for run in ("a", "b"):
        main(["train", "--config", str(tmp / "config.ini"), "--train", str(tmp / "scenes.jsonl"),
              "--out-dir", str(tmp / run)], out=io.StringIO())
        main(["eval", "--checkpoint", str(tmp / run / "checkpoint.bin"), "--scenes", str(tmp / "scenes.jsonl"),
              "--out-dir", str(tmp / run / "eval")], out=io.StringIO())
        outputs.append([(tmp / run / f).read_bytes() for f in ("train_log.jsonl", "final.bin", "eval/report.jsonl")])
    print("two CLI runs byte-identical:", outputs[0] == outputs[1])

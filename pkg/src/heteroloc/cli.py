"""Command-line entry point: generate, graph-dump, train, eval, bench.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
Config files set defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from .checkpoint import IncompatibleCheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_to_ini, load_config, save_config
from .graphs import GraphConfig, build_multiscale, graph_dump
from .model import collate, encode, init_params, prepare_scene
from .scene import (ScenarioKind, ScenarioSpec, SceneFormatError, SchemaVersionError, ValidationError,
                    generate_corpus, load_scenes, random_scene, save_scenes)
from .training import TrainingAborted, evaluate, save_predictions, save_report, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _scales(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"scales must be comma-separated integers, got {text!r}") from None


def _sizes(text: str) -> tuple:
    try:
        out = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("at least one size is required")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    p.add_argument("--config", default=None, help="INI config file")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=None, help="pairwise neighbors per agent")
    p.add_argument("--scales", type=_scales, default=None, help='hyperedge sizes, e.g. "5,7"; "" for pairwise only')
    p.add_argument("--k-modes", type=int, default=None, help="modes kept per agent (default 6)")
    p.add_argument("--d-model", type=int, default=None, help="embedding width (default 64)")
    p.add_argument("--anchors", type=int, default=None, help="intention anchors per agent type (default 8)")
    p.add_argument("--neighborhood", type=int, default=None, help="attention tokens per agent (default 16)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heteroloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic scenes")
    _common(g)
    g.add_argument("--kind", choices=[k.value for k in ScenarioKind], action="append",
                   help="scenario kind; repeat to cycle through several")
    g.add_argument("--n", type=int, default=6, help="agents per scene")
    g.add_argument("--count", type=int, default=1, help="number of scenes")
    g.add_argument("--speed", type=float, default=10.0, help="agent speed in m/s")
    g.add_argument("--spacing", type=float, default=10.0, help="gap between agents in meters")
    g.add_argument("--noise", type=float, default=0.0, help="position noise sigma in meters")
    g.add_argument("--history-len", type=int, default=11, help="history states per track")
    g.add_argument("--future-len", type=int, default=80, help="future states per track")
    g.add_argument("--timestep", type=float, default=0.1, help="seconds between states")
    g.add_argument("-o", "--out", required=True, help="output scenes file (.jsonl)")

    d = sub.add_parser("graph-dump", help="print the multi-scale graph of scenes")
    _common(d)
    d.add_argument("scenes", help="scenes file (.jsonl)")
    d.add_argument("--index", type=int, default=None, help="only this scene (0-based)")
    d.add_argument("--k", type=int, default=None, help="pairwise neighbors per agent")
    d.add_argument("--scales", type=_scales, default=None, help='hyperedge sizes, e.g. "5,7"; "" for pairwise only')
    d.add_argument("-o", "--out", default=None, help="write here instead of stdout")

    t = sub.add_parser("train", help="train a model")
    _common(t)
    _model_flags(t)
    t.add_argument("--train", required=True, help="training scenes (.jsonl)")
    t.add_argument("--val", default=None, help="validation scenes; defaults to the training set")
    t.add_argument("--epochs", type=int, default=None, help="training epochs (default 200)")
    t.add_argument("--lr", type=float, default=None, help="initial learning rate (default 1e-4)")
    t.add_argument("--batch-size", type=int, default=None, help="scenes per batch (default 16)")
    t.add_argument("--out-dir", required=True, help="directory for config, checkpoints and log")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    e.add_argument("--scenes", required=True, help="scenes to predict and score (.jsonl)")
    e.add_argument("--k-modes", type=int, default=None, help="modes kept per agent (default: from checkpoint)")
    e.add_argument("--out-dir", required=True, help="directory for predictions and report")

    b = sub.add_parser("bench", help="time graph construction and encoder forward")
    _common(b)
    _model_flags(b)
    b.add_argument("--sizes", type=_sizes, default=(128, 512), help='agent counts, e.g. "128,512"')
    b.add_argument("--repeats", type=int, default=3, help="timed runs per size after one warm-up")
    b.add_argument("--density", type=float, default=0.01, help="agents per square meter")
    return parser


def effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    pairs = [("k", cfg.graph, "k"), ("scales", cfg.graph, "scales"), ("k_modes", cfg.model, "k_modes"),
             ("d_model", cfg.model, "d_model"), ("anchors", cfg.model, "anchors"),
             ("neighborhood", cfg.model, "neighborhood"), ("epochs", cfg.train, "epochs"),
             ("lr", cfg.train, "lr"), ("batch_size", cfg.train, "batch_size")]
    for flag, section, key in pairs:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(section, key, value)
    cfg.validate()
    return cfg


def cmd_generate(args, out) -> int:
    cfg = effective_config(args)
    kinds = [ScenarioKind(k) for k in (args.kind or ["platoon"])]
    specs = [ScenarioSpec(k, args.n, args.speed, args.spacing, args.noise, args.history_len, args.future_len,
                          args.timestep) for k in kinds]
    for s in specs:
        s.validate()
    if args.count < 0:
        raise ValidationError("count: must be >= 0")
    scenes = generate_corpus(specs, args.count, cfg.train.seed)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes (seed {cfg.train.seed}) to {args.out}", file=out)
    return EXIT_OK


def cmd_graph_dump(args, out) -> int:
    cfg = effective_config(args)
    gcfg = GraphConfig(cfg.graph.k, tuple(cfg.graph.scales))
    scenes = load_scenes(args.scenes)
    if args.index is not None:
        if not 0 <= args.index < len(scenes):
            raise ValidationError(f"--index {args.index} out of range for {len(scenes)} scenes")
        scenes = [scenes[args.index]]
    text = "".join(graph_dump(build_multiscale(s, gcfg), gcfg) for s in scenes)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_train(args, out) -> int:
    cfg = effective_config(args)
    train_scenes = load_scenes(args.train)
    val_scenes = load_scenes(args.val) if args.val else None
    os.makedirs(args.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(args.out_dir, "config.ini"))
    ckpt_path = os.path.join(args.out_dir, "checkpoint.bin")
    result = train(cfg, train_scenes, val_scenes, checkpoint_path=ckpt_path,
                   log_path=os.path.join(args.out_dir, "train_log.jsonl"))
    save_checkpoint(result.final, os.path.join(args.out_dir, "final.bin"))
    out.write(config_to_ini(cfg))
    last = result.log[-1] if result.log else {}
    print(f"trained {cfg.train.epochs} epochs; best epoch {result.checkpoint.epoch} "
          f"val minADE {result.checkpoint.val_min_ade}; last loss {last.get('loss')}", file=out)
    return EXIT_OK


def cmd_eval(args, out) -> int:
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else ckpt.config
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.k_modes is not None:
        cfg.model.k_modes = args.k_modes
    cfg.validate()
    scenes = load_scenes(args.scenes)
    report, preds = evaluate(ckpt, scenes, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_predictions(scenes, preds, os.path.join(args.out_dir, "predictions.jsonl"), cfg)
    save_report(report, os.path.join(args.out_dir, "report.jsonl"))
    out.write(config_to_ini(cfg))
    out.write(report.table())
    return EXIT_OK


def _timed(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), float(np.std(times))


def bench_rows(cfg: ExperimentConfig, sizes, repeats: int, density: float = 0.01, seed: int = 0) -> list[dict]:
    """Mean/std seconds for graph construction and graph + encoder forward, plus graph entries per N*K."""
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    gcfg = GraphConfig(cfg.graph.k, tuple(cfg.graph.scales))
    params = init_params(cfg, 1, seed=seed)
    rows = []
    for n in sizes:
        scene = random_scene(n, seed + n, density=density, future_len=1)
        graph = build_multiscale(scene, gcfg)
        def forward():
            return encode(params, collate([prepare_scene(scene, cfg, None)]), cfg)

        forward()  # warm-up: JIT compilation and allocator state stay out of the timings
        g_mean, g_std = _timed(lambda: build_multiscale(scene, gcfg), repeats)
        e_mean, e_std = _timed(forward, repeats)
        rows.append({"n": n, "graph_mean": g_mean, "graph_std": g_std, "total_mean": e_mean, "total_std": e_std,
                     "entries_per_nk": graph.num_entries() / (n * cfg.graph.k)})
    base = rows[0]
    for r in rows:
        r["graph_ratio"] = r["graph_mean"] / base["graph_mean"]
        r["total_ratio"] = r["total_mean"] / base["total_mean"]
    return rows


def format_bench(rows) -> str:
    cols = ("n", "graph_mean", "graph_std", "graph_ratio", "total_mean", "total_std", "total_ratio", "entries_per_nk")
    lines = ["".join(f"{c:>15}" for c in cols)]
    for r in rows:
        lines.append(f"{r['n']:>15d}" + "".join(f"{r[c]:>15.6f}" for c in cols[1:]))
    return "\n".join(lines) + "\n"


def cmd_bench(args, out) -> int:
    cfg = effective_config(args)
    rows = bench_rows(cfg, args.sizes, args.repeats, args.density, cfg.train.seed)
    out.write(format_bench(rows))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "graph-dump": cmd_graph_dump, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except (TrainingAborted, ad.NumericalFault) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_NUMERIC
    except (ValidationError, SceneFormatError, SchemaVersionError, IncompatibleCheckpointError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

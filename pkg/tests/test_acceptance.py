"""Acceptance criteria, one test each; the terminal summary prints a PASS/FAIL line per criterion."""

import copy
import math
import time

import numpy as np
import pytest

from heteroloc import autodiff as ad
from heteroloc.cli import bench_rows, main
from heteroloc.config import ExperimentConfig, save_config
from heteroloc.decoder import fit_anchors, loss_terms
from heteroloc.graphs import GraphConfig, build_multiscale
from heteroloc.kmeans import kmeans_fit
from heteroloc.metrics import METRIC_COLUMNS, evaluate_predictions, evaluate_records, map_and_soft_map
from heteroloc.model import batch_loss, collate, encode, init_params, prepare_scene
from heteroloc.nn import bind
from heteroloc.polyline import split_polyline
from heteroloc.scene import (
    AgentTrack, PolylineKind, Polyline, ScenarioKind, ScenarioSpec, Scene, generate_corpus, generate_synthetic_scene,
    random_scene, save_scenes,
)
from heteroloc.training import (
    constant_velocity_predictions, evaluate, ground_truth_predictions, schedule_of, train,
)

import oracles
from conftest import small_config, store_grad_check
from test_graphs import scene_at
from test_metrics import SCHED, random_corpus

VALID = 5


def verdict(record_property, detail, checks):
    record_property("detail", detail)
    failed = [name for name, ok in checks.items() if not ok]
    assert not failed, f"{detail}; failed: {failed}"


def jitter_biases(params, rng, scale=0.1):
    """Move biases off zero so no ReLU pre-activation sits exactly on its kink."""
    out = dict(params)
    for name, v in params.items():
        if name.rsplit(".", 1)[-1].startswith("b") and not name.endswith("ln1.b") and not name.endswith("ln2.b"):
            out[name] = v + scale * rng.normal(size=v.shape)
    return out


def prepared_batch(scene, cfg, anchors=None):
    return collate([prepare_scene(scene, cfg, anchors)])


def embeddings(params, scene, cfg):
    return encode(params, prepared_batch(scene, cfg), cfg).features.data


# --- 1. gradients ------------------------------------------------------------

MODULES = {
    "polyline encoder": ("agent_points.", "agent_proj.", "map_points.", "map_proj.", "type_table"),
    "message passing": ("mp.",),
    "projection bank": ("proj.",),
    "local attention": ("attn.",),
    "decoder": ("dec.",),
}


@pytest.mark.acceptance(1, "gradient suite")
def test_gradient_suite(record_property):
    start = time.perf_counter()
    cfg = small_config()
    worst = {name: 0.0 for name in [*MODULES, "loss", "key bias (absolute)"]}
    for seed in range(5):
        rng = np.random.default_rng(seed)
        scene = random_scene(12, seed, density=0.02, future_len=5)
        batch = prepared_batch(scene, cfg, fit_anchors([scene], cfg.model.anchors, seed=seed))
        params = jitter_biases(init_params(cfg, 5, seed=seed), rng)

        def fn(bound):
            return batch_loss(bound, batch, cfg)[0]

        for module, prefixes in MODULES.items():
            # the key bias shifts every logit of a row equally, so softmax gives it an exactly-zero gradient
            names = [n for n in sorted(params) if n.startswith(prefixes) and not n.endswith(".k.b")]
            worst[module] = max(worst[module], store_grad_check(fn, params, names, coords=3, seed=seed))
        bound = bind(params)
        ad.backward(fn(bound))
        grads = bound.grads()
        for name in (n for n in params if n.endswith(".k.b")):
            worst["key bias (absolute)"] = max(worst["key bias (absolute)"], float(np.abs(grads[name]).max()))

        traj = rng.normal(size=(3, 4, 5, 2))
        logits = rng.normal(size=(3, 4))
        gt = rng.normal(size=(3, 5, 2))
        valid = rng.random((3, 5)) < 0.8
        valid[:, 0] = True
        matched = rng.integers(0, 4, size=3)

        def loss_fn(leaves):
            cls, reg = loss_terms(leaves[0], leaves[1], gt, valid, matched)
            return ad.mean(ad.add(cls, reg))

        worst["loss"] = max(worst["loss"], ad.grad_check(loss_fn, [traj, logits]))
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    checks = {k: v < (1e-12 if "absolute" in k else 1e-4) for k, v in worst.items()}
    checks["runtime < 120 s"] = elapsed < 120
    verdict(record_property, detail, checks)


# --- 2. invariances ----------------------------------------------------------


def rigid(scene, theta, shift):
    c, s = math.cos(theta), math.sin(theta)
    if theta % (math.pi / 2) == 0:
        c, s = round(c), round(s)  # quarter turns stay exact, so exact distance ties survive
    rot = np.array([[c, -s], [s, c]])

    def move(states):
        out = states.copy()
        out[:, :2] = states[:, :2] @ rot.T + shift
        out[:, 3:5] = states[:, 3:5] @ rot.T
        out[:, 2] = np.angle(np.exp(1j * (states[:, 2] + theta)))
        return out

    agents = [AgentTrack(a.id, a.type, move(a.history), None if a.future is None else move(a.future), a.timestep)
              for a in scene.agents]
    polylines = []
    for p in scene.polylines:
        pts = p.points.copy()
        pts[:, :2] = p.points[:, :2] @ rot.T + shift
        if p.has_heading:
            pts[:, 2] = np.angle(np.exp(1j * (p.points[:, 2] + theta)))
        polylines.append(Polyline(pts, p.kind))
    return Scene(agents, polylines, list(scene.target_ids), scene.seed)


def invariance_scenes(rng):
    """(scene, angle, shift); synthetic layouts hold exact distance ties, so they get quarter turns."""
    for seed in range(6):
        yield random_scene(30, seed), rng.uniform(-math.pi, math.pi), rng.uniform(-500, 500, 2)
    for seed, kind in enumerate(ScenarioKind):
        scene = generate_synthetic_scene(ScenarioSpec(kind, n_agents=10), seed)
        yield scene, float(rng.choice([0.5, 1.0, -0.5])) * math.pi, rng.integers(-512, 512, 2) * 0.25


@pytest.mark.acceptance(2, "invariance suite")
def test_invariance_suite(record_property):
    cfg = small_config()
    rng = np.random.default_rng(2)
    params = init_params(cfg, 1, seed=2)
    checks = {"point permutation": True, "invalid masking": True, "member permutation": True}
    worst_rigid = 0.0
    for scene, theta, shift in invariance_scenes(rng):
        batch = prepared_batch(scene, cfg)
        base = encode(params, batch, cfg).features.data

        perm = copy.copy(batch)
        for feats, index in (("agent_feats", "agent_index"), ("map_feats", "map_index")):
            rows = getattr(batch, index)
            # shuffle the points within every set; padding slots keep pointing at a member
            arr = getattr(batch, feats).copy()
            for r in range(len(rows)):
                members = np.unique(rows[r])
                shuffled = rng.permutation(members)
                arr[members] = getattr(batch, feats)[shuffled]
            setattr(perm, feats, arr)
        checks["point permutation"] &= np.array_equal(encode(params, perm, cfg).features.data, base)

        shuffled = copy.copy(batch)
        shuffled.families = [[np.array([rng.permutation(row) for row in b]).reshape(b.shape) for b in fam]
                             for fam in batch.families]
        checks["member permutation"] &= np.array_equal(encode(params, shuffled, cfg).features.data, base)

        masked_a, masked_b = copy.deepcopy(scene), copy.deepcopy(scene)
        for a, b in zip(masked_a.agents, masked_b.agents):
            rows = rng.choice(len(a.history) - 1, size=3, replace=False)
            a.history[rows, VALID] = b.history[rows, VALID] = 0
            a.history[rows, :5] = rng.normal(size=(3, 5)) * 1e6
            b.history[rows, :5] = rng.normal(size=(3, 5))
        checks["invalid masking"] &= np.array_equal(embeddings(params, masked_a, cfg),
                                                    embeddings(params, masked_b, cfg))

        moved = embeddings(params, rigid(scene, theta, shift), cfg)
        worst_rigid = max(worst_rigid, float(np.abs(moved - base).max() / np.abs(base).max()))
    checks["rigid motion < 1e-5"] = worst_rigid < 1e-5
    detail = ", ".join(f"{k} {'bit-identical' if v else 'differs'}" for k, v in checks.items() if k[0] != "r")
    verdict(record_property, f"{detail}; rigid motion rel {worst_rigid:.1e} "
                                    "(generic scenes at any angle, tied layouts under quarter turns)", checks)


# --- 3. locality -------------------------------------------------------------


def mp_closure(members, a, rounds):
    out = {a}
    for fam in members:
        reach = {a}
        for _ in range(rounds):
            reach |= {int(m) for row in fam for m in row if reach & {int(x) for x in row}}
        out |= reach
    return out


def attention_closure(neigh, a, layers):
    reach, frontier = {a}, {a}
    for _ in range(layers):
        nxt = set()
        for i in frontier:
            if i < neigh.n_agents:
                nxt |= set(neigh.tokens(i))
        frontier = nxt - reach
        reach |= nxt
    return reach


def chunk_owner(scene):
    return [p for p, poly in enumerate(scene.polylines) for _ in split_polyline(poly.points)]


@pytest.mark.acceptance(3, "locality suite")
def test_locality_suite(record_property):
    cfg = small_config()
    m = cfg.model
    params = init_params(cfg, 1, seed=3)
    rng = np.random.default_rng(3)
    kinds = list(PolylineKind)
    checked = perturbed_agents = perturbed_maps = 0
    identical = True
    for trial in range(50):
        scene = random_scene(int(rng.integers(20, 41)), 1000 + trial, density=0.01,
                             n_polylines=int(rng.integers(6, 15)))
        prep = prepare_scene(scene, cfg, None)
        batch = collate([prep])
        base = encode(params, batch, cfg).features.data
        n = prep.n_agents
        owner = chunk_owner(scene)
        for a in rng.choice(n, size=min(3, n), replace=False):
            att = attention_closure(batch.neighborhoods, int(a), m.layers)
            deps = set().union(*(mp_closure(prep.members, t, m.rounds) for t in att if t < n))
            used_polys = {owner[t - n] for t in att if t >= n}
            far_agents = sorted(set(range(n)) - deps)
            far_polys = sorted(set(range(len(scene.polylines))) - used_polys)
            if not far_agents and not far_polys:
                continue
            other = copy.deepcopy(scene)
            for r in far_agents:
                h = other.agents[int(prep.nodes[r])].history
                h[:-1, :5] += rng.normal(size=(len(h) - 1, 5))  # the last (reference) state stays put
            for p in far_polys:
                poly = other.polylines[p]
                poly.kind = kinds[(kinds.index(poly.kind) + 1) % len(kinds)]
            prep2 = prepare_scene(other, cfg, None)
            assert all(np.array_equal(x, y) for x, y in zip(prep.members, prep2.members))
            assert np.array_equal(prep.neigh_index, prep2.neigh_index)
            out = encode(params, collate([prep2]), cfg).features.data
            identical &= np.array_equal(out[a], base[a])
            checked += 1
            perturbed_agents += len(far_agents)
            perturbed_maps += len(far_polys)
    detail = (f"{checked} targets over 50 scenes, {perturbed_agents} agent and {perturbed_maps} polyline "
              f"perturbations, {'bit-identical' if identical else 'target changed'}")
    verdict(record_property, detail, {"bit-identical": identical, "enough checks": checked >= 100})


# --- 4. oracles --------------------------------------------------------------


def graph_matches(points, k, scales):
    g = build_multiscale(scene_at(points), GraphConfig(k, tuple(scales)))
    if g.pairwise.neighbors.tolist() != oracles.knn(points, k):
        return False
    return all([(e.anchor, e.members) for e in g.hyperedges[s]] == oracles.hyperedges(points, s) for s in scales)


@pytest.mark.acceptance(4, "oracle suite")
def test_oracle_suite(record_property):
    rng = np.random.default_rng(4)
    graph_fail = 0
    for trial in range(1000):
        n = int(rng.integers(1, 13))
        pts = rng.uniform(0, 20, size=(n, 2))
        if trial % 3 == 0:
            pts = np.round(pts)
        k = int(rng.integers(1, 12))
        scales = sorted(set(rng.integers(2, 9, size=int(rng.integers(0, 3))).tolist()))
        graph_fail += not graph_matches(pts, k, scales)

    metric_err = 0.0
    for _ in range(500):
        records, plain = random_corpus(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        got = evaluate_records(records, SCHED).overall
        want = oracles.evaluate(plain)
        metric_err = max(metric_err, max(abs(got[c] - want[c]) for c in METRIC_COLUMNS))

    kmeans_err = 0.0
    for trial in range(300):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, min(3, n) + 1))
        pts = rng.normal(size=(n, 2))
        kmeans_err = max(kmeans_err, kmeans_fit(pts, k, seed=trial).inertia - oracles.kmeans_inertia(pts, k))
    detail = (f"graphs {1000 - graph_fail}/1000 equal; metrics max error {metric_err:.1e} over 500 corpora; "
              f"k-means excess inertia {kmeans_err:.1e} over 300 sets")
    verdict(record_property, detail, {"graphs": graph_fail == 0, "metrics": metric_err <= 1e-12,
                                      "k-means": kmeans_err <= 1e-12})


# --- 5. learning -------------------------------------------------------------


def learning_corpus():
    specs = [ScenarioSpec(kind=ScenarioKind.PLATOON),
             ScenarioSpec(kind=ScenarioKind.CROWD_CROSSING, speed=1.4, spacing=3.0)]
    return generate_corpus(specs, 64, 0)


@pytest.mark.acceptance(5, "learning suite")
def test_learning_suite(record_property):
    scenes = learning_corpus()
    cfg = ExperimentConfig()
    base = evaluate_predictions(scenes, constant_velocity_predictions(scenes), schedule_of(cfg)).overall
    start = time.perf_counter()
    result = train(cfg, scenes)
    elapsed = time.perf_counter() - start
    model = evaluate(result.final, scenes)[0].overall
    early = [(result.log[0]["loss"], result.log[9]["loss"])]
    for seed in (1, 2):
        short = ExperimentConfig()
        short.train.seed, short.train.epochs = seed, 10
        log = train(short, scenes).log
        early.append((log[0]["loss"], log[9]["loss"]))
    first, tenth = np.mean(early, axis=0)
    detail = (f"{elapsed:.0f} s; minADE {model['minADE']:.3f} vs baseline {base['minADE']:.3f}; "
              f"MR {model['MR']:.3f} vs {base['MR']:.3f}; mean loss epoch 1 {first:.3f}, epoch 10 {tenth:.3f}")
    verdict(record_property, detail, {
        "runtime <= 300 s": elapsed <= 300,
        "minADE <= 0.5 x baseline": model["minADE"] <= 0.5 * base["minADE"],
        "MR < baseline": model["MR"] < base["MR"],
        "loss falls": tenth < first,
    })


# --- 6. metric fixpoints -----------------------------------------------------


@pytest.mark.acceptance(6, "metric fixpoints")
def test_metric_fixpoints(record_property):
    specs = [ScenarioSpec(kind, n_agents=6, future_len=40, invalid_prob=0.1) for kind in ScenarioKind]
    scenes = generate_corpus(specs, 12, 6)
    rep = evaluate_predictions(scenes, ground_truth_predictions(scenes), SCHED).overall
    fixpoint = (rep["minADE"] == rep["minFDE"] == rep["MR"] == 0.0) and rep["mAP"] == rep["SoftmAP"] == 1.0
    rng = np.random.default_rng(6)
    dominated = 0
    for _ in range(200):
        records, _ = random_corpus(rng, int(rng.integers(1, 8)), int(rng.integers(1, 7)))
        hard, soft = map_and_soft_map(records, SCHED)
        dominated += soft >= hard
    detail = (f"ground truth gives minADE {rep['minADE']}, minFDE {rep['minFDE']}, MR {rep['MR']}, "
              f"mAP {rep['mAP']}, SoftmAP {rep['SoftmAP']}; SoftmAP >= mAP on {dominated}/200 corpora")
    verdict(record_property, detail, {"fixpoint": fixpoint, "soft dominates": dominated == 200})


# --- 7. scaling --------------------------------------------------------------


@pytest.mark.acceptance(7, "scaling")
def test_scaling(record_property):
    cfg = ExperimentConfig()
    assert cfg.graph.k == 10
    small, large = bench_rows(cfg, (128, 512), repeats=5)
    entries = max(small["entries_per_nk"], large["entries_per_nk"])
    detail = (f"time ratio 512/128 {large['total_ratio']:.2f} ({small['total_mean'] * 1e3:.0f} ms -> "
              f"{large['total_mean'] * 1e3:.0f} ms); graph entries {entries:.2f} x N*K")
    verdict(record_property, detail, {"ratio <= 6": large["total_ratio"] <= 6, "c <= 4": entries <= 4})


# --- 8. reproducibility ------------------------------------------------------


def run_pipeline(root, scenes_path, cfg_path):
    assert main(["train", "--config", str(cfg_path), "--train", str(scenes_path), "--out-dir", str(root / "run")]) == 0
    assert main(["eval", "--checkpoint", str(root / "run" / "checkpoint.bin"), "--scenes", str(scenes_path),
                 "--out-dir", str(root / "eval")]) == 0
    names = ["run/train_log.jsonl", "run/checkpoint.bin", "run/final.bin", "eval/predictions.jsonl",
             "eval/report.jsonl"]
    return {name: (root / name).read_bytes() for name in names}


@pytest.mark.acceptance(8, "reproducibility")
def test_reproducibility(record_property, tmp_path, capsys):
    specs = [ScenarioSpec(ScenarioKind.PLATOON, n_agents=4, future_len=10),
             ScenarioSpec(ScenarioKind.CROWD_CROSSING, n_agents=4, future_len=10, speed=1.4)]
    scenes_path = tmp_path / "scenes.jsonl"
    save_scenes(generate_corpus(specs, 8, 8), scenes_path)
    cfg = small_config()
    cfg.train.epochs, cfg.train.batch_size, cfg.train.lr, cfg.train.seed = 3, 4, 1e-3, 8
    save_config(cfg, tmp_path / "config.ini")
    first = run_pipeline(tmp_path / "a", scenes_path, tmp_path / "config.ini")
    second = run_pipeline(tmp_path / "b", scenes_path, tmp_path / "config.ini")
    capsys.readouterr()
    same = {name: first[name] == second[name] for name in first}
    detail = ", ".join(f"{name} {'identical' if ok else 'differs'}" for name, ok in same.items())
    verdict(record_property, detail, same)

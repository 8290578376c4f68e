import math

import numpy as np
import pytest

from heteroloc import autodiff as ad
from heteroloc.decoder import (
    ModePrediction, anchor_lines, compute_loss, decode, endpoints_by_type, fit_anchors, init_decoder_params,
    loss_terms, modes_of, select_topk,
)
from heteroloc.scene import AgentTrack, AgentType, Scene, ValidationError

from conftest import store_grad_check

T = 5


def modes_from_logits(logits, t=T):
    return [ModePrediction(np.full((t, 2), float(i)), lg) for i, lg in enumerate(logits)]


def dec_params(d=4, hidden=6, seed=0):
    return init_decoder_params(np.random.default_rng(seed), d, hidden, T, {})


def corpus_with_endpoints(ends, atype=AgentType.VEHICLE):
    agents = []
    for i, (x, y) in enumerate(ends):
        hist = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]])
        fut = np.array([[x / 2, y / 2, 0, 0, 0, 1], [x, y, 0, 0, 0, 1]], dtype=float)
        agents.append(AgentTrack(f"a{i}", atype, hist, fut))
    return [Scene(agents)]


# --- anchors -----------------------------------------------------------------


def test_anchors_at_cluster_means():
    ends = [(0, 0), (0, 1), (20, 0), (20, 1), (0, 40), (1, 40)]
    anchors = fit_anchors(corpus_with_endpoints(ends), 3, seed=1).for_type(AgentType.VEHICLE)
    got = sorted(map(tuple, np.round(anchors, 12)))
    assert got == [(0.0, 0.5), (0.5, 40.0), (20.0, 0.5)]


def test_single_anchor_is_mean():
    ends = [(1, 2), (3, 4), (5, 0)]
    a = fit_anchors(corpus_with_endpoints(ends), 1).for_type(AgentType.VEHICLE)
    assert np.allclose(a, [[3.0, 2.0]])


def test_too_few_endpoints():
    with pytest.raises(ValidationError):
        fit_anchors(corpus_with_endpoints([(1, 1), (2, 2)]), 3)


def test_anchor_fallback_and_determinism():
    corpus = corpus_with_endpoints([(i, i * i % 7) for i in range(12)])
    a = fit_anchors(corpus, 4, seed=5)
    b = fit_anchors(corpus, 4, seed=5)
    for t in AgentType:
        assert np.array_equal(a.for_type(t), b.for_type(t))
    # pedestrians have no endpoints and share the pooled set
    assert np.array_equal(a.for_type(AgentType.PEDESTRIAN), a.for_type(AgentType.VEHICLE))
    assert len(endpoints_by_type(corpus)[AgentType.VEHICLE]) == 12


# --- decode ------------------------------------------------------------------


def test_zero_weights_give_straight_lines(rng):
    params = dec_params()
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    zero["dec.b2"][-1] = 0.7
    anchors = rng.normal(size=(3, 2)) * 10
    traj, logits = decode(rng.normal(size=(2, 4)), anchors, zero, T)
    assert np.array_equal(traj.data, np.broadcast_to(anchor_lines(anchors, T), (2, 3, T, 2)))
    assert np.all(logits.data == 0.7)
    assert np.array_equal(traj.data[0, :, -1], anchors)


def test_decode_shapes_and_determinism(rng):
    params = dec_params()
    e = rng.normal(size=4)
    traj, logits = decode(np.stack([e, e]), rng.normal(size=(8, 2)), params, T)
    assert traj.shape == (2, 8, T, 2) and logits.shape == (2, 8)
    assert np.array_equal(traj.data[0], traj.data[1]) and np.array_equal(logits.data[0], logits.data[1])


# --- top-K -------------------------------------------------------------------


def test_topk_examples():
    ps = select_topk(modes_from_logits([3.0, 1.0, 2.0]), 2)
    assert ps.anchor_ids.tolist() == [0, 2]
    assert abs(ps.probabilities.sum() - 1) <= 1e-9 and ps.probabilities[0] > ps.probabilities[1]
    eq = select_topk(modes_from_logits([0.5] * 5), 3)
    assert eq.anchor_ids.tolist() == [0, 1, 2] and np.allclose(eq.probabilities, 1 / 3)
    full = select_topk(modes_from_logits([0.1, 0.9, 0.5, -1.0]), 4)
    assert full.anchor_ids.tolist() == [1, 2, 0, 3]
    with pytest.raises(ValidationError):
        select_topk(modes_from_logits([1.0, 2.0]), 3)


def test_topk_properties(rng):
    for _ in range(100):
        logits = np.round(rng.normal(size=8), 1)
        k = int(rng.integers(1, 9))
        ps = select_topk(modes_from_logits(logits), k)
        assert abs(ps.probabilities.sum() - 1.0) <= 1e-9
        assert np.all(np.diff(ps.probabilities) <= 0)
        kept = logits[ps.anchor_ids]
        assert np.all(kept >= np.delete(logits, ps.anchor_ids).max(initial=-np.inf))


# --- loss --------------------------------------------------------------------


def test_uniform_logits_give_ln_a():
    gt = np.cumsum(np.ones((T, 2)), axis=0)
    modes = modes_from_logits([0.0] * 8)
    anchors = np.array([[i, i] for i in range(8)], dtype=float)
    lb = compute_loss(modes, gt, np.ones(T, bool), anchors)
    assert lb.classification == pytest.approx(math.log(8), abs=1e-12)
    assert lb.matched_anchor == 5


def test_perfect_match_zero_regression():
    gt = np.cumsum(np.ones((T, 2)), axis=0)
    modes = [ModePrediction(gt.copy(), 50.0), ModePrediction(gt + 3, -50.0)]
    lb = compute_loss(modes, gt, np.ones(T, bool), np.array([gt[-1], gt[-1] + 3]))
    assert lb.regression == 0.0 and lb.classification < 1e-40
    assert lb.total == lb.classification + lb.regression


def test_regression_over_valid_steps_only():
    gt = np.zeros((4, 2))
    traj = np.zeros((4, 2))
    traj[2:] = 1e6  # only wrong where ground truth is invalid
    valid = np.array([True, True, False, False])
    lb = compute_loss([ModePrediction(traj, 0.0)], gt, valid, np.zeros((1, 2)))
    assert lb.regression == 0.0
    traj[1] = 0.5
    lb = compute_loss([ModePrediction(traj, 0.0)], gt, valid, np.zeros((1, 2)))
    # smooth-L1 of 0.5 is 0.125 per coordinate, two coordinates, mean over two valid steps
    assert lb.regression == pytest.approx(0.125)


def test_no_valid_future_skipped():
    lb = compute_loss(modes_from_logits([0.0, 1.0]), np.zeros((T, 2)), np.zeros(T, bool), np.zeros((2, 2)))
    assert lb.skipped and lb.total == 0.0 and lb.matched_anchor == -1


def test_reg_weight():
    gt = np.zeros((T, 2))
    modes = [ModePrediction(np.full((T, 2), 2.0), 0.0), ModePrediction(np.zeros((T, 2)), 1.0)]
    lb = compute_loss(modes, gt, np.ones(T, bool), np.array([[0.0, 0.0], [9.0, 9.0]]), reg_weight=2.5)
    assert lb.total == pytest.approx(lb.classification + 2.5 * lb.regression)
    assert lb.classification >= 0 and lb.regression > 0


def test_decode_and_loss_gradients(rng):
    # nonzero biases keep ReLU pre-activations off the kink at exactly 0
    params = {k: v + (0.1 * rng.normal(size=v.shape) if ".b" in k else 0.0) for k, v in dec_params().items()}
    anchors = rng.normal(size=(3, 4, 2)) * 5
    gt = rng.normal(size=(3, T, 2)) * 3
    valid = rng.random((3, T)) < 0.7
    valid[:, -1] = True
    matched = np.array([0, 3, 1])
    store = dict(params, emb=rng.normal(size=(3, 4)))

    def fn(p):
        traj, logits = decode(p["emb"], anchors, p, T)
        cls, reg = loss_terms(traj, logits, gt, valid, matched)
        return ad.sum(ad.add(cls, reg))

    assert store_grad_check(fn, store, coords=4) < 1e-4
    traj, logits = decode(store["emb"], anchors, params, T)
    cls, reg = loss_terms(traj, logits, gt, valid, matched)
    assert np.all(cls.data >= 0) and np.all(reg.data >= 0)
    assert modes_of(traj.data[0], logits.data[0])[2].logit == logits.data[0, 2]

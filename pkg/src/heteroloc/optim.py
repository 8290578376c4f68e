"""AdamW, global-norm clipping and the step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError

# A clipped gradient's recomputed norm can land an ulp above max_norm; the
# slack keeps clip(clip(g)) bit-identical to clip(g).
_CLIP_SLACK = 1e-12


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adamw_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """One decoupled-weight-decay Adam update, in place. Returns ``params``."""
    if state.step < 0:
        raise ValueError("optimizer step counter must be >= 0")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adamw: gradient {g.shape} for parameter {name} of shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def global_norm(grads) -> float:
    items = grads.values() if isinstance(grads, dict) else grads
    total = 0.0
    for g in items:
        total += float(np.dot(np.ravel(g), np.ravel(g)))
    return math.sqrt(total)


def clip_global_norm(grads, max_norm: float):
    """Scale all gradients by ``max_norm / N`` when their joint L2 norm N exceeds ``max_norm``."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm * (1.0 + _CLIP_SLACK):
        return grads
    factor = max_norm / norm
    if isinstance(grads, dict):
        return {k: g * factor for k, g in grads.items()}
    return [np.asarray(g) * factor for g in grads]


def step_decay_lr(base_lr: float, epoch: int, milestones, gamma: float = 0.5) -> float:
    """Learning rate for a 0-based ``epoch``; decays by ``gamma`` once each milestone is reached."""
    passed = sum(1 for m in milestones if epoch >= m)
    return base_lr * gamma ** passed

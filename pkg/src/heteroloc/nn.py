"""Multi-layer perceptrons and a flat named-parameter store.

Model parameters live in a plain ``dict[str, np.ndarray]``. A forward pass
binds them to leaf :class:`Tensor` objects with :func:`bind`, runs, and reads
gradients back with :func:`grads_of`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ACTIVATIONS = ("relu", "identity")


@dataclass
class MlpParams:
    """Affine layers with an activation between them.

    ``weights[i]`` has shape (in, out). The activation follows every layer
    except the last, unless ``activate_last`` is set.
    """

    weights: list
    biases: list
    activation: str = "relu"
    activate_last: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("MLP needs one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: bias {b.shape} does not match weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: {self.weights[i - 1].shape} does not compose with {w.shape}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def from_store(cls, store: Mapping, prefix: str, activation="relu", activate_last=False):
        weights, biases = [], []
        i = 0
        while f"{prefix}.w{i}" in store:
            weights.append(store[f"{prefix}.w{i}"])
            biases.append(store[f"{prefix}.b{i}"])
            i += 1
        if not weights:
            raise KeyError(f"no MLP parameters under {prefix!r}")
        return cls(weights, biases, activation, activate_last)


def init_mlp(rng: np.random.Generator, widths, store: dict | None = None, prefix: str = "",
             activation="relu", activate_last=False, out_scale: float = 1.0) -> MlpParams:
    """He-style initialisation; ``out_scale`` shrinks the final layer."""
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        std = np.sqrt(2.0 / n_in)
        if i == len(widths) - 2:
            std *= out_scale
        w = rng.normal(0.0, std, size=(n_in, n_out))
        b = np.zeros(n_out)
        weights.append(w)
        biases.append(b)
        if store is not None:
            store[f"{prefix}.w{i}"] = w
            store[f"{prefix}.b{i}"] = b
    return MlpParams(weights, biases, activation, activate_last)


def mlp_apply(params: MlpParams, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeError(f"mlp: input width {x.shape[-1]} but first layer expects {params.weights[0].shape[0]}")
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = ad.add(ad.matmul(x, w), b)
        if params.activation == "relu" and (i < n - 1 or params.activate_last):
            x = ad.relu(x)
    return x


def linear(store: Mapping, prefix: str, x) -> Tensor:
    return ad.add(ad.matmul(x, store[f"{prefix}.w"]), store[f"{prefix}.b"])


def init_linear(rng, n_in, n_out, store: dict, prefix: str, out_scale: float = 1.0) -> None:
    store[f"{prefix}.w"] = rng.normal(0.0, out_scale * np.sqrt(1.0 / n_in), size=(n_in, n_out))
    store[f"{prefix}.b"] = np.zeros(n_out)


@dataclass
class Bound:
    """Parameters wrapped as gradient-tracking leaves for one forward pass."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self.tensors.items()}


def bind(store: Mapping[str, np.ndarray], requires_grad: bool = True) -> Bound:
    return Bound({k: Tensor(v, requires_grad=requires_grad) for k, v in store.items()})


def num_parameters(store: Mapping[str, np.ndarray]) -> int:
    return int(sum(v.size for v in store.values()))

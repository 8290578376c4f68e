"""Byte-stable checkpoint files.

Layout: a magic line, one JSON header line (sorted keys), then every
parameter as raw little-endian float64 in header order. No timestamps or
archive metadata, so equal states give equal bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .decoder import IntentionAnchorSet
from .optim import OptimizerState
from .scene import AgentType, ValidationError

MAGIC = b"HETEROLOC-CKPT 1\n"


class IncompatibleCheckpointError(ValidationError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: dict
    anchors: IntentionAnchorSet
    future_len: int
    epoch: int = 0
    val_min_ade: float | None = None
    optimizer: OptimizerState | None = None

    def tensors(self) -> dict:
        out = dict(self.params)
        if self.optimizer is not None:
            out.update({f"opt.m/{k}": v for k, v in self.optimizer.m.items()})
            out.update({f"opt.v/{k}": v for k, v in self.optimizer.v.items()})
        return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = ckpt.tensors()
    names = sorted(tensors)
    opt = ckpt.optimizer
    header = {
        "optimizer": None if opt is None else {"step": opt.step, "lr": opt.lr, "weight_decay": opt.weight_decay,
                                               "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "config": ckpt.config.to_dict(),
        "anchors": {t.value: ckpt.anchors.anchors[t].tolist() for t in AgentType},
        "future_len": ckpt.future_len,
        "epoch": ckpt.epoch,
        "val_min_ade": ckpt.val_min_ade,
        "tensors": [[n, list(tensors[n].shape)] for n in names],
    }
    blob = b"".join(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes() for n in names)
    return MAGIC + json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n" + blob


def from_bytes(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise IncompatibleCheckpointError("not a checkpoint file (bad magic line)")
    end = data.index(b"\n", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC):end])
    except json.JSONDecodeError as exc:
        raise IncompatibleCheckpointError(f"corrupt checkpoint header: {exc}") from None
    blob = memoryview(data)[end + 1:]
    tensors, pos = {}, 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + n > len(blob):
            raise IncompatibleCheckpointError("truncated checkpoint")
        tensors[name] = np.frombuffer(blob[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
    if pos != len(blob):
        raise IncompatibleCheckpointError("trailing bytes after checkpoint tensors")
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = OptimizerState(**header["optimizer"])
        optimizer.m = {k[len("opt.m/"):]: v for k, v in tensors.items() if k.startswith("opt.m/")}
        optimizer.v = {k[len("opt.v/"):]: v for k, v in tensors.items() if k.startswith("opt.v/")}
    anchors = IntentionAnchorSet({t: np.array(header["anchors"][t.value], dtype=float).reshape(-1, 2)
                                  for t in AgentType})
    return Checkpoint(ExperimentConfig.from_dict(header["config"]), params, anchors, header["future_len"],
                      header["epoch"], header["val_min_ade"], optimizer)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def check_compatible(ckpt: Checkpoint, config: ExperimentConfig) -> None:
    ours, theirs = config.model_signature(), ckpt.config.model_signature()
    if ours == theirs:
        return
    diffs = [f"{sec}.{k}: checkpoint {theirs[sec][k]!r} vs config {ours[sec][k]!r}"
             for sec in ours for k in ours[sec] if ours[sec][k] != theirs[sec][k]]
    raise IncompatibleCheckpointError("checkpoint does not match config: " + "; ".join(diffs))

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import SchemaError
from ..geometry_io import EmbeddingTable, _unit, load_embedding_table
from .config import LabelerConfig
from .loss import contrastive_loss_and_grad, cross_entropy_and_grad
from .model import LabelerModel, backward, encode


@dataclass(frozen=True, eq=False)
class RoomSample:
    object_embeddings: np.ndarray  # (u, D) unit rows
    gt_label: str | None = None

    def __post_init__(self):
        objs = np.array(self.object_embeddings, dtype=np.float64)
        if objs.ndim != 2 or len(objs) == 0:
            raise ValueError("a room sample needs at least one object embedding")
        objs.setflags(write=False)
        object.__setattr__(self, "object_embeddings", objs)


def _targets(model: LabelerModel, batch: Sequence[RoomSample], table: EmbeddingTable) -> np.ndarray:
    phrases = model.classes if model.config.head_mode == "logits" else table.phrases
    out = []
    for s in batch:
        if s.gt_label not in phrases:
            raise KeyError(f"label {s.gt_label!r} is not a known phrase")
        out.append(phrases.index(s.gt_label))
    return np.array(out, dtype=np.int64)


def loss_and_grad(model: LabelerModel, batch: Sequence[RoomSample], table: EmbeddingTable,
                  tau: float | None = None, train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and exact gradients for every parameter.

    Contrastive mode uses the temperature-scaled loss over the whole phrase
    table; logits mode uses cross-entropy on ``head @ e_cls``.
    """
    if not batch:
        raise ValueError("empty batch")
    tau = model.config.temperature if tau is None else tau
    targets = _targets(model, batch, table)
    E, cache = encode(model, [s.object_embeddings for s in batch], train_mode, rng, keep_cache=True)
    if model.config.head_mode == "logits":
        head = model.params["head"]
        loss, dlogits = cross_entropy_and_grad(E @ head.T, targets)
        dE = dlogits @ head
        grads = backward(model, dE, cache)
        grads["head"] = dlogits.T @ E
    else:
        loss, dE = contrastive_loss_and_grad(E, table.matrix, targets, tau)
        grads = backward(model, dE, cache)
    return loss, grads


def grad(model, batch, table, tau=None) -> dict[str, np.ndarray]:
    return loss_and_grad(model, batch, table, tau)[1]


class AdamW:
    """Adam with decoupled weight decay (decay applied as p *= 1 - lr * wd before the step)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k in sorted(params):
            g = grads[k]
            p = params[k]
            p *= 1.0 - self.lr * self.wd
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(model: LabelerModel, dataset: Sequence[RoomSample], table: EmbeddingTable,
          config: LabelerConfig | None = None) -> tuple[LabelerModel, list[float]]:
    """Fixed-epoch AdamW training; returns a new model and the per-epoch mean loss.

    Data order is reshuffled every epoch from ``config.seed``; the same seed,
    config and dataset always give bit-identical parameters.
    """
    config = config or model.config
    if not dataset:
        raise ValueError("empty dataset")
    _targets(model, dataset, table)  # fail fast on unknown labels
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.params, config.learning_rate, config.weight_decay)
    bs = config.batch_size or len(dataset)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), bs):
            batch = [dataset[k] for k in order[start:start + bs]]
            loss, grads = loss_and_grad(model, batch, table, config.temperature,
                                        train_mode=config.dropout_rate > 0, rng=rng)
            opt.step(model.params, grads)
            total += loss * len(batch)
        history.append(total / len(dataset))
    return model, history


# ------------------------------------------------------------- files

def load_dataset(path: str | Path) -> tuple[list[RoomSample], EmbeddingTable]:
    """Read a room dataset file and the embedding table it references (relative paths allowed)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        table = load_embedding_table((path.parent / doc["embedding_table"]).read_text(encoding="utf-8"))
        samples = []
        for k, rec in enumerate(doc["samples"]):
            objs = [_unit(v, f"sample {k}") for v in rec["object_embeddings"]]
            if not objs:
                raise SchemaError(f"sample {k}: no objects")
            if any(len(v) != table.dim for v in objs):
                raise SchemaError(f"sample {k}: embedding dim differs from table dim {table.dim}")
            if rec["gt_label"] not in table:
                raise SchemaError(f"sample {k}: label {rec['gt_label']!r} not in table")
            samples.append(RoomSample(np.stack(objs), rec["gt_label"]))
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise SchemaError(f"invalid dataset file {path}: {e}") from None
    return samples, table


def dump_dataset(samples: Sequence[RoomSample], table_ref: str) -> str:
    return json.dumps({
        "embedding_table": table_ref,
        "samples": [
            {"object_embeddings": s.object_embeddings.tolist(), "gt_label": s.gt_label}
            for s in samples
        ],
    })

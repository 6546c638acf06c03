from __future__ import annotations

import numpy as np

from ..errors import SchemaError
from ..geometry_io import EmbeddingTable
from .loss import cosine_to_table
from .model import LabelerModel, encode, forward
from .train import RoomSample


def best_phrase(sims: dict[str, float]) -> str:
    """Highest score; ties go to the lexicographically smallest phrase."""
    best = None
    for phrase in sorted(sims):
        if best is None or sims[phrase] > sims[best]:
            best = phrase
    return best


def rank_phrases(e: np.ndarray, table: EmbeddingTable) -> tuple[str, dict[str, float]]:
    sims = cosine_to_table(np.asarray(e, dtype=np.float64), table.matrix)[0]
    scores = {p: float(s) for p, s in zip(table.phrases, sims)}
    return best_phrase(scores), scores


def infer_label(model: LabelerModel, sample: RoomSample, table: EmbeddingTable):
    """(label, e_cls, cosine similarity per phrase) for one room."""
    e = forward(model, sample.object_embeddings)
    label, scores = rank_phrases(e, table)
    return label, e, scores


def infer_labels(model: LabelerModel, samples, table: EmbeddingTable) -> list[tuple[str, np.ndarray, dict]]:
    """Batched ``infer_label``."""
    if not samples:
        return []
    E = encode(model, [s.object_embeddings for s in samples])
    out = []
    for e in E:
        label, scores = rank_phrases(e, table)
        out.append((label, e, scores))
    return out


def average_baseline(sample: RoomSample, table: EmbeddingTable) -> str:
    """Label from the cosine of the mean object embedding; no learning involved."""
    return average_scores(sample, table)[0]


def average_scores(sample: RoomSample, table: EmbeddingTable) -> tuple[str, dict[str, float]]:
    return rank_phrases(sample.object_embeddings.mean(axis=0), table)


def predict_logits(model: LabelerModel, sample: RoomSample) -> np.ndarray:
    if model.config.head_mode != "logits":
        raise SchemaError("predict_logits needs a model with head_mode='logits'")
    return model.params["head"] @ forward(model, sample.object_embeddings)


def logits_label(model: LabelerModel, sample: RoomSample) -> str:
    z = predict_logits(model, sample)
    return best_phrase({c: float(v) for c, v in zip(model.classes, z)})

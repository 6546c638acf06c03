"""Temperature-scaled contrastive loss against a phrase table, and plain cross-entropy."""

from __future__ import annotations

import numpy as np

from ..errors import GeometryError
from ..geometry_io import EmbeddingTable


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def cosine_to_table(e: np.ndarray, table_matrix: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row of ``e`` to each (unit) table row."""
    e = np.atleast_2d(e)
    n = np.linalg.norm(e, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise GeometryError("zero room embedding has no direction")
    return (e / n) @ table_matrix.T


def nt_xent_loss(e_cls: np.ndarray, table: EmbeddingTable, pos_phrase: str, tau: float) -> float:
    """-log softmax_pos(sim(e, t_j) / tau) over every phrase in the table."""
    if pos_phrase not in table:
        raise KeyError(f"phrase {pos_phrase!r} not in table")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    z = cosine_to_table(np.asarray(e_cls, dtype=np.float64), table.matrix)[0] / tau
    return float(_logsumexp(z) - z[table.index(pos_phrase)])


def contrastive_loss_and_grad(E: np.ndarray, table_matrix: np.ndarray, targets: np.ndarray, tau: float):
    """Mean loss over the batch and its gradient w.r.t. the (B, D) un-normalised embeddings."""
    B = len(E)
    norm = np.linalg.norm(E, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise GeometryError("zero room embedding has no direction")
    ehat = E / norm
    z = ehat @ table_matrix.T / tau
    lse = _logsumexp(z)
    loss = float(np.mean(lse - z[np.arange(B), targets]))
    dz = np.exp(z - lse[:, None])
    dz[np.arange(B), targets] -= 1.0
    dz /= B
    dehat = (dz / tau) @ table_matrix
    dE = (dehat - ehat * (dehat * ehat).sum(axis=1, keepdims=True)) / norm
    return loss, dE


def cross_entropy_and_grad(logits: np.ndarray, targets: np.ndarray):
    B = len(logits)
    lse = _logsumexp(logits)
    loss = float(np.mean(lse - logits[np.arange(B), targets]))
    d = np.exp(logits - lse[:, None])
    d[np.arange(B), targets] -= 1.0
    return loss, d / B

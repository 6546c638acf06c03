"""Room labeler: CLS-token set encoder aligned to phrase embeddings."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import LabelerConfig
from .infer import (
    average_baseline,
    average_scores,
    best_phrase,
    infer_label,
    infer_labels,
    logits_label,
    predict_logits,
    rank_phrases,
)
from .loss import contrastive_loss_and_grad, cosine_to_table, cross_entropy_and_grad, nt_xent_loss
from .model import LabelerModel, backward, encode, forward, init_model, param_shapes
from .train import AdamW, RoomSample, dump_dataset, grad, load_dataset, loss_and_grad, train

__all__ = [
    "AdamW", "LabelerConfig", "LabelerModel", "RoomSample",
    "average_baseline", "average_scores", "backward", "best_phrase", "contrastive_loss_and_grad",
    "cosine_to_table", "cross_entropy_and_grad", "dump_dataset", "encode", "forward", "grad",
    "infer_label", "infer_labels", "init_model", "load_checkpoint", "load_dataset", "logits_label",
    "loss_and_grad", "nt_xent_loss", "param_shapes", "predict_logits", "rank_phrases",
    "save_checkpoint", "train",
]

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..errors import SchemaError

HEAD_MODES = ("contrastive", "logits")


@dataclass(frozen=True)
class LabelerConfig:
    """Hyper-parameters of the room labeler.

    Defaults are the full-scale setting (1024-d embeddings, 8 heads, 8 layers,
    dropout 0.2, temperature 0.5, AdamW at 1e-5 for 400 epochs). ``toy()``
    gives the scaled-down profile used for desk-scale experiments.
    """

    embedding_dim: int = 1024
    num_heads: int = 8
    num_layers: int = 8
    dropout_rate: float = 0.2
    temperature: float = 0.5
    learning_rate: float = 1e-5
    epochs: int = 400
    seed: int = 0
    head_mode: str = "contrastive"
    weight_decay: float = 0.01
    batch_size: int | None = 32  # None: full batch
    ffn_mult: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.embedding_dim < 1 or self.num_heads < 1 or self.num_layers < 0:
            raise ValueError("embedding_dim and num_heads must be >= 1, num_layers >= 0")
        if self.embedding_dim % self.num_heads:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} not divisible by num_heads {self.num_heads}"
            )
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")

    @classmethod
    def toy(cls, **overrides) -> "LabelerConfig":
        base = dict(
            embedding_dim=32, num_heads=4, num_layers=2, dropout_rate=0.1,
            learning_rate=3e-3, epochs=150, batch_size=None,
        )
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes) -> "LabelerConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelerConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise SchemaError(f"invalid labeler config: {e}") from None

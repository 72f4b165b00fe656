"""The full tracker: frozen embeddings, one shared encoder, one decoder per slot."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Tensor
from .data import Dialogue, Ontology, Turn
from .decoder import SlotDecoder, SlotScores, predict_turn, score_slot
from .embeddings import EmbeddingConfig, EmbeddingTable
from .encoder import BiLstmEncoder, EncodedTurn, SystemAct, linearize_turn
from .evaluation import accumulate_goal


@dataclass
class TrainConfig:
    hidden: int = 200
    word_dim: int = 300
    ngram_dim: int = 100
    hash_scale: float = 0.1
    dropout: float = 0.2
    lr: float = 1e-3
    batch_turns: int = 16
    epochs: int = 30
    patience: int = 5
    seed: int = 1
    negatives: int = 5
    threshold: float = 0.5
    dev_fraction: float = 0.1
    clip_norm: float = 5.0

    def __post_init__(self):
        for name in ("hidden", "word_dim", "ngram_dim", "batch_turns", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.negatives < 0:
            raise ValueError("negatives must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ValueError("dev_fraction must lie in [0, 1)")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be non-negative (0 disables clipping)")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(self.word_dim, self.ngram_dim, self.hash_scale)


class Tracker:
    def __init__(self, config: TrainConfig, ontology: Ontology, table: EmbeddingTable | None = None):
        self.config = config
        self.ontology = ontology.copy()
        self.table = table or EmbeddingTable(config.embedding_config())
        if self.table.dim != config.word_dim + config.ngram_dim:
            raise ValueError(f"embedding dim {self.table.dim} does not match config")
        rng = np.random.default_rng(config.seed)
        d = self.table.dim
        self.encoder = BiLstmEncoder(d, config.hidden, config.dropout, rng)
        self.decoders: dict[str, SlotDecoder] = {
            slot: SlotDecoder(slot, d, config.hidden, values, self.table, rng)
            for slot, values in self.ontology.slots.items()
        }

    @property
    def slots(self) -> list[str]:
        return list(self.decoders)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params = self.encoder.parameters()
        for dec in self.decoders.values():
            params = params + dec.parameters()
        return [(p.name, p) for p in params]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def encode_tokens(
        self, tokens: list[str], training: bool = False, rng: np.random.Generator | None = None,
        embedded: np.ndarray | None = None,
    ) -> EncodedTurn:
        if embedded is None:
            embedded = self.table.embed_tokens(tokens)
        return self.encoder.encode(embedded, tokens, training, rng)

    def score(self, encoded: EncodedTurn, slots: Iterable[str] | None = None) -> dict[str, SlotScores]:
        names = self.slots if slots is None else slots
        return {s: score_slot(encoded, self.decoders[s]) for s in names}

    def score_turn(self, system_acts: list[SystemAct], utterance_tokens: list[str]) -> dict[str, SlotScores]:
        tokens, _ = linearize_turn(system_acts, utterance_tokens)
        return self.score(self.encode_tokens(tokens))

    def predict(self, turn: Turn) -> dict[str, str | None]:
        return predict_turn(self.score(self.encode_tokens(turn.tokens)), self.config.threshold)

    def track(self, dialogue: Dialogue) -> list[dict[str, str | None]]:
        """Accumulated predicted goal after each turn."""
        goal: dict[str, str | None] = {s: None for s in self.slots}
        out = []
        for turn in dialogue.turns:
            goal = accumulate_goal(goal, self.predict(turn))
            out.append(dict(goal))
        return out

    def extend_candidates(self, slot: str, value: str) -> int:
        if slot not in self.decoders:
            raise KeyError(f"unknown slot {slot!r}")
        idx = self.decoders[slot].extend_candidates(value, self.table)
        self.ontology.add_value(slot, value)
        return idx

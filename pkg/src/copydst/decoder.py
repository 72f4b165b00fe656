"""Per-slot scoring head: copy score plus value score, one sigmoid per candidate.

Shapes, with ``n`` input tokens, encoder hidden size ``h`` and ``m`` candidates:

    S   = tanh(W_h h_L)                  [2h]
    a_i = tanh(W_c [S ; h_i])            [n]
    copy(v) = sum of a_t over positions whose token belongs to v
    C   = sum_i softmax(a)_i h_i         [2h]
    value(v) = C . (W_s e(v))
    p(v) = sigmoid(value(v) + copy(v))

The candidate-transform output size equals 2h so the context vector and the
transformed candidate embeddings can be dotted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .embeddings import EmbeddingTable, tokenize
from .encoder import EncodedTurn


class DuplicateCandidateError(ValueError):
    def __init__(self, slot: str, value: str, index: int):
        super().__init__(f"slot {slot!r} already has candidate {value!r} at index {index}")
        self.index = index


def _init(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[1])
    return rng.uniform(-bound, bound, shape)


class SlotDecoder:
    def __init__(
        self,
        slot: str,
        embed_dim: int,
        hidden: int,
        candidates: Sequence[str] = (),
        table: EmbeddingTable | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng or np.random.default_rng(0)
        self.slot = slot
        self.embed_dim = embed_dim
        self.hidden = hidden
        dz = 2 * hidden
        self.w_s = ad.parameter(_init(rng, (dz, embed_dim)), f"decoder.{slot}.w_s")
        self.w_h = ad.parameter(_init(rng, (dz, 2 * hidden)), f"decoder.{slot}.w_h")
        self.w_c = ad.parameter(_init(rng, (1, dz + 2 * hidden)), f"decoder.{slot}.w_c")
        self.candidates: list[str] = []
        self.candidate_tokens: list[frozenset[str]] = []
        self._embedded = np.zeros((0, embed_dim))
        self._index: dict[str, int] = {}
        self._by_token: dict[str, list[int]] = {}
        if candidates:
            if table is None:
                raise ValueError("an embedding table is needed to embed candidates")
            for value in candidates:
                self.extend_candidates(value, table)

    def parameters(self) -> list[Tensor]:
        return [self.w_s, self.w_h, self.w_c]

    @property
    def embedded_candidates(self) -> np.ndarray:
        """Candidate embeddings, one row per candidate, in candidate order."""
        return self._embedded

    def value_matrix(self) -> np.ndarray:
        """Transformed candidate embeddings, one column per candidate."""
        return self.w_s.data @ self._embedded.T

    def index(self, value: str) -> int | None:
        return self._index.get(" ".join(tokenize(value)))

    def extend_candidates(self, value: str, table: EmbeddingTable) -> int:
        """Append a candidate without touching any parameter. Returns its index."""
        key = " ".join(tokenize(value))
        if key in self._index:
            raise DuplicateCandidateError(self.slot, value, self._index[key])
        vec = table.embed_value(value)
        if vec.shape != (self.embed_dim,):
            raise DimensionError(f"candidate embedding {vec.shape} vs decoder input {self.embed_dim}")
        idx = len(self.candidates)
        self._index[key] = idx
        self.candidates.append(value)
        self.candidate_tokens.append(frozenset(key.split()))
        for tok in self.candidate_tokens[-1]:
            self._by_token.setdefault(tok, []).append(idx)
        self._embedded = np.vstack([self._embedded, vec[None, :]])
        return idx

    def membership(self, input_tokens: Sequence[str]) -> np.ndarray:
        """Same as ``membership_matrix`` over this decoder's candidates, via a token index."""
        M = np.zeros((len(self.candidates), len(input_tokens)))
        for t, tok in enumerate(input_tokens):
            for j in self._by_token.get(tok.lower(), ()):
                M[j, t] = 1.0
        return M


@dataclass
class SlotScores:
    slot: str
    candidates: list[str]
    copy: Tensor  # [m]
    value: Tensor  # [m]
    logits: Tensor  # [m]
    probs: Tensor  # [m]
    attention: Tensor  # raw a, [n]
    weights: Tensor  # softmax(a), [n]
    mentioned: list[int] = field(default_factory=list)  # candidates with a token in the input

    def probability(self, value: str) -> float:
        return float(self.probs.data[self.candidates.index(value)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.candidates, self.probs.data.tolist()))


def attention_scores(S: Tensor, token_states: Tensor, w_c: Tensor) -> Tensor:
    """``a_i = tanh(w_c . [S ; h_i])`` for every row ``h_i`` of ``token_states``."""
    dz = S.shape[0]
    if token_states.data.ndim != 2 or w_c.shape != (1, dz + token_states.shape[1]):
        raise DimensionError(
            f"attention_scores: S {S.shape}, states {token_states.shape}, w_c {w_c.shape}"
        )
    if token_states.shape[0] == 0:
        raise ContractError("attention_scores: no input tokens")
    s_part = ad.matmul(w_c[0, :dz], S)
    h_part = ad.rowwise_dot(token_states, w_c[0, dz:])
    return ad.tanh(h_part + s_part)


def membership_matrix(candidate_tokens: Sequence[frozenset[str]], input_tokens: Sequence[str]) -> np.ndarray:
    """0/1 matrix [m x n]: input position t belongs to candidate j."""
    M = np.zeros((len(candidate_tokens), len(input_tokens)))
    for j, toks in enumerate(candidate_tokens):
        for t, tok in enumerate(input_tokens):
            if tok.lower() in toks:
                M[j, t] = 1.0
    return M


def copy_score(a, input_tokens: Sequence[str], candidate: str) -> Tensor:
    """Sum of ``a_t`` over positions whose token is one of the candidate's tokens.

    Each position counts once even if it matches several candidate tokens.
    """
    a = ad.as_tensor(a)
    row = membership_matrix([frozenset(tokenize(candidate))], input_tokens)
    return ad.rowwise_dot(Tensor(row), a)[0]


def value_score(a: Tensor, token_states: Tensor, Z) -> Tensor:
    """Context vector from softmax(a) over the states, dotted with each column of ``Z``."""
    Z = ad.as_tensor(Z)
    if Z.data.ndim != 2 or Z.shape[0] != token_states.shape[1]:
        raise DimensionError(
            f"value_score: context size {token_states.shape[1]} vs candidate matrix {Z.shape}"
        )
    alpha = ad.softmax(a)
    context = ad.matmul(alpha, token_states)
    return ad.matmul(context, Z)


def score_slot(encoded: EncodedTurn, decoder: SlotDecoder) -> SlotScores:
    if not decoder.candidates:
        raise ContractError(f"slot {decoder.slot!r} has no candidates")
    states = encoded.token_states
    if states.shape[1] != 2 * decoder.hidden:
        raise DimensionError(f"encoder states {states.shape} vs decoder hidden {decoder.hidden}")
    S = ad.tanh(ad.matmul(decoder.w_h, encoded.summary))
    a = attention_scores(S, states, decoder.w_c)
    M = decoder.membership(encoded.tokens)
    copy = ad.rowwise_dot(Tensor(M), a)
    alpha = ad.softmax(a)
    context = ad.matmul(alpha, states)
    # C . (W_s v) == (W_s^T C) . v; the latter keeps each candidate's value
    # independent of how many candidates exist.
    value = ad.rowwise_dot(Tensor(decoder.embedded_candidates), ad.matmul(context, decoder.w_s))
    logits = value + copy
    return SlotScores(
        slot=decoder.slot,
        candidates=list(decoder.candidates),
        copy=copy,
        value=value,
        logits=logits,
        probs=ad.sigmoid(logits),
        attention=a,
        weights=alpha,
        mentioned=np.flatnonzero(M.any(axis=1)).tolist(),
    )


def predict_slot(scores: SlotScores, threshold: float = 0.5) -> str | None:
    probs = scores.probs.data
    best = int(np.argmax(probs))  # first maximum wins ties
    return scores.candidates[best] if probs[best] >= threshold else None


def predict_turn(scores: Mapping[str, SlotScores], threshold: float = 0.5) -> dict[str, str | None]:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return {slot: predict_slot(s, threshold) for slot, s in scores.items()}

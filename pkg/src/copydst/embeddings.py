"""Tokenizer, vocabulary and the frozen embedding table.

A token vector is ``[word_part ; ngram_part]``. The word part comes from a
pretrained text file when the token is in it; otherwise it, like the n-gram
part, is produced by hashing character 3- and 4-grams into buckets, so every
token, including names never seen before, maps to a stable vector.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractError

log = logging.getLogger(__name__)

PAD = "<pad>"

_PUNCT = re.compile(r"[^\w\s']+", flags=re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, turn punctuation other than apostrophes into spaces, split."""
    return _PUNCT.sub(" ", text.lower()).replace("_", " ").split()


class Vocabulary:
    """Dense token <-> index map; index 0 is always the padding token."""

    def __init__(self, tokens: list[str] | None = None):
        self.itos: list[str] = [PAD]
        self.stoi: dict[str, int] = {PAD: 0}
        for tok in tokens or ():
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __len__(self) -> int:
        return len(self.itos)

    def index(self, token: str) -> int | None:
        return self.stoi.get(token)


class EmbeddingFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


@dataclass
class WordVectors:
    """Result of reading a word-vector text file."""

    vectors: dict[str, np.ndarray]
    dim: int
    loaded: int = 0
    malformed: int = 0
    duplicates: int = 0


def load_word_vectors(path, expected_dim: int, skip_malformed: bool = False) -> WordVectors:
    """Read ``token f1 f2 ...`` lines. A later duplicate line replaces the earlier one.

    A line with the wrong number of floats raises ``EmbeddingFormatError``
    unless ``skip_malformed`` is set, in which case it is counted and skipped.
    """
    vectors: dict[str, np.ndarray] = {}
    result = WordVectors(vectors, expected_dim)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, raw = parts[0], [p for p in parts[1:] if p != ""]
            try:
                if len(raw) != expected_dim:
                    raise EmbeddingFormatError(
                        path, lineno, f"expected {expected_dim} floats, found {len(raw)}"
                    )
                try:
                    vec = np.array([float(x) for x in raw], dtype=np.float64)
                except ValueError as exc:
                    raise EmbeddingFormatError(path, lineno, str(exc)) from None
            except EmbeddingFormatError:
                if not skip_malformed:
                    raise
                result.malformed += 1
                continue
            if token in vectors:
                result.duplicates += 1
            vectors[token] = vec
    result.loaded = len(vectors)
    log.info(
        "loaded %d vectors from %s (%d malformed, %d duplicates)",
        result.loaded, path, result.malformed, result.duplicates,
    )
    return result


def char_ngrams(token: str, sizes: tuple[int, ...] = (3, 4)) -> list[str]:
    marked = f"<{token}>"
    grams = []
    for n in sizes:
        grams.extend(marked[i : i + n] for i in range(len(marked) - n + 1))
    return grams or [marked]


def hashed_vector(token: str, dim: int, salt: str, scale: float) -> np.ndarray:
    """Average of one-hot bucket vectors over the token's char n-grams, times ``scale``."""
    out = np.zeros(dim)
    grams = char_ngrams(token)
    key = salt.encode("utf-8")[:64]
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
        out[int.from_bytes(digest, "little") % dim] += 1.0
    return out * (scale / len(grams))


@dataclass
class EmbeddingConfig:
    word_dim: int = 300
    ngram_dim: int = 100
    hash_scale: float = 0.1
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.word_dim + self.ngram_dim


@dataclass
class EmbeddingTable:
    """Frozen token -> vector map. Never updated by training."""

    config: EmbeddingConfig
    vocab: Vocabulary = field(default_factory=Vocabulary)
    word_matrix: np.ndarray | None = None
    frozen: bool = True
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.word_matrix is None:
            self.word_matrix = np.zeros((len(self.vocab), self.config.word_dim))
        if self.word_matrix.shape != (len(self.vocab), self.config.word_dim):
            raise ValueError(
                f"word matrix shape {self.word_matrix.shape} does not match "
                f"vocabulary size {len(self.vocab)} x {self.config.word_dim}"
            )

    @classmethod
    def from_word_vectors(cls, wv: WordVectors, config: EmbeddingConfig) -> "EmbeddingTable":
        if wv.dim != config.word_dim:
            raise ValueError(f"word vectors have dim {wv.dim}, config wants {config.word_dim}")
        vocab = Vocabulary(list(wv.vectors))
        matrix = np.zeros((len(vocab), config.word_dim))
        for tok, vec in wv.vectors.items():
            matrix[vocab.stoi[tok]] = vec
        return cls(config, vocab, matrix)

    @property
    def dim(self) -> int:
        return self.config.dim

    def embed_token(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            cfg = self.config
            idx = self.vocab.index(token)
            if idx is not None and idx != 0:
                word = self.word_matrix[idx]
            else:
                word = hashed_vector(token, cfg.word_dim, f"w{cfg.seed}", cfg.hash_scale)
            ngram = hashed_vector(token, cfg.ngram_dim, f"n{cfg.seed}", cfg.hash_scale)
            vec = np.concatenate([word, ngram])
            vec.flags.writeable = False
            self._cache[token] = vec
        return vec

    def embed_tokens(self, tokens: list[str]) -> np.ndarray:
        return np.stack([self.embed_token(t) for t in tokens])

    def embed_value(self, value: str) -> np.ndarray:
        tokens = tokenize(value)
        if not tokens:
            raise ContractError(f"candidate value {value!r} has no tokens")
        out = np.zeros(self.dim)
        for tok in tokens:
            out = out + self.embed_token(tok)
        return out

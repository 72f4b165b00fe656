"""Loss, optimizer and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DialogueCorpus, Ontology, Turn
from .decoder import SlotScores
from .embeddings import EmbeddingTable
from .evaluation import evaluate
from .model import Tracker, TrainConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def turn_loss(
    scores: Mapping[str, SlotScores],
    gold: Mapping[str, str | None],
    negatives: Mapping[str, Sequence[int]],
) -> tuple[Tensor, int]:
    """Binary cross-entropy summed over slots, averaged over each slot's targets.

    The gold value of a slot (if any) is the positive target; ``negatives``
    lists candidate indices used as negative targets. Returns the loss and
    the number of gold values skipped because they are not candidates.
    """
    total = None
    skipped = 0
    for slot, sc in scores.items():
        value = gold.get(slot)
        pos = None
        if value is not None:
            if value in sc.candidates:
                pos = sc.candidates.index(value)
            else:
                skipped += 1
        neg = [j for j in negatives.get(slot, ()) if j != pos]
        n_targets = len(neg) + (pos is not None)
        if not n_targets:
            continue
        terms = []
        if pos is not None:
            terms.append(ad.log_sigmoid(sc.logits[pos]))
        if neg:
            terms.append(ad.log_sigmoid(-sc.logits[np.array(neg)]).sum())
        slot_loss = terms[0] if len(terms) == 1 else terms[0] + terms[1]
        slot_loss = slot_loss * (-1.0 / n_targets)
        total = slot_loss if total is None else total + slot_loss
    if total is None:
        total = Tensor(0.0)
    return total, skipped


def sample_negatives(
    scores: Mapping[str, SlotScores],
    gold: Mapping[str, str | None],
    k: int,
    rng: np.random.Generator,
) -> dict[str, list[int]]:
    """Candidates mentioned in the input plus ``k`` random others, never the gold value."""
    out = {}
    for slot, sc in scores.items():
        g = gold.get(slot)
        gidx = sc.candidates.index(g) if g is not None and g in sc.candidates else -1
        mentioned = [j for j in sc.mentioned if j != gidx]
        skip = set(mentioned) | {gidx}
        rest = [j for j in range(len(sc.candidates)) if j not in skip]
        take = min(k, len(rest))
        sampled = rng.choice(len(rest), size=take, replace=False).tolist() if take else []
        out[slot] = sorted(int(j) for j in mentioned) + sorted(rest[i] for i in sampled)
    return out


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, scale: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def grad_norm(params: Sequence[Tensor]) -> float:
    return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_joint_goal: float


@dataclass
class TrainResult:
    model: Tracker
    history: list[EpochStats] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    skipped_gold: int = 0


@dataclass
class _Example:
    tokens: list[str]
    embedded: np.ndarray
    label: dict[str, str | None]


def _examples(model: Tracker, corpus: DialogueCorpus) -> list[_Example]:
    out = []
    for turn in corpus.turns():
        tokens = turn.tokens
        out.append(_Example(tokens, model.table.embed_tokens(tokens), dict(turn.turn_label)))
    return out


def _forward_loss(model: Tracker, ex: _Example, config: TrainConfig, rng, training: bool):
    enc = model.encode_tokens(ex.tokens, training=training, rng=rng, embedded=ex.embedded)
    scores = model.score(enc)
    negs = sample_negatives(scores, ex.label, config.negatives, rng)
    return turn_loss(scores, ex.label, negs)


def split_dev(corpus: DialogueCorpus, fraction: float, seed: int) -> tuple[DialogueCorpus, DialogueCorpus | None]:
    if fraction <= 0.0 or len(corpus.dialogues) < 2:
        return corpus, None
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.dialogues))
    n_dev = max(1, int(round(fraction * len(order))))
    dev_idx = set(order[:n_dev].tolist())
    train = [d for i, d in enumerate(corpus.dialogues) if i not in dev_idx]
    dev = [d for i, d in enumerate(corpus.dialogues) if i in dev_idx]
    return corpus.with_dialogues(train), corpus.with_dialogues(dev)


def train(
    corpus: DialogueCorpus,
    ontology: Ontology,
    config: TrainConfig,
    dev: DialogueCorpus | None = None,
    table: EmbeddingTable | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Adam on per-turn losses, gradients summed over ``batch_turns`` turns.

    Keeps the parameters of the epoch with the best dev joint goal (dev loss
    breaks ties) and stops after ``patience`` epochs without improvement.
    Without an explicit ``dev`` corpus, ``dev_fraction`` of the dialogues are
    held back for it.
    """
    if not corpus.dialogues:
        raise ValueError("training corpus is empty")
    if dev is None:
        corpus, dev = split_dev(corpus, config.dev_fraction, config.seed)
    model = Tracker(config, ontology, table)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    train_ex = _examples(model, corpus)
    dev_ex = _examples(model, dev) if dev is not None else []
    result = TrainResult(model)
    best_key = None
    best_params = [p.data.copy() for p in params]
    stale = 0
    last_finite = (0, 0, float("nan"))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ex))
        epoch_loss = 0.0
        pending = 0
        batch_loss = 0.0
        opt.zero_grad()
        for pos, idx in enumerate(order):
            loss, skipped = _forward_loss(model, train_ex[idx], config, rng, training=True)
            result.skipped_gold += skipped
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at epoch {epoch}, turn {pos}; last finite loss "
                    f"{last_finite[2]:.6g} at epoch {last_finite[0]}, turn {last_finite[1]}"
                )
            last_finite = (epoch, pos, value)
            epoch_loss += value
            batch_loss += value
            if loss.requires_grad:
                loss.backward()
            pending += 1
            if pending == config.batch_turns or pos == len(order) - 1:
                scale = 1.0 / pending
                norm = grad_norm(params) * scale
                if config.clip_norm and norm > config.clip_norm:
                    scale *= config.clip_norm / norm
                opt.step(scale)
                opt.zero_grad()
                result.step_losses.append(batch_loss / pending)
                pending = 0
                batch_loss = 0.0
        stats = EpochStats(epoch, epoch_loss / max(1, len(train_ex)), float("nan"), float("nan"))
        if dev is not None:
            stats.dev_loss = sum(
                _forward_loss(model, ex, config, np.random.default_rng([config.seed, 2, i]), False)[0].item()
                for i, ex in enumerate(dev_ex)
            ) / max(1, len(dev_ex))
            stats.dev_joint_goal = evaluate(model, dev).joint_goal
            key = (stats.dev_joint_goal, -stats.dev_loss)
        else:
            key = (0.0, -stats.train_loss)
        result.history.append(stats)
        log.info(
            "epoch %d: train loss %.4f, dev loss %.4f, dev joint goal %.4f",
            epoch, stats.train_loss, stats.dev_loss, stats.dev_joint_goal,
        )
        if on_epoch:
            on_epoch(stats)
        if best_key is None or key > best_key:
            best_key = key
            best_params = [p.data.copy() for p in params]
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for p, best in zip(params, best_params):
        p.data[...] = best
        p.grad = None
    return result

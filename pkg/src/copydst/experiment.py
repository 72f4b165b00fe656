"""Synthetic unseen-value experiment.

Train on synthetic dialogues from which a fraction of one slot's values has
been held out, add the held-out values to the trained model's candidate list
and measure accuracy on turns whose gold value is seen and unseen.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

from .data import generate_synthetic, make_unseen_split
from .evaluation import EvalReport, evaluate
from .model import TrainConfig
from .training import train


@dataclass
class SeedRun:
    seed: int
    seen: float
    unseen: float
    majority_baseline: float
    best_epoch: int
    seconds: float


@dataclass
class ExperimentResult:
    slot: str
    heldout: list[str]
    n_train_dialogues: int
    runs: list[SeedRun] = field(default_factory=list)
    seconds: float = 0.0

    def mean(self, key: str) -> float:
        return sum(getattr(r, key) for r in self.runs) / len(self.runs)

    def to_json(self) -> dict:
        out = asdict(self)
        out.update({k: self.mean(k) for k in ("seen", "unseen", "majority_baseline")})
        return out


def unseen_experiment(
    config: TrainConfig,
    seeds: list[int],
    grammar: Mapping | None = None,
    slot: str = "food",
    fraction: float = 0.35,
    n_train: int = 600,
    n_test: int = 200,
    data_seed: int = 100,
    split_seed: int = 7,
    on_run: Callable[[SeedRun, EvalReport], None] | None = None,
) -> ExperimentResult:
    """One training run per model seed on a fixed data split."""
    start = time.perf_counter()
    train_corpus, ontology = generate_synthetic(grammar, n_train, seed=data_seed)
    # a different stream for test dialogues
    test_corpus, _ = generate_synthetic(grammar, n_test, seed=data_seed + 1)
    kept, heldout = make_unseen_split(train_corpus, ontology, slot, fraction, seed=split_seed)
    result = ExperimentResult(slot, heldout, len(kept.dialogues))
    for seed in seeds:
        t0 = time.perf_counter()
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        fit = train(kept, ontology.without(slot, heldout), cfg)
        model = fit.model
        for value in heldout:
            model.extend_candidates(slot, value)
        report = evaluate(model, test_corpus, {slot: heldout})
        run = SeedRun(
            seed,
            report.seen_accuracy[slot],
            report.unseen_accuracy[slot],
            report.unseen_majority_baseline[slot],
            fit.best_epoch,
            time.perf_counter() - t0,
        )
        result.runs.append(run)
        if on_run:
            on_run(run, report)
    result.seconds = time.perf_counter() - start
    return result

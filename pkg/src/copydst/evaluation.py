"""Goal accumulation and DSTC-style metrics (every turn scored, full goal compared)."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .data import DialogueCorpus, normalize


def accumulate_goal(
    prev_goal: Mapping[str, str | None], turn_prediction: Mapping[str, str | None]
) -> dict[str, str | None]:
    """A predicted value overwrites the slot; no prediction carries the old value."""
    goal = dict(prev_goal)
    for slot, value in turn_prediction.items():
        if value is not None:
            goal[slot] = value
        else:
            goal.setdefault(slot, None)
    return goal


@dataclass
class EvalReport:
    slot_accuracy: dict[str, float]
    joint_goal: float
    n_turns: int
    seen_accuracy: dict[str, float] = field(default_factory=dict)
    unseen_accuracy: dict[str, float] = field(default_factory=dict)
    seen_turns: dict[str, int] = field(default_factory=dict)
    unseen_turns: dict[str, int] = field(default_factory=dict)
    unseen_majority_baseline: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        has_split = bool(self.unseen_turns)
        head = ["slot", "accuracy"] + (["seen", "unseen", "n_seen", "n_unseen"] if has_split else [])
        rows = [head]
        for slot, acc in self.slot_accuracy.items():
            row = [slot, f"{acc:.4f}"]
            if has_split:
                row += [
                    _fmt(self.seen_accuracy.get(slot)),
                    _fmt(self.unseen_accuracy.get(slot)),
                    str(self.seen_turns.get(slot, 0)),
                    str(self.unseen_turns.get(slot, 0)),
                ]
            rows.append(row)
        rows.append(["joint goal", f"{self.joint_goal:.4f}"] + [""] * (len(head) - 2))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"turns: {self.n_turns}")
        return "\n".join(lines)


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def _same(a: str | None, b: str | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return normalize(a) == normalize(b)


def compute_metrics(
    gold_goals: Sequence[Sequence[Mapping[str, str | None]]],
    predicted_goals: Sequence[Sequence[Mapping[str, str | None]]],
    slots: Sequence[str],
    unseen_values: Mapping[str, Sequence[str]] | None = None,
) -> EvalReport:
    """Score accumulated goals turn by turn.

    ``gold_goals[d][t]`` and ``predicted_goals[d][t]`` map slot -> value for
    dialogue ``d`` turn ``t``; a missing slot means None. When
    ``unseen_values`` is given, turns whose gold value for a slot is in that
    slot's list count toward its unseen accuracy, other non-None gold values
    toward its seen accuracy.
    """
    correct = Counter()
    joint = 0
    n = 0
    seen_ok, seen_n, unseen_ok, unseen_n = Counter(), Counter(), Counter(), Counter()
    unseen_gold: dict[str, Counter] = {s: Counter() for s in slots}
    unseen_keys = {s: {normalize(v) for v in vals} for s, vals in (unseen_values or {}).items()}
    for gold_d, pred_d in zip(gold_goals, predicted_goals, strict=True):
        for gold, pred in zip(gold_d, pred_d, strict=True):
            n += 1
            all_ok = True
            for s in slots:
                g, p = gold.get(s), pred.get(s)
                ok = _same(g, p)
                correct[s] += ok
                all_ok &= ok
                if unseen_values is None or g is None:
                    continue
                if normalize(g) in unseen_keys.get(s, ()):
                    unseen_n[s] += 1
                    unseen_ok[s] += ok
                    unseen_gold[s][normalize(g)] += 1
                else:
                    seen_n[s] += 1
                    seen_ok[s] += ok
            joint += all_ok
    report = EvalReport(
        slot_accuracy={s: correct[s] / n if n else 0.0 for s in slots},
        joint_goal=joint / n if n else 0.0,
        n_turns=n,
    )
    if unseen_values is not None:
        for s in slots:
            report.seen_turns[s] = seen_n[s]
            report.unseen_turns[s] = unseen_n[s]
            if seen_n[s]:
                report.seen_accuracy[s] = seen_ok[s] / seen_n[s]
            if unseen_n[s]:
                report.unseen_accuracy[s] = unseen_ok[s] / unseen_n[s]
                report.unseen_majority_baseline[s] = max(unseen_gold[s].values()) / unseen_n[s]
    return report


def gold_goals(corpus: DialogueCorpus) -> list[list[dict[str, str]]]:
    return [[dict(t.goal) for t in d.turns] for d in corpus.dialogues]


def evaluate(model, corpus: DialogueCorpus, unseen_values: Mapping[str, Sequence[str]] | None = None) -> EvalReport:
    """Run ``model.track`` over every dialogue and score it against the gold goals."""
    missing = [s for s in corpus.ontology.slots if s not in model.slots]
    if missing:
        raise ValueError(f"corpus slot {missing[0]!r} is not tracked by the model")
    predicted = [model.track(d) for d in corpus.dialogues]
    return compute_metrics(gold_goals(corpus), predicted, list(corpus.ontology.slots), unseen_values)

"""Ontology and corpus handling, the held-out-value split, and a synthetic corpus generator.

Canonical corpus JSON::

    {"ontology": {slot: [value, ...]},
     "dialogues": [{"turns": [{"system_acts": [{"act": ..., "slot": ..., "value": ...}],
                               "utterance": "...",
                               "turn_label": {slot: value},
                               "goal": {slot: value}}]}]}
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import jsonschema
import numpy as np

from .autodiff import ContractError
from .embeddings import tokenize
from .encoder import SystemAct, linearize_turn

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Corpus file could not be parsed or violates the schema."""


def normalize(value: str) -> str:
    return " ".join(tokenize(value))


class Ontology:
    """Informable slots and their ordered candidate values."""

    def __init__(self, slots: Mapping[str, Iterable[str]] | None = None):
        self.slots: dict[str, list[str]] = {}
        for slot, values in (slots or {}).items():
            self.slots[slot] = []
            for v in values:
                self.add_value(slot, v)

    def add_value(self, slot: str, value: str) -> None:
        values = self.slots.setdefault(slot, [])
        key = normalize(value)
        if not key:
            raise ContractError(f"empty value for slot {slot!r}")
        if any(normalize(v) == key for v in values):
            raise ValueError(f"duplicate value {value!r} for slot {slot!r}")
        values.append(value)

    def __contains__(self, slot: str) -> bool:
        return slot in self.slots

    def __getitem__(self, slot: str) -> list[str]:
        return self.slots[slot]

    def __eq__(self, other) -> bool:
        return isinstance(other, Ontology) and self.slots == other.slots

    def has_value(self, slot: str, value: str) -> bool:
        key = normalize(value)
        return slot in self.slots and any(normalize(v) == key for v in self.slots[slot])

    def canonical(self, slot: str, value: str) -> str | None:
        key = normalize(value)
        for v in self.slots.get(slot, ()):
            if normalize(v) == key:
                return v
        return None

    def to_json(self) -> dict[str, list[str]]:
        return {s: list(v) for s, v in self.slots.items()}

    def without(self, slot: str, values: Iterable[str]) -> "Ontology":
        """Copy with ``values`` removed from ``slot``."""
        drop = {normalize(v) for v in values}
        out = self.to_json()
        out[slot] = [v for v in out[slot] if normalize(v) not in drop]
        return Ontology(out)

    def copy(self) -> "Ontology":
        return Ontology(self.to_json())


@dataclass
class Turn:
    system_acts: list[SystemAct]
    utterance: str
    turn_label: dict[str, str] = field(default_factory=dict)
    goal: dict[str, str] = field(default_factory=dict)

    @property
    def user_tokens(self) -> list[str]:
        return tokenize(self.utterance)

    @property
    def tokens(self) -> list[str]:
        return linearize_turn(self.system_acts, self.user_tokens)[0]

    def to_json(self) -> dict:
        acts = []
        for a in self.system_acts:
            d = {"act": a.act}
            if a.slot is not None:
                d["slot"] = a.slot
            if a.value is not None:
                d["value"] = a.value
            acts.append(d)
        return {
            "system_acts": acts,
            "utterance": self.utterance,
            "turn_label": dict(self.turn_label),
            "goal": dict(self.goal),
        }


@dataclass
class Dialogue:
    turns: list[Turn]
    id: str | None = None

    def to_json(self) -> dict:
        out: dict = {"turns": [t.to_json() for t in self.turns]}
        if self.id is not None:
            out["id"] = self.id
        return out


@dataclass
class DialogueCorpus:
    ontology: Ontology
    dialogues: list[Dialogue]
    out_of_ontology: list[tuple[int, int, str, str]] = field(default_factory=list)
    goal_mismatches: list[tuple[int, int]] = field(default_factory=list)
    skipped_labels: int = 0

    @property
    def n_turns(self) -> int:
        return sum(len(d.turns) for d in self.dialogues)

    def turns(self) -> Iterable[Turn]:
        for d in self.dialogues:
            yield from d.turns

    def to_json(self) -> dict:
        return {
            "ontology": self.ontology.to_json(),
            "dialogues": [d.to_json() for d in self.dialogues],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, ensure_ascii=False, sort_keys=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    def with_dialogues(self, dialogues: list[Dialogue]) -> "DialogueCorpus":
        return DialogueCorpus(self.ontology, dialogues)


CORPUS_SCHEMA = {
    "type": "object",
    "required": ["ontology", "dialogues"],
    "properties": {
        "ontology": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "string", "minLength": 1}},
        },
        "dialogues": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["turns"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "turns": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["utterance"],
                            "properties": {
                                "system_acts": {
                                    "type": "array",
                                    "items": {
                                        "type": "object",
                                        "required": ["act"],
                                        "properties": {
                                            "act": {"type": "string"},
                                            "slot": {"type": ["string", "null"]},
                                            "value": {"type": ["string", "null"]},
                                        },
                                    },
                                },
                                "utterance": {"type": "string"},
                                "turn_label": {"type": "object", "additionalProperties": {"type": "string"}},
                                "goal": {"type": "object", "additionalProperties": {"type": "string"}},
                            },
                        },
                    },
                },
            },
        },
    },
}


def parse_corpus(doc: dict, source: str = "<corpus>") -> DialogueCorpus:
    try:
        jsonschema.validate(doc, CORPUS_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CorpusError(f"{source}: {exc.json_path}: {exc.message}") from None
    ontology = Ontology(doc["ontology"])
    corpus = DialogueCorpus(ontology, [])
    for di, d in enumerate(doc["dialogues"]):
        turns = []
        running: dict[str, str] = {}
        for ti, t in enumerate(d["turns"]):
            acts = [SystemAct(a["act"], a.get("slot"), a.get("value")) for a in t.get("system_acts", [])]
            label = {}
            for slot, value in t.get("turn_label", {}).items():
                if slot not in ontology:
                    log.warning("%s: dialogue %d turn %d: unknown slot %r, label skipped", source, di, ti, slot)
                    corpus.skipped_labels += 1
                    continue
                canon = ontology.canonical(slot, value)
                if canon is None:
                    corpus.out_of_ontology.append((di, ti, slot, value))
                    canon = value
                label[slot] = canon
            running = {**running, **label}
            if "goal" in t:
                goal = {}
                for slot, value in t["goal"].items():
                    if slot not in ontology:
                        corpus.skipped_labels += 1
                        continue
                    goal[slot] = ontology.canonical(slot, value) or value
                if goal != running:
                    corpus.goal_mismatches.append((di, ti))
            else:
                goal = dict(running)
            turns.append(Turn(acts, t["utterance"], label, goal))
        corpus.dialogues.append(Dialogue(turns, None if d.get("id") is None else str(d["id"])))
    if corpus.out_of_ontology:
        log.warning("%s: %d out-of-ontology labels", source, len(corpus.out_of_ontology))
    if corpus.goal_mismatches:
        log.warning("%s: %d turns whose goal differs from accumulated labels", source, len(corpus.goal_mismatches))
    log.info("%s: %d dialogues, %d turns", source, len(corpus.dialogues), corpus.n_turns)
    return corpus


def load_corpus(path) -> DialogueCorpus:
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise CorpusError(f"{path}: invalid JSON at byte offset {offset}: {exc.msg}") from None
    return parse_corpus(doc, str(path))


def _truth_values(turn: Turn, slot: str) -> set[str]:
    out = set()
    for mapping in (turn.turn_label, turn.goal):
        if mapping.get(slot) is not None:
            out.add(normalize(mapping[slot]))
    return out


def holdout_count(n_values: int, fraction: float) -> int:
    return math.floor(fraction * n_values + 0.5)


def make_unseen_split(
    corpus: DialogueCorpus, ontology: Ontology, slot: str, holdout_fraction: float, seed: int
) -> tuple[DialogueCorpus, list[str]]:
    """Hold out a seeded random subset of ``slot`` values and drop every dialogue using one.

    The held-out values stay in the ontology so they can be predicted at test time.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ContractError(f"holdout fraction must lie in (0, 1), got {holdout_fraction}")
    if slot not in ontology:
        raise ContractError(f"unknown slot {slot!r}")
    values = ontology[slot]
    k = holdout_count(len(values), holdout_fraction)
    if k == 0 or k >= len(values):
        raise ContractError(f"fraction {holdout_fraction} of {len(values)} values holds out {k}")
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(values), size=k, replace=False).tolist())
    heldout = [values[i] for i in picked]
    banned = {normalize(v) for v in heldout}
    kept = [
        d for d in corpus.dialogues
        if not any(_truth_values(t, slot) & banned for t in d.turns)
    ]
    return DialogueCorpus(corpus.ontology, kept), heldout


@dataclass
class SlotSplit:
    total: int
    seen: int
    unseen: int
    unseen_values: list[str] = field(default_factory=list)


def split_report(train: DialogueCorpus, test: DialogueCorpus, ontology: Ontology) -> dict[str, SlotSplit]:
    """Per slot, count values used as truth in either corpus and how many of them training saw."""
    report = {}
    for slot, values in ontology.slots.items():
        seen_train = set().union(*(_truth_values(t, slot) for t in train.turns()))
        seen_test = set().union(*(_truth_values(t, slot) for t in test.turns()))
        used = [v for v in values if normalize(v) in seen_train | seen_test]
        unseen = [v for v in used if normalize(v) not in seen_train]
        report[slot] = SlotSplit(len(used), len(used) - len(unseen), len(unseen), unseen)
    return report


# -- synthetic corpus -------------------------------------------------------

FOODS = [
    "italian", "thai", "chinese", "indian", "french", "spanish", "british", "korean",
    "japanese", "vietnamese", "turkish", "greek", "lebanese", "mexican", "portuguese",
    "european", "mediterranean", "persian", "moroccan", "african", "seafood", "gastropub",
    "international", "cuban", "german", "polish", "russian", "danish", "swedish", "belgian",
    "austrian", "swiss", "irish", "scottish", "welsh", "caribbean", "malaysian", "indonesian",
    "north american", "modern european",
]

DEFAULT_GRAMMAR = {
    "slots": {
        "food": FOODS,
        "area": ["north", "south", "east", "west", "centre"],
        "price": ["cheap", "moderate", "expensive"],
    },
    "inform_templates": {
        "food": [
            "i want VALUE food",
            "i am looking for a VALUE restaurant",
            "VALUE food please",
            "how about VALUE food",
            "something that serves VALUE food",
            "can i have VALUE",
        ],
        "area": [
            "in the VALUE",
            "VALUE part of town",
            "somewhere in the VALUE of town",
            "the VALUE area please",
        ],
        "price": [
            "VALUE price range",
            "something VALUE",
            "a VALUE restaurant",
            "i want it to be VALUE",
        ],
    },
    "prefixes": ["", "", "um", "hi", "yes", "well", "okay"],
    "suffixes": ["", "", "please", "thanks", "thank you"],
    "closing": ["thank you goodbye", "thanks bye", "that is all", "okay thank you"],
    "affirm": ["yes", "yes that is right", "right"],
    "deny": ["no not VALUE", "no i don't want VALUE", "no"],
    "negations": ["i don't want VALUE", "not VALUE", "no VALUE"],
    "negation_rate": 0.3,
    # a value the system repeats back (confirm, inform) and the user lets
    # stand is labelled again, so it is never a negative for the turn
    "label_restated": True,
    "min_turns": 2,
    "max_turns": 6,
}


def _fill(template: str, value: str) -> str:
    return template.replace("VALUE", value)


def generate_synthetic(
    grammar_config: Mapping | None = None, n_dialogues: int = 100, seed: int = 0
) -> tuple[DialogueCorpus, Ontology]:
    """Template-driven dialogues in which every labelled value appears verbatim.

    Each user turn informs zero to two slots, sometimes after rejecting another
    value ("not chinese"); the system requests an unfilled slot or confirms a
    recent value, which the user may deny and correct. Rejected values appear
    in the text but never in the labels. Deterministic in ``seed``.
    """
    cfg = {**DEFAULT_GRAMMAR, **(grammar_config or {})}
    slots: dict[str, list[str]] = cfg["slots"]
    for slot, values in slots.items():
        if not values:
            raise ContractError(f"slot {slot!r} has an empty value inventory")
    ontology = Ontology(slots)
    rng = np.random.default_rng(seed)
    slot_names = list(slots)

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    def other_value(slot, current):
        choices = [v for v in slots[slot] if v != current]
        return pick(choices) if choices else current

    def inform(slot, value):
        return _fill(pick(cfg["inform_templates"][slot]), value)

    dialogues = []
    for di in range(n_dialogues):
        n_turns = int(rng.integers(cfg["min_turns"], cfg["max_turns"] + 1))
        goal: dict[str, str] = {}
        turns = []
        acts = [SystemAct("welcomemsg")]
        for ti in range(n_turns):
            label: dict[str, str] = {}
            parts: list[str] = []
            last = ti == n_turns - 1 and ti > 0
            confirm = next((a for a in acts if a.act == "confirm"), None)
            if confirm is not None and not last:
                if rng.random() < 0.5:
                    parts.append(pick(cfg["affirm"]))
                else:
                    new = other_value(confirm.slot, confirm.value)
                    parts.append(_fill(pick(cfg["deny"]), confirm.value))
                    parts.append(inform(confirm.slot, new))
                    label[confirm.slot] = new
            elif last:
                parts.append(pick(cfg["closing"]))
            else:
                open_slots = [s for s in slot_names if s not in goal]
                requested = next((a.slot for a in acts if a.act == "request"), None)
                n_inform = 1 if rng.random() < 0.7 else 2
                chosen = []
                if requested is not None:
                    chosen.append(requested)
                pool = open_slots or slot_names
                while len(chosen) < n_inform and len(chosen) < len(slot_names):
                    s = pick(pool if any(p not in chosen for p in pool) else slot_names)
                    if s not in chosen:
                        chosen.append(s)
                prefix = pick(cfg["prefixes"])
                if prefix:
                    parts.append(prefix)
                for s in chosen:
                    value = pick(slots[s])
                    if rng.random() < cfg["negation_rate"]:
                        parts.append(_fill(pick(cfg["negations"]), other_value(s, value)))
                    parts.append(inform(s, value))
                    label[s] = value
                suffix = pick(cfg["suffixes"])
                if suffix:
                    parts.append(suffix)
            if cfg["label_restated"]:
                for a in acts:
                    if a.slot in goal and a.value == goal[a.slot] and a.slot not in label:
                        label[a.slot] = a.value
            goal = {**goal, **label}
            turns.append(Turn(acts, " ".join(parts), label, dict(goal)))
            # system move for the next turn
            unfilled = [s for s in slot_names if s not in goal]
            if label and rng.random() < 0.4:
                s = pick(sorted(label))
                acts = [SystemAct("confirm", s, label[s])]
            elif unfilled:
                acts = [SystemAct("request", pick(unfilled))]
            else:
                filled = sorted(goal)
                s = pick(filled)
                acts = [SystemAct("offer", "name", "the place"), SystemAct("inform", s, goal[s])]
        dialogues.append(Dialogue(turns, f"syn-{seed}-{di}"))
    return DialogueCorpus(ontology, dialogues), ontology

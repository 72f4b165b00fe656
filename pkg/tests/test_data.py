import json
from pathlib import Path

import numpy as np
import pytest

from copydst.autodiff import ContractError
from copydst.data import (
    FOODS, CorpusError, Dialogue, DialogueCorpus, Ontology, Turn, generate_synthetic,
    holdout_count, load_corpus, make_unseen_split, parse_corpus, split_report,
)
from copydst.embeddings import tokenize
from copydst.encoder import SystemAct

FIXTURES = Path(__file__).parent / "fixtures"


def _doc(turns, ontology=None):
    return {"ontology": ontology or {"food": ["thai", "italian"]}, "dialogues": [{"turns": turns}]}


def test_load_minimal_fixture():
    c = load_corpus(FIXTURES / "minimal.json")
    assert len(c.dialogues) == 1 and c.n_turns == 2
    t0, t1 = c.dialogues[0].turns
    assert t0.user_tokens == ["i", "want", "thai", "food"]
    assert t1.tokens == ["request", "area", "in", "the", "north", "please"]
    assert t1.goal == {"food": "thai", "area": "north"}
    assert not c.goal_mismatches and not c.out_of_ontology


def test_round_trip(tmp_path):
    c = load_corpus(FIXTURES / "minimal.json")
    out = tmp_path / "c.json"
    c.save(out)
    again = load_corpus(out)
    assert again.to_json() == c.to_json()
    assert again.ontology == c.ontology


def test_out_of_ontology_flagged():
    c = parse_corpus(_doc([{"utterance": "sushi", "turn_label": {"food": "sushi"}}]))
    assert c.out_of_ontology == [(0, 0, "food", "sushi")]


def test_unknown_slot_skipped_with_warning(caplog):
    c = parse_corpus(_doc([{"utterance": "x", "turn_label": {"colour": "red", "food": "thai"}}]))
    assert c.skipped_labels == 1
    assert c.dialogues[0].turns[0].turn_label == {"food": "thai"}
    assert "unknown slot" in caplog.text


def test_goal_computed_and_mismatch_flagged():
    c = parse_corpus(_doc([
        {"utterance": "thai", "turn_label": {"food": "thai"}},
        {"utterance": "x", "goal": {"food": "italian"}},
    ]))
    assert c.dialogues[0].turns[0].goal == {"food": "thai"}
    assert c.goal_mismatches == [(0, 1)]


def test_schema_violation_names_path():
    with pytest.raises(CorpusError) as exc:
        parse_corpus({"ontology": {}, "dialogues": [{"turns": [{"utterance": 3}]}]})
    assert "$.dialogues[0].turns[0].utterance" in str(exc.value)


def test_corrupt_json_names_byte_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_bytes('{"ontology": {"food": ["é"]},, }'.encode("utf-8"))
    with pytest.raises(CorpusError) as exc:
        load_corpus(p)
    # the second comma is character 29; "é" takes two bytes in UTF-8
    assert "byte offset 30" in str(exc.value)


def test_ontology_rejects_normalized_duplicates():
    with pytest.raises(ValueError):
        Ontology({"food": ["Thai", "thai"]})


def test_holdout_count_rounding():
    assert holdout_count(74, 0.35) == 26
    assert holdout_count(2, 0.5) == 1
    assert holdout_count(40, 0.35) == 14
    assert holdout_count(10, 0.25) == 3  # 2.5 rounds up


def _food_corpus(values, per_value=2):
    dialogues = []
    for i, v in enumerate(values):
        for k in range(per_value):
            turns = [
                Turn([], f"i want {v} food", {"food": v}, {"food": v}),
                Turn([SystemAct("request", "area")], "north", {"area": "north"}, {"food": v, "area": "north"}),
            ]
            dialogues.append(Dialogue(turns, f"d{i}-{k}"))
    onto = Ontology({"food": values, "area": ["north"]})
    return DialogueCorpus(onto, dialogues), onto


def test_split_74_values_holds_out_26_and_cleans_training():
    values = [f"food{i:02d}" for i in range(74)]
    corpus, onto = _food_corpus(values)
    train, held = make_unseen_split(corpus, onto, "food", 0.35, seed=3)
    assert len(held) == 26 and len(set(held)) == 26
    assert set(held) <= set(values)
    banned = set(held)
    for t in train.turns():
        assert t.turn_label.get("food") not in banned and t.goal.get("food") not in banned
    assert len(train.dialogues) == 2 * 48
    assert onto["food"] == values  # held-out values stay in the ontology


def test_split_deterministic_and_seed_sensitive():
    values = [f"v{i}" for i in range(40)]
    corpus, onto = _food_corpus(values, 1)
    a = make_unseen_split(corpus, onto, "food", 0.35, 11)[1]
    assert a == make_unseen_split(corpus, onto, "food", 0.35, 11)[1]
    assert a != make_unseen_split(corpus, onto, "food", 0.35, 12)[1]


def test_split_two_values():
    corpus, onto = _food_corpus(["a", "b"], 1)
    train, held = make_unseen_split(corpus, onto, "food", 0.5, 0)
    assert len(held) == 1 and len(train.dialogues) == 1


def test_split_discards_whole_dialogue_when_goal_mentions_value():
    onto = Ontology({"food": ["a", "b"]})
    d = Dialogue([Turn([], "a", {"food": "a"}, {"food": "a"}), Turn([], "x", {}, {"food": "a"})])
    keep = Dialogue([Turn([], "b", {"food": "b"}, {"food": "b"})])
    corpus = DialogueCorpus(onto, [d, keep])
    for seed in range(20):
        train, held = make_unseen_split(corpus, onto, "food", 0.5, seed)
        assert len(train.dialogues) == 1
        assert train.dialogues[0] is (keep if held == ["a"] else d)


@pytest.mark.parametrize("fraction", [0.0, 1.0, 0.01, 0.999])
def test_split_bad_fractions(fraction):
    corpus, onto = _food_corpus(["a", "b", "c"], 1)
    with pytest.raises(ContractError):
        make_unseen_split(corpus, onto, "food", fraction, 0)


def test_split_report_area_20_6_14():
    areas = [f"area{i}" for i in range(20)]
    onto = Ontology({"area": areas})

    def corpus(vals):
        return DialogueCorpus(onto, [Dialogue([Turn([], v, {"area": v}, {"area": v})]) for v in vals])

    report = split_report(corpus(areas[:6]), corpus(areas), onto)["area"]
    assert (report.total, report.seen, report.unseen) == (20, 6, 14)
    assert report.unseen_values == areas[6:]


def test_split_report_same_corpus_has_no_unseen():
    corpus, onto = _food_corpus(["a", "b", "c"])
    for r in split_report(corpus, corpus, onto).values():
        assert r.unseen == 0 and r.seen == r.total


def test_split_report_three_seen_two_unseen():
    corpus, onto = _food_corpus(["a", "b", "c", "d", "e"], 1)
    train = corpus.with_dialogues(corpus.dialogues[:3])
    r = split_report(train, corpus, onto)["food"]
    assert (r.total, r.seen, r.unseen, r.unseen_values) == (5, 3, 2, ["d", "e"])


def test_synthetic_single_dialogue_reproducible():
    a, _ = generate_synthetic(None, 1, seed=5)
    b, _ = generate_synthetic(None, 1, seed=5)
    assert a.dumps() == b.dumps()
    assert 2 <= len(a.dialogues[0].turns) <= 6


def test_synthetic_gold_values_appear_verbatim():
    corpus, onto = generate_synthetic(None, 500, seed=9)
    assert len(onto["food"]) == 40 == len(FOODS)
    for t in corpus.turns():
        restated = {(a.slot, a.value) for a in t.system_acts}
        for slot, value in t.turn_label.items():
            toks = tokenize(value)
            joined = " ".join(t.user_tokens)
            assert " ".join(toks) in joined or (slot, value) in restated, (value, joined)


def test_synthetic_restated_values_are_labelled():
    corpus, _ = generate_synthetic(None, 300, seed=4)
    seen = 0
    for d in corpus.dialogues:
        prev_goal: dict = {}
        for t in d.turns:
            for a in t.system_acts:
                if a.slot in prev_goal and a.value == prev_goal[a.slot]:
                    assert a.slot in t.turn_label
                    seen += 1
            prev_goal = t.goal
    assert seen > 50
    off, _ = generate_synthetic({"label_restated": False}, 300, seed=4)
    assert sum(len(t.turn_label) for t in off.turns()) < sum(len(t.turn_label) for t in corpus.turns())


def test_synthetic_goals_validate_on_reload():
    corpus, _ = generate_synthetic(None, 100, seed=2)
    again = parse_corpus(json.loads(corpus.dumps()))
    assert not again.goal_mismatches and not again.out_of_ontology
    assert again.dumps() == corpus.dumps()


def test_synthetic_empty_inventory_rejected():
    with pytest.raises(ContractError):
        generate_synthetic({"slots": {"food": []}}, 1, 0)

"""Command-line interface: train, eval, track, extend, split.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint
from .autodiff import ContractError
from .data import (
    CorpusError, DialogueCorpus, Ontology, generate_synthetic, load_corpus,
    make_unseen_split, split_report,
)
from .decoder import DuplicateCandidateError
from .embeddings import tokenize
from .encoder import SystemAct
from .evaluation import accumulate_goal, evaluate
from .model import TrainConfig
from .training import TrainingDiverged, train

log = logging.getLogger("copydst")

MODEL_DIR_ENV = "COPYDST_MODEL_DIR"
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _default_model_dir() -> str | None:
    return os.environ.get(MODEL_DIR_ENV) or None


def _resolve_model(path: str | None) -> Path:
    """A checkpoint file, or a training output directory (first checkpoint of its manifest)."""
    if path is None:
        raise UsageError(f"--model is required (or set {MODEL_DIR_ENV})")
    p = Path(path)
    if p.is_dir():
        man = p / MANIFEST
        if man.is_file():
            runs = _read_json(man).get("runs", [])
            if runs:
                return p / runs[0]["checkpoint"]
        found = sorted(p.glob("*.ckpt"))
        if not found:
            raise FileNotFoundError(f"no checkpoint in {p}")
        return found[0]
    if not p.exists():
        raise FileNotFoundError(f"no such model: {p}")
    return p


def _config_overrides(args) -> dict:
    return {
        f.name: getattr(args, f.name)
        for f in fields(TrainConfig)
        if getattr(args, f.name, None) is not None
    }


def resolve_config(args) -> TrainConfig:
    """Flags beat the config file, which beats the defaults."""
    merged = {}
    if args.config:
        merged.update(_read_json(args.config))
    merged.update(_config_overrides(args))
    try:
        return TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _load_training_data(args) -> tuple[DialogueCorpus, Ontology]:
    if args.synthetic is not None:
        grammar = None if args.synthetic == "default" else _read_json(args.synthetic)
        corpus, ontology = generate_synthetic(grammar, args.n_dialogues, args.data_seed)
    else:
        corpus = load_corpus(args.corpus)
        ontology = corpus.ontology
    if args.ontology:
        ontology = Ontology(_read_json(args.ontology))
    return corpus, ontology


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.corpus is None and args.synthetic is None:
        raise UsageError("one of --corpus or --synthetic is required")
    out = args.out or _default_model_dir()
    if out is None:
        raise UsageError(f"--out is required (or set {MODEL_DIR_ENV})")
    out = Path(out)
    config = resolve_config(args)
    corpus, ontology = _load_training_data(args)
    dev = load_corpus(args.dev) if args.dev else None
    out.mkdir(parents=True, exist_ok=True)
    seeds = [config.seed + i for i in range(args.seeds)]
    started = time.time()
    runs = []
    for seed in seeds:
        cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        t0 = time.time()
        result = train(corpus, ontology, cfg, dev=dev)
        name = f"model-seed{seed}.ckpt"
        digest = checkpoint.save(result.model, out / name)
        best = result.history[result.best_epoch - 1] if result.best_epoch else None
        run = {
            "seed": seed,
            "checkpoint": name,
            "sha256": digest,
            "best_epoch": result.best_epoch,
            "epochs_run": len(result.history),
            "dev_joint_goal": None if best is None else best.dev_joint_goal,
            "dev_loss": None if best is None else best.dev_loss,
            "seconds": round(time.time() - t0, 3),
        }
        runs.append(run)
        print(
            f"seed {seed}: best epoch {run['best_epoch']}, dev joint goal "
            f"{_num(run['dev_joint_goal'])} -> {out / name}"
        )
    goals = [r["dev_joint_goal"] for r in runs if r["dev_joint_goal"] is not None]
    mean_goal = float(np.mean(goals)) if goals else None
    if len(runs) > 1:
        print(f"mean dev joint goal over {len(runs)} seeds: {_num(mean_goal)}")
    manifest = {
        "command": "train",
        "argv": list(args.argv),
        "version": __version__,
        "config": config.to_dict(),
        "seeds": seeds,
        "inputs": {
            "corpus": args.corpus,
            "synthetic": args.synthetic,
            "n_dialogues": args.n_dialogues if args.synthetic is not None else None,
            "data_seed": args.data_seed if args.synthetic is not None else None,
            "ontology": args.ontology,
            "dev": args.dev,
            "config": args.config,
        },
        "outputs": [r["checkpoint"] for r in runs],
        "runs": runs,
        "mean_dev_joint_goal": mean_goal,
        "seconds": round(time.time() - started, 3),
    }
    checkpoint.write_atomic(out / MANIFEST, _dump(manifest) + "\n")
    if args.json:
        print(_dump(manifest))
    return 0


def _num(x) -> str:
    return "n/a" if x is None or x != x else f"{x:.4f}"


# -- eval --------------------------------------------------------------------

def _unseen_values(path) -> dict[str, list[str]]:
    doc = _read_json(path)
    if isinstance(doc, dict) and "heldout" in doc:
        doc = doc["heldout"]
    if not isinstance(doc, dict) or not all(isinstance(v, list) for v in doc.values()):
        raise UsageError(f"{path}: expected a JSON object mapping slot -> list of values")
    return doc


def cmd_eval(args) -> int:
    model = checkpoint.load(_resolve_model(args.model))
    corpus = load_corpus(args.corpus)
    unseen = _unseen_values(args.unseen_values) if args.unseen_values else None
    report = evaluate(model, corpus, unseen)
    print(report.table())
    if args.json:
        checkpoint.write_atomic(args.json, report.dumps() + "\n")
    return 0


# -- track -------------------------------------------------------------------

_ACT = re.compile(r"\s*([A-Za-z_]\w*)\s*\(([^()]*)\)\s*")


def parse_actions(line: str) -> list[SystemAct]:
    """``confirm(food=thai) request(area)``; ``-`` or nothing means no action."""
    text = line.strip()
    if text in ("", "-"):
        return []
    acts = []
    pos = 0
    while pos < len(text):
        m = _ACT.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse system action at {text[pos:]!r}")
        name, inner = m.group(1), m.group(2).strip()
        if not inner:
            acts.append(SystemAct(name))
        elif "=" in inner:
            slot, value = (s.strip() for s in inner.split("=", 1))
            acts.append(SystemAct(name, slot or None, value or None))
        else:
            acts.append(SystemAct(name, inner))
        pos = m.end()
    return acts


def cmd_track(args) -> int:
    model = checkpoint.load(_resolve_model(args.model))
    stream = open(args.input, encoding="utf-8") if args.input else sys.stdin
    goal = {s: None for s in model.slots}
    pending_acts: list[SystemAct] | None = None
    turn = 0
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                goal = {s: None for s in model.slots}
                pending_acts = None
                turn = 0
                if not args.json:
                    print("-- reset --")
                continue
            if pending_acts is None:
                try:
                    pending_acts = parse_actions(line)
                except ValueError as exc:
                    print(f"warning: line {lineno}: {exc}; using no action", file=sys.stderr)
                    pending_acts = []
                continue
            scores = model.score_turn(pending_acts, tokenize(line))
            pending_acts = None
            turn += 1
            pred = {}
            top = {}
            for slot, sc in scores.items():
                probs = sc.probs.data
                order = np.argsort(-probs, kind="stable")[: args.top]
                top[slot] = [(sc.candidates[j], float(probs[j])) for j in order]
                best = int(order[0])
                pred[slot] = sc.candidates[best] if probs[best] >= model.config.threshold else None
            goal = accumulate_goal(goal, pred)
            if args.json:
                print(json.dumps({"turn": turn, "top": top, "prediction": pred, "goal": goal}, sort_keys=True))
                continue
            print(f"turn {turn}")
            for slot in model.slots:
                shown = ", ".join(f"{v} {p:.3f}" for v, p in top[slot])
                print(f"  {slot}: {shown}")
            print("  goal: " + ", ".join(f"{s}={goal[s] if goal[s] is not None else 'none'}" for s in model.slots))
    finally:
        if stream is not sys.stdin:
            stream.close()
    return 0


# -- extend ------------------------------------------------------------------

def cmd_extend(args) -> int:
    path = _resolve_model(args.model)
    model = checkpoint.load(path)
    if args.slot not in model.decoders:
        print(f"error: model has no slot {args.slot!r}", file=sys.stderr)
        return 1
    before = len(model.decoders[args.slot].candidates)
    try:
        model.extend_candidates(args.slot, args.value)
    except DuplicateCandidateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    after = len(model.decoders[args.slot].candidates)
    out = Path(args.out) if args.out else path
    checkpoint.save(model, out)
    if args.json:
        print(_dump({"slot": args.slot, "value": args.value, "before": before, "after": after, "checkpoint": str(out)}))
    else:
        print(f"{args.slot}: {before} -> {after} candidates ({out})")
    return 0


# -- split -------------------------------------------------------------------

def cmd_split(args) -> int:
    if not 0.0 < args.fraction < 1.0:
        raise UsageError(f"--fraction must lie strictly between 0 and 1, got {args.fraction}")
    corpus = load_corpus(args.corpus)
    train_corpus, heldout = make_unseen_split(corpus, corpus.ontology, args.slot, args.fraction, args.seed)
    report = split_report(train_corpus, corpus, corpus.ontology)
    out = Path(args.out)
    checkpoint.write_atomic(out / "train.json", train_corpus.dumps() + "\n")
    summary = {
        "slot": args.slot,
        "fraction": args.fraction,
        "seed": args.seed,
        "heldout": {args.slot: heldout},
        "dialogues": {"input": len(corpus.dialogues), "kept": len(train_corpus.dialogues)},
        "report": {s: vars(r) for s, r in report.items()},
    }
    checkpoint.write_atomic(out / "heldout.json", _dump(summary) + "\n")
    if args.json:
        print(_dump(summary))
    else:
        print(f"held out {len(heldout)} {args.slot} values: {', '.join(heldout)}")
        print(f"kept {len(train_corpus.dialogues)} of {len(corpus.dialogues)} dialogues")
        for s, r in report.items():
            print(f"  {s}: total {r.total}, seen {r.seen}, unseen {r.unseen}")
    return 0


# -- parser ------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and optimisation (override --config)")
    for f in fields(TrainConfig):
        kind = type(f.default)
        g.add_argument(
            "--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
            metavar=f.name.upper(), help=f"default {f.default}",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copydst", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per seed")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="canonical corpus JSON")
    src.add_argument("--synthetic", metavar="default|GRAMMAR.json", help="generate a synthetic corpus")
    p.add_argument("--ontology", help="ontology JSON (slot -> values); defaults to the corpus ontology")
    p.add_argument("--dev", help="dev corpus; default carves --dev-fraction off the training data")
    p.add_argument("--n-dialogues", type=int, default=600, help="synthetic corpus size")
    p.add_argument("--data-seed", type=int, default=0, help="synthetic generator seed")
    p.add_argument("--out", help=f"output directory (default ${MODEL_DIR_ENV})")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds, starting at the config seed")
    p.add_argument("--config", help="JSON file of config values")
    p.add_argument("--json", action="store_true", help="print the run manifest as JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a corpus")
    p.add_argument("--model", default=_default_model_dir())
    p.add_argument("--corpus", required=True)
    p.add_argument("--unseen-values", help="JSON slot -> values (or a split's heldout.json)")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", help="track a dialogue read as action/utterance line pairs")
    p.add_argument("--model", default=_default_model_dir())
    p.add_argument("--input", help="read from a file instead of stdin")
    p.add_argument("--top", type=int, default=3, help="candidates shown per slot")
    p.add_argument("--json", action="store_true", help="one JSON object per turn")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("extend", help="add a candidate value without retraining")
    p.add_argument("--model", default=_default_model_dir())
    p.add_argument("--slot", required=True)
    p.add_argument("--value", required=True)
    p.add_argument("--out", help="write here instead of overwriting the model")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("split", help="hold out values of a slot from a training corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--slot", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_split)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CorpusError, ContractError, checkpoint.CheckpointError,
            TrainingDiverged, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Checkpoint file: one line of JSON header, a newline, then raw float64 tensors.

The header holds the format name and version, the training config, the
embedding settings and vocabulary, the ontology snapshot as ordered
``[slot, values]`` pairs (which fixes slot and candidate order) and a manifest of tensors with their name,
shape and byte offset into the payload. The payload is little-endian float64,
tensors stored back to back in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .data import Ontology
from .embeddings import EmbeddingConfig, EmbeddingTable, Vocabulary
from .model import Tracker, TrainConfig

FORMAT = "copydst-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def _tensors(model: Tracker) -> list[tuple[str, np.ndarray]]:
    return [("embedding.word", model.table.word_matrix)] + [
        (name, p.data) for name, p in model.named_parameters()
    ]


def encode(model: Tracker) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in _tensors(model):
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    emb = model.table.config
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "embedding": {
            "word_dim": emb.word_dim,
            "ngram_dim": emb.ngram_dim,
            "hash_scale": emb.hash_scale,
            "seed": emb.seed,
        },
        "vocab": list(model.table.vocab.itos),
        # a list of pairs: the slot order fixes the parameter order
        "ontology": [[slot, list(values)] for slot, values in model.ontology.slots.items()],
        "tensors": manifest,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return head.encode("ascii") + b"\n" + b"".join(chunks)


def split(blob: bytes) -> tuple[dict, bytes]:
    """Return ``(header, payload)`` of a checkpoint's bytes."""
    end = blob.find(b"\n")
    if end < 0:
        raise CheckpointError("no header line found")
    try:
        header = json.loads(blob[:end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"not a checkpoint (format {header.get('format')!r})")
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    payload = blob[end + 1 :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"payload has {len(payload)} bytes, header says {header['payload_bytes']}"
        )
    return header, payload


def decode(blob: bytes) -> Tracker:
    header, payload = split(blob)
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    config = TrainConfig.from_dict(header["config"])
    emb = EmbeddingConfig(**header["embedding"])
    vocab = Vocabulary(header["vocab"][1:])
    if vocab.itos != header["vocab"]:
        raise CheckpointError("vocabulary must start with the padding token and hold no duplicates")
    table = EmbeddingTable(emb, vocab, arrays.pop("embedding.word"))
    model = Tracker(config, Ontology(dict(header["ontology"])), table)
    params = dict(model.named_parameters())
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))
        raise CheckpointError(f"tensor set mismatch: {missing}")
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape}, expected {p.data.shape}")
        p.data[...] = arrays[name]
    return model


def save(model: Tracker, path) -> str:
    """Write atomically; returns the sha256 of the file."""
    blob = encode(model)
    write_atomic(path, blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> Tracker:
    return decode(Path(path).read_bytes())


def _blob(source) -> bytes:
    if isinstance(source, Tracker):
        return encode(source)
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return Path(source).read_bytes()


def payload_digest(source) -> str:
    """sha256 over the tensor payload of a model, checkpoint path or checkpoint bytes."""
    return hashlib.sha256(split(_blob(source))[1]).hexdigest()


def parameter_digest(source) -> str:
    """sha256 over the payload of the trained parameters only (word vectors excluded)."""
    header, payload = split(_blob(source))
    offsets = [e["offset"] for e in header["tensors"] if e["name"] != "embedding.word"]
    start = offsets[0] if offsets else len(payload)
    return hashlib.sha256(payload[start:]).hexdigest()


def write_atomic(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

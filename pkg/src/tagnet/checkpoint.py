"""Single-file checkpoint: a magic line, a one-line JSON manifest, then raw
little-endian tensor blobs at the offsets the manifest records.

Model parameters are stored as float64 and word tables as float32 (their
training precision), so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import FeatureStats
from .model import ModelConfig, TagModel
from .textembed import TextConfig, WordEmbeddingModel

MAGIC = "TAGNET-CHECKPOINT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write(path, manifest: dict, tensors) -> None:
    directory, offset = [], 0
    for name, arr, dtype in tensors:
        directory.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset})
        offset += int(np.prod(arr.shape)) * np.dtype(dtype).itemsize
    manifest = dict(manifest, version=VERSION, tensors=directory)
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {VERSION}\n".encode())
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for _, arr, dtype in tensors:
            f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    head = raw[:nl].decode(errors="replace").split() if nl >= 0 else []
    if len(head) != 2 or head[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if head[1] != str(VERSION):
        raise CheckpointError(f"{path}: checkpoint version {head[1]} != supported {VERSION}")
    nl2 = raw.find(b"\n", nl + 1)
    try:
        manifest = json.loads(raw[nl + 1:nl2])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: manifest version {manifest.get('version')} != supported {VERSION}")
    base = nl2 + 1
    arrays = {}
    for t in manifest["tensors"]:
        dtype = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"]))
        start = base + t["offset"]
        if start + n * dtype.itemsize > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {t['name']}")
        arrays[t["name"]] = np.frombuffer(raw, dtype=dtype, count=n, offset=start).reshape(t["shape"]).copy()
    return manifest, arrays


def _words_entry(words: WordEmbeddingModel):
    meta = {"config": words.config_json(), "vocab": words.vocab, "counts": words.counts}
    return meta, [("words/input", words.input, "<f4"), ("words/output", words.output, "<f4")]


def _words_from(manifest, arrays):
    w = manifest.get("words")
    if w is None:
        return None
    return WordEmbeddingModel(TextConfig(**w["config"]), list(w["vocab"]), list(w["counts"]),
                              arrays["words/input"].astype(np.float32), arrays["words/output"].astype(np.float32))


def save_checkpoint(model: TagModel, path, extra: dict | None = None) -> None:
    tensors = [(f"param/{n}", model.params[n].data, "<f8") for n in model.params.names()]
    manifest = {
        "kind": "model",
        "model": model.config.to_json(),
        "stats": model.stats.to_json() if model.stats is not None else None,
        "words": None,
        "extra": extra or {},
    }
    if model.words is not None:
        manifest["words"], more = _words_entry(model.words)
        tensors += more
    _write(path, manifest, tensors)


def load_checkpoint(path) -> TagModel:
    manifest, arrays = _read(path)
    if manifest.get("kind") != "model":
        raise CheckpointError(f"{path}: holds {manifest.get('kind')!r}, not a trained model")
    stats = FeatureStats.from_json(manifest["stats"]) if manifest["stats"] is not None else None
    model = TagModel(ModelConfig(**manifest["model"]), stats, _words_from(manifest, arrays))
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    missing = set(model.params.names()) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    model.params.load_state(params)
    return model


def read_extra(path) -> dict:
    return _read(path)[0].get("extra", {})


def save_words(words: WordEmbeddingModel, path, extra: dict | None = None) -> None:
    meta, tensors = _words_entry(words)
    _write(path, {"kind": "words", "words": meta, "extra": extra or {}}, tensors)


def load_words(path) -> WordEmbeddingModel:
    """Word model from either a words-only or a full model checkpoint."""
    manifest, arrays = _read(path)
    words = _words_from(manifest, arrays)
    if words is None:
        raise CheckpointError(f"{path}: checkpoint holds no word embeddings")
    return words

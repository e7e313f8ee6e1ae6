"""Subword-hashed word embeddings trained on netlist sentences.

Skip-gram with negative sampling in the fastText style: a word's input
representation is the mean of its own row (if in vocabulary) and the rows of
its hashed character n-grams, so every string has a vector.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import CircuitGraph
from .netlist import Design

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class TextConfig:
    dim: int = 64
    window: int = 10
    minn: int = 3
    maxn: int = 15
    buckets: int = 2 ** 17
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.05
    min_count: int = 1


def fnv1a64(s: str) -> int:
    h = FNV_OFFSET
    for b in s.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def ngrams(word: str, minn: int = 3, maxn: int = 15):
    w = f"<{word}>"
    out = []
    for n in range(minn, maxn + 1):
        for i in range(len(w) - n + 1):
            out.append(w[i:i + n])
    return out


def char_ngrams(word: str, minn: int = 3, maxn: int = 15, buckets: int = 2 ** 17):
    """Bucket ids of the boundary-padded character n-grams of ``word``."""
    if not word:
        raise ValueError("empty word")
    return [fnv1a64(g) % buckets for g in ngrams(word, minn, maxn)]


_BUS = re.compile(r"^(.*?)(<[^<>]*>)$")


def tokenize(name: str):
    """Lowercase, split '/' hierarchy separators, peel a trailing bus suffix."""
    toks = []
    for part in name.lower().split("/"):
        if not part:
            continue
        m = _BUS.match(part)
        if m and m.group(1):
            toks.extend([m.group(1), m.group(2)])
        else:
            toks.append(part)
    return toks


def extract_sentences(design: Design):
    """One sentence per definition (name + child types) and per instance
    (name, type, connected nets)."""
    sents = []
    for sub in design.subckts.values():
        s = tokenize(sub.name)
        for inst in sub.instances:
            s.extend(tokenize(inst.type_name))
        sents.append(s)
        for inst in sub.instances:
            s = tokenize(inst.name) + tokenize(inst.type_name)
            for net in inst.nets():
                s.extend(tokenize(net))
            sents.append(s)
    return [s for s in sents if s]


@dataclass
class WordEmbeddingModel:
    config: TextConfig
    vocab: list
    counts: list
    input: np.ndarray  # (len(vocab) + buckets, dim)
    output: np.ndarray  # (len(vocab), dim)
    _index: dict = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.vocab)}

    def subword_rows(self, word: str):
        c = self.config
        rows = [len(self.vocab) + b for b in char_ngrams(word, c.minn, c.maxn, c.buckets)]
        i = self._index.get(word)
        return ([i] if i is not None else []) + rows

    def word_vector(self, word: str) -> np.ndarray:
        v = self._cache.get(word)
        if v is None:
            v = self.input[self.subword_rows(word)].astype(np.float64).mean(axis=0)
            self._cache[word] = v
        return v

    def embed(self, text: str) -> np.ndarray:
        """Mean of the token vectors of an identifier (total: never fails)."""
        toks = tokenize(text) or [text.lower() or "<empty>"]
        return np.mean([self.word_vector(t) for t in toks], axis=0)

    def config_json(self) -> dict:
        return asdict(self.config)


def _init_model(vocab, counts, cfg: TextConfig, rng) -> WordEmbeddingModel:
    rows = len(vocab) + cfg.buckets
    inp = rng.uniform(-1.0 / cfg.dim, 1.0 / cfg.dim, size=(rows, cfg.dim)).astype(np.float32)
    out = np.zeros((len(vocab), cfg.dim), dtype=np.float32)
    return WordEmbeddingModel(cfg, list(vocab), list(counts), inp, out)


def train_word_embeddings(sentences, config: TextConfig | None = None, seed: int = 0) -> WordEmbeddingModel:
    cfg = config or TextConfig()
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("cannot train word embeddings on an empty corpus")
    rng = np.random.default_rng(seed)
    freq: dict = {}
    for s in sentences:
        for w in s:
            freq[w] = freq.get(w, 0) + 1
    vocab = sorted(w for w, c in freq.items() if c >= cfg.min_count)
    counts = [freq[w] for w in vocab]
    model = _init_model(vocab, counts, cfg, rng)
    if cfg.epochs == 0:
        return model
    index = model._index
    sub_rows = {w: np.array(model.subword_rows(w)) for w in vocab}
    # unigram^0.5 negative table, as fastText
    p = np.sqrt(np.array(counts, dtype=np.float64))
    p /= p.sum()
    encoded = [np.array([index[w] for w in s if w in index]) for s in sentences]
    encoded = [e for e in encoded if len(e) > 1]
    total = cfg.epochs * sum(len(e) for e in encoded)
    seen = 0
    inp, out = model.input, model.output
    for _ in range(cfg.epochs):
        for sent in encoded:
            n = len(sent)
            bounds = rng.integers(1, cfg.window + 1, size=n)
            negs_all = rng.choice(len(vocab), size=(n, cfg.window * 2, cfg.negatives), p=p)
            for pos in range(n):
                lr = cfg.lr * (1.0 - seen / total)
                seen += 1
                b = bounds[pos]
                ctx = [sent[c] for c in range(max(0, pos - b), min(n, pos + b + 1)) if c != pos]
                if not ctx:
                    continue
                rows = sub_rows[vocab[sent[pos]]]
                hidden = inp[rows].mean(axis=0)
                k = len(ctx)
                targets = np.concatenate([np.array(ctx)[:, None], negs_all[pos, :k]], axis=1).ravel()
                labels = np.zeros((k, cfg.negatives + 1), dtype=np.float32)
                labels[:, 0] = 1.0
                labels = labels.ravel()
                wo = out[targets]
                score = 1.0 / (1.0 + np.exp(-(wo @ hidden)))
                alpha = lr * (labels - score)
                grad = alpha @ wo
                np.add.at(out, targets, alpha[:, None] * hidden[None, :])
                np.add.at(inp, rows, grad)
    model._cache.clear()
    return model


def instance_text_features(graph: CircuitGraph, model: WordEmbeddingModel) -> np.ndarray:
    """``(num_nodes, 2*dim)``: embed(instance name) ++ embed(type name).

    Sub-circuit nodes use their occurrence name and definition name.
    """
    out = np.zeros((graph.num_nodes, 2 * model.config.dim))
    for n in graph.nodes:
        out[n.id] = np.concatenate([model.embed(n.name), model.embed(n.type_name)])
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def corpus_sentences(designs, extra_text: str | None = None):
    sents = []
    for d in designs:
        sents.extend(extract_sentences(d))
    if extra_text:
        for line in extra_text.splitlines():
            toks = line.lower().split()
            if toks:
                sents.append(toks)
    return sents


def dump_tsv(model: WordEmbeddingModel) -> str:
    lines = []
    for w in model.vocab:
        v = model.word_vector(w)
        lines.append(w + "\t" + "\t".join(f"{x:.6g}" for x in v))
    return "\n".join(lines) + "\n"


"""End-to-end experiment plumbing shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace

from . import train as T
from .config import Config
from .corpus import load_corpus
from .datagen import generate_corpus
from .model import ModelConfig, TagModel
from .textembed import corpus_sentences, train_word_embeddings

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    corpus: list  # (Design, PlacementDB, MatchLabelDB)
    examples: list
    split: T.DatasetSplit
    train: list
    val: list
    test: list
    stats: object
    words: object


def load_or_generate(cfg: Config):
    if cfg.corpus:
        return load_corpus(cfg.corpus, cfg.thick_gate_markers)
    return generate_corpus(replace(cfg.gen, seed=cfg.seed))


def train_words(cfg: Config, corpus):
    """Word model over every corpus netlist (plus optional extra text).

    Training is unsupervised on names only, never on layout targets.
    """
    extra = open(cfg.extra_text).read() if cfg.extra_text else None
    return train_word_embeddings(corpus_sentences([d for d, _, _ in corpus], extra), cfg.text, seed=cfg.seed)


def build_dataset(cfg: Config, corpus=None, words=None) -> Dataset:
    corpus = load_or_generate(cfg) if corpus is None else corpus
    if words is None:
        words = train_words(cfg, corpus)
    examples = T.build_examples(corpus, cfg.train, cfg.seed, cfg.geometry)
    split = T.split_dataset([d for d, _, _ in corpus], cfg.seed, cfg.train.split)
    train, val, test = T.apply_split(examples, split)
    stats = T.fit_feature_stats(train)
    T.prepare(examples, stats, words, cfg.model.text_dim)
    return Dataset(corpus, examples, split, train, val, test, stats, words)


def new_model(cfg: Config, data: Dataset, variant: str | None = None) -> TagModel:
    mc = cfg.model if variant is None else ModelConfig.from_variant(
        variant, **{k: v for k, v in cfg.model.to_json().items() if k not in ("use_text", "use_attention", "use_graph", "head")})
    return TagModel(mc, data.stats, data.words)


def pretrain(cfg: Config, data: Dataset, variant: str | None = None, on_epoch=None):
    model = new_model(cfg, data, variant)
    result = T.train_distance(model, data.train, data.val, cfg.train, cfg.seed, on_epoch=on_epoch)
    return model, result


def finetune_splits(cfg: Config, data: Dataset):
    """Fine-tune train/val subsets, each a fixed fraction of the whole dataset."""
    n = len(data.examples)
    f = cfg.train.finetune_fraction
    return T.subset(data.train, n, f, cfg.seed + 101), T.subset(data.val, n, f, cfg.seed + 202)


def finetune(cfg: Config, data: Dataset, task: str, pretrained: TagModel | None):
    """Fine-tune on ``task`` ("match" or "hpwl"): frozen pre-trained embeddings
    when ``pretrained`` is given, else a from-scratch model trained end to end."""
    ft_train, ft_val = finetune_splits(cfg, data)
    fn = T.finetune_matching if task == "match" else T.finetune_hpwl
    if pretrained is not None:
        model = copy.deepcopy(pretrained)
        result = fn(model, ft_train, ft_val, data.test, cfg.train, cfg.seed, frozen=True)
    else:
        model = new_model(cfg, data)
        result = fn(model, ft_train, ft_val, data.test, cfg.train, cfg.seed, frozen=False)
    return model, result


def type_clustering(words, device_types) -> dict:
    """Mean cosine between word vectors of device-type names, within PMOS,
    within NMOS, and across the two."""
    from itertools import combinations, product

    from .textembed import cosine

    p = sorted(t for t in device_types if t.startswith("pch"))
    n = sorted(t for t in device_types if t.startswith("nch"))
    vec = {t: words.word_vector(t) for t in p + n}

    def mean(pairs):
        vals = [cosine(vec[a], vec[b]) for a, b in pairs]
        return sum(vals) / len(vals) if vals else float("nan")

    return {"intra_pmos": mean(combinations(p, 2)), "intra_nmos": mean(combinations(n, 2)),
            "pmos_nmos": mean(product(p, n))}


def run_protocol(cfg: Config, variants=("TAG-NORM", "TA-NORM", "TG-NORM", "G-CAT"), transfer: bool = True,
                 threads: int = 1, progress=None) -> dict:
    """Pre-train each variant, then fine-tune matching and HPWL heads on the
    first variant's frozen embeddings and from scratch.

    Returns a JSON-ready dict of metrics, best epochs and wall-clock seconds.
    """
    import time

    say = progress or (lambda msg: None)
    out = {"config": cfg.to_json(), "seconds": {}, "distance": {}, "best_epoch": {}}
    t0 = time.perf_counter()
    corpus = load_or_generate(cfg)
    out["seconds"]["datagen"] = time.perf_counter() - t0

    t = time.perf_counter()
    words = train_words(cfg, corpus)
    out["seconds"]["train_text"] = time.perf_counter() - t
    out["clustering"] = type_clustering(words, cfg.gen.device_types)
    say(f"text model: {len(words.vocab)} words, clustering {out['clustering']}")

    t = time.perf_counter()
    data = build_dataset(cfg, corpus, words)
    out["seconds"]["dataset"] = time.perf_counter() - t
    out["split"] = {k: len(v) for k, v in data.split.to_json().items()}
    out["zero_shot_text"] = T.zero_shot_text_metrics(data.test).to_json()

    models = {}
    for v in variants:
        t = time.perf_counter()
        try:
            model, result = pretrain(cfg, data, v)
        except T.TrainingDivergedError as e:  # expected for graph-only NORM variants
            out["distance"][v] = {"error": str(e)}
            say(f"{v}: diverged ({e})")
            continue
        models[v] = model
        out["seconds"][f"train {v}"] = time.perf_counter() - t
        out["distance"][v] = T.evaluate_distance(model, data.test, threads).to_json()
        out["best_epoch"][v] = result.best_epoch
        say(f"{v}: test R2 {out['distance'][v]['r2']:.4f} (best epoch {result.best_epoch}, "
            f"{out['seconds'][f'train {v}']:.0f}s)")

    if transfer:
        pre = models[variants[0]]
        out["transfer"], out["finetune_lr"] = {}, {}
        for task in ("match", "hpwl"):
            for mode, src in (("frozen", pre), ("scratch", None)):
                t = time.perf_counter()
                _, res = finetune(cfg, data, task, src)
                out["seconds"][f"{task} {mode}"] = time.perf_counter() - t
                out["transfer"][f"{task} {mode}"] = res.metrics.to_json()
                out["finetune_lr"][f"{task} {mode}"] = res.lr
                key = "f1" if task == "match" else "r2"
                say(f"{task} {mode}: {key} {res.metrics.values[key]:.4f} (lr {res.lr:g}, best epoch {res.best_epoch})")
    out["seconds"]["total"] = time.perf_counter() - t0
    return out

"""Dataset assembly, distance pre-training, fine-tuning and evaluation."""
from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .features import fit_stats, normalize, raw_features
from .graph import CircuitGraph, build_graph
from .metrics import Metrics, classification_metrics, regression_metrics
from .model import TagModel, graph_inputs, pad_groups
from .netlist import Design, MatchLabelDB, PlacementDB, net_hpwl, relative_distance
from .textembed import instance_text_features

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


# ------------------------------------------------------------------ samples


@dataclass
class GroupData:
    occ: int  # occurrence node id
    def_name: str
    fingerprint: tuple
    members: np.ndarray  # node ids used for targets (possibly subsampled)
    pairs: np.ndarray  # (P, 2) node ids
    targets: np.ndarray  # (P,)
    positives: set = field(default_factory=set)  # frozenset node pairs with a match label


@dataclass
class NetData:
    def_name: str
    fingerprint: tuple
    net: str
    nodes: np.ndarray
    target: float


@dataclass
class Example:
    name: str
    design: Design
    graph: CircuitGraph
    placement: PlacementDB
    labels: MatchLabelDB
    raw: np.ndarray
    groups: list
    nets: list
    inputs: object = None
    excluded: frozenset = frozenset()  # fingerprints masked out for this split role

    def active_groups(self):
        return [g for g in self.groups if g.fingerprint not in self.excluded]

    def active_nets(self):
        return [n for n in self.nets if n.fingerprint not in self.excluded]

    def pair_arrays(self):
        gs = [g for g in self.active_groups() if len(g.pairs)]
        if not gs:
            return np.zeros((0, 2), np.int64), np.zeros(0, np.int64), 0, np.zeros(0)
        pairs = np.concatenate([g.pairs for g in gs])
        group = np.concatenate([np.full(len(g.pairs), k) for k, g in enumerate(gs)])
        targets = np.concatenate([g.targets for g in gs])
        return pairs, group, len(gs), targets


def subckt_fingerprint(design: Design, def_name: str) -> tuple:
    """Definition name plus the sorted multiset of (kind, type, net degree)."""
    sub = design.subckts[def_name]
    items = []
    for inst in sub.instances:
        if inst.excluded:
            continue
        degree = len({n for n in inst.nets() if not design.is_global(n)})
        items.append((inst.kind.name, inst.type_name, degree))
    return (def_name, tuple(sorted(items)))


def build_example(design: Design, pl: PlacementDB, labels: MatchLabelDB, cfg: TrainConfig,
                  seed: int = 0, geometry=None) -> Example:
    graph = build_graph(design)
    raw = raw_features(design, graph, geometry)
    groups, nets, seen = [], [], set()
    fps = {}
    for occ, members in graph.membership.items():
        def_name = graph.nodes[occ].type_name
        if def_name in seen:
            continue  # repeated occurrences carry identical inputs and targets
        seen.add(def_name)
        fp = fps.setdefault(def_name, subckt_fingerprint(design, def_name))
        placed = [m for m in members if (def_name, graph.nodes[m].name) in pl]
        sub = design.subckts[def_name]
        node_of = {graph.nodes[m].name: m for m in members}
        if len(placed) >= cfg.min_members:
            chosen = np.array(placed)
            if len(chosen) > cfg.max_members:
                rng = np.random.default_rng([seed, zlib.crc32(design.name.encode()), occ])
                chosen = np.sort(rng.choice(chosen, size=cfg.max_members, replace=False))
            pairs = np.array([(a, b) for k, a in enumerate(chosen) for b in chosen[k + 1:]], dtype=np.int64)
            targets = np.array([relative_distance(def_name, graph.nodes[a].name, graph.nodes[b].name, pl)
                                for a, b in pairs])
            chosen_set = set(chosen.tolist())
            positives = set()
            for a, b, _ in labels.get(def_name, []):
                if a in node_of and b in node_of and node_of[a] in chosen_set and node_of[b] in chosen_set:
                    positives.add(frozenset((node_of[a], node_of[b])))
            groups.append(GroupData(occ, def_name, fp, chosen, pairs, targets, positives))
        if len(placed) >= 2:
            for net in sorted(sub.nets):
                if design.is_global(net):
                    continue
                names = sorted({sub.instances[i].name for i, _ in sub.nets[net]})
                nodes = [node_of[n] for n in names if n in node_of and (def_name, n) in pl]
                if len(nodes) < 2:
                    continue
                nets.append(NetData(def_name, fp, net, np.array(nodes), net_hpwl(sub, net, pl)))
    return Example(design.name, design, graph, pl, labels, raw, groups, nets)


def build_examples(corpus, cfg: TrainConfig, seed: int = 0, geometry=None):
    return [build_example(d, pl, lab, cfg, seed, geometry) for d, pl, lab in corpus]


def prepare(examples, stats, words, text_dim: int = 128) -> None:
    """Attach normalized feature and text tensors to every example."""
    for ex in examples:
        text = instance_text_features(ex.graph, words) if words is not None else None
        ex.inputs = graph_inputs(ex.graph, normalize(ex.raw, stats), text, text_dim)


def fit_feature_stats(examples):
    return fit_stats([ex.raw for ex in examples])


# -------------------------------------------------------------------- split


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    train_fingerprints: frozenset

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_dataset(designs, seed: int, fractions=(0.6, 0.2, 0.2)) -> DatasetSplit:
    """Shuffle designs and allocate train/val/test; val/test sub-circuits whose
    fingerprint occurs in train are masked out by :func:`apply_split`."""
    designs = list(designs)
    if len(designs) < 5:
        raise DatasetError(f"need at least 5 designs to split, got {len(designs)}")
    names = [d.name for d in designs]
    if len(set(names)) != len(names):
        raise DatasetError("duplicate design names")
    order = np.random.default_rng(seed).permutation(len(designs))
    n = len(designs)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    by_name = {d.name: d for d in designs}
    train = [names[i] for i in order[:n_train]]
    val = [names[i] for i in order[n_train:n_train + n_val]]
    test = [names[i] for i in order[n_train + n_val:]]
    fps = set()
    for nm in train:
        d = by_name[nm]
        for def_name in d.subckts:
            fps.add(subckt_fingerprint(d, def_name))
    return DatasetSplit(train, val, test, frozenset(fps))


def apply_split(examples, split: DatasetSplit):
    by_name = {ex.name: ex for ex in examples}
    train = [by_name[n] for n in split.train]
    val = [by_name[n] for n in split.val]
    test = [by_name[n] for n in split.test]
    for ex in train:
        ex.excluded = frozenset()
    for ex in val + test:
        ex.excluded = split.train_fingerprints
    return train, val, test


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val: float


def _batches(examples, rng, batch_subckts):
    order = rng.permutation(len(examples))
    batch, count = [], 0
    for i in order:
        ex = examples[i]
        if not any(len(g.pairs) for g in ex.active_groups()):
            continue
        batch.append(ex)
        count += sum(1 for g in ex.active_groups() if len(g.pairs))
        if count >= batch_subckts:
            yield batch
            batch, count = [], 0
    if batch:
        yield batch


def distance_predictions(model: TagModel, ex: Example, z=None):
    """(prediction tensor, targets, pair group ids) for the active pairs of ``ex``."""
    pairs, group, ngroups, targets = ex.pair_arrays()
    if z is None:
        z = model.embed(ex.inputs)
    if model.config.head == "NORM":
        pred = model.norm_predictions(z, pairs, group, ngroups)
    else:
        pred = model.cat_predictions(z, pairs)
    return pred, targets, group


def _check_finite(model, names, loss, pred, ex, group):
    bad_grad = [n for n in names if model.params[n].grad is not None and not np.isfinite(model.params[n].grad).all()]
    if np.isfinite(loss.data) and np.isfinite(pred.data).all() and not bad_grad:
        return
    gs = [g for g in ex.active_groups() if len(g.pairs)]
    culprits = sorted({gs[k].def_name for k in np.unique(group[~np.isfinite(pred.data)])})
    if not culprits:
        # a zero embedding distance makes the norm's gradient undefined
        d = np.abs(pred.data)
        culprits = sorted({gs[k].def_name for k in np.unique(group[d == 0])}) or [g.def_name for g in gs]
    raise TrainingDivergedError(
        f"NaN loss in design {ex.name}, sub-circuit {', '.join(culprits)}"
        + (f" (non-finite gradient in {bad_grad[0]})" if bad_grad else ""))


def distance_scores(model: TagModel, examples) -> tuple[float, float]:
    """(mean squared error, R^2) over all active pairs; NaN when undefined."""
    y, p = predict_distances(model, examples)
    if not len(y):
        return float("nan"), float("nan")
    loss = float(np.mean((p - y) ** 2))
    r2 = regression_metrics(y, p).r2 if len(y) >= 2 else float("nan")
    return loss, r2


def mean_distance_loss(model: TagModel, examples) -> float:
    return distance_scores(model, examples)[0]


def train_distance(model: TagModel, train, val, cfg: TrainConfig, seed: int = 0,
                   epochs: int | None = None, on_epoch=None) -> TrainResult:
    """Pre-train the embedding network and the configured distance head.

    MSE over all in-sub-circuit pairs, Adam on mini-batches of at least
    ``batch_subckts`` sub-circuits; the parameters of the epoch with the lowest
    validation loss are restored at the end.
    """
    epochs = cfg.epochs if epochs is None else epochs
    if not any(ex.pair_arrays()[0].size for ex in train):
        raise DatasetError("training split has no sub-circuit pairs")
    names = model.embedding_names() + model.head_names(model.config.head)
    history = []
    best = (math.inf, -1, model.params.state())
    stale = 0
    for epoch in range(1, epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        sse, npairs = 0.0, 0
        for batch in _batches(train, rng, cfg.batch_subckts):
            total = sum(len(ex.pair_arrays()[0]) for ex in batch)
            model.params.zero_grad()
            for ex in batch:
                pred, targets, group = distance_predictions(model, ex)
                loss = ad.mse_loss(pred, targets, reduction="sum")
                ad.backward(ad.scale(loss, 1.0 / total))
                _check_finite(model, names, loss, pred, ex, group)
                sse += float(loss.data)
                npairs += len(targets)
            model.params.adam_step(cfg.lr, names=names)
        train_loss = sse / npairs
        val_loss, val_r2 = distance_scores(model, val) if val else (train_loss, float("nan"))
        if not np.isfinite(val_loss):
            val_loss = train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_r2": val_r2})
        if on_epoch:
            on_epoch(history[-1])
        if val_loss < best[0]:
            best = (val_loss, epoch, model.params.state())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params.zero_grad()
    model.params.load_state(best[2])
    return TrainResult(history, best[1], best[0])


def predict_distances(model: TagModel, examples, threads: int = 1):
    def one(ex):
        if not len(ex.pair_arrays()[0]):
            return np.zeros(0), np.zeros(0)
        pred, targets, _ = distance_predictions(model, ex)
        return targets, pred.data

    results = _map(one, examples, threads)
    y = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
    p = np.concatenate([r[1] for r in results]) if results else np.zeros(0)
    return y, p


def evaluate_distance(model: TagModel, examples, threads: int = 1) -> Metrics:
    y, p = predict_distances(model, examples, threads)
    return regression_metrics(y, p)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------- fine-tune


def subset(examples, fraction_of: int, fraction: float, seed: int):
    """``round(fraction * fraction_of)`` examples drawn without replacement."""
    k = max(1, int(round(fraction * fraction_of)))
    k = min(k, len(examples))
    idx = np.sort(np.random.default_rng(seed).choice(len(examples), size=k, replace=False))
    return [examples[i] for i in idx]


def match_pairs(ex: Example, rng):
    """Labeled positives and an equal number of unlabeled same-sub-circuit negatives."""
    pos, neg = [], []
    for g in ex.active_groups():
        if not g.positives:
            continue
        gp = sorted(tuple(sorted(p)) for p in g.positives)
        cands = [tuple(p) for p in g.pairs.tolist() if frozenset(p) not in g.positives]
        pos.extend(gp)
        if cands:
            take = rng.choice(len(cands), size=min(len(gp), len(cands)), replace=False)
            neg.extend(cands[i] for i in sorted(take))
    pairs = np.array(pos + neg, dtype=np.int64).reshape(-1, 2)
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return pairs, y


def net_arrays(ex: Example):
    nets = ex.active_nets()
    if not nets:
        return None, np.zeros(0)
    return pad_groups([n.nodes for n in nets]), np.array([n.target for n in nets])


@dataclass
class FinetuneResult:
    metrics: Metrics
    history: list
    best_epoch: int
    best_val: float = math.inf
    lr: float = 0.0


def _finetune(model: TagModel, task: str, train, val, test, cfg: TrainConfig, seed: int, frozen: bool,
              lr: float) -> FinetuneResult:
    names = model.head_names(task) + ([] if frozen else model.embedding_names())
    model.params.m = {k: np.zeros_like(v) for k, v in model.params.m.items()}
    model.params.v = {k: np.zeros_like(v) for k, v in model.params.v.items()}
    model.params.step_count = 0
    cache = {}

    def embedding(ex):
        if not frozen:
            return model.embed(ex.inputs)
        z = cache.get(ex.name)
        if z is None:
            z = cache[ex.name] = ad.Tensor(model.embed(ex.inputs).data)
        return z

    def forward(ex, rng):
        if task == "match":
            pairs, y = match_pairs(ex, rng)
            if not len(pairs):
                return None
            return model.match_probabilities(embedding(ex), pairs), y
        nets, y = net_arrays(ex)
        if nets is None:
            return None
        return model.hpwl_predictions(embedding(ex), nets), y

    def loss_fn(pred, y, reduction="mean"):
        return ad.bce_loss(pred, y, reduction) if task == "match" else ad.mse_loss(pred, y, reduction)

    def evaluate(examples, seed_):
        ys, ps = [], []
        for k, ex in enumerate(examples):
            out = forward(ex, np.random.default_rng([seed_, k]))
            if out is not None:
                ps.append(out[0].data)
                ys.append(out[1])
        if not ys:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(ys), np.concatenate(ps)

    if task == "match" and not any(g.positives for ex in train for g in ex.active_groups()):
        raise DatasetError("no labeled matching pairs in the fine-tune split")

    history = []
    best = (math.inf, -1, model.params.state())
    stale = 0
    for epoch in range(1, cfg.finetune_epochs + 1):
        rng = np.random.default_rng([seed, 7919, epoch])  # negatives reseeded per epoch
        total, n = 0.0, 0
        for i in rng.permutation(len(train)):
            out = forward(train[i], rng)
            if out is None:
                continue
            pred, y = out
            model.params.zero_grad()
            loss = loss_fn(pred, y)
            ad.backward(loss)
            model.params.adam_step(lr, names=names)
            total += float(loss.data) * len(y)
            n += len(y)
        yv, pv = evaluate(val, seed + 1)
        val_loss = float(loss_fn(ad.Tensor(pv), yv).data) if len(yv) else total / max(n, 1)
        history.append({"epoch": epoch, "train_loss": total / max(n, 1), "val_loss": val_loss})
        if val_loss < best[0]:
            best = (val_loss, epoch, model.params.state())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.finetune_patience:
                break
    model.params.zero_grad()
    model.params.load_state(best[2])
    cache.clear()
    yt, pt = evaluate(test, seed + 2)
    metrics = classification_metrics(yt, pt) if task == "match" else regression_metrics(yt, pt)
    return FinetuneResult(metrics, history, best[1], best[0], lr)


def _finetune_lr_grid(model: TagModel, task: str, train, val, test, cfg: TrainConfig, seed: int,
                      frozen: bool) -> FinetuneResult:
    """One run per learning rate in ``cfg.finetune_lrs``, each from the same
    starting weights; keep the run with the lowest validation loss."""
    if not cfg.finetune_lrs:
        raise ValueError("finetune_lrs is empty")
    start = model.params.state()
    best, best_state = None, None
    for lr in cfg.finetune_lrs:
        model.params.load_state(start)
        res = _finetune(model, task, train, val, test, cfg, seed, frozen, lr)
        if best is None or res.best_val < best.best_val:
            best, best_state = res, model.params.state()
    model.params.load_state(best_state)
    return best


def finetune_matching(model: TagModel, train, val, test, cfg: TrainConfig, seed: int = 0,
                      frozen: bool = True) -> FinetuneResult:
    """Train the matching head (and, unless ``frozen``, the embedding network)."""
    return _finetune_lr_grid(model, "match", train, val, test, cfg, seed, frozen)


def finetune_hpwl(model: TagModel, train, val, test, cfg: TrainConfig, seed: int = 0,
                  frozen: bool = True) -> FinetuneResult:
    return _finetune_lr_grid(model, "hpwl", train, val, test, cfg, seed, frozen)


# ---------------------------------------------------------------- zero-shot


def zero_shot_text_metrics(examples) -> Metrics:
    """Distance norm (exact max) on the raw text features, no trained weights."""
    from .model import zero_shot_norm

    ys, ps = [], []
    for ex in examples:
        pairs, group, ngroups, targets = ex.pair_arrays()
        if not len(pairs):
            continue
        ps.append(zero_shot_norm(ex.inputs.text, pairs, group, ngroups))
        ys.append(targets)
    return regression_metrics(np.concatenate(ys), np.concatenate(ps))


__all__ = [
    "DatasetError", "DatasetSplit", "Example", "FinetuneResult", "TrainResult", "TrainingDivergedError",
    "apply_split", "build_example", "build_examples", "distance_scores", "evaluate_distance", "finetune_hpwl",
    "finetune_matching", "fit_feature_stats", "match_pairs", "net_arrays", "predict_distances", "prepare",
    "split_dataset", "subckt_fingerprint", "subset", "train_distance", "zero_shot_text_metrics",
]

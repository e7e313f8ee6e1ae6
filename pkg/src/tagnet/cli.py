"""``tag`` command-line interface.

Every command prints one JSON object on stdout on success and a single
``error: <Type>: <message>`` line on stderr (exit code 1) on failure.
"""
from __future__ import annotations

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")  # bit-reproducible BLAS reductions

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import pipeline  # noqa: E402
from . import train as T  # noqa: E402
from .checkpoint import load_checkpoint, load_words, save_checkpoint, save_words  # noqa: E402
from .config import Config, load_config  # noqa: E402
from .corpus import load_design  # noqa: E402
from .datagen import write_corpus, generate_corpus  # noqa: E402
from .features import normalize, raw_features  # noqa: E402
from .graph import build_graph  # noqa: E402
from .model import ModelConfig, graph_inputs  # noqa: E402
from .netlist import relative_distance  # noqa: E402
from .textembed import dump_tsv, instance_text_features  # noqa: E402


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "corpus", None):
        cfg = replace(cfg, corpus=args.corpus)
    return cfg


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"missing required flag(s): {', '.join(missing)}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(history[0]) if history else ["epoch", "train_loss", "val_loss"]
    w.writerow(cols)
    for row in history:
        w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def _dataset(cfg: Config, args):
    words = load_words(args.words) if getattr(args, "words", None) else None
    return pipeline.build_dataset(cfg, words=words)


def _pick(data, name):
    return {"train": data.train, "val": data.val, "test": data.test, "all": data.examples}[name]


# ----------------------------------------------------------------- commands


def cmd_datagen(args):
    _require(args, "out")
    cfg = _config(args)
    gen = replace(cfg.gen, seed=cfg.seed)
    if args.n_designs is not None:
        gen = replace(gen, n_designs=args.n_designs)
    corpus = generate_corpus(gen)
    write_corpus(corpus, args.out, gen)
    return {"designs": len(corpus), "out": str(args.out), "seed": gen.seed, "config": cfg.to_json()}


def cmd_train_text(args):
    _require(args, "out")
    cfg = _config(args)
    corpus = pipeline.load_or_generate(cfg)
    words = pipeline.train_words(cfg, corpus)
    save_words(words, args.out, {"config": cfg.to_json()})
    if args.tsv:
        _write_text(args.tsv, dump_tsv(words))
    return {"vocab": len(words.vocab), "dim": words.config.dim, "out": str(args.out), "config": cfg.to_json()}


def cmd_train(args):
    _require(args, "config")
    cfg = _config(args)
    args.out = args.out or "model.ckpt"
    if args.variant:
        mc = ModelConfig.from_variant(args.variant, **{k: v for k, v in cfg.model.to_json().items()
                                                       if k not in ("use_text", "use_attention", "use_graph", "head")})
        cfg = replace(cfg, model=mc)
    data = _dataset(cfg, args)
    model, result = pipeline.pretrain(cfg, data)
    save_checkpoint(model, args.out, {"config": cfg.to_json(), "split": data.split.to_json()})
    _write_text(str(args.out) + ".history.csv", _history_csv(result.history))
    metrics = T.evaluate_distance(model, data.test, args.threads)
    return {"variant": model.config.variant, "best_epoch": result.best_epoch, "best_val_loss": result.best_val,
            "test": metrics.to_json(), "config": cfg.to_json()}


def cmd_eval(args):
    cfg = _config(args)
    if args.zero_shot_text:
        _require(args, "checkpoint")
        data = pipeline.build_dataset(cfg, words=load_words(args.checkpoint))
        metrics = T.zero_shot_text_metrics(_pick(data, args.split))
        return {"mode": "zero-shot-text", "split": args.split, "metrics": metrics.to_json(), "config": cfg.to_json()}
    _require(args, "checkpoint")
    model = load_checkpoint(args.checkpoint)
    cfg = replace(cfg, model=model.config)
    data = pipeline.build_dataset(cfg, words=model.words)
    # statistics travel with the checkpoint; re-normalize with them
    T.prepare(data.examples, model.stats, model.words, model.config.text_dim)
    metrics = T.evaluate_distance(model, _pick(data, args.split), args.threads)
    return {"mode": "distance", "variant": model.config.variant, "split": args.split,
            "metrics": metrics.to_json(), "config": cfg.to_json()}


def _cmd_finetune(args, task):
    _require(args, "out")
    cfg = _config(args)
    if args.scratch:
        data = _dataset(cfg, args)
        model, result = pipeline.finetune(cfg, data, task, None)
    else:
        _require(args, "checkpoint")
        pre = load_checkpoint(args.checkpoint)
        cfg = replace(cfg, model=pre.config)
        data = pipeline.build_dataset(cfg, words=pre.words)
        T.prepare(data.examples, pre.stats, pre.words, pre.config.text_dim)
        model, result = pipeline.finetune(cfg, data, task, pre)
    save_checkpoint(model, args.out, {"config": cfg.to_json(), "task": task, "scratch": bool(args.scratch)})
    _write_text(str(args.out) + ".history.csv", _history_csv(result.history))
    return {"task": task, "mode": "scratch" if args.scratch else "frozen", "lr": result.lr,
            "best_epoch": result.best_epoch, "test": result.metrics.to_json(), "config": cfg.to_json()}


def cmd_finetune_matching(args):
    return _cmd_finetune(args, "match")


def cmd_finetune_hpwl(args):
    return _cmd_finetune(args, "hpwl")


def _single_design(args, model):
    design, pl, labels = load_design(args.netlist, args.placement, args.labels,
                                     thick_markers=_config(args).thick_gate_markers)
    graph = build_graph(design)
    text = instance_text_features(graph, model.words) if model.words is not None else None
    inp = graph_inputs(graph, normalize(raw_features(design, graph, _config(args).geometry), model.stats),
                       text, model.config.text_dim)
    return design, pl, graph, inp


def cmd_embed(args):
    _require(args, "checkpoint", "netlist", "out")
    model = load_checkpoint(args.checkpoint)
    _, _, graph, inp = _single_design(args, model)
    z = model.embed(inp).data
    lines = [f"# checkpoint={Path(args.checkpoint).name} nodes={graph.num_nodes} dim={z.shape[1]}"]
    for node, row in zip(graph.nodes, z):
        lines.append(node.path + "\t" + "\t".join(repr(float(v)) for v in row))
    _write_text(args.out, "\n".join(lines) + "\n")
    return {"nodes": graph.num_nodes, "dim": int(z.shape[1]), "out": str(args.out), "config": _config(args).to_json()}


def cmd_predict_distance(args):
    _require(args, "checkpoint", "netlist", "out")
    model = load_checkpoint(args.checkpoint)
    design, pl, graph, inp = _single_design(args, model)
    z = model.embed(inp)
    rows = []
    for occ, members in graph.membership.items():
        def_name = graph.nodes[occ].type_name
        if len(members) < 2:
            continue
        pairs = np.array([(a, b) for k, a in enumerate(members) for b in members[k + 1:]])
        if model.config.head == "NORM":
            pred = model.norm_predictions(z, pairs, np.zeros(len(pairs), np.int64), 1).data
        else:
            pred = model.cat_predictions(z, pairs).data
        for (a, b), p in zip(pairs, pred):
            na, nb = graph.nodes[a].name, graph.nodes[b].name
            target = ""
            if (def_name, na) in pl and (def_name, nb) in pl:
                target = repr(relative_distance(def_name, na, nb, pl))
            rows.append([graph.nodes[occ].path, na, nb, repr(float(p)), target])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["occurrence", "a", "b", "predicted", "target"])
    w.writerows(rows)
    _write_text(args.out, buf.getvalue())
    return {"pairs": len(rows), "out": str(args.out), "config": _config(args).to_json()}


def cmd_embed_text(args):
    _require(args, "checkpoint", "out")
    _write_text(args.out, dump_tsv(load_words(args.checkpoint)))
    return {"out": str(args.out), "config": _config(args).to_json()}


COMMANDS = {
    "datagen": cmd_datagen,
    "train-text": cmd_train_text,
    "train": cmd_train,
    "eval": cmd_eval,
    "finetune-matching": cmd_finetune_matching,
    "finetune-hpwl": cmd_finetune_hpwl,
    "embed": cmd_embed,
    "predict-distance": cmd_predict_distance,
    "embed-text": cmd_embed_text,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tag", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--corpus", help="corpus directory (default: generate from config)")
        s.add_argument("--checkpoint")
        s.add_argument("--threads", type=int, default=1)
        if name in ("embed", "predict-distance"):
            s.add_argument("--netlist")
            s.add_argument("--placement")
            s.add_argument("--labels")
        if name == "datagen":
            s.add_argument("--n-designs", type=int)
        if name == "train-text":
            s.add_argument("--tsv", help="also dump word vectors as TSV")
        if name in ("train", "finetune-matching", "finetune-hpwl"):
            s.add_argument("--words", help="pre-trained word-embedding checkpoint")
        if name == "train":
            s.add_argument("--variant", help="ablation variant, e.g. TAG-NORM or G-CAT")
        if name in ("finetune-matching", "finetune-hpwl"):
            s.add_argument("--scratch", action="store_true", help="train end to end without a checkpoint")
        if name == "eval":
            s.add_argument("--zero-shot-text", action="store_true")
            s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        _emit(COMMANDS[args.command](args))
    except Exception as e:  # one machine-parsable line, no traceback
        msg = " ".join(str(e).split())
        sys.stderr.write(f"error: {type(e).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

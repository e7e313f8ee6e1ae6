import numpy as np
import pytest

from tagnet.config import TrainConfig
from tagnet.datagen import GenConfig, generate_corpus
from tagnet.model import ModelConfig, TagModel
from tagnet.netlist import MatchLabelDB, parse_labels, parse_netlist, parse_placement
from tagnet.train import (
    DatasetError, TrainingDivergedError, apply_split, build_example, build_examples, evaluate_distance,
    finetune_hpwl, finetune_matching, fit_feature_stats, match_pairs, mean_distance_loss, prepare,
    split_dataset, subckt_fingerprint, subset, train_distance,
)

SMALL = dict(text_dim=128, gnn_hidden=8, gnn_out=4, dim=8, heads=2, head_dim=4, fc_hidden=8, metric_dim=8)


def _prepared(corpus, words, cfg=None, seed=0):
    examples = build_examples(corpus, cfg or TrainConfig(), seed)
    stats = fit_feature_stats(examples)
    prepare(examples, stats, words, 128)
    return examples, stats


def _row_design(n, name="row", extra=""):
    lines = [".GLOBAL vdd vss", f".SUBCKT {name} a b"]
    lines += [f"M{i} a n{i} b vss nch_lvt_mac L=20 NF=2 NFIN=2" for i in range(n)]
    lines += [extra, ".ENDS", ".SUBCKT top a b", f"X0 a b {name}", ".ENDS", ".TOP top"]
    design = parse_netlist("\n".join(lines) + "\n", name=f"{name}_design")
    pl = parse_placement("".join(f"{name} M{i} {37 * i % 101} {i * 13} 10 10\n" for i in range(n))
                         + "top X0 0 0 200 200\n")
    return design, pl


# -------------------------------------------------------------------- split


def test_split_allocation_and_determinism(small_corpus):
    designs = [d for d, _, _ in small_corpus]
    s = split_dataset(designs, seed=4)
    assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)
    assert sorted(s.train + s.val + s.test) == sorted(d.name for d in designs)
    assert split_dataset(designs, seed=4).to_json() == s.to_json()
    assert split_dataset(designs, seed=5).to_json() != s.to_json()


def test_split_errors(small_corpus):
    designs = [d for d, _, _ in small_corpus]
    with pytest.raises(DatasetError, match="at least 5"):
        split_dataset(designs[:4], 0)
    with pytest.raises(DatasetError, match="duplicate"):
        split_dataset(designs[:5] + designs[:1], 0)


def test_val_test_fingerprints_disjoint_from_train():
    corpus = generate_corpus(GenConfig(seed=8, n_designs=20, shared_cell_prob=0.5))
    examples = build_examples(corpus, TrainConfig())
    split = split_dataset([d for d, _, _ in corpus], 0)
    train, val, test = apply_split(examples, split)
    train_fps = {g.fingerprint for ex in train for g in ex.active_groups()}
    held_fps = {g.fingerprint for ex in val + test for g in ex.active_groups()}
    assert train_fps and held_fps
    assert not train_fps & held_fps
    masked = sum(len(ex.groups) - len(ex.active_groups()) for ex in val + test)
    assert masked > 0, "shared library cells must have been removed from held-out pairs"


def test_fingerprint_ignores_order_and_dummies():
    a, _ = _row_design(4)
    b, _ = _row_design(4, extra="MDUMMY0 vss vss vss vss nch_lvt_mac L=8 NF=2 NFIN=2")
    assert subckt_fingerprint(a, "row") == subckt_fingerprint(b, "row")
    c, _ = _row_design(5)
    assert subckt_fingerprint(a, "row") != subckt_fingerprint(c, "row")


def test_small_subcircuits_contribute_no_pairs():
    design, pl = _row_design(3)
    ex = build_example(design, pl, MatchLabelDB(), TrainConfig())
    assert ex.pair_arrays()[0].shape == (0, 2)
    design, pl = _row_design(4)
    ex = build_example(design, pl, MatchLabelDB(), TrainConfig())
    assert len(ex.pair_arrays()[0]) == 6


def test_large_subcircuits_subsampled_deterministically():
    design, pl = _row_design(25)
    a = build_example(design, pl, MatchLabelDB(), TrainConfig(), seed=1)
    b = build_example(design, pl, MatchLabelDB(), TrainConfig(), seed=1)
    c = build_example(design, pl, MatchLabelDB(), TrainConfig(), seed=2)
    [ga], [gb], [gc] = [[g for g in ex.groups if g.def_name == "row"] for ex in (a, b, c)]
    assert len(ga.members) == 20 and len(ga.pairs) == 190
    np.testing.assert_array_equal(ga.members, gb.members)
    assert not np.array_equal(ga.members, gc.members)


# ---------------------------------------------------------------- training


def test_one_epoch_history(small_corpus, small_words):
    examples, stats = _prepared(small_corpus[:3], small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    res = train_distance(model, examples[:2], examples[2:], TrainConfig(), epochs=1)
    assert len(res.history) == 1 and np.isfinite(res.history[0]["train_loss"])
    assert res.best_epoch == 1


def test_memorizable_corpus_loss_halves(small_corpus, small_words):
    examples, stats = _prepared(small_corpus[:2], small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    res = train_distance(model, examples, [], TrainConfig(patience=100), epochs=50)
    first, last = res.history[0]["train_loss"], res.history[-1]["train_loss"]
    assert len(res.history) == 50
    assert last <= 0.5 * first


def test_best_epoch_parameters_restored(small_corpus, small_words):
    examples, stats = _prepared(small_corpus[:5], small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    res = train_distance(model, examples[:3], examples[3:], TrainConfig(lr=1e-2, patience=4), epochs=15)
    vals = [h["val_loss"] for h in res.history]
    assert res.best_val == min(vals)
    assert res.history[res.best_epoch - 1]["val_loss"] == res.best_val
    assert mean_distance_loss(model, examples[3:]) == res.best_val


def test_training_is_reproducible(small_corpus, small_words):
    def run():
        examples, stats = _prepared(small_corpus[:3], small_words)
        model = TagModel(ModelConfig(**SMALL), stats, small_words)
        res = train_distance(model, examples[:2], examples[2:], TrainConfig(), seed=3, epochs=3)
        return res.history, model.params.state()

    (h1, s1), (h2, s2) = run(), run()
    assert h1 == h2
    for k in s1:
        assert s1[k].tobytes() == s2[k].tobytes()


def test_isomorphic_nodes_diverge_graph_only_norm():
    design = parse_netlist("""\
.GLOBAL vdd vss
.SUBCKT diff inp inn outa outb bias
M0 tail bias vss vss nch_lvt_mac L=20 NF=2 NFIN=4
M1A outa inp tail vss nch_lvt_mac L=20 NF=4 NFIN=4
M1B outb inn tail vss nch_lvt_mac L=20 NF=4 NFIN=4
R1A vdd outa rupolym_m L=100 W=10
R1B vdd outb rupolym_m L=100 W=10
.ENDS
.SUBCKT top a b c d e
X0 a b c d e diff
.ENDS
""", name="sym")
    pl = parse_placement("diff M0 40 0 20 10\ndiff M1A 0 30 20 10\ndiff M1B 80 30 20 10\n"
                         "diff R1A 0 60 10 20\ndiff R1B 90 60 10 20\n")
    ex = build_example(design, pl, MatchLabelDB(), TrainConfig())
    stats = fit_feature_stats([ex])
    prepare([ex], stats, None, 8)
    model = TagModel(ModelConfig(use_text=False, use_attention=False, **dict(SMALL, text_dim=8)), stats)
    with pytest.raises(TrainingDivergedError, match="sub-circuit diff"):
        train_distance(model, [ex], [], TrainConfig(), epochs=1)


def test_empty_training_split_rejected(small_words):
    design, pl = _row_design(3)
    ex = build_example(design, pl, MatchLabelDB(), TrainConfig())
    stats = fit_feature_stats([ex])
    prepare([ex], stats, small_words, 128)
    with pytest.raises(DatasetError):
        train_distance(TagModel(ModelConfig(**SMALL), stats, small_words), [ex], [], TrainConfig(), epochs=1)


def test_threaded_evaluation_matches_serial(small_corpus, small_words):
    examples, stats = _prepared(small_corpus, small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    a = evaluate_distance(model, examples, threads=1)
    b = evaluate_distance(model, examples, threads=4)
    assert a.to_json() == b.to_json()


# --------------------------------------------------------------- fine-tune


def _embedding_state(model):
    return {k: model.params[k].data.copy() for k in model.embedding_names()}


@pytest.mark.parametrize("task", ["match", "hpwl"])
def test_frozen_finetune_touches_only_head(task, small_corpus, small_words):
    examples, stats = _prepared(small_corpus, small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    before = _embedding_state(model)
    head_before = {k: model.params[k].data.copy() for k in model.head_names(task)}
    cfg = TrainConfig(finetune_epochs=3)
    fn = finetune_matching if task == "match" else finetune_hpwl
    res = fn(model, examples[:5], examples[5:7], examples[7:], cfg, frozen=True)
    for k, v in before.items():
        assert model.params[k].data.tobytes() == v.tobytes(), k
    assert any(not np.array_equal(model.params[k].data, v) for k, v in head_before.items())
    assert res.metrics.kind == ("classification" if task == "match" else "regression")
    assert 1 <= res.best_epoch <= 3


def test_unfrozen_finetune_moves_embeddings(small_corpus, small_words):
    examples, stats = _prepared(small_corpus, small_words)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    before = _embedding_state(model)
    finetune_matching(model, examples[:5], examples[5:7], examples[7:], TrainConfig(finetune_epochs=2),
                      frozen=False)
    assert any(not np.array_equal(model.params[k].data, v) for k, v in before.items())


def test_finetune_lr_grid_keeps_lowest_validation_loss(small_corpus, small_words):
    examples, stats = _prepared(small_corpus, small_words)
    split = examples[:5], examples[5:7], examples[7:]
    runs = {}
    for lr in (1e-4, 1e-2):
        m = TagModel(ModelConfig(**SMALL), stats, small_words)
        runs[lr] = finetune_hpwl(m, *split, TrainConfig(finetune_epochs=3, finetune_lrs=(lr,)))
        runs[lr].weights = m.params.state()
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    res = finetune_hpwl(model, *split, TrainConfig(finetune_epochs=3, finetune_lrs=(1e-4, 1e-2)))
    winner = min(runs.values(), key=lambda r: r.best_val)
    assert res.lr == winner.lr and res.best_val == winner.best_val
    assert res.metrics.values == winner.metrics.values  # every candidate starts from the same weights
    for k, v in winner.weights.items():
        assert model.params[k].data.tobytes() == v.tobytes(), k
    with pytest.raises(ValueError):
        finetune_hpwl(model, *split, TrainConfig(finetune_lrs=()))


def test_match_pairs_balanced_and_reseeded(small_corpus):
    examples = build_examples(small_corpus, TrainConfig())
    ex = next(e for e in examples if any(g.positives for g in e.groups))
    pairs, y = match_pairs(ex, np.random.default_rng(0))
    npos = int(y.sum())
    assert npos > 0 and len(y) - npos <= npos
    groups = {frozenset(p) for g in ex.groups for p in g.pairs.tolist()}
    assert all(frozenset(p) in groups for p in pairs.tolist())
    pos = {frozenset(p) for g in ex.groups for p in g.positives}
    assert all((frozenset(p) in pos) == bool(t) for p, t in zip(pairs.tolist(), y))
    draws = {tuple(map(tuple, match_pairs(ex, np.random.default_rng(s))[0].tolist())) for s in range(6)}
    assert len(draws) > 1


def test_all_positive_labels_flag_fpr(small_words):
    design, pl = _row_design(4, name="quad")
    names = [f"M{i}" for i in range(4)]
    text = "".join(f"quad {a} {b} symmetry\n" for k, a in enumerate(names) for b in names[k + 1:])
    labels = parse_labels(text)
    ex = build_example(design, pl, labels, TrainConfig())
    stats = fit_feature_stats([ex])
    prepare([ex], stats, small_words, 128)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    res = finetune_matching(model, [ex], [ex], [ex], TrainConfig(finetune_epochs=2))
    assert res.metrics.fpr == 0.0 and "fpr" in res.metrics.undefined
    assert res.metrics.fp == 0 and res.metrics.tn == 0


def test_finetune_without_labels_rejected(small_words):
    design, pl = _row_design(5)
    ex = build_example(design, pl, MatchLabelDB(), TrainConfig())
    stats = fit_feature_stats([ex])
    prepare([ex], stats, small_words, 128)
    model = TagModel(ModelConfig(**SMALL), stats, small_words)
    with pytest.raises(DatasetError, match="no labeled"):
        finetune_matching(model, [ex], [ex], [ex], TrainConfig(finetune_epochs=1))


def test_subset_size_and_determinism():
    items = list(range(60))
    a = subset(items, 100, 0.1, seed=3)
    assert len(a) == 10 and a == sorted(a)
    assert a == subset(items, 100, 0.1, seed=3)
    assert len(subset(items[:4], 100, 0.1, seed=3)) == 4

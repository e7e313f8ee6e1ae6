import json

import numpy as np
import pytest

from tagnet.checkpoint import (
    MAGIC, CheckpointError, load_checkpoint, load_words, read_extra, save_checkpoint, save_words,
)
from tagnet.features import FeatureStats
from tagnet.model import ModelConfig, TagModel

SMALL = dict(text_dim=128, gnn_hidden=8, gnn_out=4, dim=8, heads=2, head_dim=4, fc_hidden=8, metric_dim=8)


@pytest.fixture
def model(small_words):
    stats = FeatureStats(np.linspace(-1, 1, 9), np.linspace(0.5, 2, 9))
    m = TagModel(ModelConfig(init_seed=3, **SMALL), stats, small_words)
    rng = np.random.default_rng(0)
    for name in m.params.names():
        m.params[name].data[...] = rng.normal(size=m.params[name].shape) / 3  # full-precision values
    return m


def test_round_trip_is_bit_exact(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, extra={"note": "x"})
    again = load_checkpoint(path)
    assert again.config == model.config
    assert sorted(again.params.names()) == sorted(model.params.names())
    for n in model.params.names():
        assert again.params[n].data.tobytes() == model.params[n].data.tobytes(), n
    assert again.stats.mean.tobytes() == model.stats.mean.tobytes()
    assert again.stats.std.tobytes() == model.stats.std.tobytes()
    assert again.words.input.tobytes() == model.words.input.tobytes()
    assert again.words.output.tobytes() == model.words.output.tobytes()
    assert again.words.vocab == model.words.vocab
    assert read_extra(path) == {"note": "x"}


def test_save_is_deterministic(model, tmp_path):
    save_checkpoint(model, tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_manifest_layout(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    lines = path.read_bytes().split(b"\n", 2)
    assert lines[0] == f"{MAGIC} 1".encode()
    manifest = json.loads(lines[1])
    offsets = [t["offset"] for t in manifest["tensors"]]
    assert offsets == sorted(offsets) and offsets[0] == 0
    sizes = [int(np.prod(t["shape"])) * np.dtype(t["dtype"]).itemsize for t in manifest["tensors"]]
    assert offsets[-1] + sizes[-1] == len(lines[2])
    assert all(t["dtype"].startswith("<") for t in manifest["tensors"])


def test_version_mismatch_rejected(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    (tmp_path / "v2").write_bytes(raw.replace(f"{MAGIC} 1".encode(), f"{MAGIC} 2".encode(), 1))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v2")


@pytest.mark.parametrize("mangle", [
    lambda raw: b"garbage\n" + raw,
    lambda raw: raw[:-16],
    lambda raw: raw.replace(b'"version": 1', b'"version": 7', 1),
])
def test_corrupt_files_rejected(model, tmp_path, mangle):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(mangle(path.read_bytes()))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_words_only_checkpoint(small_words, tmp_path):
    path = tmp_path / "w.ckpt"
    save_words(small_words, path, extra={"sentences": 3})
    w = load_words(path)
    assert w.input.tobytes() == small_words.input.tobytes() and w.vocab == small_words.vocab
    np.testing.assert_array_equal(w.embed("nch_lvt_mac"), small_words.embed("nch_lvt_mac"))
    with pytest.raises(CheckpointError, match="not a trained model"):
        load_checkpoint(path)


def test_loaded_model_predicts_identically(model, ota_design, tmp_path):
    from tagnet.features import normalize, raw_features
    from tagnet.graph import build_graph
    from tagnet.model import graph_inputs
    from tagnet.textembed import instance_text_features

    g = build_graph(ota_design)
    inp = graph_inputs(g, normalize(raw_features(ota_design, g), model.stats),
                       instance_text_features(g, model.words), 128)
    save_checkpoint(model, tmp_path / "m")
    again = load_checkpoint(tmp_path / "m")
    assert again.embed(inp).data.tobytes() == model.embed(inp).data.tobytes()

"""Run configuration: every tunable default in one JSON-serializable tree."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datagen import GenConfig
from .features import GeometryConfig
from .model import ModelConfig
from .netlist import THICK_GATE_MARKERS
from .textembed import TextConfig


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 20
    batch_subckts: int = 8
    min_members: int = 4
    max_members: int = 20
    split: tuple = (0.6, 0.2, 0.2)
    finetune_fraction: float = 0.1
    finetune_epochs: int = 300
    finetune_lrs: tuple = (3e-4, 1e-3, 3e-3)  # grid; best validation loss wins
    finetune_patience: int = 40


@dataclass
class Config:
    seed: int = 0
    corpus: str | None = None
    extra_text: str | None = None
    thick_gate_markers: tuple = THICK_GATE_MARKERS
    gen: GenConfig = field(default_factory=GenConfig)
    text: TextConfig = field(default_factory=TextConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> dict:
        d = asdict(self)
        d["gen"] = self.gen.to_json()
        d["thick_gate_markers"] = list(self.thick_gate_markers)
        d["train"]["split"] = list(self.train.split)
        d["train"]["finetune_lrs"] = list(self.train.finetune_lrs)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k in ("seed", "corpus", "extra_text")}
        if "thick_gate_markers" in d:
            kw["thick_gate_markers"] = tuple(d["thick_gate_markers"])
        if "gen" in d:
            kw["gen"] = GenConfig.from_json(d["gen"])
        if "text" in d:
            kw["text"] = TextConfig(**d["text"])
        if "geometry" in d:
            kw["geometry"] = GeometryConfig(**d["geometry"])
        if "model" in d:
            kw["model"] = ModelConfig(**d["model"])
        if "train" in d:
            t = dict(d["train"])
            for k in ("split", "finetune_lrs"):
                if k in t:
                    t[k] = tuple(t[k])
            kw["train"] = TrainConfig(**t)
        return cls(**kw)


def load_config(path) -> Config:
    return Config.from_json(json.loads(Path(path).read_text()))


def dump_config(cfg: Config) -> str:
    return json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n"

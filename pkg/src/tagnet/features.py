"""Graph node features: kind one-hot, geometry proxies, and sizing parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import CircuitGraph
from .netlist import Design, DeviceKind

NUM_KINDS = 7
GEOM = ("width", "height", "area")
SIZING = ("L", "NF", "NFIN", "R_L", "R_W", "C_M")
NUMERIC = GEOM + SIZING
FEATURE_DIM = NUM_KINDS + len(NUMERIC)


class FeatureError(ValueError):
    pass


@dataclass
class GeometryConfig:
    unit_fin_pitch: float = 1.0
    gate_overhead: float = 1.0
    unit_cap_area: float = 1.0


def _device_row(inst, geo: GeometryConfig) -> np.ndarray:
    row = np.zeros(FEATURE_DIM)
    row[inst.kind.value] = 1.0
    p = inst.params
    try:
        if inst.kind.is_transistor:
            w = p["NF"] * p["NFIN"] * geo.unit_fin_pitch
            h = p["L"] + geo.gate_overhead
            sizing = (p["L"], p["NF"], p["NFIN"], 0, 0, 0)
        elif inst.kind is DeviceKind.Resistor:
            w, h = p["W"], p["L"]
            sizing = (0, 0, 0, p["L"], p["W"], 0)
        else:
            w = h = math.sqrt(p["M"] * geo.unit_cap_area)
            sizing = (0, 0, 0, 0, 0, p["M"])
    except KeyError as e:
        raise FeatureError(f"{inst.name}: missing parameter {e.args[0]}") from None
    row[NUM_KINDS:NUM_KINDS + 3] = (w, h, w * h)
    row[NUM_KINDS + 3:] = sizing
    return row


def raw_features(design: Design, graph: CircuitGraph, geo: GeometryConfig | None = None) -> np.ndarray:
    """``(num_nodes, 16)`` raw feature matrix in node-id order.

    Sub-circuit nodes take the summed area of their children (square aspect)
    and the mean of their children's sizing fields.
    """
    geo = geo or GeometryConfig()
    x = np.zeros((graph.num_nodes, FEATURE_DIM))
    lookup = {}
    for sub in design.subckts.values():
        for inst in sub.instances:
            lookup[(sub.name, inst.name)] = inst
    # children are always numbered after their parent, so fill bottom-up
    for node in reversed(graph.nodes):
        if node.kind is DeviceKind.SubCircuit:
            kids = graph.membership.get(node.id, [])
            row = np.zeros(FEATURE_DIM)
            row[DeviceKind.SubCircuit.value] = 1.0
            if kids:
                area = x[kids, NUM_KINDS + 2].sum()
                side = math.sqrt(area)
                row[NUM_KINDS:NUM_KINDS + 3] = (side, side, area)
                row[NUM_KINDS + 3:] = x[kids, NUM_KINDS + 3:].mean(axis=0)
            x[node.id] = row
        else:
            x[node.id] = _device_row(lookup[(node.owner, node.name)], geo)
    return x


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_stats(corpus, eps: float = 1e-12) -> FeatureStats:
    """Per-field z-score statistics over the numeric columns of all matrices."""
    mats = [np.atleast_2d(m) for m in corpus]
    if not mats or sum(m.shape[0] for m in mats) == 0:
        raise FeatureError("cannot fit feature statistics on an empty corpus")
    x = np.concatenate(mats)[:, NUM_KINDS:]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < eps, 1.0, std)
    return FeatureStats(mean, std)


def normalize(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    out[..., NUM_KINDS:] = (out[..., NUM_KINDS:] - stats.mean) / stats.std
    return out


def denormalize(x: np.ndarray, stats: FeatureStats) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    out[..., NUM_KINDS:] = out[..., NUM_KINDS:] * stats.std + stats.mean
    return out

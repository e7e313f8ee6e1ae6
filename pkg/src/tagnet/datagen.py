"""Synthetic hierarchical AMS-like designs with planted layout conventions.

Leaf cells are assembled from blocks that each carry a naming and placement
rule: mirrored differential pairs ``M<k>A/M<k>B`` (symmetry), indexed driver
arrays ``MSEG<i>/MINV<i>`` at constant pitch (interdigitation), and 2x2
current-mirror quads (common-centroid). PMOS rows sit above NMOS rows and
passives at the bottom. Parents place their children on a row-major grid, or
as a row of identical ``XSEG<i>`` segments.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .netlist import (
    Design, MatchLabelDB, PlacementDB, Rect, format_labels, format_netlist, format_placement,
    parse_netlist,
)

ROW_GAP = 20
ROW_SPACING = 100
PORTS = ("in1", "in2", "out", "bias")


class GenConfigError(ValueError):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    n_designs: int = 300
    min_instances: int = 4
    max_instances: int = 20
    depths: tuple = (2, 3)
    device_types: tuple = ("nch_lvt_mac", "nch_ulvt_mac", "pch_lvt_mac", "pch_ulvt_mac", "rupolym_m", "cfmom_2t")
    pattern_weights: dict = field(default_factory=lambda: {
        "symmetry": 0.4, "interdigitation": 0.3, "common-centroid": 0.3})
    min_children: int = 2
    max_children: int = 5
    shared_cell_prob: float = 0.1
    dummy_prob: float = 0.3
    segment_parent_prob: float = 0.25

    def validate(self) -> None:
        if self.n_designs < 1:
            raise GenConfigError("n_designs must be >= 1")
        if not 2 <= self.min_instances <= self.max_instances:
            raise GenConfigError("need 2 <= min_instances <= max_instances")
        if self.max_instances < 5:
            raise GenConfigError("max_instances < 5 cannot hold any block")
        if not self.depths or any(d not in (2, 3) for d in self.depths):
            raise GenConfigError("depths must be drawn from {2, 3}")
        if not 1 <= self.min_children <= self.max_children:
            raise GenConfigError("bad child count range")
        w = self.pattern_weights
        if set(w) - {"symmetry", "interdigitation", "common-centroid"} or any(v < 0 for v in w.values()):
            raise GenConfigError(f"bad pattern weights {w}")
        if abs(sum(w.values()) - 1.0) > 1e-9:
            raise GenConfigError("pattern weights must sum to 1")
        kinds = self._type_pools()
        if not all(kinds.values()):
            raise GenConfigError("device_types needs nch, pch, resistor and capacitor types")

    def _type_pools(self) -> dict:
        t = self.device_types
        return {
            "n": [x for x in t if x.startswith("nch")],
            "p": [x for x in t if x.startswith("pch")],
            "r": [x for x in t if x.startswith("r")],
            "c": [x for x in t if x.startswith("c")],
        }

    def to_json(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["device_types"] = list(self.device_types)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "depths" in d:
            d["depths"] = tuple(d["depths"])
        if "device_types" in d:
            d["device_types"] = tuple(d["device_types"])
        return cls(**d)


# ------------------------------------------------------------------ cells


@dataclass
class Cell:
    name: str
    ports: tuple
    lines: list = field(default_factory=list)  # netlist instance lines
    rows: list = field(default_factory=list)  # top-to-bottom [(inst, w, h)]
    labels: list = field(default_factory=list)  # (a, b, pattern)
    size: tuple = (0, 0)
    rects: dict = field(default_factory=dict)
    pattern: str = ""
    children: list = field(default_factory=list)  # child Cells (parents only)
    count: int = 0  # non-excluded instances


def _mos(name, d, g, s, b, typ, L, nf, nfin):
    line = f"{name} {d} {g} {s} {b} {typ} L={L} NF={nf} NFIN={nfin}"
    return line, 10 * nf * nfin, 60 + 4 * L


def _place_rows(rows):
    """Center every row about the vertical axis; rows listed top to bottom."""
    width = max(sum(w for _, w, _ in r) + ROW_GAP * (len(r) - 1) for r in rows)
    heights = [max(h for _, _, h in r) for r in rows]
    total = sum(heights) + ROW_SPACING * (len(rows) - 1)
    rects = {}
    y_top = total
    for r, rh in zip(rows, heights):
        y_row = y_top - rh
        rw = sum(w for _, w, _ in r) + ROW_GAP * (len(r) - 1)
        x = (width - rw) // 2
        for name, w, h in r:
            rects[name] = Rect(x, y_row + (rh - h) // 2, w, h)
            x += w + ROW_GAP
        y_top = y_row - ROW_SPACING
    return rects, (width, total)


class _LeafBuilder:
    def __init__(self, rng, pools):
        self.rng = rng
        self.pools = pools
        self.lines = []
        self.prow = []  # PMOS rows
        self.nrow = []  # NMOS rows
        self.xrow = []  # passive rows
        self.labels = []
        self.count = 0

    def pick(self, pool):
        return pool[int(self.rng.integers(len(pool)))]

    def size(self):
        r = self.rng
        return int(r.choice([8, 12, 16])), int(r.choice([2, 4])), int(r.choice([2, 4]))

    def add(self, line):
        self.lines.append(line)
        self.count += 1

    def symmetry(self, budget):
        """Differential pairs stacked from a tail device; PMOS pairs on top."""
        r = self.rng
        max_pairs = max(1, min(4, (budget - 1) // 2))
        npairs = int(r.integers(1, max_pairs + 1))
        n_n = int(r.integers(1, npairs + 1))
        n_p = npairs - n_n
        ntype, ptype = self.pick(self.pools["n"]), self.pick(self.pools["p"])
        L, nf, nfin = self.size()
        line, w, h = _mos("M0", "tail", "bias", "vss", "vss", ntype, L, nf * 2, nfin)
        self.add(line)
        tail_row = [("M0", w, h)]
        prev = {"a": "tail", "b": "tail"}
        final = {"a": "outa", "b": "out"}
        k = 1
        nrows = []
        for j in range(n_n):
            L, nf, nfin = self.size()
            row = []
            for side in "ab":
                gate = ("in1" if side == "a" else "in2") if j == 0 else f"vb{k}"
                drain = final[side] if (j == n_n - 1 and n_p == 0) else f"x{k}{side}"
                line, w, h = _mos(f"M{k}{side.upper()}", drain, gate, prev[side], "vss", ntype, L, nf, nfin)
                self.add(line)
                row.append((f"M{k}{side.upper()}", w, h))
                prev[side] = drain
            self.labels.append((f"M{k}A", f"M{k}B", "symmetry"))
            nrows.append(row)
            k += 1
        prows = []
        mirror_gate = prev["a"]
        for j in range(n_p):
            L, nf, nfin = self.size()
            row = []
            for side in "ab":
                src = "vdd" if j == n_p - 1 else f"y{k}{side}"
                gate = mirror_gate if j == 0 else f"vp{k}"
                line, w, h = _mos(f"M{k}{side.upper()}", prev[side], gate, src, "vdd", ptype, L, nf, nfin)
                self.add(line)
                row.append((f"M{k}{side.upper()}", w, h))
                prev[side] = src
            self.labels.append((f"M{k}A", f"M{k}B", "symmetry"))
            prows.append(row)
            k += 1
        self.prow.extend(reversed(prows))  # last P pair (at vdd) on top
        self.nrow.extend(reversed(nrows))
        self.nrow.append(tail_row)
        return "symmetry"

    def interdigitation(self, budget):
        r = self.rng
        n = int(r.integers(2, max(2, min(8, budget // 2)) + 1))
        ptype, ntype = self.pick(self.pools["p"]), self.pick(self.pools["n"])
        L, nf, nfin = self.size()
        top, bot = [], []
        for i in range(n):
            line, w, h = _mos(f"MSEG{i}", "out", f"en_pu<{i}>", "vdd", "vdd", ptype, L, nf, nfin)
            self.add(line)
            top.append((f"MSEG{i}", w, h))
        L, nf, nfin = self.size()
        for i in range(n):
            line, w, h = _mos(f"MINV{i}", "out", f"en_pd<{i}>", "vss", "vss", ntype, L, nf, nfin)
            self.add(line)
            bot.append((f"MINV{i}", w, h))
        for i in range(n - 1):
            self.labels.append((f"MSEG{i}", f"MSEG{i + 1}", "interdigitation"))
            self.labels.append((f"MINV{i}", f"MINV{i + 1}", "interdigitation"))
        self.prow.append(top)
        self.nrow.append(bot)
        return "interdigitation"

    def common_centroid(self, budget):
        ntype = self.pick(self.pools["n"])
        L, nf, nfin = self.size()
        rows = {}
        for name, d in (("MCA0", "ia"), ("MCA1", "ia"), ("MCB0", "ib"), ("MCB1", "ib"), ("MCR", "bias")):
            line, w, h = _mos(name, d, "bias", "vss", "vss", ntype, L, nf, nfin)
            self.add(line)
            rows[name] = (name, w, h)
        self.nrow.append([rows["MCA0"], rows["MCB0"]])
        self.nrow.append([rows["MCB1"], rows["MCA1"]])
        self.nrow.append([rows["MCR"]])
        self.labels.append(("MCA0", "MCA1", "common-centroid"))
        self.labels.append(("MCB0", "MCB1", "common-centroid"))
        return "common-centroid"

    def passives(self, budget):
        r = self.rng
        n = int(r.integers(1, min(3, budget) + 1))
        rtype, ctype = self.pick(self.pools["r"]), self.pick(self.pools["c"])
        row = []
        if r.random() < 0.5:
            for i in range(n):
                L, W = int(r.choice([200, 400, 800])), int(r.choice([100, 200]))
                self.add(f"R{i} r{i} r{i + 1} {rtype} L={L} W={W}")
                row.append((f"R{i}", W, L // 4))
        else:
            for i in range(n):
                m = int(r.integers(1, 5))
                self.add(f"C{i} out c{i} {ctype} M={m}")
                row.append((f"C{i}", 40 + 20 * m, 40 + 20 * m))
        self.xrow.append(row)

    def bias(self, budget):
        n = int(self.rng.integers(1, min(2, budget) + 1))
        ptype = self.pick(self.pools["p"])
        L, nf, nfin = self.size()
        row = []
        for i in range(n):
            line, w, h = _mos(f"MB{i}", "bias", "bias", "vdd", "vdd", ptype, L, nf, nfin)
            self.add(line)
            row.append((f"MB{i}", w, h))
        self.prow.insert(0, row)

    def dummies(self):
        r = self.rng
        rows = self.nrow if self.nrow else self.prow
        row = rows[int(r.integers(len(rows)))]
        _, w, h = row[0]
        ntype = self.pick(self.pools["n"])
        self.lines.append(f"MDUMMY0 vss vss vss vss {ntype} L=8 NF=2 NFIN=2")
        self.lines.append(f"MDUMMY1 vss vss vss vss {ntype} L=8 NF=2 NFIN=2")
        row.insert(0, ("MDUMMY0", w, h))
        row.append(("MDUMMY1", w, h))
        if r.random() < 0.5:
            ctype = self.pick(self.pools["c"])
            self.lines.append(f"CDECAP0 vdd vss {ctype} M=2")
            self.xrow.append([("CDECAP0", 80, 80)])


def make_leaf(name: str, rng, cfg: GenConfig, pattern: str | None = None) -> Cell:
    pools = cfg._type_pools()
    b = _LeafBuilder(rng, pools)
    if pattern is None:
        pats = sorted(cfg.pattern_weights)
        pattern = pats[int(rng.choice(len(pats), p=[cfg.pattern_weights[p] for p in pats]))]
    cap = cfg.max_instances
    {"symmetry": b.symmetry, "interdigitation": b.interdigitation,
     "common-centroid": b.common_centroid}[pattern](cap)
    if cap - b.count >= 1 and rng.random() < 0.5:
        b.bias(cap - b.count)
    if cap - b.count >= 1 and rng.random() < 0.5:
        b.passives(cap - b.count)
    while b.count < cfg.min_instances:
        b.passives(cfg.min_instances - b.count)
    if rng.random() < cfg.dummy_prob:
        b.dummies()
    rows = [r for r in b.prow + b.nrow + b.xrow if r]
    rects, size = _place_rows(rows)
    return Cell(name, PORTS, b.lines, rows, b.labels, size, rects, pattern, count=b.count)


_CHILD_PREFIX = {"symmetry": "OTA", "interdigitation": "DRV", "common-centroid": "MIR", "block": "BLK"}


def make_parent(name: str, children: list, rng, segments: bool = False) -> Cell:
    """Instantiate ``children`` (Cells) on a grid, or as a segment row."""
    lines, rects, labels = [], {}, []
    n = len(children)
    names = []
    for i, child in enumerate(children):
        inst = f"XSEG{i}" if segments else f"X{_CHILD_PREFIX[child.pattern]}{i}"
        names.append(inst)
        in1 = "in1" if i == 0 else f"n{i}"
        out = "out" if i == n - 1 else f"n{i + 1}"
        lines.append(f"{inst} {in1} in2 {out} bias {child.name}")
    if segments:
        cw = max(c.size[0] for c in children)
        x = 0
        for inst, child in zip(names, children):
            rects[inst] = Rect(x, 0, child.size[0], child.size[1])
            x += cw + ROW_GAP
        for i in range(n - 1):
            labels.append((names[i], names[i + 1], "interdigitation"))
    else:
        cols = math.ceil(math.sqrt(n))
        nrows = math.ceil(n / cols)
        cw = max(c.size[0] for c in children)
        ch = max(c.size[1] for c in children)
        for i, (inst, child) in enumerate(zip(names, children)):
            r, c = divmod(i, cols)
            rects[inst] = Rect(c * (cw + ROW_SPACING), (nrows - 1 - r) * (ch + ROW_SPACING), child.size[0], child.size[1])
    x1 = max(r.x + r.w for r in rects.values())
    y1 = max(r.y + r.h for r in rects.values())
    return Cell(name, PORTS, lines, [], labels, (x1, y1), rects, "block", list(children), count=n)


# ----------------------------------------------------------------- designs


_LIBRARY_PATTERNS = ("symmetry", "common-centroid")


def _library_cell(k: int, cfg: GenConfig) -> Cell:
    """Cells shared verbatim across designs (exercise train/test de-duplication)."""
    rng = np.random.default_rng(10_000 + k)
    return make_leaf(f"lib_{_LIBRARY_PATTERNS[k % 2]}_{k}", rng, cfg, _LIBRARY_PATTERNS[k % 2])


def generate_design(index: int, cfg: GenConfig):
    rng = np.random.default_rng([cfg.seed, index])
    tag = f"{index:04d}"
    depth = int(rng.choice(list(cfg.depths)))
    leaf_no = [0]
    block_no = [0]

    pats = sorted(cfg.pattern_weights)
    probs = [cfg.pattern_weights[p] for p in pats]

    def leaf():
        if rng.random() < cfg.shared_cell_prob:
            return _library_cell(int(rng.integers(4)), cfg)
        leaf_no[0] += 1
        pattern = pats[int(rng.choice(len(pats), p=probs))]
        return make_leaf(f"{_CHILD_PREFIX[pattern].lower()}{tag}_{leaf_no[0]}", rng, cfg, pattern)

    def parent(name, level):
        if level == 1:  # children are leaves
            if rng.random() < cfg.segment_parent_prob:
                n = int(rng.integers(max(3, cfg.min_children), max(3, cfg.max_children) + 1))
                unit = leaf()
                return make_parent(name, [unit] * n, rng, segments=True)
            n = int(rng.integers(cfg.min_children, cfg.max_children + 1))
            return make_parent(name, [leaf() for _ in range(n)], rng)
        n = int(rng.integers(cfg.min_children, min(3, cfg.max_children) + 1))
        kids = []
        for _ in range(n):
            block_no[0] += 1
            kids.append(parent(f"blk{tag}_{block_no[0]}", level - 1))
        return make_parent(name, kids, rng)

    top = parent(f"top{tag}", depth - 1)
    cells = {}

    def collect(c):
        for ch in c.children:
            collect(ch)
        cells.setdefault(c.name, c)

    collect(top)
    text = [".GLOBAL vdd vss"]
    pl = PlacementDB()
    labels = MatchLabelDB()
    for c in cells.values():
        text.append(" ".join([".SUBCKT", c.name, *c.ports]))
        text.extend(c.lines)
        text.append(".ENDS")
        for inst, r in c.rects.items():
            pl[(c.name, inst)] = r
        if c.labels:
            labels[c.name] = list(c.labels)
    text.append(f".TOP {top.name}")
    name = f"design{tag}"
    design = parse_netlist("\n".join(text) + "\n", name=name)
    return design, pl, labels


def generate_corpus(cfg: GenConfig):
    """List of ``(Design, PlacementDB, MatchLabelDB)``, deterministic in cfg."""
    cfg.validate()
    return [generate_design(i, cfg) for i in range(cfg.n_designs)]


def write_corpus(corpus, out_dir, cfg: GenConfig | None = None) -> Path:
    out = Path(out_dir)
    (out / "designs").mkdir(parents=True, exist_ok=True)
    entries = []
    for design, pl, labels in corpus:
        base = f"designs/{design.name}"
        (out / f"{base}.sp").write_text(format_netlist(design))
        (out / f"{base}.place").write_text(format_placement(pl))
        (out / f"{base}.labels").write_text(format_labels(labels))
        entries.append({"name": design.name, "netlist": f"{base}.sp",
                        "placement": f"{base}.place", "labels": f"{base}.labels"})
    manifest = {"designs": entries}
    if cfg is not None:
        manifest["config"] = cfg.to_json()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out

"""Reading a corpus directory written by :func:`tagnet.datagen.write_corpus`."""
from __future__ import annotations

import json
from pathlib import Path

from .netlist import (
    THICK_GATE_MARKERS, MatchLabelDB, PlacementDB, check_labels, check_placement, parse_labels,
    parse_netlist, parse_placement,
)


def load_design(netlist_path, placement_path=None, labels_path=None, name=None,
                thick_markers=THICK_GATE_MARKERS):
    netlist_path = Path(netlist_path)
    design = parse_netlist(netlist_path.read_text(), name=name or netlist_path.stem, thick_markers=thick_markers)
    pl = parse_placement(Path(placement_path).read_text()) if placement_path else PlacementDB()
    labels = parse_labels(Path(labels_path).read_text()) if labels_path else MatchLabelDB()
    check_placement(design, pl)
    check_labels(design, labels)
    return design, pl, labels


def load_corpus(corpus_dir, thick_markers=THICK_GATE_MARKERS):
    root = Path(corpus_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    out = []
    for e in manifest["designs"]:
        out.append(load_design(root / e["netlist"], root / e["placement"], root / e["labels"],
                               name=e["name"], thick_markers=thick_markers))
    return out

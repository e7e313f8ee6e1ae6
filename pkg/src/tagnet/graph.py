"""Heterogeneous hierarchical instance graph.

One node per non-excluded device and per sub-circuit occurrence (the top
included). Every non-global net of an occurrence becomes a directed clique
over the instances on it, each edge typed by the pin role of its *target*.
Each child points to its parent occurrence through a Hierarchy edge; there
are no parent-to-child edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .netlist import Design, DeviceKind


class EdgeType(Enum):
    Gate = 0
    Drain = 1
    Source = 2
    Passive = 3
    SubCircuitPin = 4
    Hierarchy = 5


_ROLE_TYPES = {"g": EdgeType.Gate, "d": EdgeType.Drain, "s": EdgeType.Source}


def pin_edge_type(kind: DeviceKind, role: str):
    """Edge type induced by a pin, or None for pins that make no edges (bulk)."""
    if kind is DeviceKind.SubCircuit:
        return EdgeType.SubCircuitPin
    if kind in (DeviceKind.Resistor, DeviceKind.Capacitor):
        return EdgeType.Passive
    return _ROLE_TYPES.get(role)


@dataclass(frozen=True)
class Node:
    id: int
    owner: str | None  # definition containing the instance; None for the top
    name: str  # instance name (definition name for the top)
    kind: DeviceKind
    type_name: str
    path: str  # slash-joined occurrence path
    parent: int | None


@dataclass
class CircuitGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)  # (u, v, EdgeType)
    membership: dict = field(default_factory=dict)  # occurrence node id -> member ids
    _adj: dict = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def occurrence_def(self, occ: int) -> str:
        """Definition name of a sub-circuit occurrence node."""
        return self.nodes[occ].type_name

    def _adjacency(self):
        if self._adj is None:
            adj = {i: [] for i in range(len(self.nodes))}
            for u, v, t in self.edges:
                adj[v].append((u, t, "in"))
                adj[u].append((v, t, "out"))
            for lst in adj.values():
                lst.sort(key=lambda e: (e[0], e[1].value, e[2]))
            self._adj = adj
        return self._adj


def build_graph(design: Design) -> CircuitGraph:
    g = CircuitGraph()
    top = design.subckts[design.top]
    g.nodes.append(Node(0, None, top.name, DeviceKind.SubCircuit, top.name, top.name, None))
    _expand(design, g, 0, top.name)
    return g


def _expand(design: Design, g: CircuitGraph, occ: int, def_name: str) -> None:
    sub = design.subckts[def_name]
    base_path = g.nodes[occ].path
    # canonical member order (by instance name) so node ids do not depend on netlist order
    order = sorted((i for i, inst in enumerate(sub.instances) if not inst.excluded),
                   key=lambda i: sub.instances[i].name)
    node_of = {}
    members = []
    for i in order:
        inst = sub.instances[i]
        nid = len(g.nodes)
        g.nodes.append(Node(nid, def_name, inst.name, inst.kind, inst.type_name,
                            f"{base_path}/{inst.name}", occ))
        g.edges.append((nid, occ, EdgeType.Hierarchy))
        node_of[i] = nid
        members.append(nid)
    g.membership[occ] = members

    for net in sorted(sub.nets):
        if design.is_global(net):
            continue
        pins = []
        for i, role in sub.nets[net]:
            if i not in node_of:
                continue
            t = pin_edge_type(sub.instances[i].kind, role)
            if t is not None:
                pins.append((node_of[i], t))
        seen = set()
        for u, _ in pins:
            for v, tv in pins:
                if u != v and (u, v, tv) not in seen:
                    seen.add((u, v, tv))
                    g.edges.append((u, v, tv))

    for i in order:
        inst = sub.instances[i]
        if inst.kind is DeviceKind.SubCircuit:
            _expand(design, g, node_of[i], inst.type_name)


def neighbors(graph: CircuitGraph, node: int):
    """``[(neighbor, EdgeType, 'in'|'out')]`` sorted by neighbor id then type."""
    if not 0 <= node < len(graph.nodes):
        raise KeyError(f"unknown node id {node}")
    return list(graph._adjacency()[node])


def format_graph(graph: CircuitGraph) -> str:
    """Node table followed by ``u v type`` edge lines."""
    lines = ["# nodes: id kind type path"]
    for n in graph.nodes:
        lines.append(f"node {n.id} {n.kind.name} {n.type_name} {n.path}")
    lines.append("# edges: u v type")
    for u, v, t in graph.edges:
        lines.append(f"{u} {v} {t.name}")
    return "\n".join(lines) + "\n"

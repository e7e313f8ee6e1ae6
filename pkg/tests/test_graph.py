from collections import Counter
from itertools import permutations

import pytest

from tagnet.graph import EdgeType, build_graph, format_graph, neighbors, pin_edge_type
from tagnet.netlist import DeviceKind, parse_netlist

from conftest import OTA_NETLIST


def brute_force_edges(design):
    """Independent enumeration: walk every occurrence, every non-global net,
    every ordered pair of distinct learnable pins."""
    role_type = {"g": EdgeType.Gate, "d": EdgeType.Drain, "s": EdgeType.Source}
    edges = set()
    counts = Counter()

    def etype(inst, role):
        if inst.kind is DeviceKind.SubCircuit:
            return EdgeType.SubCircuitPin
        if inst.kind in (DeviceKind.Resistor, DeviceKind.Capacitor):
            return EdgeType.Passive
        return role_type.get(role)

    def visit(path, def_name):
        sub = design.subckts[def_name]
        keep = [i for i in sub.instances
                if not any(tag in i.name.upper()[:6] for tag in ("DUMMY", "DECAP"))]
        for inst in keep:
            edges.add((f"{path}/{inst.name}", path, EdgeType.Hierarchy))
        nets = {}
        for inst in keep:
            for role, net in inst.pins:
                if net in design.globals:
                    continue
                t = etype(inst, role)
                if t is not None:
                    nets.setdefault(net, set()).add((f"{path}/{inst.name}", t))
        for pins in nets.values():
            for (u, _), (v, tv) in permutations(pins, 2):
                if u != v:
                    edges.add((u, v, tv))
        for inst in keep:
            if inst.kind is DeviceKind.SubCircuit:
                visit(f"{path}/{inst.name}", inst.type_name)

    visit(design.top, design.top)
    for e in edges:
        counts[e[2]] += 1
    return edges, counts


def test_node_set(ota_design):
    g = build_graph(ota_design)
    paths = [n.path for n in g.nodes]
    assert paths[0] == "top"
    assert sorted(paths) == sorted([
        "top", "top/MB", "top/R0", "top/XOTA",
        "top/XOTA/C0", "top/XOTA/M0", "top/XOTA/M1A", "top/XOTA/M1B", "top/XOTA/M2A", "top/XOTA/M2B",
    ])
    assert not any("DUMMY" in p for p in paths)


def test_edges_match_brute_force(ota_design):
    g = build_graph(ota_design)
    got = {(g.nodes[u].path, g.nodes[v].path, t) for u, v, t in g.edges}
    assert len(got) == len(g.edges), "no duplicate edges"
    want, counts = brute_force_edges(ota_design)
    assert got == want
    assert Counter(t for _, _, t in g.edges) == counts


def test_hand_counted_edge_types(ota_design):
    c = Counter(t for _, _, t in build_graph(ota_design).edges)
    # 9 non-top nodes each with one child->parent edge
    assert c[EdgeType.Hierarchy] == 9
    # ota: tail {M0.d, M1A.s, M1B.s}; outa {M1A.d, M2A.d, M2A.g, M2B.g}; out {M1B.d, M2B.d, C0};
    # top: mid {XOTA, R0}, vb {XOTA, MB.d, MB.g}; inp/inn/bias/in1/in2/out have one pin each.
    # An edge u->v is typed by v's pin, so a node with two pins on a net gets one edge per type.
    assert c[EdgeType.Source] == 4  # tail: into M1A.s and M1B.s from 2 others each
    assert c[EdgeType.Drain] == 2 + 4 + 4 + 1  # tail, outa, out, vb
    assert c[EdgeType.Gate] == 4 + 1  # outa: into M2A.g, M2B.g; vb: into MB.g
    assert c[EdgeType.Passive] == 2 + 1  # out: into C0; mid: into R0
    assert c[EdgeType.SubCircuitPin] == 1 + 1  # mid and vb into XOTA


def test_hierarchy_points_child_to_parent(ota_design):
    g = build_graph(ota_design)
    for u, v, t in g.edges:
        if t is EdgeType.Hierarchy:
            assert g.nodes[u].parent == v
    assert all(not (t is EdgeType.Hierarchy and g.nodes[v].parent == u) for u, v, t in g.edges)


def test_power_nets_make_no_edges(ota_design):
    g = build_graph(ota_design)
    m2a = next(n.id for n in g.nodes if n.path == "top/XOTA/M2A")
    m2b = next(n.id for n in g.nodes if n.path == "top/XOTA/M2B")
    # M2A and M2B share vdd (source) but only the outa gate net links them
    types = {t for u, v, t in g.edges if (u, v) == (m2a, m2b)}
    assert types == {EdgeType.Gate}


def test_bulk_pins_ignored():
    assert pin_edge_type(DeviceKind.RegularNMOS, "b") is None
    assert pin_edge_type(DeviceKind.Capacitor, "p") is EdgeType.Passive


def test_membership_covers_every_non_top_node_once(ota_design):
    g = build_graph(ota_design)
    members = [m for ms in g.membership.values() for m in ms]
    assert sorted(members) == list(range(1, g.num_nodes))


def test_neighbors_sorted_and_checked(ota_design):
    g = build_graph(ota_design)
    m0 = next(n.id for n in g.nodes if n.path == "top/XOTA/M0")
    nb = neighbors(g, m0)
    assert nb == sorted(nb, key=lambda e: (e[0], e[1].value, e[2]))
    by_path = {(g.nodes[v].path, t, d) for v, t, d in nb}
    assert ("top/XOTA", EdgeType.Hierarchy, "out") in by_path
    assert ("top/XOTA/M1A", EdgeType.Source, "out") in by_path
    assert ("top/XOTA/M1A", EdgeType.Drain, "in") in by_path
    with pytest.raises(KeyError):
        neighbors(g, 999)


def test_node_ids_independent_of_netlist_order():
    lines = OTA_NETLIST.splitlines()
    body = lines[2:9]
    shuffled = "\n".join(lines[:2] + body[::-1] + lines[9:]) + "\n"
    a = build_graph(parse_netlist(OTA_NETLIST))
    b = build_graph(parse_netlist(shuffled))
    assert [n.path for n in a.nodes] == [n.path for n in b.nodes]
    assert sorted(a.edges, key=str) == sorted(b.edges, key=str)


def test_format_graph_lists_everything(ota_design):
    g = build_graph(ota_design)
    text = format_graph(g)
    assert text.count("\nnode ") + text.startswith("node ") == g.num_nodes
    assert len([ln for ln in text.splitlines() if ln and ln[0].isdigit()]) == len(g.edges)


def test_generated_corpus_graphs_match_brute_force(small_corpus):
    for design, _, _ in small_corpus[:4]:
        g = build_graph(design)
        want, _ = brute_force_edges(design)
        assert {(g.nodes[u].path, g.nodes[v].path, t) for u, v, t in g.edges} == want

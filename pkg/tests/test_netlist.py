import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagnet.netlist import (
    DeviceKind, MatchLabelDB, NetlistError, PlacementDB, PlacementError, Rect, check_labels,
    check_placement, classify_transistor, format_labels, format_netlist, format_placement, hpwl,
    net_hpwl, parse_labels, parse_netlist, parse_placement, relative_distance,
)

from conftest import OTA_NETLIST


def test_parses_hierarchy(ota_design):
    d = ota_design
    assert d.top == "top"
    assert set(d.subckts) == {"ota", "top"}
    assert d.globals == frozenset({"vdd", "vss"})
    ota = d.subckts["ota"]
    assert [i.name for i in ota.instances] == ["M0", "M1A", "M1B", "M2A", "M2B", "MDUMMY0", "C0"]
    m1a = ota.instance("M1A")
    assert m1a.kind is DeviceKind.RegularNMOS
    assert dict(m1a.pins) == {"d": "outa", "g": "inp", "s": "tail", "b": "vss"}
    assert m1a.params == {"L": 20, "NF": 4, "NFIN": 4}


def test_subckt_pins_take_port_names(ota_design):
    x = ota_design.subckts["top"].instance("XOTA")
    assert x.kind is DeviceKind.SubCircuit
    assert x.pins == (("inp", "in1"), ("inn", "in2"), ("out", "mid"), ("bias", "vb"))


def test_nets_index_instances(ota_design):
    ota = ota_design.subckts["ota"]
    tail = sorted((ota.instances[i].name, role) for i, role in ota.nets["tail"])
    assert tail == [("M0", "d"), ("M1A", "s"), ("M1B", "s")]


def test_dummy_and_power_classification(ota_design):
    ota = ota_design.subckts["ota"]
    assert ota.instance("MDUMMY0").excluded
    assert not ota.instance("M0").excluded
    assert ota_design.is_global("vdd") and ota_design.is_global("AVSS_1")
    assert not ota_design.is_global("tail")


@pytest.mark.parametrize("type_name,kind", [
    ("nch_lvt_mac", DeviceKind.RegularNMOS),
    ("pch_ulvt_mac", DeviceKind.RegularPMOS),
    ("nch_25_mac", DeviceKind.ThickGateNMOS),
    ("pch_hv_mac", DeviceKind.ThickGatePMOS),
])
def test_transistor_classes(type_name, kind):
    assert classify_transistor(type_name) is kind


def test_format_round_trip(ota_design):
    again = parse_netlist(format_netlist(ota_design), name=ota_design.name)
    assert again.subckts == ota_design.subckts
    assert again.top == ota_design.top and again.globals == ota_design.globals


def test_top_inferred_when_unique():
    d = parse_netlist(OTA_NETLIST.replace(".TOP top\n", ""))
    assert d.top == "top"


@pytest.mark.parametrize("text,needle,line", [
    (".SUBCKT a x\nM0 x x x nch L=1 NF=1\n.ENDS\n", "missing parameter", 2),
    (".SUBCKT a x\nM0 x x x nch L=1 NF=1 NFIN=1\nM0 x x x nch L=1 NF=1 NFIN=1\n.ENDS\n", "duplicate instance", 3),
    (".SUBCKT a x\nX0 x nosuch\n.ENDS\n", "undefined sub-circuit", 2),
    (".SUBCKT b p q\n.ENDS\n.SUBCKT a x\nX0 x b\n.ENDS\n", "arity", 4),
    (".SUBCKT a x\nQ0 x x x npn\n.ENDS\n", "unknown element", 2),
    (".SUBCKT a x\nM0 x x x nch L=a NF=1 NFIN=1\n.ENDS\n", "bad parameter", 2),
    (".FOO\n", "unknown directive", 1),
])
def test_syntax_errors_carry_line_numbers(text, needle, line):
    with pytest.raises(NetlistError, match=needle) as e:
        parse_netlist(text)
    assert e.value.line == line


def test_recursion_rejected():
    text = ".SUBCKT a x\nX0 x b\n.ENDS\n.SUBCKT b x\nX0 x a\n.ENDS\n.TOP a\n"
    with pytest.raises(NetlistError, match="recursive"):
        parse_netlist(text)


# ------------------------------------------------------------ placement


PLACEMENT = """\
ota M0 0 0 10 10
ota M1A 20 0 10 10
ota M1B 40 0 10 10
"""


def test_placement_round_trip():
    db = parse_placement(PLACEMENT)
    assert db[("ota", "M1A")] == Rect(20, 0, 10, 10)
    assert parse_placement(format_placement(db)) == db


@pytest.mark.parametrize("text,needle", [
    ("ota M0 0 0 0 10\n", "non-positive"),
    ("ota M0 0 0 10\n", "malformed"),
    ("ota M0 0 0 1.5 10\n", "non-integer"),
    ("ota M0 0 0 1 1\nota M0 0 0 1 1\n", "duplicate"),
])
def test_placement_errors(text, needle):
    with pytest.raises(PlacementError, match=needle):
        parse_placement(text)


def test_placement_must_name_known_instances(ota_design):
    check_placement(ota_design, parse_placement(PLACEMENT))
    with pytest.raises(PlacementError, match="not in netlist"):
        check_placement(ota_design, parse_placement("ota M9 0 0 1 1\n"))


def test_labels_round_trip_and_checks(ota_design):
    db = parse_labels("ota M1A M1B symmetry\nota M2A M2B symmetry\n")
    assert db.pairs("ota") == {frozenset(("M1A", "M1B")), frozenset(("M2A", "M2B"))}
    assert parse_labels(format_labels(db)) == db
    check_labels(ota_design, db)
    with pytest.raises(PlacementError):
        check_labels(ota_design, MatchLabelDB({"ota": [("M1A", "M9", "symmetry")]}))
    with pytest.raises(PlacementError, match="duplicate"):
        parse_labels("ota M1A M1B symmetry\nota M1B M1A symmetry\n")
    with pytest.raises(PlacementError, match="unknown pattern"):
        parse_labels("ota M1A M1B mirrored\n")


# -------------------------------------------------------------- targets


def test_relative_distance_worked_example():
    db = parse_placement(PLACEMENT)
    # centers (5,5) and (45,5); bbox 50 x 10
    assert relative_distance("ota", "M0", "M1B", db) == pytest.approx(40 / math.hypot(50, 10), abs=1e-15)


def test_relative_distance_needs_placement():
    db = parse_placement(PLACEMENT)
    with pytest.raises(PlacementError):
        relative_distance("ota", "M0", "M7", db)


def test_hpwl_oracle():
    assert hpwl([(0, 0), (3, 4), (1, -2)]) == 3 + 6
    assert hpwl([(2, 2), (2, 2)]) == 0


def test_net_hpwl_normalized(ota_design):
    db = parse_placement(PLACEMENT)
    # tail connects M0, M1A, M1B: centers x 5..45, y all 5
    assert net_hpwl(ota_design.subckts["ota"], "tail", db) == pytest.approx(40 / math.hypot(50, 10))


rects = st.lists(
    st.tuples(st.integers(-500, 500), st.integers(-500, 500), st.integers(1, 80), st.integers(1, 80)),
    min_size=2, max_size=8)


@settings(max_examples=1000)
@given(rects, st.data(), st.integers(-10_000, 10_000), st.integers(-10_000, 10_000), st.integers(1, 7))
def test_relative_distance_properties(rs, data, dx, dy, k):
    names = [f"I{i}" for i in range(len(rs))]
    a, b = data.draw(st.lists(st.sampled_from(names), min_size=2, max_size=2, unique=True))
    base = PlacementDB({("s", n): Rect(*r) for n, r in zip(names, rs)})
    moved = PlacementDB({("s", n): Rect(x + dx, y + dy, w, h) for n, (x, y, w, h) in zip(names, rs)})
    scaled = PlacementDB({("s", n): Rect(k * x, k * y, k * w, k * h) for n, (x, y, w, h) in zip(names, rs)})
    d = relative_distance("s", a, b, base)
    assert 0.0 <= d <= 1.0
    assert d == relative_distance("s", b, a, base)
    assert d == pytest.approx(relative_distance("s", a, b, moved), abs=1e-12)
    assert d == pytest.approx(relative_distance("s", a, b, scaled), abs=1e-12)

"""Hierarchical netlist model, parsers for netlist/placement/label files, and
the normalized layout targets (relative distance, HPWL).

Netlist grammar (line oriented, ``#`` starts a comment)::

    .GLOBAL <net>+
    .SUBCKT <name> <port>*
    M<id> <d> <g> <s> [<b>] <type> L=<int> NF=<int> NFIN=<int>
    R<id> <a> <b> <type> L=<int> W=<int>
    C<id> <a> <b> <type> M=<int>
    X<id> <net>* <subckt-name>
    .ENDS
    .TOP <name>
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

POWER_PREFIXES = ("vdd", "vss", "gnd", "avdd", "avss")
THICK_GATE_MARKERS = ("25", "33", "hv")
EXCLUDED_PREFIXES = ("DUMMY", "DECAP")

REQUIRED_PARAMS = {"M": ("L", "NF", "NFIN"), "R": ("L", "W"), "C": ("M",)}


class NetlistError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PlacementError(ValueError):
    pass


class DeviceKind(Enum):
    RegularNMOS = 0
    RegularPMOS = 1
    ThickGateNMOS = 2
    ThickGatePMOS = 3
    Resistor = 4
    Capacitor = 5
    SubCircuit = 6

    @property
    def is_transistor(self) -> bool:
        return self.value <= 3

    @property
    def is_pmos(self) -> bool:
        return self in (DeviceKind.RegularPMOS, DeviceKind.ThickGatePMOS)


def classify_transistor(type_name: str, thick_markers=THICK_GATE_MARKERS) -> DeviceKind:
    t = type_name.lower()
    pmos = "pch" in t or "pmos" in t or (t.startswith("p") and "nch" not in t and "nmos" not in t)
    thick = any(m in t for m in thick_markers)
    if pmos:
        return DeviceKind.ThickGatePMOS if thick else DeviceKind.RegularPMOS
    return DeviceKind.ThickGateNMOS if thick else DeviceKind.RegularNMOS


TRANSISTOR_ROLES = ("d", "g", "s", "b")
PASSIVE_ROLES = ("p", "n")


@dataclass(frozen=True)
class Instance:
    name: str
    kind: DeviceKind
    type_name: str
    pins: tuple  # ((role, net), ...)
    params: dict = field(default_factory=dict, hash=False, compare=True)

    @property
    def excluded(self) -> bool:
        """Dummy and decap devices are kept in the netlist but not learned on."""
        return is_excluded(self.name, self.type_name, self.kind)

    def nets(self):
        return [n for _, n in self.pins]


def is_excluded(name: str, type_name: str, kind: DeviceKind = None) -> bool:
    if kind is DeviceKind.SubCircuit:
        return False
    up = name.upper()
    if up.startswith(EXCLUDED_PREFIXES) or up[1:].startswith(EXCLUDED_PREFIXES):
        return True
    t = type_name.lower()
    return "dummy" in t or "decap" in t


@dataclass
class SubCircuitDef:
    name: str
    ports: tuple
    instances: list = field(default_factory=list)
    nets: dict = field(default_factory=dict)  # net -> [(instance index, role)]

    def index(self, name: str) -> int:
        for i, inst in enumerate(self.instances):
            if inst.name == name:
                return i
        raise KeyError(name)

    def instance(self, name: str) -> Instance:
        return self.instances[self.index(name)]


@dataclass
class Design:
    name: str
    subckts: dict
    top: str
    globals: frozenset = frozenset()

    def is_global(self, net: str) -> bool:
        return net in self.globals or net.lower().startswith(POWER_PREFIXES)

    def walk(self):
        """Yield ``(path, def)`` for every sub-circuit occurrence, top first."""
        stack = [((), self.top)]
        while stack:
            path, name = stack.pop(0)
            sub = self.subckts[name]
            yield path, sub
            for inst in sub.instances:
                if inst.kind is DeviceKind.SubCircuit:
                    stack.append((path + (inst.name,), inst.type_name))


# ------------------------------------------------------------------ parsing

_PARAM = re.compile(r"^([A-Za-z]+)=(-?\d+)$")


def _strip(line: str) -> str:
    i = line.find("#")
    return (line if i < 0 else line[:i]).strip()


def parse_netlist(text: str, name: str = "design", thick_markers=THICK_GATE_MARKERS) -> Design:
    globals_: set = set()
    subckts: dict = {}
    top = None
    current = None
    x_refs = []  # (subckt, instance, line)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        tok = line.split()
        head = tok[0].upper()
        if head == ".GLOBAL":
            if len(tok) < 2:
                raise NetlistError(".GLOBAL needs at least one net", lineno)
            globals_.update(tok[1:])
        elif head == ".SUBCKT":
            if current is not None:
                raise NetlistError("nested .SUBCKT", lineno)
            if len(tok) < 2:
                raise NetlistError(".SUBCKT needs a name", lineno)
            if tok[1] in subckts:
                raise NetlistError(f"duplicate sub-circuit {tok[1]!r}", lineno)
            if len(set(tok[2:])) != len(tok[2:]):
                raise NetlistError(f"duplicate port in {tok[1]!r}", lineno)
            current = SubCircuitDef(tok[1], tuple(tok[2:]))
        elif head == ".ENDS":
            if current is None:
                raise NetlistError(".ENDS without .SUBCKT", lineno)
            subckts[current.name] = current
            current = None
        elif head == ".TOP":
            if len(tok) != 2:
                raise NetlistError(".TOP takes exactly one name", lineno)
            top = tok[1]
        elif head.startswith("."):
            raise NetlistError(f"unknown directive {tok[0]}", lineno)
        else:
            if current is None:
                raise NetlistError("instance outside .SUBCKT", lineno)
            inst = _parse_instance(tok, lineno, thick_markers)
            if any(i.name == inst.name for i in current.instances):
                raise NetlistError(f"duplicate instance name {inst.name!r} in {current.name!r}", lineno)
            if inst.kind is DeviceKind.SubCircuit:
                x_refs.append((current, inst, lineno))
            current.instances.append(inst)
    if current is not None:
        raise NetlistError(f"missing .ENDS for {current.name!r}")
    for sub, inst, lineno in x_refs:
        ref = subckts.get(inst.type_name)
        if ref is None:
            raise NetlistError(f"undefined sub-circuit {inst.type_name!r}", lineno)
        if len(ref.ports) != len(inst.pins):
            raise NetlistError(
                f"port-arity mismatch for {inst.name}: {len(inst.pins)} nets, {inst.type_name} has {len(ref.ports)} ports",
                lineno)
    if x_refs:
        for sub, inst, _ in x_refs:
            ref = subckts[inst.type_name]
            pins = tuple((port, net) for port, (_, net) in zip(ref.ports, inst.pins))
            sub.instances[sub.index(inst.name)] = Instance(inst.name, inst.kind, inst.type_name, pins, {})
    if top is None:
        used = {i.type_name for s in subckts.values() for i in s.instances if i.kind is DeviceKind.SubCircuit}
        roots = [n for n in subckts if n not in used]
        if len(roots) != 1:
            raise NetlistError("no .TOP given and top-level sub-circuit is ambiguous")
        top = roots[0]
    if top not in subckts:
        raise NetlistError(f"top sub-circuit {top!r} is not defined")
    for sub in subckts.values():
        sub.nets = _net_map(sub)
    design = Design(name, subckts, top, frozenset(globals_))
    _check_acyclic(design)
    return design


def _parse_instance(tok, lineno, thick_markers) -> Instance:
    name = tok[0]
    letter = name[0].upper()
    if letter not in "MRCX" or len(name) < 2:
        raise NetlistError(f"unknown element {name!r}", lineno)
    if letter == "X":
        if len(tok) < 2:
            raise NetlistError(f"sub-circuit instance {name} needs a sub-circuit name", lineno)
        if any("=" in t for t in tok[1:]):
            raise NetlistError("sub-circuit instances take no parameters", lineno)
        pins = tuple((str(i), n) for i, n in enumerate(tok[1:-1]))
        return Instance(name, DeviceKind.SubCircuit, tok[-1], pins, {})
    params, positional = {}, []
    for t in tok[1:]:
        if "=" in t:
            m = _PARAM.match(t)
            if not m:
                raise NetlistError(f"bad parameter {t!r}", lineno)
            params[m.group(1).upper()] = int(m.group(2))
        else:
            if params:
                raise NetlistError(f"positional token {t!r} after parameters", lineno)
            positional.append(t)
    required = REQUIRED_PARAMS[letter]
    missing = [p for p in required if p not in params]
    if missing:
        raise NetlistError(f"{name}: missing parameter(s) {', '.join(missing)}", lineno)
    if letter == "M":
        if len(positional) not in (4, 5):
            raise NetlistError(f"{name}: expected d g s [b] type", lineno)
        nets, type_name = positional[:-1], positional[-1]
        pins = tuple(zip(TRANSISTOR_ROLES, nets))
        kind = classify_transistor(type_name, thick_markers)
    else:
        if len(positional) != 3:
            raise NetlistError(f"{name}: expected two nets and a type", lineno)
        nets, type_name = positional[:2], positional[2]
        pins = tuple(zip(PASSIVE_ROLES, nets))
        kind = DeviceKind.Resistor if letter == "R" else DeviceKind.Capacitor
    for k, v in params.items():
        if v < 0:
            raise NetlistError(f"{name}: negative parameter {k}", lineno)
    return Instance(name, kind, type_name, pins, {k: params[k] for k in required})


def _net_map(sub: SubCircuitDef) -> dict:
    nets: dict = {}
    for i, inst in enumerate(sub.instances):
        for role, net in inst.pins:
            nets.setdefault(net, []).append((i, role))
    return nets


def _check_acyclic(design: Design) -> None:
    state: dict = {}

    def visit(name, trail):
        s = state.get(name)
        if s == 1:
            raise NetlistError(f"recursive instantiation: {' -> '.join(trail + [name])}")
        if s == 2:
            return
        state[name] = 1
        for inst in design.subckts[name].instances:
            if inst.kind is DeviceKind.SubCircuit:
                visit(inst.type_name, trail + [name])
        state[name] = 2

    for name in design.subckts:
        visit(name, [])


def format_netlist(design: Design) -> str:
    out = []
    if design.globals:
        out.append(".GLOBAL " + " ".join(sorted(design.globals)))
    for sub in design.subckts.values():
        out.append(" ".join([".SUBCKT", sub.name, *sub.ports]))
        for inst in sub.instances:
            nets = inst.nets()
            if inst.kind is DeviceKind.SubCircuit:
                out.append(" ".join([inst.name, *nets, inst.type_name]))
            else:
                params = [f"{k}={v}" for k, v in inst.params.items()]
                out.append(" ".join([inst.name, *nets, inst.type_name, *params]))
        out.append(".ENDS")
    out.append(f".TOP {design.top}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------- placement data


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


class PlacementDB(dict):
    """``(subckt, instance) -> Rect`` in the sub-circuit's local frame."""

    def rects(self, subckt: str) -> dict:
        return {inst: r for (s, inst), r in self.items() if s == subckt}

    def bbox(self, subckt: str, names=None):
        rs = [r for (s, i), r in self.items() if s == subckt and (names is None or i in names)]
        if not rs:
            raise PlacementError(f"no placed instances in {subckt!r}")
        x0 = min(r.x for r in rs)
        y0 = min(r.y for r in rs)
        x1 = max(r.x + r.w for r in rs)
        y1 = max(r.y + r.h for r in rs)
        return x0, y0, x1 - x0, y1 - y0

    def diagonal(self, subckt: str) -> float:
        _, _, w, h = self.bbox(subckt)
        return math.hypot(w, h)


def _records(text: str, width: int, what: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        tok = line.split()
        if len(tok) != width:
            raise PlacementError(f"line {lineno}: malformed {what} record {line!r}")
        yield lineno, tok


def parse_placement(text: str) -> PlacementDB:
    db = PlacementDB()
    for lineno, tok in _records(text, 6, "placement"):
        try:
            x, y, w, h = (int(t) for t in tok[2:])
        except ValueError:
            raise PlacementError(f"line {lineno}: non-integer coordinate in {' '.join(tok)!r}") from None
        if w <= 0 or h <= 0:
            raise PlacementError(f"line {lineno}: non-positive width/height for {tok[0]}/{tok[1]}")
        key = (tok[0], tok[1])
        if key in db:
            raise PlacementError(f"line {lineno}: duplicate placement for {tok[0]}/{tok[1]}")
        db[key] = Rect(x, y, w, h)
    return db


def format_placement(db: PlacementDB) -> str:
    return "".join(f"{s} {i} {r.x} {r.y} {r.w} {r.h}\n" for (s, i), r in db.items())


def check_placement(design: Design, db: PlacementDB) -> None:
    """Every placed record must name a known instance, bar dummy/decap fill."""
    for (s, i) in db:
        sub = design.subckts.get(s)
        if sub is None:
            continue  # other designs' cells may share a placement file
        if not any(inst.name == i for inst in sub.instances) and not is_excluded(i, ""):
            raise PlacementError(f"placed instance {s}/{i} not in netlist")


MATCH_PATTERNS = ("symmetry", "common-centroid", "interdigitation")


class MatchLabelDB(dict):
    """``subckt -> [(inst_a, inst_b, pattern)]`` with unordered unique pairs."""

    def pairs(self, subckt: str) -> set:
        return {frozenset((a, b)) for a, b, _ in self.get(subckt, [])}


def parse_labels(text: str) -> MatchLabelDB:
    db = MatchLabelDB()
    seen = set()
    for lineno, tok in _records(text, 4, "label"):
        s, a, b, pattern = tok
        if pattern not in MATCH_PATTERNS:
            raise PlacementError(f"line {lineno}: unknown pattern {pattern!r}")
        if a == b:
            raise PlacementError(f"line {lineno}: instance paired with itself")
        key = (s, frozenset((a, b)))
        if key in seen:
            raise PlacementError(f"line {lineno}: duplicate pair {a}/{b} in {s}")
        seen.add(key)
        db.setdefault(s, []).append((a, b, pattern))
    return db


def format_labels(db: MatchLabelDB) -> str:
    return "".join(f"{s} {a} {b} {p}\n" for s, items in db.items() for a, b, p in items)


def check_labels(design: Design, db: MatchLabelDB) -> None:
    for s, items in db.items():
        sub = design.subckts.get(s)
        if sub is None:
            continue
        names = {i.name for i in sub.instances}
        for a, b, _ in items:
            if a not in names or b not in names:
                raise PlacementError(f"label pair {a}/{b} not in sub-circuit {s!r}")


# ----------------------------------------------------------------- targets


def relative_distance(subckt, a: str, b: str, pl: PlacementDB) -> float:
    """Center-to-center distance normalized by the sub-circuit bbox diagonal."""
    name = subckt if isinstance(subckt, str) else subckt.name
    try:
        ra, rb = pl[(name, a)], pl[(name, b)]
    except KeyError as e:
        raise PlacementError(f"missing placement for {name}/{e.args[0][1]}") from None
    rects = pl.rects(name)
    if len(rects) < 2:
        raise PlacementError(f"{name!r} has fewer than 2 placed instances")
    diag = pl.diagonal(name)
    (ax, ay), (bx, by) = ra.center, rb.center
    return min(1.0, math.hypot(ax - bx, ay - by) / diag)


def hpwl(points) -> float:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return (max(xs) - min(xs)) + (max(ys) - min(ys))


def net_hpwl(subckt: SubCircuitDef, net: str, pl: PlacementDB) -> float:
    """HPWL over the centers of placed instances on ``net``, over the bbox diagonal."""
    pins = subckt.nets.get(net, [])
    names = sorted({subckt.instances[i].name for i, _ in pins})
    centers = [pl[(subckt.name, n)].center for n in names if (subckt.name, n) in pl]
    if len(centers) < 2:
        raise PlacementError(f"net {net!r} in {subckt.name!r} has fewer than 2 placed pins")
    return hpwl(centers) / pl.diagonal(subckt.name)

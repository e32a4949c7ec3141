"""Circuit data model and the SPICE-subset netlist grammar.

Grammar, one statement per line, identifiers case-insensitive::

    <title line>
    R<label> n1 n2 <value>
    C<label> n1 n2 <value>
    M<label> nd ng ns nb W=<v> L=<v> ID=<v> [STACK=<int>] [GDS=<v>] [P] [DTMOS]
    E<label> out 0 in+ in- GAIN=<v> [POLE=<v>] [VNOISE=<v>]
    V<label> n1 n2 DC=<v> [AC=<v>]
    I<label> n1 n2 DC=<v> [AC=<v>]
    .loopgain E<label> [E<label>]
    .noise out=<node> in=<source|node> [exclude=<label>,<label>...]
    * comment
    .end

Values accept the suffixes f p n u m k meg g.  Node ``0`` is ground.
Labels and node names are stored lower-cased.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from .devmodel import MosBias, MosGeometry
from .errors import NetlistError
from .units import format_value, parse_value

GROUND = "0"

_IDENT = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.:<>\[\]+-]*$")


@dataclass(frozen=True)
class Node:
    name: str
    index: int


@dataclass(frozen=True)
class Resistor:
    label: str
    n1: str
    n2: str
    r: float

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Capacitor:
    label: str
    n1: str
    n2: str
    c: float

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Mosfet:
    label: str
    d: str
    g: str
    s: str
    b: str
    width: float
    length: float
    id: float
    stack: int = 1
    pmos: bool = False
    dtmos: bool = False
    gds: float = 0.0

    @property
    def nodes(self):
        return (self.d, self.g, self.s, self.b)

    @property
    def geometry(self) -> MosGeometry:
        return MosGeometry(self.width, self.length, self.stack)

    @property
    def bias(self) -> MosBias:
        return MosBias(self.id)


@dataclass(frozen=True)
class VSource:
    label: str
    n1: str
    n2: str
    dc: float
    ac: float = 0.0

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class ISource:
    """Current flows from n1 through the source into n2."""

    label: str
    n1: str
    n2: str
    dc: float
    ac: float = 0.0

    @property
    def nodes(self):
        return (self.n1, self.n2)


@dataclass(frozen=True)
class MacroAmp:
    """Single-pole VCVS: V(out) = gain/(1 + j f/pole) * (V(in+) - V(in-) + v_noise)."""

    label: str
    out: str
    inp: str
    inn: str
    gain: float
    pole: float | None = None
    vnoise: float = 0.0

    @property
    def nodes(self):
        return (self.out, GROUND, self.inp, self.inn)

    def gain_at(self, f: float) -> complex:
        if self.pole is None:
            return complex(self.gain)
        return self.gain / (1.0 + 1j * f / self.pole)


Element = Union[Resistor, Capacitor, Mosfet, VSource, ISource, MacroAmp]


@dataclass(frozen=True)
class NoiseDirective:
    out: str
    inp: str
    exclude: tuple[str, ...] = ()


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    label: str
    message: str
    line: int = 0
    col: int = 1

    def format(self, source: str = "<netlist>") -> str:
        who = f"{self.label}: " if self.label else ""
        return f"{source}:{self.line}:{self.col}: {self.severity}: {who}{self.message}"


@dataclass(frozen=True)
class Circuit:
    title: str
    elements: tuple[Element, ...]
    loopgain: tuple[str, ...] = ()
    noise: NoiseDirective | None = None
    lines: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def nodes(self) -> list[Node]:
        order = {GROUND: 0}
        for el in self.elements:
            for n in el.nodes:
                if n not in order:
                    order[n] = len(order)
        return [Node(name, idx) for name, idx in order.items()]

    @property
    def node_index(self) -> dict[str, int]:
        return {n.name: n.index for n in self.nodes}

    def element(self, label: str) -> Element:
        key = label.lower()
        for el in self.elements:
            if el.label == key:
                return el
        raise KeyError(f"no element labelled {label!r}")

    def labels(self) -> list[str]:
        return [el.label for el in self.elements]

    def replace_elements(self, elements) -> "Circuit":
        return Circuit(self.title, tuple(elements), self.loopgain, self.noise)

    def __iter__(self) -> Iterator[Element]:
        return iter(self.elements)


# parsing ------------------------------------------------------------------

_TOKEN = re.compile(r"\S+")


class _Line:
    def __init__(self, text: str, lineno: int, source: str):
        self.lineno = lineno
        self.source = source
        self.tokens = [(m.group(0), m.start() + 1) for m in _TOKEN.finditer(text)]

    def error(self, message: str, col: int = 1) -> NetlistError:
        return NetlistError(message, self.lineno, col, self.source)


def _node(line: _Line, tok: str, col: int) -> str:
    if not _IDENT.match(tok) or "=" in tok:
        raise line.error(f"invalid node name {tok!r}", col)
    return tok.lower()


def _value(line: _Line, tok: str, col: int) -> float:
    try:
        v = parse_value(tok)
    except ValueError:
        raise line.error(f"invalid value {tok!r}", col) from None
    if v != v or v in (float("inf"), float("-inf")):
        raise line.error(f"non-finite value {tok!r}", col)
    return v


def _split_params(line: _Line, toks, allowed: set[str], flags: set[str]):
    params: dict[str, tuple[str, int]] = {}
    seen_flags: set[str] = set()
    for tok, col in toks:
        if "=" in tok:
            key, _, val = tok.partition("=")
            key = key.upper()
            if key not in allowed:
                raise line.error(f"unknown parameter {key!r}", col)
            if key in params:
                raise line.error(f"parameter {key} given twice", col)
            if not val:
                raise line.error(f"missing value for {key}", col + len(key) + 1)
            params[key] = (val, col + len(key) + 1)
        else:
            up = tok.upper()
            if up not in flags:
                raise line.error(f"unexpected token {tok!r}", col)
            if up in seen_flags:
                raise line.error(f"flag {up} given twice", col)
            seen_flags.add(up)
    return params, seen_flags


def _need(line: _Line, n: int, what: str):
    if len(line.tokens) < n:
        col = line.tokens[-1][1] + len(line.tokens[-1][0]) if line.tokens else 1
        raise line.error(f"{what}: expected at least {n - 1} fields after the label", col)


def _label(line: _Line) -> str:
    tok, col = line.tokens[0]
    if not _IDENT.match(tok) or len(tok) < 2:
        raise line.error(f"invalid element label {tok!r}", col)
    return tok.lower()


def _positive(line: _Line, v: float, col: int, what: str) -> float:
    if not v > 0:
        raise line.error(f"{what} must be positive", col)
    return v


def _parse_two_terminal(line: _Line, kind):
    _need(line, 4, kind.__name__)
    label = _label(line)
    (t1, c1), (t2, c2) = line.tokens[1], line.tokens[2]
    n1, n2 = _node(line, t1, c1), _node(line, t2, c2)
    if kind in (Resistor, Capacitor):
        if len(line.tokens) > 4:
            raise line.error("unexpected trailing token", line.tokens[4][1])
        tok, col = line.tokens[3]
        v = _positive(line, _value(line, tok, col), col, "element value")
        return kind(label, n1, n2, v)
    params, _ = _split_params(line, line.tokens[3:], {"DC", "AC"}, set())
    if "DC" not in params:
        raise line.error("missing DC=", line.tokens[3][1])
    dc = _value(line, *params["DC"])
    ac = _value(line, *params["AC"]) if "AC" in params else 0.0
    return kind(label, n1, n2, dc, ac)


def _parse_mos(line: _Line) -> Mosfet:
    _need(line, 5, "MOSFET")
    label = _label(line)
    d, g, s, b = (_node(line, t, c) for t, c in line.tokens[1:5])
    params, flags = _split_params(line, line.tokens[5:], {"W", "L", "ID", "STACK", "GDS"},
                                  {"P", "DTMOS"})
    for key in ("W", "L", "ID"):
        if key not in params:
            col = line.tokens[-1][1]
            raise line.error(f"missing {key}=", col)
    w = _positive(line, _value(line, *params["W"]), params["W"][1], "W")
    ln = _positive(line, _value(line, *params["L"]), params["L"][1], "L")
    id_ = _positive(line, _value(line, *params["ID"]), params["ID"][1], "ID")
    stack = 1
    if "STACK" in params:
        tok, col = params["STACK"]
        if not tok.isdigit() or int(tok) < 1:
            raise line.error("STACK must be an integer >= 1", col)
        stack = int(tok)
    gds = 0.0
    if "GDS" in params:
        gds = _value(line, *params["GDS"])
        if gds < 0:
            raise line.error("GDS must be >= 0", params["GDS"][1])
    dtmos = "DTMOS" in flags
    if dtmos and b != g:
        raise line.error("DTMOS device must have its bulk tied to the gate", line.tokens[4][1])
    return Mosfet(label, d, g, s, b, w, ln, id_, stack, "P" in flags, dtmos, gds)


def _parse_amp(line: _Line) -> MacroAmp:
    _need(line, 5, "macro amplifier")
    label = _label(line)
    out = _node(line, *line.tokens[1])
    ref_tok, ref_col = line.tokens[2]
    if ref_tok != GROUND:
        raise line.error("macro amplifier output reference must be 0", ref_col)
    inp = _node(line, *line.tokens[3])
    inn = _node(line, *line.tokens[4])
    params, _ = _split_params(line, line.tokens[5:], {"GAIN", "POLE", "VNOISE"}, set())
    if "GAIN" not in params:
        raise line.error("missing GAIN=", line.tokens[-1][1])
    gain = _value(line, *params["GAIN"])
    pole = None
    if "POLE" in params:
        pole = _positive(line, _value(line, *params["POLE"]), params["POLE"][1], "POLE")
    vnoise = 0.0
    if "VNOISE" in params:
        vnoise = _value(line, *params["VNOISE"])
        if vnoise < 0:
            raise line.error("VNOISE must be >= 0", params["VNOISE"][1])
    return MacroAmp(label, out, inp, inn, gain, pole, vnoise)


_PARSERS = {
    "r": lambda ln: _parse_two_terminal(ln, Resistor),
    "c": lambda ln: _parse_two_terminal(ln, Capacitor),
    "v": lambda ln: _parse_two_terminal(ln, VSource),
    "i": lambda ln: _parse_two_terminal(ln, ISource),
    "m": _parse_mos,
    "e": _parse_amp,
}


def parse_netlist(text: str | bytes, source: str = "<netlist>") -> Circuit:
    """Parse netlist text into a :class:`Circuit`.

    Every failure is reported as a :class:`NetlistError` carrying line and
    column; no other exception escapes for any input.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            head = bytes(text)[: exc.start]
            line = head.count(b"\n") + 1
            col = exc.start - (head.rfind(b"\n") + 1) + 1
            raise NetlistError("invalid UTF-8", line, col, source) from None
    raw_lines = text.split("\n")
    title = raw_lines[0].rstrip("\r")
    elements: list[Element] = []
    seen: dict[str, int] = {}
    lines: dict[str, int] = {}
    loopgain: tuple[str, ...] = ()
    noise = None
    for lineno, raw in enumerate(raw_lines[1:], start=2):
        line = _Line(raw, lineno, source)
        if not line.tokens:
            continue
        first, col = line.tokens[0]
        if first.startswith("*"):
            continue
        low = first.lower()
        if low == ".end":
            break
        if low.startswith("."):
            if low == ".loopgain":
                if loopgain:
                    raise line.error(".loopgain given twice", col)
                if not 2 <= len(line.tokens) <= 3:
                    raise line.error(".loopgain takes one or two amplifier labels", col)
                labels = []
                for tok, c in line.tokens[1:]:
                    if not _IDENT.match(tok) or not tok.lower().startswith("e"):
                        raise line.error(f"{tok!r} is not a macro amplifier label", c)
                    labels.append(tok.lower())
                loopgain = tuple(labels)
            elif low == ".noise":
                if noise is not None:
                    raise line.error(".noise given twice", col)
                noise = _parse_noise(line)
            else:
                raise line.error(f"unknown directive {first!r}", col)
            continue
        parser = _PARSERS.get(low[0])
        if parser is None:
            raise line.error(f"unknown element type {first[0]!r}", col)
        el = parser(line)
        if el.label in seen:
            raise line.error(f"duplicate label {el.label!r} (first on line {seen[el.label]})", col)
        seen[el.label] = lineno
        lines[el.label] = lineno
        elements.append(el)
    return Circuit(title, tuple(elements), loopgain, noise, lines)


def _parse_noise(line: _Line) -> NoiseDirective:
    vals: dict[str, str] = {}
    for tok, col in line.tokens[1:]:
        key, eq, val = tok.partition("=")
        key = key.lower()
        if not eq or key not in ("out", "in", "exclude"):
            raise line.error(f"unexpected token {tok!r} in .noise", col)
        if key in vals:
            raise line.error(f"{key}= given twice", col)
        if not val:
            raise line.error(f"missing value for {key}=", col)
        vals[key] = val
        if key != "exclude":
            _node(line, val, col + len(key) + 1)
    if "out" not in vals or "in" not in vals:
        raise line.error(".noise needs out=<node> and in=<node>", line.tokens[0][1])
    exclude = ()
    if "exclude" in vals:
        parts = vals["exclude"].split(",")
        if any(not p or not _IDENT.match(p) for p in parts):
            raise line.error("malformed exclude= list", line.tokens[0][1])
        exclude = tuple(p.lower() for p in parts)
    return NoiseDirective(vals["out"].lower(), vals["in"].lower(), exclude)


# serialization -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format_value(v)


def element_line(el: Element) -> str:
    if isinstance(el, Resistor):
        return f"{el.label} {el.n1} {el.n2} {_fmt(el.r)}"
    if isinstance(el, Capacitor):
        return f"{el.label} {el.n1} {el.n2} {_fmt(el.c)}"
    if isinstance(el, Mosfet):
        parts = [el.label, el.d, el.g, el.s, el.b,
                 f"W={_fmt(el.width)}", f"L={_fmt(el.length)}", f"ID={_fmt(el.id)}"]
        if el.stack != 1:
            parts.append(f"STACK={el.stack}")
        if el.gds:
            parts.append(f"GDS={_fmt(el.gds)}")
        if el.pmos:
            parts.append("P")
        if el.dtmos:
            parts.append("DTMOS")
        return " ".join(parts)
    if isinstance(el, (VSource, ISource)):
        s = f"{el.label} {el.n1} {el.n2} DC={_fmt(el.dc)}"
        if el.ac:
            s += f" AC={_fmt(el.ac)}"
        return s
    if isinstance(el, MacroAmp):
        s = f"{el.label} {el.out} 0 {el.inp} {el.inn} GAIN={_fmt(el.gain)}"
        if el.pole is not None:
            s += f" POLE={_fmt(el.pole)}"
        if el.vnoise:
            s += f" VNOISE={_fmt(el.vnoise)}"
        return s
    raise TypeError(f"not a circuit element: {el!r}")


def serialize(circuit: Circuit) -> str:
    out = [circuit.title]
    out.extend(element_line(el) for el in circuit.elements)
    if circuit.loopgain:
        out.append(".loopgain " + " ".join(circuit.loopgain))
    if circuit.noise is not None:
        nd = circuit.noise
        s = f".noise out={nd.out} in={nd.inp}"
        if nd.exclude:
            s += " exclude=" + ",".join(nd.exclude)
        out.append(s)
    out.append(".end")
    return "\n".join(out) + "\n"


# validation ----------------------------------------------------------------

def resolve_source(circuit: Circuit, name: str) -> VSource | ISource:
    """Find an independent source by label, or the unique one touching node ``name``."""
    key = name.lower()
    for el in circuit.elements:
        if el.label == key:
            if isinstance(el, (VSource, ISource)):
                return el
            raise KeyError(f"{name!r} is not an independent source")
    hits = [el for el in circuit.elements
            if isinstance(el, (VSource, ISource)) and key in el.nodes]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise KeyError(f"no source or source-driven node named {name!r}")
    raise KeyError(f"node {name!r} touches several sources; name one by label")


def validate(circuit: Circuit) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def add(sev, el_label, msg):
        diags.append(Diagnostic(sev, el_label, msg, circuit.lines.get(el_label, 0)))

    seen: set[str] = set()
    usage: dict[str, list[str]] = {}
    for el in circuit.elements:
        if el.label in seen:
            add("error", el.label, "duplicate label")
        seen.add(el.label)
        for n in el.nodes:
            if not n or "=" in n:
                add("error", el.label, f"invalid node name {n!r}")
        if isinstance(el, Resistor) and not el.r > 0:
            add("error", el.label, "resistance must be positive")
        if isinstance(el, Capacitor) and not el.c > 0:
            add("error", el.label, "capacitance must be positive")
        if isinstance(el, Mosfet):
            if not (el.width > 0 and el.length > 0 and el.id > 0):
                add("error", el.label, "W, L and ID must be positive")
            if el.stack < 1:
                add("error", el.label, "STACK must be >= 1")
            if el.dtmos and el.b != el.g:
                add("error", el.label, "DTMOS device must have its bulk tied to the gate")
        if isinstance(el, MacroAmp):
            if el.pole is not None and not el.pole > 0:
                add("error", el.label, "POLE must be positive")
        for n in el.nodes:
            usage.setdefault(n, []).append(el.label)
    if not any(GROUND in el.nodes for el in circuit.elements):
        diags.append(Diagnostic("error", "", "no element connects to ground"))
    # an output driven only by a voltage source or amplifier is still well defined
    driven = {n for el in circuit.elements if isinstance(el, VSource) for n in el.nodes}
    driven |= {el.out for el in circuit.elements if isinstance(el, MacroAmp)}
    for node, users in usage.items():
        if node != GROUND and len(users) < 2 and node not in driven:
            add("warning", users[0], f"node {node!r} has a single connection (floating)")
    labels = {el.label: el for el in circuit.elements}
    for lg in circuit.loopgain:
        if lg not in labels:
            diags.append(Diagnostic("error", lg, ".loopgain names an unknown element"))
        elif not isinstance(labels[lg], MacroAmp):
            diags.append(Diagnostic("error", lg, ".loopgain target is not a controlled source"))
    if circuit.noise is not None:
        nd = circuit.noise
        if nd.out not in usage:
            diags.append(Diagnostic("error", "", f".noise output node {nd.out!r} does not exist"))
        try:
            resolve_source(circuit, nd.inp)
        except KeyError as exc:
            diags.append(Diagnostic("error", "", f".noise input: {exc.args[0]}"))
        for lab in nd.exclude:
            if lab not in labels:
                diags.append(Diagnostic("error", lab, ".noise exclude names an unknown element"))
    return diags

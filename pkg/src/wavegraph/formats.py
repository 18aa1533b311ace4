"""Text formats: graph-spec documents, signal files, state directories and key-value reports.

Graph-spec document::

    # comments run to the end of the line
    template = CycleWithTails

    [parameters]
    dx = 0.005
    T = 2.2
    N = 64

    [edges]
    # id tail head length [q=<constant> | q=<s0>,<s1>,...]
    e1 v1 v2 1.0
    e2 v2 v3 1.2 q=1
    e3 v2 v3 0.7 q=0,0.5,1
    e4 v3 v4 0.9

    [vertices]
    # id kind [jump=<edge id>]
    v1 dirichlet_controlled
    v2 delta_prime jump=e2
    v3 delta_prime
    v4 dirichlet_fixed

Potential samples are uniform over the edge (tail to head) and interpolated
linearly onto the edge grid. Signal files are CSV with a ``# signal`` header
line carrying the regularity tag and the uniform step, then a column header
(``t,value`` in time, ``x,value`` in space) and one row per sample.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import (
    Edge,
    GraphState,
    GridMismatch,
    MetricGraph,
    Regularity,
    StateRole,
    Template,
    TimeSignal,
    Vertex,
    VertexKind,
    normalize,
    validate_graph,
)

TEMPLATE_TAGS = {"CycleWithTails": Template.CYCLE, "ThreeStar": Template.STAR, "Generic": Template.GENERIC}
_TAG_OF = {v: k for k, v in TEMPLATE_TAGS.items()}
PARAMETER_KEYS = ("dx", "T", "N", "relabeled")
_ID = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class SpecSyntaxError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SpecSemanticError(ValueError):
    def __init__(self, violations: list):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class SignalFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    graph: MetricGraph
    potential: dict  # edge id -> None, a constant, or a tuple of uniform samples
    T: float | None = None
    N: int | None = None

    def q(self) -> dict:
        g = self.graph
        out = {}
        for e in g.edges:
            spec = self.potential.get(e.id)
            x = g.grid(e.id)
            if spec is None:
                out[e.id] = np.zeros_like(x)
            elif isinstance(spec, tuple):
                xs = np.linspace(0.0, e.length, len(spec))
                out[e.id] = np.interp(x, xs, np.asarray(spec, dtype=float))
            else:
                out[e.id] = np.full_like(x, float(spec))
        return out


# ---------------------------------------------------------------- tokenizer


def _tokens(line: str):
    """(column, token) pairs, 1-based columns, comments stripped."""
    cut = line.find("#")
    body = line if cut < 0 else line[:cut]
    return [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", body)]


def _number(tok: str, lineno: int, col: int, what: str) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise SpecSyntaxError(lineno, col, f"expected a number for {what}, got {tok!r}") from None
    if not math.isfinite(val):
        raise SpecSyntaxError(lineno, col, f"expected a finite number for {what}, got {tok!r}")
    return val


def _ident(tok: str, lineno: int, col: int, what: str) -> str:
    if not _ID.match(tok):
        raise SpecSyntaxError(lineno, col, f"expected an identifier for {what}, got {tok!r}")
    return tok


def parse_graph_spec(text: str, check: bool = True) -> GraphSpec:
    """Parse a graph-spec document; normalizes l2 >= l3 on synthesis templates and validates."""
    template = None
    params: dict = {}
    edges: list = []
    potential: dict = {}
    vertices: list = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw)
        if not toks:
            continue
        col, first = toks[0]
        if first.startswith("["):
            name = " ".join(t for _, t in toks)
            if name not in ("[parameters]", "[edges]", "[vertices]") or len(toks) != 1:
                raise SpecSyntaxError(lineno, col, f"expected [parameters], [edges] or [vertices], got {name!r}")
            section = name[1:-1]
            continue
        if section is None or section == "parameters":
            if len(toks) != 3 or toks[1][1] != "=":
                raise SpecSyntaxError(lineno, col, "expected 'key = value'")
            key, (vcol, value) = first, toks[2]
            if section is None:
                if key != "template":
                    raise SpecSyntaxError(lineno, col, f"expected 'template' or a section header, got {key!r}")
                if template is not None:
                    raise SpecSyntaxError(lineno, col, "duplicate template")
                if value not in TEMPLATE_TAGS:
                    raise SpecSyntaxError(lineno, vcol, f"expected one of {', '.join(TEMPLATE_TAGS)}, got {value!r}")
                template = TEMPLATE_TAGS[value]
                continue
            if key not in PARAMETER_KEYS:
                raise SpecSyntaxError(lineno, col, f"unknown parameter {key!r}; expected one of {', '.join(PARAMETER_KEYS)}")
            if key in params:
                raise SpecSyntaxError(lineno, col, f"duplicate parameter {key!r}")
            if key == "N":
                if not re.fullmatch(r"[0-9]+", value):
                    raise SpecSyntaxError(lineno, vcol, f"expected a positive integer for N, got {value!r}")
                params[key] = int(value)
            elif key == "relabeled":
                params[key] = tuple(_ident(v, lineno, vcol, "relabeled edge") for v in value.split(","))
            else:
                params[key] = _number(value, lineno, vcol, key)
        elif section == "edges":
            if len(toks) not in (4, 5):
                raise SpecSyntaxError(lineno, col, "expected 'id tail head length [q=...]'")
            eid = _ident(first, lineno, col, "edge id")
            if any(e.id == eid for e in edges):
                raise SpecSyntaxError(lineno, col, f"duplicate edge id {eid!r}")
            tail = _ident(toks[1][1], lineno, toks[1][0], "tail vertex")
            head = _ident(toks[2][1], lineno, toks[2][0], "head vertex")
            length = _number(toks[3][1], lineno, toks[3][0], "length")
            edges.append(Edge(eid, tail, head, length))
            if len(toks) == 5:
                qcol, qtok = toks[4]
                if not qtok.startswith("q="):
                    raise SpecSyntaxError(lineno, qcol, f"expected 'q=...', got {qtok!r}")
                parts = qtok[2:].split(",")
                vals = tuple(_number(p, lineno, qcol, "potential") for p in parts)
                potential[eid] = vals[0] if len(vals) == 1 else vals
        else:
            if len(toks) not in (2, 3):
                raise SpecSyntaxError(lineno, col, "expected 'id kind [jump=edge]'")
            vid = _ident(first, lineno, col, "vertex id")
            if any(v.id == vid for v in vertices):
                raise SpecSyntaxError(lineno, col, f"duplicate vertex id {vid!r}")
            kcol, ktok = toks[1]
            try:
                kind = VertexKind(ktok)
            except ValueError:
                kinds = ", ".join(k.value for k in VertexKind)
                raise SpecSyntaxError(lineno, kcol, f"expected a vertex kind ({kinds}), got {ktok!r}") from None
            jump = None
            if len(toks) == 3:
                jcol, jtok = toks[2]
                if not jtok.startswith("jump="):
                    raise SpecSyntaxError(lineno, jcol, f"expected 'jump=<edge>', got {jtok!r}")
                jump = _ident(jtok[5:], lineno, jcol, "jump edge")
            vertices.append(Vertex(vid, kind, jump))
    if template is None:
        raise SpecSyntaxError(1, 1, "missing 'template = ...'")
    g = MetricGraph(tuple(edges), tuple(vertices), template, params.get("dx", 1.0 / 200), params.get("relabeled", ()))
    if check:
        bad = [e.id for e in g.edges if not e.length > 0]
        if bad:
            raise SpecSemanticError([f"edge {eid}: nonpositive length" for eid in bad])
        before = g
        g = normalize(g)
        if g is not before and g.relabeled:
            potential = {("e3" if k == "e2" else "e2" if k == "e3" else k): v for k, v in potential.items()}
        rep = validate_graph(g)
        if not rep:
            raise SpecSemanticError(rep.violations)
    return GraphSpec(g, potential, params.get("T"), params.get("N"))


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_graph_spec(spec: GraphSpec) -> str:
    g = spec.graph
    out = [f"template = {_TAG_OF[g.template]}", "", "[parameters]", f"dx = {_fmt(g.dx)}"]
    if spec.T is not None:
        out.append(f"T = {_fmt(spec.T)}")
    if spec.N is not None:
        out.append(f"N = {int(spec.N)}")
    if g.relabeled:
        out.append(f"relabeled = {','.join(g.relabeled)}")
    out += ["", "[edges]"]
    for e in g.edges:
        line = f"{e.id} {e.tail} {e.head} {_fmt(e.length)}"
        pot = spec.potential.get(e.id)
        if isinstance(pot, tuple):
            line += " q=" + ",".join(_fmt(v) for v in pot)
        elif pot is not None:
            line += f" q={_fmt(pot)}"
        out.append(line)
    out += ["", "[vertices]"]
    for v in g.vertices:
        line = f"{v.id} {v.kind.value}"
        if v.jump_edge:
            line += f" jump={v.jump_edge}"
        out.append(line)
    return "\n".join(out) + "\n"


def spec_fields(spec: GraphSpec) -> dict:
    """Flat field map used to compare documents field by field."""
    g = spec.graph
    d = {"template": g.template.value, "dx": _fmt(g.dx), "T": spec.T, "N": spec.N, "relabeled": g.relabeled}
    for e in g.edges:
        d[f"edge.{e.id}"] = (e.tail, e.head, _fmt(e.length))
        pot = spec.potential.get(e.id)
        d[f"q.{e.id}"] = tuple(_fmt(v) for v in pot) if isinstance(pot, tuple) else (None if pot is None else _fmt(pot))
    for v in g.vertices:
        d[f"vertex.{v.id}"] = (v.kind.value, v.jump_edge)
    return d


# ---------------------------------------------------------------- signals


def _g17(x: float) -> str:
    return f"{float(x):.17g}"


def write_signal(sig: TimeSignal, path, axis: str = "t") -> None:
    lines = [f"# signal regularity={sig.regularity.value} step={_g17(sig.dt)}", f"{axis},value"]
    lines += [f"{_g17(t)},{_g17(v)}" for t, v in zip(np.arange(len(sig.values)) * sig.dt, sig.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_signal(path) -> TimeSignal:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# signal"):
        raise SignalFormatError(f"{path}: missing '# signal' header")
    meta = dict(kv.split("=", 1) for kv in lines[0][len("# signal") :].split())
    try:
        reg = Regularity(meta["regularity"])
        step = float(meta["step"])
    except (KeyError, ValueError) as exc:
        raise SignalFormatError(f"{path}: bad header {lines[0]!r}") from exc
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    if not rows or len(rows[0]) != 2 or rows[0][1] != "value" or rows[0][0] not in ("t", "x"):
        raise SignalFormatError(f"{path}: expected a 't,value' or 'x,value' column header")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise SignalFormatError(f"{path}: non-numeric row") from exc
    if data.shape[0] < 2:
        raise SignalFormatError(f"{path}: need at least two samples")
    t = data[:, 0]
    if abs(t[0]) > 1e-12 or np.any(np.abs(np.diff(t) - step) > 1e-9 * max(1.0, abs(t[-1]))):
        raise SignalFormatError(f"{path}: sample column is not uniform from 0 with step {step}")
    return TimeSignal(data[:, 1], step, reg)


def write_state(state: GraphState, g: MetricGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for e in g.edges:
        write_signal(TimeSignal(state.values[e.id], e.length / (g.npoints(e.id) - 1), Regularity.L2), d / f"{e.id}.csv", "x")


def read_state(g: MetricGraph, directory, role: StateRole = StateRole.SHAPE) -> GraphState:
    """Per-edge signal files ``<edge>.csv`` in the spatial variable; must match the graph grid."""
    d = Path(directory)
    vals = {}
    for e in g.edges:
        path = d / f"{e.id}.csv"
        if not path.exists():
            raise SignalFormatError(f"missing target file {path}")
        sig = read_signal(path)
        if len(sig.values) != g.npoints(e.id) or not math.isclose(sig.dt * (len(sig.values) - 1), e.length, rel_tol=1e-9):
            raise GridMismatch(f"target on edge {e.id} does not match the graph grid")
        vals[e.id] = sig.values
    return GraphState(vals, role)


# ---------------------------------------------------------------- reports


@dataclass
class Report:
    command: str
    values: dict = field(default_factory=dict)

    def set(self, key: str, value) -> None:
        self.values[key] = value

    def render(self) -> str:
        lines = [f"command = {self.command}"]
        for k in sorted(self.values):
            lines.append(f"{k} = {_render_value(self.values[k])}")
        return "\n".join(lines) + "\n"


def _render_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _g17(v)
    if isinstance(v, tuple):
        return " ".join(_render_value(x) for x in v)
    return str(v)


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split(" = ", 1)
            out[k] = v
    return out

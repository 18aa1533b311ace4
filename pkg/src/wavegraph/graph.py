"""Metric graphs with delta-prime vertex couplings, sampled states and norms.

Each edge carries a local coordinate ``x`` in ``[0, length]`` running from its
tail vertex to its head vertex. The outward derivative of ``u_j`` at a vertex
is the derivative along ``e_j`` pointing away from that vertex, so it equals
``d/dx`` at the tail and ``-d/dx`` at the head.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid


class Template(str, enum.Enum):
    CYCLE = "cycle"  # ring with two attached edges
    STAR = "star"  # three-edge star
    GENERIC = "generic"


class VertexKind(str, enum.Enum):
    DIRICHLET_CONTROLLED = "dirichlet_controlled"
    DIRICHLET_FIXED = "dirichlet_fixed"
    DELTA_PRIME = "delta_prime"
    NEUMANN = "neumann"  # prescribed outward derivative; simulation only


class StateRole(str, enum.Enum):
    SHAPE = "shape"
    VELOCITY = "velocity"
    RESIDUAL = "residual"


class Regularity(str, enum.Enum):
    L2 = "L2"
    H1 = "H1"
    H1_0 = "H1_0"


class UnsupportedTemplate(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    length: float


@dataclass(frozen=True)
class Vertex:
    id: str
    kind: VertexKind
    # edge whose outward derivative exceeds the others by the internal control
    jump_edge: str | None = None


@dataclass(frozen=True)
class MetricGraph:
    edges: tuple[Edge, ...]
    vertices: tuple[Vertex, ...]
    template: Template = Template.GENERIC
    dx: float = 1.0 / 200
    # labels swapped by normalize(), recorded for reports
    relabeled: tuple[str, ...] = ()

    def edge(self, eid: str) -> Edge:
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def vertex(self, vid: str) -> Vertex:
        for v in self.vertices:
            if v.id == vid:
                return v
        raise KeyError(vid)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(e.length for e in self.edges)

    def npoints(self, eid: str) -> int:
        return int(round(self.edge(eid).length / self.dx)) + 1

    def grid(self, eid: str) -> np.ndarray:
        return np.linspace(0.0, self.edge(eid).length, self.npoints(eid))

    def incident(self, vid: str) -> list[tuple[str, int]]:
        """(edge id, end) pairs at ``vid``; end is 0 for the tail, -1 for the head."""
        out = []
        for e in self.edges:
            if e.tail == vid:
                out.append((e.id, 0))
            if e.head == vid:
                out.append((e.id, -1))
        return out

    def with_dx(self, dx: float) -> MetricGraph:
        return replace(self, dx=dx)


def cycle_graph(lengths, dx: float = 1.0 / 200) -> MetricGraph:
    """Ring e2/e3 between v2 and v3, tails e1 (v1-v2) and e4 (v3-v4)."""
    l1, l2, l3, l4 = (float(v) for v in lengths)
    edges = (
        Edge("e1", "v1", "v2", l1),
        Edge("e2", "v2", "v3", l2),
        Edge("e3", "v2", "v3", l3),
        Edge("e4", "v3", "v4", l4),
    )
    vertices = (
        Vertex("v1", VertexKind.DIRICHLET_CONTROLLED),
        Vertex("v2", VertexKind.DELTA_PRIME, "e2"),
        Vertex("v3", VertexKind.DELTA_PRIME),
        Vertex("v4", VertexKind.DIRICHLET_FIXED),
    )
    return MetricGraph(edges, vertices, Template.CYCLE, dx)


def star_graph(lengths, dx: float = 1.0 / 200) -> MetricGraph:
    """Star centred at v0; e1 runs v1 -> v0, e2 and e3 run from v0 to the leaves."""
    l1, l2, l3 = (float(v) for v in lengths)
    edges = (
        Edge("e1", "v1", "v0", l1),
        Edge("e2", "v0", "v2", l2),
        Edge("e3", "v0", "v3", l3),
    )
    vertices = (
        Vertex("v0", VertexKind.DELTA_PRIME, "e2"),
        Vertex("v1", VertexKind.DIRICHLET_CONTROLLED),
        Vertex("v2", VertexKind.DIRICHLET_FIXED),
        Vertex("v3", VertexKind.DIRICHLET_FIXED),
    )
    return MetricGraph(edges, vertices, Template.STAR, dx)


def interval_graph(length: float, dx: float = 1.0 / 200, far: VertexKind = VertexKind.DIRICHLET_FIXED) -> MetricGraph:
    """Single edge controlled at its tail; used for spectra and interval checks."""
    return MetricGraph(
        (Edge("e1", "v1", "v2", float(length)),),
        (Vertex("v1", VertexKind.DIRICHLET_CONTROLLED), Vertex("v2", far)),
        Template.GENERIC,
        dx,
    )


def normalize(g: MetricGraph) -> MetricGraph:
    """Swap labels e2 <-> e3 so that l2 >= l3 on synthesis templates."""
    if g.template not in (Template.CYCLE, Template.STAR):
        return g
    e2, e3 = g.edge("e2"), g.edge("e3")
    if e2.length >= e3.length:
        return g
    if g.template is Template.CYCLE:
        new2 = Edge("e2", e3.tail, e3.head, e3.length)
        new3 = Edge("e3", e2.tail, e2.head, e2.length)
    else:
        # leaves follow their edges
        new2 = Edge("e2", "v0", "v2", e3.length)
        new3 = Edge("e3", "v0", "v3", e2.length)
    edges = tuple(new2 if e.id == "e2" else new3 if e.id == "e3" else e for e in g.edges)
    return replace(g, edges=edges, relabeled=("e2", "e3"))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:  # truthy when admissible
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)


_WIRING = {
    Template.CYCLE: {"e1": ("v1", "v2"), "e2": ("v2", "v3"), "e3": ("v2", "v3"), "e4": ("v3", "v4")},
    Template.STAR: {"e1": ("v1", "v0"), "e2": ("v0", "v2"), "e3": ("v0", "v3")},
}

_KINDS = {
    Template.CYCLE: {
        "v1": VertexKind.DIRICHLET_CONTROLLED,
        "v2": VertexKind.DELTA_PRIME,
        "v3": VertexKind.DELTA_PRIME,
        "v4": VertexKind.DIRICHLET_FIXED,
    },
    Template.STAR: {
        "v0": VertexKind.DELTA_PRIME,
        "v1": VertexKind.DIRICHLET_CONTROLLED,
        "v2": VertexKind.DIRICHLET_FIXED,
        "v3": VertexKind.DIRICHLET_FIXED,
    },
}


def validate_graph(g: MetricGraph) -> ValidationReport:
    rep = ValidationReport()
    vids = [v.id for v in g.vertices]
    eids = [e.id for e in g.edges]
    if len(set(vids)) != len(vids):
        rep.add("duplicate vertex id")
    if len(set(eids)) != len(eids):
        rep.add("duplicate edge id")
    if not g.dx > 0:
        rep.add("nonpositive grid step")
    for e in g.edges:
        if not e.length > 0:
            rep.add(f"nonpositive length on edge {e.id}")
        for end in (e.tail, e.head):
            if end not in vids:
                rep.add(f"edge {e.id} references unknown vertex {end}")
    for v in g.vertices:
        deg = len(g.incident(v.id))
        if v.kind is VertexKind.DELTA_PRIME:
            if deg < 2:
                rep.add(f"delta-prime vertex {v.id} has fewer than 2 incident edges")
            if v.jump_edge is not None and v.jump_edge not in [eid for eid, _ in g.incident(v.id)]:
                rep.add(f"jump edge {v.jump_edge} not incident to {v.id}")
        elif deg != 1:
            rep.add(f"boundary vertex {v.id} must have exactly one incident edge")
    if g.template in _WIRING:
        wiring = _WIRING[g.template]
        got = {e.id: (e.tail, e.head) for e in g.edges}
        if got != wiring or len(g.edges) != len(wiring):
            rep.add("template wiring")
        kinds = {v.id: v.kind for v in g.vertices}
        if kinds != _KINDS[g.template]:
            rep.add("template vertex conditions")
        jump_vertex = "v2" if g.template is Template.CYCLE else "v0"
        if jump_vertex in kinds and g.vertex(jump_vertex).jump_edge != "e2":
            rep.add("internal control must act on e2")
        if "e2" in got and "e3" in got and g.edge("e2").length < g.edge("e3").length:
            rep.add("ordering l2 >= l3 violated (normalize first)")
    return rep


def control_time(g: MetricGraph) -> float:
    """Sharp horizon T* of the constructive shape/velocity controls."""
    ell = {e.id: e.length for e in g.edges}
    if g.template is Template.CYCLE:
        return max(ell["e1"] + ell["e2"], ell["e3"] + ell["e4"])
    if g.template is Template.STAR:
        return max(ell["e2"], ell["e1"] + ell["e3"])
    raise UnsupportedTemplate(f"no control time for template {g.template.value}")


@dataclass(frozen=True)
class TimeSignal:
    values: np.ndarray
    dt: float
    regularity: Regularity = Regularity.L2

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def zeros(cls, T: float, dt: float, regularity: Regularity = Regularity.L2) -> TimeSignal:
        return cls(np.zeros(nsteps(T, dt) + 1), dt, regularity)

    @classmethod
    def from_function(cls, fn, T: float, dt: float, regularity: Regularity = Regularity.L2) -> TimeSignal:
        t = np.arange(nsteps(T, dt) + 1) * dt
        return cls(np.asarray(fn(t), dtype=float) * np.ones_like(t), dt, regularity)

    @property
    def T(self) -> float:
        return (len(self.values) - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.dt

    def __call__(self, t):
        """Linear interpolation, zero for t < 0 and held constant past T."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.times, self.values)
        return np.where(t < 0, 0.0, out)

    def scaled(self, c: float) -> TimeSignal:
        return TimeSignal(c * self.values, self.dt, self.regularity)

    def __add__(self, other: TimeSignal) -> TimeSignal:
        if len(other.values) != len(self.values) or not np.isclose(other.dt, self.dt):
            raise GridMismatch("signals on different grids")
        return TimeSignal(self.values + other.values, self.dt, self.regularity)

    def support(self, thresh: float = 1e-12) -> tuple[float, float] | None:
        idx = np.nonzero(np.abs(self.values) > thresh)[0]
        if idx.size == 0:
            return None
        return idx[0] * self.dt, idx[-1] * self.dt

    def check(self, declared_end_zero: bool = False, tol: float = 1e-12) -> list[str]:
        problems = []
        if self.regularity is Regularity.H1_0:
            scale = max(1.0, float(np.max(np.abs(self.values), initial=0.0)))
            if abs(self.values[0]) > tol * scale:
                problems.append("H1_0 signal does not vanish at t=0")
            if declared_end_zero and abs(self.values[-1]) > tol * scale:
                problems.append("H1_0 signal does not vanish at t=T")
        return problems


def nsteps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if not np.isclose(n * dt, T, rtol=0, atol=1e-9 * max(1.0, T)):
        raise GridMismatch(f"horizon {T} is not a multiple of dt={dt}")
    return n


@dataclass(frozen=True)
class GraphState:
    """Per-edge profiles on the graph's edge grids."""

    values: dict
    role: StateRole = StateRole.SHAPE

    @classmethod
    def zeros(cls, g: MetricGraph, role: StateRole = StateRole.SHAPE) -> GraphState:
        return cls({e.id: np.zeros(g.npoints(e.id)) for e in g.edges}, role)

    @classmethod
    def from_functions(cls, g: MetricGraph, fns: dict, role: StateRole = StateRole.SHAPE) -> GraphState:
        vals = {}
        for e in g.edges:
            x = g.grid(e.id)
            fn = fns.get(e.id)
            vals[e.id] = np.zeros_like(x) if fn is None else np.asarray(fn(x), dtype=float) * np.ones_like(x)
        return cls(vals, role)

    def scaled(self, c: float) -> GraphState:
        return GraphState({k: c * v for k, v in self.values.items()}, self.role)

    def __add__(self, other: GraphState) -> GraphState:
        return GraphState({k: v + other.values[k] for k, v in self.values.items()}, self.role)

    def __sub__(self, other: GraphState) -> GraphState:
        return GraphState({k: v - other.values[k] for k, v in self.values.items()}, self.role)

    def at(self, g: MetricGraph, vid: str) -> dict:
        return {eid: float(self.values[eid][end]) for eid, end in g.incident(vid)}


def _check_grid(s: GraphState, g: MetricGraph) -> None:
    for e in g.edges:
        if e.id not in s.values or len(s.values[e.id]) != g.npoints(e.id):
            raise GridMismatch(f"state does not match grid on edge {e.id}")


def state_norms(s: GraphState, g: MetricGraph) -> tuple[float, float]:
    """(H1, L2) norms summed over edges, trapezoid rule with one-sided edge differences."""
    _check_grid(s, g)
    h1 = l2 = 0.0
    for e in g.edges:
        x = g.grid(e.id)
        u = s.values[e.id]
        du = np.gradient(u, x, edge_order=2)
        l2 += trapezoid(u * u, x)
        h1 += trapezoid(du * du, x)
    return float(np.sqrt(h1 + l2)), float(np.sqrt(l2))


def inner(a: GraphState, b: GraphState, g: MetricGraph) -> float:
    _check_grid(a, g)
    _check_grid(b, g)
    return float(sum(trapezoid(a.values[e.id] * b.values[e.id], g.grid(e.id)) for e in g.edges))


def check_target_compatibility(s: GraphState, g: MetricGraph, tol: float | None = None) -> ValidationReport:
    """Dirichlet zeros and vertex-sum conditions of the shape target space."""
    _check_grid(s, g)
    if tol is None:
        tol = 1e-8 * max(state_norms(s, g)[0], 1.0)
    rep = ValidationReport()
    for v in g.vertices:
        vals = s.at(g, v.id)
        if v.kind is VertexKind.DELTA_PRIME:
            r = sum(vals.values())
            if abs(r) > tol:
                rep.add(f"vertex sum at {v.id}: residual {r:.6g}")
        else:
            (r,) = vals.values()
            if abs(r) > tol:
                rep.add(f"nonzero value at {v.id}: residual {r:.6g}")
    return rep


@dataclass(frozen=True)
class ControlPair:
    """Dirichlet control at the controlled boundary vertex and derivative-jump control."""

    f1: TimeSignal
    f2: TimeSignal
    T: float

    @classmethod
    def zeros(cls, T: float, dt: float) -> ControlPair:
        return cls(TimeSignal.zeros(T, dt, Regularity.H1_0), TimeSignal.zeros(T, dt), T)

    def scaled(self, c: float) -> ControlPair:
        return ControlPair(self.f1.scaled(c), self.f2.scaled(c), self.T)

    def __add__(self, other: ControlPair) -> ControlPair:
        return ControlPair(self.f1 + other.f1, self.f2 + other.f2, self.T)

    @property
    def dt(self) -> float:
        return self.f1.dt


def zero_potential(g: MetricGraph) -> dict:
    return {e.id: np.zeros(g.npoints(e.id)) for e in g.edges}


def constant_potential(g: MetricGraph, c: float) -> dict:
    return {e.id: np.full(g.npoints(e.id), float(c)) for e in g.edges}


def potential_from_functions(g: MetricGraph, fns) -> dict:
    """``fns`` is a callable of x (applied on every edge) or a dict of callables."""
    out = {}
    for e in g.edges:
        fn = fns.get(e.id) if isinstance(fns, dict) else fns
        x = g.grid(e.id)
        out[e.id] = np.zeros_like(x) if fn is None else np.asarray(fn(x), dtype=float) * np.ones_like(x)
    return out


def check_potential(q: dict, g: MetricGraph) -> None:
    for e in g.edges:
        vals = q.get(e.id)
        if vals is None or len(vals) != g.npoints(e.id):
            raise GridMismatch(f"potential does not match grid on edge {e.id}")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite potential on edge {e.id}")

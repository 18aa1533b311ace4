"""Explicit finite-difference forward solver for the controlled wave equation on a metric graph.

Leapfrog in the edge interiors. Vertex nodes are advanced by the same stencil
with a ghost value carrying the outward derivative; at a delta-prime vertex the
common derivative is fixed by the vanishing sum of the vertex values, with the
internal control added on the jump edge. Without a potential the default step
is the unit Courant number, where the scheme is exact on every edge. Derivative
data enter as averages over [t - dt, t + dt]; one extra level past T (controls
extrapolated linearly) gives a centered velocity at T. This module is the
verification oracle and shares no code with the trace/representation solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .graph import (
    ControlPair,
    GraphState,
    MetricGraph,
    StateRole,
    TimeSignal,
    VertexKind,
    check_potential,
    nsteps,
    state_norms,
)


class CFLViolation(ValueError):
    pass


@dataclass
class SpaceTimeField:
    graph: MetricGraph
    u: dict  # edge id -> array (nt + 1, nx)
    dt: float
    controls: ControlPair | None = None
    ahead: dict | None = None  # edge id -> level nt + 1, for a centered velocity at T

    @property
    def nt(self) -> int:
        return next(iter(self.u.values())).shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def index(self, t: float) -> int:
        n = int(round(t / self.dt))
        if not (0 <= n <= self.nt) or abs(n * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not on the solver grid")
        return n

    def state(self, t: float) -> GraphState:
        n = self.index(t)
        return GraphState({k: v[n].copy() for k, v in self.u.items()}, StateRole.SHAPE)

    def velocity(self, t: float) -> GraphState:
        """Centered difference (using the lookahead level at T); second-order backward without it."""
        n = self.index(t)
        out = {}
        for k, v in self.u.items():
            if 0 < n < self.nt:
                out[k] = (v[n + 1] - v[n - 1]) / (2 * self.dt)
            elif n == self.nt and self.ahead is not None:
                out[k] = (self.ahead[k] - v[n - 1]) / (2 * self.dt)
            elif n == self.nt:
                out[k] = (3 * v[n] - 4 * v[n - 1] + v[n - 2]) / (2 * self.dt)
            else:
                out[k] = np.zeros(v.shape[1])
        return GraphState(out, StateRole.VELOCITY)

    def vertex_values(self, vid: str) -> dict:
        return {eid: self.u[eid][:, end] for eid, end in self.graph.incident(vid)}

    def outward_derivatives(self, vid: str) -> dict:
        out = {}
        for eid, end in self.graph.incident(vid):
            h = self.graph.edge(eid).length / (self.u[eid].shape[1] - 1)
            v = self.u[eid]
            if end == 0:
                out[eid] = (-3 * v[:, 0] + 4 * v[:, 1] - v[:, 2]) / (2 * h)
            else:
                out[eid] = (-3 * v[:, -1] + 4 * v[:, -2] - v[:, -3]) / (2 * h)
        return out


def stable_dt(g: MetricGraph, q: dict) -> float:
    """Unit Courant number without potential (leapfrog is then exact on the edges), 0.9 otherwise."""
    hmin = min(e.length / (g.npoints(e.id) - 1) for e in g.edges)
    qmax = max(float(np.max(np.abs(v))) for v in q.values())
    if qmax == 0.0:
        return hmin
    return 0.9 * hmin / math.sqrt(1.0 + qmax * g.dx**2)


def _resample_dirichlet(sig, times):
    return sig(times)


def _window_average(sig, times, dt):
    """Mean of sig over [t - dt, t + dt] from its running integral (zero before 0 and after its end)."""
    F = np.concatenate([[0.0], cumulative_trapezoid(sig.values, dx=sig.dt)])
    src = sig.times

    def Fat(t):
        return np.interp(t, src, F, left=0.0, right=F[-1])

    return (Fat(times + dt) - Fat(np.maximum(times - dt, 0.0))) / (2 * dt)


def _extrapolated(sig: TimeSignal) -> TimeSignal:
    """One linearly extrapolated sample past the end; only the lookahead level reads it."""
    v = sig.values
    if len(v) < 2:
        return sig
    return TimeSignal(np.append(v, 2 * v[-1] - v[-2]), sig.dt, sig.regularity)


def simulate(
    g: MetricGraph,
    q: dict,
    controls: ControlPair,
    T: float | None = None,
    dt: float | None = None,
    data: dict | None = None,
) -> SpaceTimeField:
    """Leapfrog run on [0, T].

    ``data`` optionally maps boundary vertex ids to signals: the outward
    derivative at NEUMANN vertices, or a value overriding f1 at a
    DIRICHLET_CONTROLLED vertex.
    """
    check_potential(q, g)
    data = data or {}
    T = controls.T if T is None else T
    dt_max = stable_dt(g, q)
    if dt is None:
        nt = max(1, math.ceil(T / dt_max - 1e-12))
        dt = T / nt
    else:
        if dt > dt_max * (1 + 1e-12):
            raise CFLViolation(f"dt={dt} exceeds stable step {dt_max}")
        nt = nsteps(T, dt)
    times = np.arange(nt + 2) * dt  # one lookahead level past T
    f1 = _resample_dirichlet(_extrapolated(controls.f1), times)
    f2 = _window_average(_extrapolated(controls.f2), times, dt)

    h = {}
    for e in g.edges:
        n = g.npoints(e.id)
        if n < 3:
            raise ValueError(f"edge {e.id} needs at least 3 grid points")
        h[e.id] = e.length / (n - 1)
    u = {e.id: np.zeros((nt + 2, g.npoints(e.id))) for e in g.edges}
    lam2 = {k: (dt / hk) ** 2 for k, hk in h.items()}

    deltas = []
    bounds = []
    for v in g.vertices:
        inc = g.incident(v.id)
        if v.kind is VertexKind.DELTA_PRIME:
            hs = np.array([h[eid] for eid, _ in inc])
            jump = np.array([1.0 if eid == v.jump_edge else 0.0 for eid, _ in inc])
            deltas.append((inc, hs, jump))
        else:
            ((eid, end),) = inc
            if v.id in data and v.kind is VertexKind.NEUMANN:
                series = _window_average(data[v.id], times, dt)
            elif v.id in data:
                series = _resample_dirichlet(data[v.id], times)
            elif v.kind is VertexKind.DIRICHLET_CONTROLLED:
                series = f1
            else:
                series = np.zeros_like(times)
            bounds.append((eid, end, v.kind is VertexKind.NEUMANN, series))

    def ghost(eid, end, n):
        # vertex node advanced by the interior stencil with ghost value
        # u_{-1} = u_1 - 2 h d, d the outward derivative averaged over [t - dt, t + dt]
        # (exact for q = 0 at unit Courant number); returns (value at d = 0, d coefficient)
        k, nb = (0, 1) if end == 0 else (-1, -2)
        arr = u[eid]
        node = arr[n, k]
        old = arr[n - 1, k] if n > 0 else 0.0
        val = 2 * node - old + lam2[eid] * (2 * arr[n, nb] - 2 * node) - dt * dt * q[eid][k] * node
        return val, 2 * lam2[eid] * h[eid]

    # zero data: the level before t = 0 vanishes as well
    for n in range(0, nt + 1):
        for eid, arr in u.items():
            un = arr[n]
            uo = arr[n - 1] if n > 0 else np.zeros_like(un)
            arr[n + 1, 1:-1] = (
                2 * un[1:-1] - uo[1:-1] + lam2[eid] * (un[2:] - 2 * un[1:-1] + un[:-2]) - dt * dt * q[eid][1:-1] * un[1:-1]
            )
        for eid, end, neumann, series in bounds:
            if neumann:
                base, w = ghost(eid, end, n)
                u[eid][n + 1, end] = base - w * series[n]
            else:
                u[eid][n + 1, end] = series[n + 1]
        for inc, hs, jump in deltas:
            parts = [ghost(eid, end, n) for eid, end in inc]
            base = np.array([p[0] for p in parts])
            w = np.array([p[1] for p in parts])
            c = jump * f2[n]
            d = (base.sum() - np.dot(w, c)) / w.sum()
            for (eid, end), val in zip(inc, base - w * (d + c)):
                u[eid][n + 1, end] = val
    ahead = {k: v[nt + 1].copy() for k, v in u.items()}
    u = {k: v[: nt + 1] for k, v in u.items()}
    return SpaceTimeField(g, u, dt, controls, ahead)


def energy(field: SpaceTimeField, q: dict, t: float) -> float:
    n = field.index(t)
    ut = field.velocity(t).values
    total = 0.0
    for e in field.graph.edges:
        x = field.graph.grid(e.id)
        un = field.u[e.id][n]
        ux = np.gradient(un, x, edge_order=2)
        total += 0.5 * trapezoid(ut[e.id] ** 2 + ux**2 + q[e.id] * un**2, x)
    return float(total)


@dataclass
class ErrorReport:
    abs_h1: float
    rel_h1: float
    abs_l2_velocity: float
    rel_l2_velocity: float
    per_edge: dict
    vertex_sum_residual: float
    jump_residual: float
    f1_support: tuple | None
    f2_support: tuple | None

    def as_dict(self) -> dict:
        d = {
            "abs_h1": self.abs_h1,
            "rel_h1": self.rel_h1,
            "abs_l2_velocity": self.abs_l2_velocity,
            "rel_l2_velocity": self.rel_l2_velocity,
            "vertex_sum_residual": self.vertex_sum_residual,
            "jump_residual": self.jump_residual,
        }
        for eid, (a, b) in sorted(self.per_edge.items()):
            d[f"edge_{eid}_h1_error"] = a
            d[f"edge_{eid}_l2_velocity_error"] = b
        return d


def _rel(err: float, ref: float) -> float:
    if ref == 0.0:
        return 0.0 if err == 0.0 else math.inf
    return err / ref


def verify_control(
    g: MetricGraph,
    q: dict,
    controls: ControlPair,
    shape: GraphState | None = None,
    velocity: GraphState | None = None,
    T: float | None = None,
) -> ErrorReport:
    """Simulate and compare (u, u_t)(T) with the targets that are given."""
    T = controls.T if T is None else T
    field = simulate(g, q, controls, T)
    u_T = field.state(T)
    ut_T = field.velocity(T)
    nan = float("nan")
    abs_h1 = rel_h1 = abs_v = rel_v = nan
    per_edge = {}
    if shape is not None:
        diff = u_T - shape
        abs_h1 = state_norms(diff, g)[0]
        rel_h1 = _rel(abs_h1, state_norms(shape, g)[0])
    if velocity is not None:
        diffv = ut_T - velocity
        abs_v = state_norms(diffv, g)[1]
        rel_v = _rel(abs_v, state_norms(velocity, g)[1])
    for e in g.edges:
        sub = MetricGraph((e,), (), dx=g.dx)
        a = b = nan
        if shape is not None:
            a = state_norms(GraphState({e.id: u_T.values[e.id] - shape.values[e.id]}), sub)[0]
        if velocity is not None:
            b = state_norms(GraphState({e.id: ut_T.values[e.id] - velocity.values[e.id]}), sub)[1]
        per_edge[e.id] = (a, b)
    vsum = 0.0
    jres = 0.0
    times = field.times
    f2 = _window_average(controls.f2, times, field.dt)
    for v in g.vertices:
        if v.kind is not VertexKind.DELTA_PRIME:
            continue
        vals = field.vertex_values(v.id)
        vsum = max(vsum, float(np.max(np.abs(sum(vals.values())))))
        ders = field.outward_derivatives(v.id)
        ref = [k for k in ders if k != v.jump_edge]
        for k, dk in ders.items():
            expect = ders[ref[0]] + (f2 if k == v.jump_edge else 0.0)
            jres = max(jres, float(np.max(np.abs(dk[2:] - expect[2:]))))
    return ErrorReport(
        abs_h1, rel_h1, abs_v, rel_v, per_edge, vsum, jres, controls.f1.support(), controls.f2.support()
    )

"""Graph solutions assembled from vertex traces.

Every edge between a delta-prime vertex and another vertex is an interval
whose solution is fixed by one source per end: the negated antiderivative of
the common outward derivative at a delta-prime vertex (plus F2 = -int f2 on
the jump edge), or the Dirichlet datum at a boundary vertex. The vertex-sum
conditions then become causal equations for the unknown sources, which
``TraceModel.solve`` marches forward one time step at a time.

Delays are counted in time steps: edge lengths must be integer multiples of
the model step (lengths are snapped otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ControlPair, GraphState, MetricGraph, StateRole, UnsupportedTemplate, VertexKind, nsteps
from .interval import GoursatKernels, compute_goursat_kernels, images, neg_antiderivative


class MarchingError(RuntimeError):
    pass


def source_name(vid: str) -> str:
    return f"G_{vid}"


JUMP = "F2"
DIRICHLET = "f1"


@dataclass
class EdgeRep:
    eid: str
    steps: int  # length in time steps
    kind: str  # "NN" or "ND"
    flip: bool  # representation coordinate runs head -> tail
    left: list  # [(signal, coef)] at representation x = 0
    right: list  # [(signal, coef)] at representation x = l
    kernels: GoursatKernels | None
    ends: dict = field(default_factory=dict)  # vertex id -> position in steps


@dataclass(frozen=True)
class VertexEq:
    """Vertex-sum condition evaluated ``shift`` steps ahead of the unknowns."""

    vertex: str
    shift: int = 0

    def residual(self, model: TraceModel, sig: dict, i: int) -> float:
        return model.vertex_value(self.vertex, i + self.shift, sig)


@dataclass(frozen=True)
class TieEq:
    """sum coef * signal[i] = rhs[i]."""

    coefs: tuple
    rhs: np.ndarray

    def residual(self, model: TraceModel, sig: dict, i: int) -> float:
        return sum(c * sig[name][i] for name, c in self.coefs) - self.rhs[i]


class TraceModel:
    def __init__(self, g: MetricGraph, q: dict, T: float, dt: float | None = None):
        self.graph = g
        self.q = q
        self.dt = g.dx if dt is None else dt
        self.T = T
        self.N = nsteps(T, self.dt)
        self.snapped = []
        self.edges: dict[str, EdgeRep] = {}
        kinds = {v.id: v for v in g.vertices}
        for e in g.edges:
            steps = g.npoints(e.id) - 1 if np.isclose(self.dt, g.dx) else int(round(e.length / self.dt))
            if abs(steps * self.dt - e.length) > 1e-9 * max(1.0, e.length):
                self.snapped.append(e.id)
            a, b = kinds[e.tail], kinds[e.head]
            dp_a = a.kind is VertexKind.DELTA_PRIME
            dp_b = b.kind is VertexKind.DELTA_PRIME
            if dp_a and dp_b:
                kind, flip, near, far = "NN", False, a, b
            elif dp_a:
                kind, flip, near, far = "ND", False, a, b
            elif dp_b:
                kind, flip, near, far = "ND", True, b, a
            else:
                raise UnsupportedTemplate(f"edge {e.id} has no delta-prime end")
            left = self._neumann_sources(near, e.id)
            right = self._neumann_sources(far, e.id) if kind == "NN" else self._dirichlet_sources(far)
            kern = compute_goursat_kernels(q[e.id], e.length, T) if np.any(q[e.id]) else None
            rep = EdgeRep(e.id, steps, kind, flip, left, right, kern)
            rep.ends = {near.id: 0, far.id: steps}
            self.edges[e.id] = rep
        self.names = sorted({n for r in self.edges.values() for n, _ in r.left + r.right})
        self._rows: dict = {}
        self._mats: dict = {}
        self._taps: dict = {}

    @staticmethod
    def _neumann_sources(v, eid):
        out = [(source_name(v.id), 1.0)]
        if v.jump_edge == eid:
            out.append((JUMP, 1.0))
        return out

    @staticmethod
    def _dirichlet_sources(v):
        return [(DIRICHLET, 1.0)] if v.kind is VertexKind.DIRICHLET_CONTROLLED else []

    # ------------------------------------------------------------ storage

    def zeros(self) -> dict:
        return {n: np.zeros(self.N + 1) for n in self.names}

    @property
    def has_kernels(self) -> bool:
        return any(r.kernels is not None for r in self.edges.values())

    def _row(self, eid: str, kernel: str, D: int):
        """Trapezoid weights dt * kappa(D dt, m dt) for m = 0..N (zero below m = D)."""
        rep = self.edges[eid]
        if rep.kernels is None:
            return None
        key = (eid, kernel, D)
        row = self._rows.get(key)
        if row is None:
            row = np.zeros(self.N + 1)
            if D <= self.N:
                m = np.arange(D, self.N + 1)
                row[D:] = self.dt * rep.kernels(kernel, D * self.dt, m * self.dt)
                row[D] *= 0.5
            self._rows[key] = row
        return row

    def _edge_images(self, rep: EdgeRep):
        return images(rep.kind, float(rep.steps), float(self.N))

    # ------------------------------------------------------------ evaluation

    def _vertex_taps(self, vid: str):
        taps = self._taps.get(vid)
        if taps is not None:
            return taps
        taps = []
        for eid, _ in self.graph.incident(vid):
            rep = self.edges[eid]
            pos = rep.ends[vid]
            for im in self._edge_images(rep):
                D = int(round(im.a + im.b * pos))
                if D > self.N:
                    continue
                srcs = rep.left if im.slot == "left" else rep.right
                row = self._row(eid, im.kernel, D)
                for name, c in srcs:
                    taps.append((name, im.sign * c, D, row))
        self._taps[vid] = taps
        return taps

    def vertex_value(self, vid: str, tau: int, sig: dict) -> float:
        """Sum over incident edges of the edge value at the vertex, time index tau."""
        total = 0.0
        for name, c, D, row in self._vertex_taps(vid):
            if tau < D:
                continue
            S = sig[name]
            val = S[tau - D]
            if row is not None:
                val += np.dot(row[D : tau + 1], S[tau - D :: -1])
            total += c * val
        return total

    def vertex_series(self, vid: str, sig: dict) -> np.ndarray:
        return np.array([self.vertex_value(vid, t, sig) for t in range(self.N + 1)])

    def profile(self, eid: str, sig: dict, tau: int | None = None) -> np.ndarray:
        """Edge values on the edge grid (tail to head) at time index tau."""
        tau = self.N if tau is None else tau
        rep = self.edges[eid]
        k = np.arange(rep.steps + 1)
        out = np.zeros(rep.steps + 1)
        for idx, im in enumerate(self._edge_images(rep)):
            srcs = rep.left if im.slot == "left" else rep.right
            if not srcs:
                continue
            D = (int(round(im.a)) + int(round(im.b)) * k).astype(int)
            live = D <= tau
            if not np.any(live):
                continue
            S = sum(c * sig[name] for name, c in srcs)
            val = np.where(live, S[np.clip(tau - D, 0, None)], 0.0)
            if rep.kernels is not None:
                M = self._matrix(rep, idx, im, D)
                val += M[:, : tau + 1] @ S[tau::-1]
            out += im.sign * val
        return out[::-1] if rep.flip else out

    def _matrix(self, rep, idx, im, D):
        key = (rep.eid, idx)
        M = self._mats.get(key)
        if M is None:
            M = np.stack([self._row(rep.eid, im.kernel, int(d)) for d in D])
            self._mats[key] = M
        return M

    def state(self, sig: dict, tau: int | None = None) -> GraphState:
        return GraphState({eid: self.profile(eid, sig, tau) for eid in self.edges}, StateRole.SHAPE)

    def velocity(self, sig: dict, tau: int | None = None) -> GraphState:
        rate = {n: np.gradient(v, self.dt, edge_order=2) for n, v in sig.items()}
        return GraphState({eid: self.profile(eid, rate, tau) for eid in self.edges}, StateRole.VELOCITY)

    # ------------------------------------------------------------ solving

    def solve(self, sig: dict, unknowns: list, equations: list, i0: int, i1: int) -> None:
        """Fill sig[u][i] for i0 <= i <= i1 so that every equation residual vanishes at i."""
        k = len(unknowns)
        if k != len(equations):
            raise MarchingError("need as many equations as unknowns")
        for i in range(i0, i1 + 1):
            for u in unknowns:
                sig[u][i] = 0.0
            r0 = np.array([eq.residual(self, sig, i) for eq in equations])
            A = np.empty((k, k))
            for j, u in enumerate(unknowns):
                sig[u][i] = 1.0
                A[:, j] = [eq.residual(self, sig, i) for eq in equations]
                A[:, j] -= r0
                sig[u][i] = 0.0
            try:
                x = np.linalg.solve(A, -r0)
            except np.linalg.LinAlgError as exc:
                raise MarchingError(f"singular instantaneous system at step {i}: {A.tolist()}") from exc
            if np.linalg.cond(A) > 1e12:
                raise MarchingError(f"ill-conditioned instantaneous system at step {i}: {A.tolist()}")
            for u, val in zip(unknowns, x):
                sig[u][i] = val

    def control_signals(self, controls: ControlPair) -> dict:
        sig = self.zeros()
        if DIRICHLET in sig:
            sig[DIRICHLET][:] = _on_grid(controls.f1, self)
        if JUMP in sig:
            sig[JUMP][:] = neg_antiderivative(_as_signal(controls.f2, self)).values
        return sig

    def forward(self, controls: ControlPair) -> dict:
        """Vertex sources of the controlled solution on [0, T]."""
        sig = self.control_signals(controls)
        return self.forward_from(sig)

    def forward_from(self, sig: dict) -> dict:
        dps = [v.id for v in self.graph.vertices if v.kind is VertexKind.DELTA_PRIME]
        self.solve(sig, [source_name(v) for v in dps], [VertexEq(v) for v in dps], 0, self.N)
        return sig


def _as_signal(sig, model):
    if len(sig.values) != model.N + 1 or not np.isclose(sig.dt, model.dt):
        from .graph import TimeSignal

        t = np.arange(model.N + 1) * model.dt
        return TimeSignal(sig(t), model.dt, sig.regularity)
    return sig


def _on_grid(sig, model):
    return _as_signal(sig, model).values


def signals_to_controls(model: TraceModel, sig: dict) -> ControlPair:
    from .graph import Regularity, TimeSignal

    f1 = sig.get(DIRICHLET, np.zeros(model.N + 1))
    F2 = sig.get(JUMP, np.zeros(model.N + 1))
    f2 = -np.gradient(F2, model.dt, edge_order=2)
    return ControlPair(TimeSignal(f1.copy(), model.dt, Regularity.H1_0), TimeSignal(f2, model.dt), model.T)

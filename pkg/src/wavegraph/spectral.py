"""Spectrum of the delta-prime graph operator, modal moments and the exact-control combiner.

Eigenpairs solve -phi'' + q phi = omega^2 phi on every edge with the vertex
conditions of the controlled problem: phi = 0 at boundary vertices, equal
outward derivatives and zero value sum at delta-prime vertices. On each grid
cell the potential is replaced by its cell mean, so the per-edge fundamental
solutions are products of exact 2x2 propagators; the secular matrix collects
the vertex conditions for the 2E coefficients (value and derivative at every
tail).

With the outward-derivative convention of ``graph`` the modal amplitude
a_n = <u, phi_n> of a controlled solution obeys

    a_n'' + omega_n^2 a_n = h_n,    h_n = omega_n kappa_n1 f1 - kappa_n2 f2,

with kappa_n1 the outward derivative of phi_n at the controlled vertex over
omega_n and kappa_n2 the value of phi_n on the jump edge at the jump vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .graph import (
    ControlPair,
    GraphState,
    GridMismatch,
    MetricGraph,
    Regularity,
    StateRole,
    TimeSignal,
    VertexKind,
    check_potential,
    control_time,
    inner,
    zero_potential,
)


class SpectrumError(RuntimeError):
    pass


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


# ---------------------------------------------------------------- propagators


def _cell_props(lam, h, qc):
    """Propagator entries (c, s, d) of y'' = (q - lam) y over cells of width h.

    (y, y')(x + h) = [[c, s], [d, c]] (y, y')(x); broadcasts over lam and cells.
    """
    k2 = np.asarray(lam, dtype=float)[..., None] - qc
    k = np.sqrt(np.abs(k2))
    kh = k * h
    osc = k2 >= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(osc, np.cos(kh), np.cosh(kh))
        s = np.where(k > 0, np.where(osc, np.sin(kh), np.sinh(kh)) / np.where(k > 0, k, 1.0), h)
        d = np.where(osc, -k * np.sin(kh), k * np.sinh(kh))
    return c, s, d


@dataclass
class _EdgeCells:
    h: np.ndarray  # cell widths
    q: np.ndarray  # cell-mean potential
    nodes: np.ndarray  # cell index boundaries on the edge grid (cells per grid interval)

    @property
    def length(self) -> float:
        return float(self.h.sum())


def _edge_cells(g: MetricGraph, q: dict, eid: str) -> _EdgeCells:
    x = g.grid(eid)
    qq = np.asarray(q[eid], dtype=float)
    if not np.any(qq):
        # one exact cell per grid interval keeps node sampling trivial
        return _EdgeCells(np.diff(x), np.zeros(len(x) - 1), np.arange(len(x)))
    return _EdgeCells(np.diff(x), 0.5 * (qq[1:] + qq[:-1]), np.arange(len(x)))


def _transfer(cells: _EdgeCells, lam: np.ndarray):
    """Total propagator of an edge for every lam (arrays of shape lam.shape)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if not np.any(cells.q):
        c, s, d = _cell_props(lam, np.array([cells.length]), np.zeros(1))
        return c[..., 0], s[..., 0], d[..., 0], c[..., 0]
    c, s, d = _cell_props(lam, cells.h, cells.q)
    P = np.stack([np.stack([c, s], -1), np.stack([d, c], -1)], -2)  # (..., cells, 2, 2)
    while P.shape[-3] > 1:
        if P.shape[-3] % 2:
            eye = np.broadcast_to(np.eye(2), P.shape[:-3] + (1, 2, 2))
            P = np.concatenate([P, eye], axis=-3)
        P = P[..., 1::2, :, :] @ P[..., 0::2, :, :]
    P = P[..., 0, :, :]
    return P[..., 0, 0], P[..., 0, 1], P[..., 1, 0], P[..., 1, 1]


class _Secular:
    """Vertex-condition matrix M(omega) acting on (y_j(0), y_j'(0)) for all edges j."""

    def __init__(self, g: MetricGraph, q: dict):
        self.g = g
        self.eids = [e.id for e in g.edges]
        self.col = {eid: 2 * i for i, eid in enumerate(self.eids)}
        self.cells = {eid: _edge_cells(g, q, eid) for eid in self.eids}
        rows = []
        for v in g.vertices:
            inc = g.incident(v.id)
            if v.kind is VertexKind.DELTA_PRIME:
                rows.append(("sum", inc))
                for other in inc[1:]:
                    rows.append(("deq", (inc[0], other)))
            elif v.kind is VertexKind.NEUMANN:
                rows.append(("der", inc[0]))
            else:
                rows.append(("val", inc[0]))
        if len(rows) != 2 * len(self.eids):
            raise SpectrumError("vertex conditions do not determine the edge coefficients")
        self.rows = rows

    def matrix(self, omega) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        lam = omega * omega
        n = 2 * len(self.eids)
        M = np.zeros(omega.shape + (n, n))
        P = {eid: _transfer(self.cells[eid], lam) for eid in self.eids}
        scale = 1.0 / np.maximum(omega, 1.0)

        def value(eid, end):
            j = self.col[eid]
            out = np.zeros(omega.shape + (n,))
            if end == 0:
                out[..., j] = 1.0
            else:
                p11, p12, _, _ = P[eid]
                out[..., j], out[..., j + 1] = p11, p12
            return out

        def outward(eid, end):
            j = self.col[eid]
            out = np.zeros(omega.shape + (n,))
            if end == 0:
                out[..., j + 1] = 1.0
            else:
                _, _, p21, p22 = P[eid]
                out[..., j], out[..., j + 1] = -p21, -p22
            return out * scale[..., None]

        for r, (kind, data) in enumerate(self.rows):
            if kind == "sum":
                M[..., r, :] = sum(value(eid, end) for eid, end in data)
            elif kind == "deq":
                (a, b) = data
                M[..., r, :] = outward(*b) - outward(*a)
            elif kind == "der":
                M[..., r, :] = outward(*data)
            else:
                M[..., r, :] = value(*data)
        return M

    def det(self, omega: float) -> float:
        return float(np.linalg.det(self.matrix(omega)[0]))

    def smin(self, omega: float) -> float:
        s = np.linalg.svd(self.matrix(omega)[0], compute_uv=False)
        return float(s[-1] / s[0])


def secular_determinant(g: MetricGraph, q: dict | None, omega) -> np.ndarray:
    """Determinant of the (row-scaled) vertex-condition matrix at each omega."""
    q = zero_potential(g) if q is None else q
    return np.linalg.det(_Secular(g, q).matrix(omega))


# ---------------------------------------------------------------- eigenpairs


@dataclass
class SpectralPair:
    omega: float
    phi: GraphState  # samples on the graph grid, unit L2 norm
    kappa1: float  # outward derivative at the controlled vertex / omega (0 for omega = 0)
    kappa2: float  # value on the jump edge at the jump vertex
    multiplicity: int = 1
    coef: dict = field(default_factory=dict, repr=False)  # edge id -> (y, y') at the grid nodes
    cells: dict = field(default_factory=dict, repr=False)

    def quadrature(self) -> dict:
        """Eigenfunction at six Gauss points per cell, with the matching weights."""
        out = {}
        for eid, (y, dy) in self.coef.items():
            cl = self.cells[eid]
            s = 0.5 * (_GL_X + 1.0)[None, :] * cl.h[:, None]
            c, sn, _ = _cell_props(self.omega**2, s, cl.q[:, None])
            vals = y[:-1, None] * c + dy[:-1, None] * sn
            out[eid] = (vals.ravel(), (0.5 * _GL_W[None, :] * cl.h[:, None]).ravel())
        return out


def _sample(cells: _EdgeCells, lam: float, y0: float, dy0: float):
    c, s, d = _cell_props(lam, cells.h, cells.q)
    n = cells.h.size
    y = np.empty(n + 1)
    dy = np.empty(n + 1)
    y[0], dy[0] = y0, dy0
    for j in range(n):
        y[j + 1] = c[j] * y[j] + s[j] * dy[j]
        dy[j + 1] = d[j] * y[j] + c[j] * dy[j]
    return y, dy


def _special_vertices(g: MetricGraph):
    ctrl = next((v for v in g.vertices if v.kind is VertexKind.DIRICHLET_CONTROLLED), None)
    jump = next((v for v in g.vertices if v.kind is VertexKind.DELTA_PRIME and v.jump_edge), None)
    return ctrl, jump


def _assemble(sec: _Secular, omega: float, vec: np.ndarray, mult: int) -> SpectralPair:
    g = sec.g
    lam = omega * omega
    coef = {}
    for eid in sec.eids:
        j = sec.col[eid]
        coef[eid] = _sample(sec.cells[eid], lam, vec[j], vec[j + 1])
    pair = SpectralPair(omega, GraphState({}), 0.0, 0.0, mult, coef, sec.cells)
    return _normalized(pair, g)


def _normalized(pair: SpectralPair, g: MetricGraph) -> SpectralPair:
    quad = pair.quadrature()
    norm = math.sqrt(sum(float(np.dot(w, v * v)) for v, w in quad.values()))
    y1 = pair.coef[g.edges[0].id][0]
    scale = max(float(np.max(np.abs(y1))), 1e-300)
    first = np.nonzero(np.abs(y1) > 1e-8 * scale)[0]
    sign = -1.0 if first.size and y1[first[0]] < 0 else 1.0
    coef = {eid: (sign * y / norm, sign * dy / norm) for eid, (y, dy) in pair.coef.items()}
    phi = GraphState({eid: y.copy() for eid, (y, _) in coef.items()}, StateRole.SHAPE)
    ctrl, jump = _special_vertices(g)
    k1 = k2 = 0.0
    if ctrl is not None and pair.omega > 0:
        ((eid, end),) = g.incident(ctrl.id)
        der = coef[eid][1][0] if end == 0 else -coef[eid][1][-1]
        k1 = float(der / pair.omega)
    if jump is not None:
        end = next(e for eid, e in g.incident(jump.id) if eid == jump.jump_edge)
        k2 = float(coef[jump.jump_edge][0][end])
    return SpectralPair(pair.omega, phi, k1, k2, pair.multiplicity, coef, pair.cells)


def _quad_inner(a: SpectralPair, b: SpectralPair) -> float:
    qa, qb = a.quadrature(), b.quadrature()
    return float(sum(np.dot(w, v * qb[eid][0]) for eid, (v, w) in qa.items()))


def gram_matrix(pairs: list) -> np.ndarray:
    """L2 inner products of the eigenfunctions by Gauss quadrature on every grid cell."""
    quads = [p.quadrature() for p in pairs]
    n = len(pairs)
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = sum(float(np.dot(w, v * quads[j][eid][0])) for eid, (v, w) in quads[i].items())
    return G


def _golden_min(fn, a: float, b: float, iters: int = 90) -> float:
    """Golden-section minimum; robust for the V-shaped smallest singular value at an even root."""
    r = 0.5 * (math.sqrt(5.0) - 1.0)
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - r * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + r * (b - a)
            fd = fn(d)
    return float(0.5 * (a + b))


def _null_vectors(sec: _Secular, omega: float, tol: float) -> np.ndarray:
    _, s, vt = np.linalg.svd(sec.matrix(omega)[0])
    k = int(np.sum(s < tol * s[0]))
    return vt[len(s) - k :].T


def compute_spectrum(
    g: MetricGraph, q: dict | None = None, N: int = 64, scan_step: float | None = None, null_tol: float = 1e-7
) -> list:
    """First N eigenpairs (repeated by multiplicity), by secular-determinant scanning.

    Sign changes of the determinant are refined with Brent's method; interior
    minima of the smallest singular value without a sign change are refined as
    well and kept when the matrix is singular there (even multiplicities).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    q = zero_potential(g) if q is None else q
    check_potential(q, g)
    sec = _Secular(g, q)
    total = sum(e.length for e in g.edges)
    step = math.pi / (8 * total) if scan_step is None else scan_step
    roots: list = []

    # omega = 0 is an eigenvalue when the operator has a kernel (e.g. q = 0 on the cycle)
    if sec.smin(0.0) < null_tol:
        roots.append(0.0)

    def count():
        return sum(_null_vectors(sec, r, null_tol).shape[1] for r in roots)

    lo = 0.0
    chunk = 256
    while count() < N:
        om = lo + step * np.arange(1, chunk + 1)
        if lo == 0.0:
            om = np.concatenate([[step * 1e-3], om])
        else:
            om = np.concatenate([[lo], om])
        M = sec.matrix(om)
        det = np.linalg.det(M)
        sv = np.linalg.svd(M, compute_uv=False)
        smin = sv[:, -1] / sv[:, 0]
        sign = np.sign(det)
        for i in range(len(om) - 1):
            if sign[i] == 0:
                if om[i] > 0 and (not roots or om[i] - roots[-1] > 0.5 * step):
                    roots.append(float(om[i]))
                continue
            if sign[i] * sign[i + 1] < 0:
                try:
                    r = brentq(sec.det, om[i], om[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
                except (ValueError, RuntimeError) as exc:
                    raise SpectrumError(f"root refinement failed in [{om[i]}, {om[i + 1]}]") from exc
                roots.append(float(r))
            elif 0 < i and smin[i] < smin[i - 1] and smin[i] <= smin[i + 1] and sign[i - 1] * sign[i] > 0:
                r = _golden_min(sec.smin, om[i - 1], om[i + 1])
                if sec.smin(r) < null_tol:
                    roots.append(r)
        lo = float(om[-1])
        if lo > 1e6:
            raise SpectrumError("eigenvalue scan did not find enough roots")
    roots = sorted(set(roots))
    pairs = []
    for r in roots:
        vecs = _null_vectors(sec, r, null_tol)
        block = [_assemble(sec, r, vecs[:, k], vecs.shape[1]) for k in range(vecs.shape[1])]
        pairs.extend(_orthonormalize(block, g))
    return pairs[:N]


def _orthonormalize(block: list, g: MetricGraph) -> list:
    if len(block) == 1:
        return block
    out = []
    for p in block:
        coef = {eid: (y.copy(), dy.copy()) for eid, (y, dy) in p.coef.items()}
        cur = SpectralPair(p.omega, p.phi, 0.0, 0.0, p.multiplicity, coef, p.cells)
        for o in out:
            c = _quad_inner(cur, o)
            cur.coef = {eid: (y - c * o.coef[eid][0], dy - c * o.coef[eid][1]) for eid, (y, dy) in cur.coef.items()}
        out.append(_normalized(cur, g))
    return out


def check_eigenpair(g: MetricGraph, pair: SpectralPair) -> dict:
    """Largest vertex-condition violations of a computed eigenfunction."""
    vsum = der = bnd = 0.0
    for v in g.vertices:
        inc = g.incident(v.id)
        vals = [pair.coef[eid][0][end] for eid, end in inc]
        ders = [pair.coef[eid][1][0] if end == 0 else -pair.coef[eid][1][-1] for eid, end in inc]
        if v.kind is VertexKind.DELTA_PRIME:
            vsum = max(vsum, abs(sum(vals)))
            der = max(der, float(np.ptp(ders)))
        elif v.kind is VertexKind.NEUMANN:
            der = max(der, abs(ders[0]))
        else:
            bnd = max(bnd, abs(vals[0]))
    return {"vertex_sum": vsum, "derivative_spread": der, "boundary_value": bnd}


# ---------------------------------------------------------------- trace growth


@dataclass
class TraceGrowthReport:
    derivative_ratio: np.ndarray  # |d phi_n(v1)| / n
    jump_value: np.ndarray  # |phi_n(v2)| on the jump edge
    max_derivative_ratio: float
    max_jump_value: float
    flagged: list

    def as_dict(self) -> dict:
        return {
            "max_derivative_ratio": self.max_derivative_ratio,
            "max_jump_value": self.max_jump_value,
            "flagged": ",".join(self.flagged) or "none",
        }


def _looks_unbounded(seq: np.ndarray) -> bool:
    tail = seq[-5:]
    return bool(np.all(np.diff(tail) > 0) and tail[-1] > 2 * np.median(seq))


def trace_growth_check(pairs: list) -> TraceGrowthReport:
    if len(pairs) < 10:
        raise ValueError("trace growth check needs at least 10 eigenpairs")
    n = np.arange(1, len(pairs) + 1)
    d = np.array([abs(p.kappa1 * p.omega) for p in pairs]) / n
    v = np.array([abs(p.kappa2) for p in pairs])
    flagged = [name for name, s in (("derivative", d), ("jump_value", v)) if _looks_unbounded(s)]
    return TraceGrowthReport(d, v, float(d.max()), float(v.max()), flagged)


# ---------------------------------------------------------------- moments


@dataclass
class MomentTargets:
    a: np.ndarray
    b: np.ndarray
    omega: np.ndarray

    @property
    def a_omega(self) -> np.ndarray:
        return self.a * self.omega

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.a_omega**2) + np.sum(self.b**2)))


def fourier_targets(phi1: GraphState, phi2: GraphState, pairs: list, g: MetricGraph) -> MomentTargets:
    """a_n = <phi1, phi_n>, b_n = <phi2, phi_n> by trapezoid quadrature."""
    for p in pairs:
        for eid, y in p.phi.values.items():
            if len(phi1.values.get(eid, ())) != len(y) or len(phi2.values.get(eid, ())) != len(y):
                raise GridMismatch(f"target and eigenfunction grids differ on edge {eid}")
    a = np.array([inner(phi1, p.phi, g) for p in pairs])
    b = np.array([inner(phi2, p.phi, g) for p in pairs])
    return MomentTargets(a, b, np.array([p.omega for p in pairs]))


def synthesize(targets: MomentTargets, pairs: list, role: StateRole = StateRole.SHAPE, which: str = "a") -> GraphState:
    coefs = targets.a if which == "a" else targets.b
    vals = {eid: sum(c * p.phi.values[eid] for c, p in zip(coefs, pairs)) for eid in pairs[0].phi.values}
    return GraphState(vals, role)


def free_evolve(targets: MomentTargets, t: float) -> MomentTargets:
    """Modal coefficients of the uncontrolled solution t time units later (t < 0: earlier)."""
    a, b, w = targets.a, targets.b, targets.omega
    c, s = np.cos(w * t), np.sin(w * t)
    sinc = np.where(w > 0, s / np.where(w > 0, w, 1.0), t)
    return MomentTargets(a * c + b * sinc, -w * w * a * sinc + b * c, w.copy())


def _forcing(f1: TimeSignal, f2: TimeSignal, pairs: list) -> np.ndarray:
    w = np.array([p.omega for p in pairs])[:, None]
    k1 = np.array([p.kappa1 for p in pairs])[:, None]
    k2 = np.array([p.kappa2 for p in pairs])[:, None]
    return w * k1 * f1.values[None, :] - k2 * f2.values[None, :]


def modal_amplitudes(f1: TimeSignal, f2: TimeSignal, pairs: list, t: float) -> MomentTargets:
    """Variation of parameters: a_n(t) = int_0^t h_n(s) sin(omega_n (t - s)) / omega_n ds, and a_n'(t)."""
    n = int(round(t / f1.dt))
    s = f1.times[: n + 1]
    h = _forcing(f1, f2, pairs)[:, : n + 1]
    w = np.array([p.omega for p in pairs])[:, None]
    tau = t - s[None, :]
    kern = np.where(w > 0, np.sin(w * tau) / np.where(w > 0, w, 1.0), tau)
    a = trapezoid(h * kern, s, axis=1)
    b = trapezoid(h * np.cos(w * tau), s, axis=1)
    return MomentTargets(a, b, w[:, 0].copy())


@dataclass
class MomentResidual:
    sine: np.ndarray  # |a_n omega_n - int h_n sin omega_n (T - t)|
    cosine: np.ndarray  # |b_n - int h_n cos omega_n (T - t)|
    variation_check: np.ndarray  # final amplitudes: direct variation of parameters vs rotated moments
    target_norm: float

    @property
    def max_relative(self) -> float:
        worst = max(float(np.max(self.sine, initial=0.0)), float(np.max(self.cosine, initial=0.0)))
        if self.target_norm == 0.0:
            return 0.0 if worst == 0.0 else math.inf
        return worst / self.target_norm


def moment_residual(f1: TimeSignal, f2: TimeSignal, pairs: list, targets: MomentTargets, T: float) -> MomentResidual:
    """Residuals of the moment equations on [0, 2T] for the targets reached by the combined control.

    omega_n a_n = int_0^2T h_n(t) sin omega_n (T - t) dt,  b_n = int_0^2T h_n(t) cos omega_n (T - t) dt.
    """
    t = f1.times
    h = _forcing(f1, f2, pairs)
    w = np.array([p.omega for p in pairs])[:, None]
    S = trapezoid(h * np.sin(w * (T - t[None, :])), t, axis=1)
    C = trapezoid(h * np.cos(w * (T - t[None, :])), t, axis=1)
    sine = np.abs(targets.a_omega - S)
    cosine = np.abs(targets.b - C)
    # the moments are the modal data at T of a solution reaching the final state a T later
    w0 = w[:, 0]
    zero = w0 == 0
    a_mid = np.where(zero, trapezoid(h * (T - t[None, :]), t, axis=1), S / np.where(zero, 1.0, w0))
    final = free_evolve(MomentTargets(a_mid, C, w0.copy()), T)
    direct = modal_amplitudes(f1, f2, pairs, 2 * T)
    check = np.abs(final.a - direct.a) + np.abs(final.b - direct.b)
    return MomentResidual(sine, cosine, check, targets.norm)


# ---------------------------------------------------------------- combination


class HorizonMismatch(ValueError):
    pass


def combine_exact_control(shape: ControlPair, velocity: ControlPair, T: float, tol: float = 1e-10) -> ControlPair:
    """Combine controls on [0, T] into one on [0, 2T].

    f1' = (f10' + f11')/2 and f2 = (f20 + f21)/2, where f11', f20 are extended
    oddly about t = T and f10', f21 evenly; f1 is the running integral of f1'.
    Integrating the extensions gives, for t > T,
    f1(t) = (f11(2T - t) - f10(2T - t))/2 (using f10(T) = 0) and
    f2(t) = (f21(2T - t) - f20(2T - t))/2.
    """
    sigs = (shape.f1, shape.f2, velocity.f1, velocity.f2)
    if any(not math.isclose(c.T, T, rel_tol=0, abs_tol=1e-9 * max(1.0, T)) for c in (shape, velocity)):
        raise HorizonMismatch("both control pairs must live on [0, T]")
    dt = shape.dt
    if any(len(s.values) != len(sigs[0].values) or not math.isclose(s.dt, dt) for s in sigs):
        raise HorizonMismatch("control signals on different grids")
    f10, f20, f11, f21 = (s.values for s in sigs)
    scale = max(float(np.max(np.abs(f10))), float(np.max(np.abs(f11))), 1e-300)
    if abs(f10[0]) > tol * scale or abs(f10[-1]) > tol * scale or abs(f11[0]) > tol * scale:
        raise ValueError("shape f1 must vanish at 0 and T, velocity f1 at 0")
    f1 = np.concatenate([0.5 * (f10 + f11), 0.5 * (f11 - f10)[-2::-1]])
    f2 = np.concatenate([0.5 * (f20 + f21), 0.5 * (f21 - f20)[-2::-1]])
    norm = max(float(np.max(np.abs(f1))), 1e-300)
    if abs(f1[0]) > tol * norm or abs(f1[-1]) > tol * norm:
        raise ValueError("combined f1 is not in H1_0(0, 2T)")
    return ControlPair(TimeSignal(f1, dt, Regularity.H1_0), TimeSignal(f2, dt), 2 * T)


def exact_control(
    g: MetricGraph,
    psi1: GraphState,
    psi2: GraphState,
    T: float | None = None,
    q: dict | None = None,
    N: int = 64,
    pairs: list | None = None,
    info: dict | None = None,
) -> ControlPair:
    """Control on [0, 2T] steering the cycle from rest to (psi1, psi2), projected on N modes.

    The combined control leaves at 2T the free evolution over T of the shape
    and velocity targets it was built from, so those targets are the modal
    projection of (psi1, psi2) evolved backward by T.
    """
    from .synthesis import cycle_shape_control, cycle_velocity_control

    q = zero_potential(g) if q is None else q
    T = control_time(g) if T is None else T
    pairs = compute_spectrum(g, q, N) if pairs is None else pairs
    final = fourier_targets(psi1, psi2, pairs, g)
    start = free_evolve(final, -T)
    phi1 = synthesize(start, pairs, StateRole.SHAPE, "a")
    phi2 = synthesize(start, pairs, StateRole.VELOCITY, "b")
    shape = cycle_shape_control(g, phi1, T, q, info=None)
    velocity = cycle_velocity_control(g, phi2, T, q, info=None)
    controls = combine_exact_control(shape, velocity, T)
    if info is not None:
        info["targets"] = start
        info["final_modes"] = final
        info["modes"] = len(pairs)
        info["f1_support"] = controls.f1.support()
        info["f2_support"] = controls.f2.support()
    return controls

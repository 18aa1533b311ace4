"""Constructive shape and velocity controls on the star and cycle templates.

Each construction reads edge sources off the target, marches the vertex
conditions forward in time for whatever sources remain, and finally fixes the
controlled edge with a Dirichlet correction computed from the residual.
Residuals are evaluated with the trace model, never with the finite-difference
simulator.
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
    Regularity,
    StateRole,
    Template,
    TimeSignal,
    check_target_compatibility,
    control_time,
    nsteps,
    validate_graph,
    zero_potential,
)
from .interval import GoursatKernels, VolterraOperator, compute_goursat_kernels, solve_volterra
from .traces import DIRICHLET, JUMP, MarchingError, TieEq, TraceModel, VertexEq, signals_to_controls, source_name


class IncompatibleTarget(ValueError):
    pass


class HorizonTooShort(ValueError):
    pass


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class MarchingSchedule:
    delta: float
    breakpoints: np.ndarray  # t_n = n * delta, last one >= end
    end: float  # right end of the marching window, T - l3

    @property
    def cells(self):
        b = self.breakpoints
        return [(b[k], min(b[k + 1], self.end)) for k in range(len(b) - 1)]


def marching_schedule(lengths, T: float | None = None, dt: float | None = None) -> MarchingSchedule:
    """Cell length for the two-source march of the cycle's first step.

    Every delayed argument (t - 2n l_j and t - l2 + l3) must land in an
    earlier cell, which min(l1, l3, l2 - l3) guarantees when l2 > l3.
    """
    l1, l2, l3, l4 = (float(v) for v in lengths)
    if min(l1, l2, l3, l4) <= 0 or l2 < l3:
        raise ValueError("degenerate lengths: need positive lengths with l2 >= l3")
    delta = min(l1, l3, l2 - l3) if l2 > l3 else min(l1, l2)
    if dt is not None:
        delta = math.floor(delta / dt + 1e-9) * dt
        if delta <= 0:
            raise MarchingError("marching cell shorter than the time step")
    T = max(l1 + l2, l3 + l4) if T is None else T
    end = T - l3
    n = max(1, math.ceil(end / delta - 1e-9))
    return MarchingSchedule(delta, np.arange(n + 1) * delta, end)


def march_solve(model: TraceModel, sig: dict, schedule: MarchingSchedule) -> dict:
    """Solve the v2/v3 vertex conditions for (G_v2, F2) given G_v3, cell by cell."""
    dt = model.dt
    L3 = model.edges["e3"].steps
    eqs = [VertexEq("v2"), VertexEq("v3", L3)]
    last = model.N - L3
    nxt = 0
    for _, b in schedule.cells:
        i1 = min(int(round(b / dt)), last)
        if i1 >= nxt:
            model.solve(sig, [source_name("v2"), JUMP], eqs, nxt, i1)
            nxt = i1 + 1
    if nxt <= last:
        model.solve(sig, [source_name("v2"), JUMP], eqs, nxt, last)
    return sig


def cell_matrix(model: TraceModel) -> np.ndarray:
    """Instantaneous coefficients of (G_v2, F2) in the two marching equations."""
    sig = model.zeros()
    L3 = model.edges["e3"].steps
    i = model.N - L3
    eqs = [VertexEq("v2"), VertexEq("v3", L3)]
    A = np.empty((2, 2))
    for j, u in enumerate([source_name("v2"), JUMP]):
        sig[u][i] = 1.0
        A[:, j] = [eq.residual(model, sig, i) for eq in eqs]
        sig[u][i] = 0.0
    return A


# ---------------------------------------------------------------- read-off


def _readoff(profile: np.ndarray, kernels: GoursatKernels | None, which: str, N: int, dt: float, rate: bool):
    """Source S on [0, N] with S = 0 before N - L reproducing ``profile`` at the end time.

    ``profile[k]`` is the target at distance k dt from the source end. With a
    kernel, profile(x) = eta(x) + int_x^l kappa(x, s) eta(s) ds for
    eta(s) = S(T - s) (or S'(T - s) for velocity targets), a Volterra equation
    in the reversed variable r = l - x.
    """
    L = len(profile) - 1
    if L > N:
        raise HorizonTooShort("edge longer than the horizon")
    if kernels is None or kernels.zero:
        eta = np.asarray(profile, dtype=float).copy()
    else:
        r = np.arange(L + 1) * dt
        rr, ss = np.meshgrid(r, r, indexing="ij")
        K = kernels(which, L * dt - rr, L * dt - ss)
        K = np.where(ss <= rr, K, 0.0)
        zeta = solve_volterra(VolterraOperator(1.0, K, dt), TimeSignal(np.asarray(profile, float)[::-1], dt))
        eta = zeta.values[::-1]
    out = np.zeros(N + 1)
    out[N - L :] = eta[::-1]  # S(T - k dt) = eta_k
    if rate:
        rate_vals = out.copy()
        out = np.zeros(N + 1)
        seg = rate_vals[N - L :]
        out[N - L :] = np.concatenate([[0.0], np.cumsum(0.5 * (seg[1:] + seg[:-1]) * dt)])
    return out


def trace_from_target(
    psi: np.ndarray,
    length: float,
    q,
    representation: str,
    T: float,
    dt: float,
    kernels: GoursatKernels | None = None,
    velocity: bool = False,
) -> TimeSignal:
    """Boundary datum supported in [T - l, T] whose solution at T equals ``psi``.

    For "NN"/"ND" the datum is the outward derivative g at x = 0 and ``psi`` is
    sampled from x = 0; for "DIRICHLET" it is the value f at x = l and ``psi``
    is sampled by distance from that end.
    """
    N = nsteps(T, dt)
    if kernels is None and q is not None and np.any(q):
        kernels = compute_goursat_kernels(q, length, T)
    if representation in ("NN", "ND"):
        S = _readoff(psi, kernels, "w_plus", N, dt, velocity)
        gvals = -np.gradient(S, dt, edge_order=2)
        return TimeSignal(gvals, dt, Regularity.L2)
    if representation == "DIRICHLET":
        S = _readoff(psi, kernels, "k_minus", N, dt, velocity)
        return TimeSignal(S, dt, Regularity.H1)
    raise ValueError(f"unknown representation {representation!r}")


def extend_f1(f1, t_end: float, T: float) -> TimeSignal:
    """Keep f1 on [0, t_end] and taper linearly to zero at T."""
    vals = np.array(f1.values, dtype=float)
    dt = f1.dt
    ie = int(round(t_end / dt))
    n = nsteps(T, dt)
    if len(vals) < n + 1:
        vals = np.concatenate([vals, np.zeros(n + 1 - len(vals))])
    vals = vals[: n + 1]
    if ie < n:
        frac = (np.arange(ie, n + 1) - ie) / (n - ie)
        vals[ie:] = vals[ie] * (1.0 - frac)
    vals[0] = 0.0
    return TimeSignal(vals, dt, Regularity.H1_0)


# ---------------------------------------------------------------- helpers


def _prepare(g: MetricGraph, target: GraphState, T, q, template: Template, shape: bool):
    if g.template is not template:
        raise ValueError(f"expected a {template.value} graph")
    rep = validate_graph(g)
    if rep.violations:
        raise ValueError("; ".join(rep.violations))
    Tstar = control_time(g)
    T = Tstar if T is None else float(T)
    if T < Tstar - 1e-12:
        raise HorizonTooShort(f"T={T} is below the control time {Tstar}")
    q = zero_potential(g) if q is None else q
    if shape:
        comp = check_target_compatibility(target, g)
        if comp.violations:
            raise IncompatibleTarget("; ".join(comp.violations))
    return T, q


def _model(g, q, T, model):
    if model is not None:
        return model
    return TraceModel(g, q, T)


def _taper(model: TraceModel, sig: dict, iend: int) -> None:
    f = sig[DIRICHLET]
    ext = extend_f1(TimeSignal(f, model.dt), iend * model.dt, model.T)
    f[:] = ext.values


def _taper_rate(model: TraceModel, sig: dict, iend: int) -> None:
    """Rate-space taper: after iend the rate is r0 (1 - s) + b 6 s (1 - s), s in [0, 1],
    continuous at both ends, with b chosen so that the integrated f1 vanishes at T."""
    r = sig[DIRICHLET]
    n = model.N - iend
    if n <= 0:
        return
    value = trapezoid(r[: iend + 1], dx=model.dt)
    s = np.arange(n + 1) / n
    base = r[iend] * (1.0 - s)
    bump = 6.0 * s * (1.0 - s)
    b = (-value - trapezoid(base, dx=model.dt)) / trapezoid(bump, dx=model.dt)
    r[iend:] = base + b * bump


def _kern(model, eid):
    return model.edges[eid].kernels


def _dirichlet_fix(model: TraceModel, sig: dict, target: GraphState, rate: bool, info: dict | None) -> dict:
    """Final correction on e1 from the residual of the assembled solution."""
    full = model.forward_from({k: v.copy() for k, v in sig.items()})
    now = model.velocity(full) if rate else model.state(full)
    resid = target.values["e1"] - now.values["e1"]
    S = _readoff(resid, _kern(model, "e1"), "k_minus", model.N, model.dt, rate)
    out = {k: v.copy() for k, v in sig.items()}
    out[DIRICHLET] = out[DIRICHLET] + S
    if info is not None:
        info["residual_e1_before_fix"] = float(np.max(np.abs(resid)))
    return out


def _finish(model: TraceModel, sig: dict, info: dict | None) -> ControlPair:
    controls = signals_to_controls(model, sig)
    if info is not None:
        info["f1_support"] = controls.f1.support()
        info["f2_support"] = controls.f2.support()
        info["snapped_edges"] = list(model.snapped)
    return controls


# ---------------------------------------------------------------- star


def _bridge(x: np.ndarray, i0: int, i1: int, dt: float, slope: float) -> None:
    """Continue x past i0 with matching slope, turning linearly to ``slope`` by i1 (C1 join)."""
    s0 = (x[i0] - x[i0 - 1]) / dt if i0 >= 1 else 0.0
    t = np.arange(len(x) - i0) * dt
    if i1 <= i0:
        x[i0:] = x[i0] + s0 * t
        return
    r = (i1 - i0) * dt
    tc = np.minimum(t, r)
    x[i0:] = x[i0] + s0 * tc + (slope - s0) * tc * tc / (2 * r) + slope * (t - tc)


def star_shape_control(
    g: MetricGraph, phi: GraphState, T: float | None = None, q: dict | None = None, info: dict | None = None, model=None
) -> ControlPair:
    """Shape control on the three-edge star.

    The sources on e2 and e3 are read off the target. Before the Dirichlet
    control can reach v0 (t < l1) the vertex condition fixes the e3 source
    from the e2 source; this early part is held constant until the e3 window
    [T - l3, T] opens, and the window read-off accounts for it.
    """
    T, q = _prepare(g, phi, T, q, Template.STAR, True)
    model = _model(g, q, T, model)
    N = model.N
    L1, L3 = model.edges["e1"].steps, model.edges["e3"].steps
    G0 = source_name("v0")
    sig = model.zeros()
    S2 = _readoff(phi.values["e2"], _kern(model, "e2"), "w_plus", N, model.dt, False)
    early_end = min(L1, N)
    model.solve(sig, [G0, JUMP], [VertexEq("v0"), TieEq(((G0, 1.0), (JUMP, 1.0)), S2)], 0, early_end)
    open_at = N - L3
    if open_at < early_end:
        raise HorizonTooShort("horizon too short for the e3 window")
    # a C1 join at the window start needs the held slope to be -phi3'(l3) / 2
    e3 = phi.values["e3"]
    end_slope = 0.5 * (3 * e3[-1] - 4 * e3[-2] + e3[-3]) / (2 * g.dx)
    _bridge(sig[G0], early_end, open_at, model.dt, end_slope)
    pre = model.zeros()
    pre[G0][:] = sig[G0]
    known = model.profile("e3", pre)
    late = _readoff(phi.values["e3"] - known, _kern(model, "e3"), "w_plus", N, model.dt, False)
    sig[G0][:] = sig[G0] + late
    sig[JUMP][:] = S2 - sig[G0]
    model.solve(sig, [DIRICHLET], [VertexEq("v0", L1)], 1, N - L1)
    _taper(model, sig, N - L1)
    sig = _dirichlet_fix(model, sig, phi, False, info)
    return _finish(model, sig, info)


# ---------------------------------------------------------------- cycle


def mismatch_profile(g: MetricGraph) -> GraphState:
    """Smooth state with value 1 on e2 and -1 on e3 at v3, vanishing to first order at v2."""
    l2, l3 = g.edge("e2").length, g.edge("e3").length
    return GraphState.from_functions(
        g,
        {
            "e2": lambda x: np.sin(0.5 * np.pi * x / l2) ** 2,
            "e3": lambda x: -np.sin(0.5 * np.pi * x / l3) ** 2,
        },
    )


def _cycle_first_step(model: TraceModel, target: GraphState, rate: bool, smooth: bool = True) -> dict:
    N = model.N
    L3 = model.edges["e3"].steps
    sig = model.zeros()
    sig[source_name("v3")][:] = _readoff(target.values["e4"], _kern(model, "e4"), "w_plus", N, model.dt, rate)
    ell = [model.edges[e].steps * model.dt for e in ("e1", "e2", "e3", "e4")]
    march_solve(model, sig, marching_schedule(ell, model.T, model.dt))
    # F2 no longer reaches v3 before T; a C1 continuation avoids a kink that
    # would arrive at v3 exactly at T (a sharp hold keeps supp f2 <= T - l3)
    if smooth:
        _bridge(sig[JUMP], N - L3, N, model.dt, 0.0)
    else:
        sig[JUMP][N - L3 + 1 :] = sig[JUMP][N - L3]
    model.solve(sig, [source_name("v2")], [VertexEq("v2")], N - L3 + 1, N)
    return sig


def _cycle_second_step(model: TraceModel, resid: GraphState, rate: bool, rate_space: bool = False) -> dict:
    N = model.N
    L1 = model.edges["e1"].steps
    sig = model.zeros()
    S2 = _readoff(resid.values["e2"], _kern(model, "e2"), "w_plus", N, model.dt, rate)
    S3 = _readoff(resid.values["e3"], _kern(model, "e3"), "w_plus", N, model.dt, rate)
    sig[source_name("v2")][:] = S3
    sig[JUMP][:] = S2 - S3
    model.solve(sig, [DIRICHLET], [VertexEq("v2", L1)], 0, N - L1)
    if rate_space:
        _taper_rate(model, sig, N - L1)
    else:
        sig[DIRICHLET][0] = 0.0
        _taper(model, sig, N - L1)
    return sig


def _add(a: dict, b: dict, c: float = 1.0) -> dict:
    return {k: a[k] + c * b[k] for k in a}


def _hat(n: int, center: int, half: int) -> np.ndarray:
    i = np.arange(n)
    return np.maximum(0.0, 1.0 - np.abs(i - center) / half)


def mismatch_correction(model: TraceModel, half_width: int = 1, ridge: float = 1e-10) -> dict:
    """Control sources whose final shape approximates ``mismatch_profile`` on e2, e3, e4.

    The target has opposite nonzero values at v3, which no source supported in
    the read-off windows can produce continuously; it is fitted by least
    squares over hat functions in f1 and f2. The map from controls to the final
    state is time invariant, so one forward solve per control channel yields
    every column by shifting.
    """
    cached = getattr(model, "_mismatch", None)
    if cached is not None:
        return cached
    N, dt = model.N, model.dt
    g = model.graph
    P = mismatch_profile(g)
    edges = ("e2", "e3", "e4")

    def feat(state):
        parts = []
        for eid in edges:
            u = state[eid]
            parts.append(u)
            parts.append(np.gradient(u, dt, edge_order=2))
        return np.concatenate(parts) * math.sqrt(dt)

    c0 = half_width
    cols = []
    meta = []
    for chan in (DIRICHLET, JUMP):
        base = model.zeros()
        hat = _hat(N + 1, c0, half_width)
        if chan == DIRICHLET:
            base[DIRICHLET][:] = hat
        else:
            base[JUMP][:] = -np.concatenate([[0.0], np.cumsum(0.5 * (hat[1:] + hat[:-1]) * dt)])
        model.forward_from(base)
        last = N - half_width if chan == DIRICHLET else N
        for center in range(c0, last + 1, half_width):
            tau = N - (center - c0)
            cols.append(feat({eid: model.profile(eid, base, tau) for eid in edges}))
            meta.append((chan, center))
    A = np.array(cols).T
    b = feat({eid: P.values[eid] for eid in edges})
    lam = ridge * np.trace(A.T @ A) / A.shape[1]
    coef = np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ b)
    sig = model.zeros()
    for (chan, center), c in zip(meta, coef):
        hat = _hat(N + 1, center, half_width)
        if chan == DIRICHLET:
            sig[DIRICHLET] += c * hat
        else:
            sig[JUMP] -= c * np.concatenate([[0.0], np.cumsum(0.5 * (hat[1:] + hat[:-1]) * dt)])
    fit = float(np.linalg.norm(A @ coef - b) / np.linalg.norm(b))
    model._mismatch = (sig, fit)
    return model._mismatch


def window_mismatch(g: MetricGraph, phi: GraphState, T: float | None = None, q: dict | None = None, model=None) -> float:
    """Value at v3 (on e2) of the target residual left after the first cycle step."""
    T, q = _prepare(g, phi, T, q, Template.CYCLE, False)
    model = _model(g, q, T, model)
    sig = _cycle_first_step(model, phi, False)
    return float(phi.values["e2"][-1] - model.profile("e2", sig)[-1])


def cycle_shape_control(
    g: MetricGraph,
    phi: GraphState,
    T: float | None = None,
    q: dict | None = None,
    info: dict | None = None,
    model=None,
    mismatch_tol: float = 1e-9,
) -> ControlPair:
    """Shape control on the cycle with two tails (three steps).

    1. Read the e4 source off the target and march (G_v2, F2) so that v3 stays
       balanced; F2 is frozen once its effect could no longer reach v3.
    2. Read the e2 and e3 sources off the remaining residual and march the
       Dirichlet control so that v2 stays balanced; taper it to zero.
    3. Correct e1 with a Dirichlet read-off of the final residual.

    If the step-2 residual does not vanish at v3 the read-off sources would
    jump; that component is removed first and produced by
    ``mismatch_correction`` instead (which widens the support of f2).
    """
    T, q = _prepare(g, phi, T, q, Template.CYCLE, True)
    model = _model(g, q, T, model)
    sig1 = _cycle_first_step(model, phi, False)
    resid = phi - model.state(sig1)
    c = float(resid.values["e2"][-1])
    scale = max(1.0, float(np.max(np.abs(np.concatenate(list(phi.values.values()))))))
    extra = None
    if abs(c) > mismatch_tol * scale:
        corr, fit = mismatch_correction(model)
        resid = resid - mismatch_profile(g).scaled(c)
        extra = corr
        if info is not None:
            info["mismatch"] = c
            info["mismatch_fit"] = fit
    sig2 = _cycle_second_step(model, resid, False)
    sig = _add(sig1, sig2)
    if extra is not None:
        sig = _add(sig, extra, c)
    sig = _dirichlet_fix(model, sig, phi, False, info)
    return _finish(model, sig, info)


def _finish_rate(model: TraceModel, sig: dict, info: dict | None) -> ControlPair:
    """Controls from rate signals: f1 is the running integral, f2 = -F2' is read directly."""
    f1 = np.concatenate([[0.0], cumulative_trapezoid(sig[DIRICHLET], dx=model.dt)])
    f2 = -sig[JUMP]
    controls = ControlPair(TimeSignal(f1, model.dt, Regularity.H1_0), TimeSignal(f2.copy(), model.dt), model.T)
    if info is not None:
        info["f1_support"] = controls.f1.support()
        info["f2_support"] = controls.f2.support()
        info["snapped_edges"] = list(model.snapped)
    return controls


def cycle_velocity_control(
    g: MetricGraph,
    phi2: GraphState,
    T: float | None = None,
    q: dict | None = None,
    info: dict | None = None,
    model=None,
    mismatch_tol: float = 1e-9,
) -> ControlPair:
    """Velocity control on the cycle.

    Time derivatives of the sources satisfy the same vertex equations, so the
    shape construction runs unchanged on rate signals (whose profile at T is
    u_t); the controls are integrated once at the end.
    """
    T, q = _prepare(g, phi2, T, q, Template.CYCLE, False)
    model = _model(g, q, T, model)
    # a held rate continues F2 linearly, so f2 stays continuous after the freeze
    sig1 = _cycle_first_step(model, phi2, False, smooth=False)
    resid = GraphState((phi2 - model.state(sig1)).values, StateRole.RESIDUAL)
    # a window mismatch would make the rate sources jump at the front reaching v3 at T;
    # u_t is only L2 so this is admissible, but the correction keeps the sources continuous
    c = float(resid.values["e2"][-1])
    scale = max(1.0, float(np.max(np.abs(np.concatenate(list(phi2.values.values()))))))
    extra = None
    if abs(c) > mismatch_tol * scale:
        extra, fit = mismatch_correction(model)
        resid = resid - mismatch_profile(g).scaled(c)
        if info is not None:
            info["mismatch"] = c
            info["mismatch_fit"] = fit
    sig = _add(sig1, _cycle_second_step(model, resid, False, rate_space=True))
    if extra is not None:
        sig = _add(sig, extra, c)
    sig = _dirichlet_fix(model, sig, phi2, False, info)
    return _finish_rate(model, sig, info)

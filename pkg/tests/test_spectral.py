import numpy as np
import pytest

from cases import default_cycle, exact_targets
from oracles import fe_eigenvalues
from wavegraph import (
    ControlPair,
    GraphState,
    MomentTargets,
    Regularity,
    StateRole,
    TimeSignal,
    combine_exact_control,
    compute_spectrum,
    constant_potential,
    cycle_graph,
    exact_control,
    fourier_targets,
    interval_graph,
    moment_residual,
    potential_from_functions,
    simulate,
    state_norms,
    trace_growth_check,
    zero_potential,
)
from wavegraph.graph import GridMismatch
from wavegraph.spectral import (
    HorizonMismatch,
    check_eigenpair,
    free_evolve,
    gram_matrix,
    modal_amplitudes,
    secular_determinant,
    synthesize,
)


@pytest.fixture(scope="module")
def cycle_pairs():
    g = default_cycle()
    return g, compute_spectrum(g, zero_potential(g), 64)


def test_dirichlet_interval_spectrum():
    g = interval_graph(1.0)
    pairs = compute_spectrum(g, N=20)
    omega = np.array([p.omega for p in pairs])
    assert np.max(np.abs(omega - np.pi * np.arange(1, 21))) <= 1e-8


def test_interval_with_constant_potential():
    g = interval_graph(1.0)
    pairs = compute_spectrum(g, constant_potential(g, 1.0), N=8)
    lam = np.array([p.omega**2 for p in pairs])
    assert np.allclose(lam, (np.pi * np.arange(1, 9)) ** 2 + 1.0, rtol=1e-10)


@pytest.mark.parametrize("lengths", [(1, 1.2, 0.7, 0.9), (1, 1, 1, 1)])
def test_cycle_spectrum_matches_finite_elements(lengths):
    g = cycle_graph(lengths, 1 / 200)
    q = zero_potential(g)
    omega = np.array([p.omega for p in compute_spectrum(g, q, 10)])
    fine = cycle_graph(lengths, 1 / 400)
    fe = fe_eigenvalues(fine, zero_potential(fine), 10)
    scale = np.maximum(omega, 1.0)
    assert np.max(np.abs(omega - fe) / scale) <= 1e-3


def test_cycle_spectrum_with_variable_potential():
    g = default_cycle(1 / 400)
    q = potential_from_functions(g, lambda x: 1 + x)
    omega = np.array([p.omega for p in compute_spectrum(g, q, 8)])
    fe = fe_eigenvalues(g, q, 8)
    assert np.max(np.abs(omega - fe) / omega) <= 1e-3


def test_zero_mode_and_double_eigenvalues():
    g = cycle_graph((1, 1, 1, 1))
    pairs = compute_spectrum(g, N=6)
    assert pairs[0].omega == 0.0 and pairs[0].kappa1 == 0.0
    omega = np.array([p.omega for p in pairs])
    assert np.all(np.diff(omega) >= 0)
    doubles = [p for p in pairs if p.multiplicity == 2]
    assert doubles and all(abs(p.omega / np.pi - round(p.omega / np.pi)) < 1e-12 for p in doubles)


def test_simple_roots_change_sign(cycle_pairs):
    g, pairs = cycle_pairs
    for p in pairs[1:12]:
        if p.multiplicity == 1:
            d = secular_determinant(g, None, np.array([p.omega - 1e-4, p.omega + 1e-4]))
            assert d[0] * d[1] < 0


def test_orthonormality_and_vertex_conditions(cycle_pairs):
    g, pairs = cycle_pairs
    G = gram_matrix(pairs)
    assert np.max(np.abs(G - np.eye(len(pairs)))) <= 1e-6
    for p in pairs[:20]:
        assert max(check_eigenpair(g, p).values()) <= 1e-8 * max(1.0, p.omega)


def test_trace_growth_bounded():
    g = cycle_graph((1, 1, 1, 1))
    rep = trace_growth_check(compute_spectrum(g, N=40))
    assert rep.flagged == [] and np.isfinite(rep.max_derivative_ratio)
    interval = trace_growth_check(compute_spectrum(interval_graph(1.0), N=20))
    # closed form: phi_n = sqrt(2) sin(n pi x), so |phi_n'(0)| / n = sqrt(2) pi
    assert np.allclose(interval.derivative_ratio, np.sqrt(2) * np.pi, rtol=1e-8)
    with pytest.raises(ValueError):
        trace_growth_check(compute_spectrum(interval_graph(1.0), N=5))


def test_fourier_targets(cycle_pairs):
    g, pairs = cycle_pairs
    zero = GraphState.zeros(g)
    t = fourier_targets(zero, zero, pairs, g)
    assert np.all(t.a == 0) and np.all(t.b == 0)
    k = 5
    t = fourier_targets(pairs[k].phi, zero, pairs, g)
    assert np.max(np.abs(t.a - np.eye(len(pairs))[k])) <= 1e-4
    psi1, _ = exact_targets(g)
    t = fourier_targets(psi1, zero, pairs, g)
    l2 = state_norms(psi1, g)[1]
    assert np.sum(t.a**2) == pytest.approx(l2**2, rel=0.02)
    with pytest.raises(GridMismatch):
        fourier_targets(GraphState.zeros(default_cycle(1 / 100)), zero, pairs, g)


def test_free_evolution_group(cycle_pairs):
    _, pairs = cycle_pairs
    rng = np.random.default_rng(3)
    w = np.array([p.omega for p in pairs])
    m = MomentTargets(rng.normal(size=len(w)), rng.normal(size=len(w)), w)
    back = free_evolve(free_evolve(m, 0.7), -0.7)
    assert np.allclose(back.a, m.a, atol=1e-12) and np.allclose(back.b, m.b, atol=1e-10)


def test_modal_amplitudes_match_simulation(cycle_pairs):
    # fixes the sign convention of both control terms in the modal equation
    g, pairs = cycle_pairs
    q = zero_potential(g)
    T, dt = 1.5, g.dx
    f1 = TimeSignal.from_function(lambda t: np.sin(np.pi * t / 1.5) ** 2, T, dt, Regularity.H1_0)
    f2 = TimeSignal.from_function(lambda t: np.sin(2 * np.pi * t / 1.5) ** 2, T, dt)
    field = simulate(g, q, ControlPair(f1, f2, T))
    direct = fourier_targets(field.state(T), field.velocity(T), pairs[:12], g)
    modal = modal_amplitudes(f1, f2, pairs[:12], T)
    assert np.max(np.abs(direct.a - modal.a)) <= 1e-3 * np.max(np.abs(modal.a))
    flipped = modal_amplitudes(f1.scaled(-1.0), f2, pairs[:12], T)
    assert np.max(np.abs(direct.a - flipped.a)) > 0.1 * np.max(np.abs(modal.a))


def test_combine_zero_and_odd_extension():
    z = ControlPair.zeros(1.0, 0.01)
    c = combine_exact_control(z, z, 1.0)
    assert c.T == 2.0 and np.all(c.f1.values == 0) and np.all(c.f2.values == 0)
    f20 = TimeSignal.from_function(lambda t: t, 1.0, 0.01)
    shape = ControlPair(TimeSignal.zeros(1.0, 0.01, Regularity.H1_0), f20, 1.0)
    c = combine_exact_control(shape, z, 1.0)
    assert c.f2(0.5) == pytest.approx(0.25, abs=1e-12)
    assert c.f2(1.5) == pytest.approx(-0.25, abs=1e-12)
    with pytest.raises(HorizonMismatch):
        combine_exact_control(shape, ControlPair.zeros(1.5, 0.01), 1.0)


def test_moment_residual_zero():
    g = default_cycle()
    pairs = compute_spectrum(g, N=8)
    z = TimeSignal.zeros(4.4, g.dx)
    targets = MomentTargets(np.zeros(8), np.zeros(8), np.array([p.omega for p in pairs]))
    r = moment_residual(z, z, pairs, targets, 2.2)
    assert np.all(r.sine == 0) and np.all(r.cosine == 0) and r.max_relative == 0.0


def test_single_mode_exact_control(cycle_pairs):
    g, pairs = cycle_pairs
    k = 4
    zero = GraphState.zeros(g, StateRole.VELOCITY)
    info = {}
    c = exact_control(g, pairs[k].phi.scaled(0.3), zero, pairs=pairs, info=info)
    t = info["targets"]
    r = moment_residual(c.f1, c.f2, pairs[:32], MomentTargets(t.a[:32], t.b[:32], t.omega[:32]), 2.2)
    assert r.max_relative <= 0.05
    # off-mode moments stay at the quadrature level
    off = np.delete(np.hypot(r.sine, r.cosine), k)
    assert np.max(off) <= 0.05 * t.norm
    assert np.max(r.variation_check) <= 1e-8 * t.norm


def test_synthesize_inverts_projection(cycle_pairs):
    g, pairs = cycle_pairs
    s = GraphState({e: 0.2 * pairs[3].phi.values[e] - pairs[9].phi.values[e] for e in pairs[3].phi.values})
    t = fourier_targets(s, GraphState.zeros(g), pairs, g)
    back = synthesize(t, pairs)
    assert state_norms(back - s, g)[1] <= 1e-4

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dalembert_nn
from wavegraph import (
    TimeSignal,
    apply_Ln,
    compute_goursat_kernels,
    eval_ND,
    eval_NN,
    neg_antiderivative,
    solve_volterra,
)
from wavegraph.interval import KernelNonconvergence, SingularVolterra, VolterraOperator

DT = 1e-3


def sig(fn, T=2.0, dt=DT):
    return TimeSignal.from_function(fn, T, dt)


def test_neg_antiderivative():
    assert np.all(neg_antiderivative(sig(lambda t: 0 * t, 1.0)).values == 0)
    P = neg_antiderivative(sig(lambda t: 1 + 0 * t, 1.0))
    assert np.max(np.abs(P.values + P.times)) < 1e-12
    # closed form -t^2 / 2
    assert neg_antiderivative(sig(lambda t: t, 1.0)).values[-1] == pytest.approx(-0.5, abs=1e-6)


def test_zero_potential_kernels_vanish():
    K = compute_goursat_kernels(np.zeros(201), 1.0, 2.0)
    assert K.zero
    assert np.all(K("w_plus", np.array([0.1, 0.5]), np.array([0.5, 1.5])) == 0)


def test_kernels_scale_with_potential():
    sups = []
    for eps in (1e-2, 1e-4):
        K = compute_goursat_kernels(np.full(101, eps), 1.0, 2.0)
        sups.append(np.max(np.abs(K.w_plus)))
    assert sups[0] > 0 and sups[1] < sups[0] / 50
    assert sups[1] < 1e-3


def test_kernel_nonconvergence_reports_iterations():
    with pytest.raises(KernelNonconvergence) as err:
        compute_goursat_kernels(np.full(101, 50.0), 1.0, 4.0, maxiter=2, eager=True)
    assert err.value.iterations == 2


def test_eval_nn_examples():
    zero = sig(lambda t: 0 * t)
    assert eval_NN(zero, zero, 1.0, None, 0.3, 1.7) == 0.0
    one = sig(lambda t: 1 + 0 * t)
    assert eval_NN(one, zero, 1.0, None, 0.5, 1.0) == pytest.approx(-0.5, abs=1e-12)
    assert eval_NN(one, zero, 1.0, None, 0.8, 0.5) == 0.0
    assert eval_ND(zero, zero, 1.0, None, 0.4, 1.9) == 0.0


def test_eval_nn_matches_dalembert():
    gfn = lambda t: np.sin(np.pi * np.minimum(t, 1.5) / 1.5) ** 3  # noqa: E731
    hfn = lambda t: 0.5 * np.sin(np.pi * np.minimum(t, 1.0)) ** 3  # noqa: E731
    gs, hs = sig(gfn, 3.0, 1 / 400), sig(hfn, 3.0, 1 / 400)
    for x, t in [(0.3, 0.7), (0.5, 1.3), (0.9, 2.7), (0.0, 2.0)]:
        assert eval_NN(gs, hs, 1.0, None, x, t) == pytest.approx(dalembert_nn(gfn, hfn, 1.0, x, t), abs=1e-5)


def test_eval_rejects_points_off_the_interval():
    zero = sig(lambda t: 0 * t)
    with pytest.raises(ValueError):
        eval_NN(zero, zero, 1.0, None, 1.5, 1.0)


def test_volterra_identity_and_scaling():
    n = 50
    rhs = TimeSignal(np.linspace(0, 1, n) ** 2, 0.02)
    assert np.array_equal(solve_volterra(VolterraOperator(1.0, np.zeros((n, n)), 0.02), rhs).values, rhs.values)
    y = solve_volterra(VolterraOperator(2.0, np.zeros((n, n)), 0.02), rhs).values
    assert np.allclose(y, rhs.values / 2, atol=1e-15)
    with pytest.raises(SingularVolterra):
        solve_volterra(VolterraOperator(0.0, np.zeros((n, n)), 0.02), rhs)


def test_volterra_closed_form():
    # y + int_0^t y = 1 has y = exp(-t)
    n = 1001
    op = VolterraOperator.convolution(1.0, np.ones(n), 1e-3)
    y = solve_volterra(op, TimeSignal(np.ones(n), 1e-3))
    assert y.values[-1] == pytest.approx(np.exp(-1.0), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3.0), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_volterra_round_trip(diag, coefs):
    n, dt = 120, 0.01
    t = np.arange(n) * dt
    kernel = coefs[0] + coefs[1] * np.cos(3 * t)
    op = VolterraOperator.convolution(diag, kernel, dt)
    y = np.sin(2 * t) + coefs[2] * t
    back = solve_volterra(op, TimeSignal(op(y), dt)).values
    assert np.max(np.abs(back - y)) <= 1e-10 * max(1.0, np.max(np.abs(y)))


def test_apply_ln_without_potential():
    f = sig(lambda t: np.sin(t) ** 2, 1.0)
    out = apply_Ln(f, 1, np.zeros(201), None, 1.0)
    fp = np.gradient(f.values, f.dt, edge_order=2)
    assert np.allclose(out.values, 2 * fp, atol=1e-14)
    assert np.all(apply_Ln(sig(lambda t: 0 * t, 1.0), 2, np.zeros(201), None, 1.0).values == 0)


def test_apply_ln_round_trip_with_potential():
    q = np.ones(201)
    K = compute_goursat_kernels(q, 1.0, 3.0)
    f = sig(lambda t: np.sin(np.pi * t) ** 2, 1.0, 1 / 200)
    from wavegraph.interval import Ln_operator

    out = apply_Ln(f, 1, q, K, 1.0)
    op = Ln_operator(1, K, 1.0, len(out.values), f.dt)
    back = solve_volterra(op, out).values
    fp = np.gradient(f.values, f.dt, edge_order=2)
    assert np.max(np.abs(back - fp)) <= 1e-3 * np.max(np.abs(fp))


def test_apply_ln_linear_signal_round_trip():
    q = np.ones(201)
    K = compute_goursat_kernels(q, 1.0, 4.0)
    f = sig(lambda t: t, 1.0, 1 / 200)
    from wavegraph.interval import Ln_operator

    out = apply_Ln(f, 2, q, K, 1.0)
    back = solve_volterra(Ln_operator(2, K, 1.0, len(out.values), f.dt), out).values
    assert np.max(np.abs(back - 1.0)) <= 1e-3
    with pytest.raises(ValueError, match="shorter horizon"):
        apply_Ln(f, 2, q, compute_goursat_kernels(q, 1.0, 3.0), 1.0)

"""Solution formulas for the wave equation on one interval with a potential.

A source S launched from one end of the interval produces, at distance ``d``
from that end,

    R[kappa, d](S)(t) = S(t - d) + int_d^t kappa(d, s) S(t - s) ds,

and the interval solution is a signed sum of such responses over the mirror
images of both ends. With a Neumann datum g at an end the source is
G = -int g and the kernel solves a Goursat problem with a Neumann condition on
the characteristic boundary; with a Dirichlet datum f the source is f itself
and the kernel vanishes on that boundary. The potential seen by every image is
the even 2l-periodic extension of q, so one kernel per end suffices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .graph import Regularity, TimeSignal


class KernelNonconvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"kernel iteration stalled after {iterations} sweeps (last change {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class SingularVolterra(ValueError):
    pass


def neg_antiderivative(p: TimeSignal) -> TimeSignal:
    """P(t) = -int_0^t p(s) ds by the cumulative trapezoid rule."""
    P = -cumulative_trapezoid(p.values, dx=p.dt, initial=0.0)
    reg = Regularity.H1 if p.regularity is Regularity.L2 else p.regularity
    return TimeSignal(P, p.dt, reg)


# ---------------------------------------------------------------- kernels


def periodic_even(q: np.ndarray, length: float):
    """Even, 2l-periodic extension of samples of q on [0, l]."""
    q = np.asarray(q, dtype=float)
    xs = np.linspace(0.0, length, len(q))

    def P(y):
        r = np.mod(np.asarray(y, dtype=float), 2 * length)
        r = np.where(r > length, 2 * length - r, r)
        return np.interp(r, xs, q)

    return P


def _cumtrapz(F, h, axis):
    c = np.cumsum(F, axis=axis)
    first = np.take(F, [0], axis=axis)
    return h * (c - 0.5 * (first + F))


def _goursat(p, T: float, h: float, sigma: float, tol: float, maxiter: int):
    """Successive approximation for w(xi, eta) on [0, 2T] x [0, T].

    w(xi, eta) = a(xi/2) + sigma a(eta/2) - 1/4 int_0^xi int_0^eta p((xi'-eta')/2) w,
    a(y) = -1/2 int_0^y p.  Here xi = s + y, eta = s - y.

    The trapezoid discretization is causal in xi, so rows are filled in order;
    within a row the iteration only has to resolve the O(h) coupling along eta.
    """
    n1 = int(math.ceil(2 * T / h - 1e-9)) + 1
    n2 = int(math.ceil(T / h - 1e-9)) + 1
    xi = np.arange(n1) * h
    eta = np.arange(n2) * h
    yfine = np.arange(n1) * (h / 2)
    a = -0.5 * cumulative_trapezoid(p(yfine), dx=h / 2, initial=0.0)
    base = a[:, None] + sigma * a[None, :n2]
    pm = 0.25 * p(np.abs(xi[:, None] - eta[None, :]) / 2)
    w = np.empty_like(base)
    w[0] = base[0]
    acc = 0.5 * pm[0] * w[0]  # xi-trapezoid sum over the finished rows
    for i in range(1, n1):
        row = w[i - 1].copy()
        change = math.inf
        for _ in range(maxiter):
            new = base[i] - _cumtrapz(h * (acc + 0.5 * pm[i] * row), h, 0)
            change = float(np.max(np.abs(new - row)))
            row = new
            if change < tol:
                break
        else:
            raise KernelNonconvergence(maxiter, change)
        w[i] = row
        acc = acc + pm[i] * row
    return w


_KINDS = {"w_plus": ("plus", 1.0), "w_minus": ("minus", 1.0), "k_plus": ("plus", -1.0), "k_minus": ("minus", -1.0)}


@dataclass(frozen=True)
class GoursatKernels:
    """Kernels on the characteristic grid xi = s + y in [0, 2T], eta = s - y in [0, T].

    ``w_plus``/``k_plus`` belong to sources at x = 0 (Neumann / Dirichlet type),
    ``w_minus``/``k_minus`` to sources at x = l. Tables are built on first use.
    """

    length: float
    T: float
    h: float
    q: np.ndarray
    tol: float = 1e-10
    maxiter: int = 50
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def zero(self) -> bool:
        return not np.any(self.q)

    def table(self, which: str) -> np.ndarray:
        if which not in _KINDS:
            raise KeyError(which)
        if which not in self._tables:
            side, sigma = _KINDS[which]
            P = periodic_even(self.q, self.length)
            if side == "plus":
                pot = P
            else:
                def pot(y):
                    return P(self.length - np.asarray(y))
            self._tables[which] = _goursat(pot, max(self.T, self.h), self.h, sigma, self.tol, self.maxiter)
        return self._tables[which]

    @property
    def w_plus(self):
        return self.table("w_plus")

    @property
    def w_minus(self):
        return self.table("w_minus")

    @property
    def k_plus(self):
        return self.table("k_plus")

    @property
    def k_minus(self):
        return self.table("k_minus")

    def __call__(self, which: str, y, s):
        """Bilinear lookup of kappa(y, s); zero outside s >= y >= 0."""
        y = np.asarray(y, dtype=float)
        s = np.asarray(s, dtype=float)
        out_shape = np.broadcast(y, s).shape
        if self.zero:
            return np.zeros(out_shape)
        tab = self.table(which)
        y, s = np.broadcast_arrays(y, s)
        xi = (s + y) / self.h
        eta = (s - y) / self.h
        valid = (eta >= -1e-9) & (y >= -1e-9)
        n1, n2 = tab.shape
        if np.any(valid & ((xi > n1 - 1 + 1e-6) | (eta > n2 - 1 + 1e-6))):
            raise ValueError("kernel requested beyond the horizon it was built for")
        xi = np.clip(xi, 0, n1 - 1)
        eta = np.clip(eta, 0, n2 - 1)
        i = np.minimum(np.floor(xi).astype(int), n1 - 2)
        j = np.minimum(np.floor(eta).astype(int), n2 - 2)
        fx = xi - i
        fy = eta - j
        val = (
            tab[i, j] * (1 - fx) * (1 - fy)
            + tab[i + 1, j] * fx * (1 - fy)
            + tab[i, j + 1] * (1 - fx) * fy
            + tab[i + 1, j + 1] * fx * fy
        )
        return np.where(valid, val, 0.0).reshape(out_shape)


KERNEL_STEP_FLOOR = 1.0 / 400


def compute_goursat_kernels(
    q, length: float, T: float, h: float | None = None, tol: float = 1e-10, maxiter: int = 50, eager: bool = False
) -> GoursatKernels:
    """Kernels of the interval representations for potential samples ``q`` on [0, length].

    The characteristic grid step defaults to the edge grid step, but no finer
    than ``KERNEL_STEP_FLOOR``; the kernels are smooth, so this costs far less
    accuracy than the solution grid itself.
    """
    q = np.asarray(q, dtype=float)
    if T < 0:
        raise ValueError("T must be nonnegative")
    if h is None:
        h = max(length / (len(q) - 1), KERNEL_STEP_FLOOR)
        h = length / max(1, round(length / h))
    K = GoursatKernels(length, T, h, q, tol, maxiter)
    if eager and not K.zero:
        for name in _KINDS:
            K.table(name)
    return K


# ---------------------------------------------------------------- image sums


@dataclass(frozen=True)
class Image:
    """One mirror image: sign * R[kernel, a + b x](source)."""

    slot: str  # "left" (x = 0) or "right" (x = l)
    sign: float
    a: float
    b: float
    kernel: str


def images(kind: str, length: float, T: float) -> list[Image]:
    """Mirror images for NN (Neumann at both ends) or ND (Dirichlet at x = l) data."""
    if kind not in ("NN", "ND"):
        raise ValueError(f"unknown representation {kind!r}")
    nmax = int(math.ceil(T / (2 * length))) + 1
    alt = kind == "ND"
    rk = "w_minus" if kind == "NN" else "k_minus"
    out = []
    for n in range(nmax + 1):
        s = (-1.0) ** n if alt else 1.0
        out.append(Image("left", s, 2 * n * length, 1.0, "w_plus"))
        if n >= 1:
            out.append(Image("left", s, 2 * n * length, -1.0, "w_plus"))
            r = (-1.0) ** (n - 1) if alt else 1.0
            out.append(Image("right", r, (2 * n - 1) * length, -1.0, rk))
            out.append(Image("right", r, (2 * n - 1) * length, 1.0, rk))
    # drop images that cannot reach any point of the interval by time T
    return [im for im in out if im.a + min(0.0, im.b * length) <= T + 1e-12]


def _sample(sig, t):
    if callable(sig):
        return sig(t)
    raise TypeError("signal must be callable")


def _antiderivative_eval(p: TimeSignal):
    """Exact antiderivative of the piecewise-linear interpolant of p, negated."""
    P = neg_antiderivative(p).values
    v = p.values
    dt = p.dt
    n = len(v) - 1

    def G(t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, n * dt)
        j = np.minimum(np.floor(tc / dt).astype(int), max(n - 1, 0))
        tau = tc - j * dt
        if n == 0:
            return np.zeros_like(t)
        slope = (v[j + 1] - v[j]) / dt
        val = P[j] - (v[j] * tau + 0.5 * slope * tau * tau)
        return np.where(t < 0, 0.0, val)

    return G


def response(S, kernels: GoursatKernels | None, which: str, d, t, dt: float):
    """R[kappa, d](S)(t) for scalar t and scalar or array d.

    ``S`` is a callable of time; the kernel integral uses the trapezoid rule on
    the nodes s = t - j dt plus one partial cell next to s = d.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    out = np.asarray(S(t - d), dtype=float) * (t - d >= 0)
    if kernels is None or kernels.zero:
        return out
    res = np.zeros_like(d)
    for k, dk in enumerate(d):
        if t <= dk:
            continue
        jmax = int(math.floor((t - dk) / dt + 1e-9))
        s = t - np.arange(jmax + 1) * dt  # from t down to the last node >= d
        vals = kernels(which, dk, s) * S(t - s)
        integral = dt * (vals.sum() - 0.5 * vals[0] - 0.5 * vals[-1])
        delta = s[-1] - dk
        if delta > 1e-12:
            integral += 0.5 * delta * (vals[-1] + kernels(which, dk, dk) * S(t - dk))
        res[k] = integral
    return out + res


def _evaluate(kind, left, right, length, kernels, x, t):
    if not (-1e-12 <= x <= length + 1e-12):
        raise ValueError(f"x={x} outside [0, {length}]")
    total = 0.0
    for im in images(kind, length, t):
        src = left if im.slot == "left" else right
        if src is None:
            continue
        S, dt = src
        total += im.sign * float(response(S, kernels, im.kernel, im.a + im.b * x, t, dt)[0])
    return total


def eval_NN(g: TimeSignal, h: TimeSignal, length: float, kernels: GoursatKernels | None, x: float, t: float) -> float:
    """Solution at (x, t) with outward derivatives g at x = 0 and h at x = l."""
    return _evaluate(
        "NN", (_antiderivative_eval(g), g.dt), (_antiderivative_eval(h), h.dt), length, kernels, x, t
    )


def eval_ND(g: TimeSignal, f: TimeSignal, length: float, kernels: GoursatKernels | None, x: float, t: float) -> float:
    """Solution at (x, t) with outward derivative g at x = 0 and value f at x = l."""
    return _evaluate("ND", (_antiderivative_eval(g), g.dt), (f, f.dt), length, kernels, x, t)


# ---------------------------------------------------------------- Volterra


@dataclass(frozen=True)
class VolterraOperator:
    """y -> diag * y(t) + int_0^t K(t, s) y(s) ds on a uniform grid."""

    diag: float
    K: np.ndarray  # K[i, j] = K(t_i, t_j); only j <= i is read
    dt: float

    @classmethod
    def convolution(cls, diag: float, kernel: np.ndarray, dt: float) -> VolterraOperator:
        n = len(kernel)
        i, j = np.indices((n, n))
        K = np.where(j <= i, kernel[np.clip(i - j, 0, n - 1)], 0.0)
        return cls(diag, K, dt)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = len(y)
        out = self.diag * y.copy()
        for i in range(1, n):
            row = self.K[i, : i + 1] * y[: i + 1]
            out[i] += self.dt * (row.sum() - 0.5 * row[0] - 0.5 * row[-1])
        return out


def solve_volterra(op: VolterraOperator, rhs: TimeSignal) -> TimeSignal:
    """Forward substitution with the product trapezoid rule."""
    if op.diag == 0.0:
        raise SingularVolterra("second-kind operator needs a nonzero diagonal coefficient")
    r = rhs.values
    n = len(r)
    if op.K.shape[0] < n:
        raise ValueError("operator grid shorter than the right-hand side")
    y = np.zeros(n)
    y[0] = r[0] / op.diag
    dt = op.dt
    for i in range(1, n):
        row = op.K[i, :i]
        acc = dt * (np.dot(row, y[:i]) - 0.5 * row[0] * y[0])
        lead = op.diag + 0.5 * dt * op.K[i, i]
        if lead == 0.0:
            raise SingularVolterra(f"vanishing pivot at step {i}")
        y[i] = (r[i] - acc) / lead
    return TimeSignal(y, rhs.dt, rhs.regularity)


def Ln_operator(n: int, kernels: GoursatKernels | None, l1: float, nt: int, dt: float) -> VolterraOperator:
    """Derivative-level operator of the n-th Dirichlet echo on the controlled edge.

    The n-th echo of f reaching the far end contributes f(t - d) + int_d^t k(d, s) f(t - s) ds
    with d = (2n - 1) l1; differentiating (f(0) = 0) gives, in tau = t - d,
    2 f'(tau) + 2 int_0^tau k(d, d + sigma) f'(tau - sigma) d sigma once both
    incoming copies are counted.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = (2 * n - 1) * l1
    if kernels is None or kernels.zero:
        kern = np.zeros(nt)
    else:
        if abs(kernels.length - l1) > 1e-12:
            raise ValueError("kernels were built for a different edge length")
        if kernels.T + 1e-9 < d + (nt - 1) * dt:
            raise ValueError("kernels were built for a shorter horizon")
        kern = 2.0 * kernels("k_minus", d, d + np.arange(nt) * dt)
    return VolterraOperator.convolution(2.0, kern, dt)


def apply_Ln(f: TimeSignal, n: int, q, kernels: GoursatKernels | None, l1: float) -> TimeSignal:
    """Apply the n-th echo operator to f'."""
    if kernels is not None and not kernels.zero and not np.allclose(np.asarray(q), kernels.q):
        raise ValueError("kernels were built for a different potential")
    fp = np.gradient(f.values, f.dt, edge_order=2) if len(f.values) > 2 else np.zeros_like(f.values)
    op = Ln_operator(n, kernels, l1, len(fp), f.dt)
    return TimeSignal(op(fp), f.dt, Regularity.L2)

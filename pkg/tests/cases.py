"""Target states shared by the synthesis, spectral and acceptance tests."""

import numpy as np

from wavegraph import GraphState, StateRole, cycle_graph, star_graph
from wavegraph.synthesis import mismatch_profile, window_mismatch

CYCLE_LENGTHS = (1.0, 1.2, 0.7, 0.9)
STAR_LENGTHS = (1.0, 1.5, 1.0)

# support windows: l1 + l2 + mu = l3 + l4 confines f1 to [mu, T*],
# l1 + l2 = l3 + l4 + mu confines f2 to [min(mu, l1), T*]
F1_WINDOW_CASES = ((0.5, 1.0, 0.8, 1.0), (0.6, 0.9, 0.7, 1.2))
F2_WINDOW_CASES = ((1.0, 1.2, 0.7, 0.9), (0.5, 1.4, 0.8, 0.6))


def s2(x):
    return np.sin(x) ** 2


def c2(x):
    return np.cos(x) ** 2


def star_target(g):
    """Smooth compatible star target, nonzero on all three edges."""
    return GraphState.from_functions(
        g,
        {
            "e1": lambda x: 0.5 * s2(np.pi * x / 2),
            "e2": lambda x: -0.25 * c2(np.pi * x / 3) + 0.125 * s2(2 * np.pi * x / 3),
            "e3": lambda x: -0.25 * c2(np.pi * x / 2) + 0.3 * s2(np.pi * x),
        },
    )


def cycle_raw_target(g):
    l1, l2, l3, l4 = g.lengths
    return GraphState.from_functions(
        g,
        {
            "e1": lambda x: 0.4 * s2(np.pi * x / (2 * l1)),
            "e2": lambda x: -0.2 * c2(np.pi * x / (2 * l2)) + 0.5 * s2(np.pi * x / l2),
            "e3": lambda x: -0.2 * c2(np.pi * x / (2 * l3)) + 0.3 * s2(np.pi * x / (2 * l3)),
            "e4": lambda x: -0.3 * c2(np.pi * x / (2 * l4)) + 0.2 * s2(np.pi * x / l4),
        },
    )


def cycle_target(g, q=None):
    """Smooth compatible cycle target with no window mismatch at v3."""
    phi = cycle_raw_target(g)
    return phi - mismatch_profile(g).scaled(window_mismatch(g, phi, q=q))


def indicator(a, b):
    """Indicator of [a, b] taking the value 1/2 at grid nodes on the jumps."""
    return lambda x: 0.5 * (np.sign(np.round(x - a, 9)) - np.sign(np.round(x - b, 9)))


def plateau_velocity(g, a=0.1, b=1.1):
    return GraphState(GraphState.from_functions(g, {"e2": indicator(a, b)}).values, StateRole.VELOCITY)


def exact_targets(g):
    l1, l2, l3, l4 = g.lengths
    psi1 = cycle_raw_target(g)
    psi2 = GraphState.from_functions(
        g, {"e1": lambda x: s2(np.pi * x / l1), "e3": lambda x: -0.5 * s2(np.pi * x / l3)}, StateRole.VELOCITY
    )
    return psi1, psi2


def default_star(dx=1.0 / 200):
    return star_graph(STAR_LENGTHS, dx)


def default_cycle(dx=1.0 / 200):
    return cycle_graph(CYCLE_LENGTHS, dx)

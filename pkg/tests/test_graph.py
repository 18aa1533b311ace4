import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavegraph import (
    Edge,
    GraphState,
    MetricGraph,
    Template,
    TimeSignal,
    Vertex,
    VertexKind,
    check_target_compatibility,
    control_time,
    cycle_graph,
    interval_graph,
    normalize,
    star_graph,
    state_norms,
    validate_graph,
)
from wavegraph.graph import GridMismatch, UnsupportedTemplate, nsteps


def test_cycle_wiring_is_admissible():
    assert validate_graph(cycle_graph((1, 1.2, 0.7, 0.9))).violations == []
    assert validate_graph(star_graph((1, 1.5, 1))).violations == []


def test_nonpositive_length_reported():
    g = cycle_graph((1, 1.2, 0.7, 0.9))
    edges = tuple(replace(e, length=0.0) if e.id == "e4" else e for e in g.edges)
    rep = validate_graph(replace(g, edges=edges))
    assert any(v.startswith("nonpositive length on edge e4") for v in rep.violations)


def test_extra_edge_breaks_template_wiring():
    g = cycle_graph((1, 1.2, 0.7, 0.9))
    extra = Edge("e5", "v2", "v3", 0.5)
    rep = validate_graph(replace(g, edges=g.edges + (extra,)))
    assert "template wiring" in rep.violations


def test_wrong_vertex_kind_and_jump_edge():
    g = cycle_graph((1, 1.2, 0.7, 0.9))
    vs = tuple(Vertex("v2", VertexKind.DELTA_PRIME, "e3") if v.id == "v2" else v for v in g.vertices)
    rep = validate_graph(replace(g, vertices=vs))
    assert "internal control must act on e2" in rep.violations
    vs = tuple(Vertex("v4", VertexKind.NEUMANN) if v.id == "v4" else v for v in g.vertices)
    assert "template vertex conditions" in validate_graph(replace(g, vertices=vs)).violations


def test_ordering_and_normalize():
    g = cycle_graph((1, 0.7, 1.2, 0.9))
    assert any("l2 >= l3" in v for v in validate_graph(g).violations)
    n = normalize(g)
    assert n.relabeled == ("e2", "e3")
    assert n.edge("e2").length == 1.2 and n.edge("e3").length == 0.7
    assert validate_graph(n).violations == []
    s = normalize(star_graph((1, 1, 1.5)))
    assert s.edge("e2").length == 1.5 and validate_graph(s).violations == []
    assert normalize(cycle_graph((1, 1.2, 0.7, 0.9))).relabeled == ()


@pytest.mark.parametrize(
    "g, expected",
    [
        (cycle_graph((1, 1, 1, 1)), 2.0),
        (cycle_graph((1, 1.2, 0.7, 0.9)), 2.2),
        (star_graph((1, 1.5, 1)), 2.0),
    ],
)
def test_control_time(g, expected):
    assert control_time(g) == pytest.approx(expected, abs=1e-15)


def test_control_time_generic_unsupported():
    with pytest.raises(UnsupportedTemplate):
        control_time(interval_graph(1.0))


def single_edge(dx=1e-3):
    return MetricGraph((Edge("e1", "a", "b", 1.0),), (), Template.GENERIC, dx)


def test_state_norms_zero_and_linear():
    g = single_edge()
    assert state_norms(GraphState.zeros(g), g) == (0.0, 0.0)
    h1, l2 = state_norms(GraphState.from_functions(g, {"e1": lambda x: x}), g)
    # closed-form integrals: int x^2 = 1/3, int 1 = 1
    assert l2 == pytest.approx(1 / math.sqrt(3), abs=1e-6)
    assert h1 == pytest.approx(math.sqrt(4 / 3), abs=1e-6)


def test_state_norms_grid_mismatch():
    g = single_edge()
    with pytest.raises(GridMismatch):
        state_norms(GraphState({"e1": np.zeros(7)}), g)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50, allow_nan=False), st.integers(0, 5))
def test_norm_homogeneity(c, k):
    g = cycle_graph((1, 1.2, 0.7, 0.9), 1 / 50)
    s = GraphState.from_functions(g, {e.id: (lambda x, j=j: np.sin((k + j + 1) * x)) for j, e in enumerate(g.edges)})
    h1, l2 = state_norms(s.scaled(c), g)
    b1, b2 = state_norms(s, g)
    assert h1 == pytest.approx(abs(c) * b1, rel=1e-12, abs=1e-12)
    assert l2 == pytest.approx(abs(c) * b2, rel=1e-12, abs=1e-12)


def test_compatibility_examples():
    g = star_graph((1, 1.5, 1))
    assert check_target_compatibility(GraphState.zeros(g), g).violations == []
    s = GraphState.zeros(g)
    s.values["e1"][0] = 0.1
    rep = check_target_compatibility(s, g, tol=1e-9)
    assert len(rep.violations) == 1 and "v1" in rep.violations[0] and "0.1" in rep.violations[0]
    s = GraphState.zeros(g)
    s.values["e2"][0], s.values["e3"][0], s.values["e1"][-1] = 1.0, -0.4, -0.6
    assert check_target_compatibility(s, g, tol=1e-9).violations == []


def test_time_signal_grid():
    assert nsteps(2.2, 1 / 200) == 440
    with pytest.raises(GridMismatch):
        nsteps(1.0, 0.3)
    s = TimeSignal.from_function(lambda t: t, 1.0, 0.25)
    assert s(np.array([-1.0, 0.5, 2.0])).tolist() == [0.0, 0.5, 1.0]
    assert s.support() == (0.25, 1.0)

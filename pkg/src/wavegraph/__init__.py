"""Constructive control synthesis for the wave equation on metric graphs with delta-prime vertices."""

from .formats import GraphSpec, parse_graph_spec, read_signal, read_state, serialize_graph_spec, write_signal, write_state
from .graph import (
    ControlPair,
    Edge,
    GraphState,
    MetricGraph,
    Regularity,
    StateRole,
    Template,
    TimeSignal,
    Vertex,
    VertexKind,
    check_target_compatibility,
    constant_potential,
    control_time,
    cycle_graph,
    inner,
    interval_graph,
    normalize,
    potential_from_functions,
    star_graph,
    state_norms,
    validate_graph,
    zero_potential,
)
from .interval import apply_Ln, compute_goursat_kernels, eval_ND, eval_NN, neg_antiderivative, solve_volterra
from .simulator import energy, simulate, verify_control
from .spectral import (
    MomentTargets,
    SpectralPair,
    combine_exact_control,
    compute_spectrum,
    exact_control,
    fourier_targets,
    moment_residual,
    trace_growth_check,
)
from .synthesis import (
    cycle_shape_control,
    cycle_velocity_control,
    extend_f1,
    march_solve,
    marching_schedule,
    star_shape_control,
    trace_from_target,
)

__all__ = [name for name in dir() if not name.startswith("_")]

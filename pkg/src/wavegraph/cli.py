"""Command-line interface.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 numerical failure,
5 a declared tolerance was not met. The tolerance profile is read from the
``WAVEGRAPH_TOLERANCE`` environment variable (``desk`` by default).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .formats import (
    Report,
    SignalFormatError,
    SpecSemanticError,
    SpecSyntaxError,
    parse_graph_spec,
    read_signal,
    read_state,
    write_signal,
    write_state,
)
from .graph import (
    ControlPair,
    GridMismatch,
    StateRole,
    Template,
    UnsupportedTemplate,
    check_target_compatibility,
    control_time,
    nsteps,
    state_norms,
)
from .interval import KernelNonconvergence, SingularVolterra, compute_goursat_kernels
from .simulator import CFLViolation, energy, simulate, verify_control
from .spectral import SpectrumError, compute_spectrum, gram_matrix, trace_growth_check
from .synthesis import HorizonTooShort, IncompatibleTarget
from .traces import MarchingError

TOLERANCE_PROFILES = {
    "desk": {"shape": 0.02, "shape_potential": 0.05, "velocity": 0.02, "exact": 0.05, "orthonormality": 1e-6},
    "loose": {"shape": 0.05, "shape_potential": 0.10, "velocity": 0.05, "exact": 0.10, "orthonormality": 1e-4},
    "strict": {"shape": 0.005, "shape_potential": 0.02, "velocity": 0.005, "exact": 0.02, "orthonormality": 1e-8},
}
ENV_TOLERANCE = "WAVEGRAPH_TOLERANCE"

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 2, 3, 4, 5


class ToleranceFailure(RuntimeError):
    pass


def tolerance_profile(name: str | None = None) -> dict:
    name = name or os.environ.get(ENV_TOLERANCE, "desk")
    if name not in TOLERANCE_PROFILES:
        raise SpecSemanticError([f"unknown tolerance profile {name!r}"])
    return dict(TOLERANCE_PROFILES[name], name=name)


def _load(args):
    spec = parse_graph_spec(Path(args.spec).read_text())
    g = spec.graph
    if getattr(args, "dx", None):
        from dataclasses import replace

        g = g.with_dx(args.dx)
        spec = replace(spec, graph=g)
    return spec, g, spec.q()


def _horizon(args, spec, g) -> float:
    if getattr(args, "T", None) is not None:
        return args.T
    if spec.T is not None:
        return spec.T
    return control_time(g)


def _controls(args, T: float | None) -> ControlPair:
    f1 = read_signal(args.f1)
    f2 = read_signal(args.f2)
    if len(f1.values) != len(f2.values) or not math.isclose(f1.dt, f2.dt):
        raise GridMismatch("f1 and f2 are sampled on different grids")
    return ControlPair(f1, f2, f1.T if T is None else T)


def _write_controls(c: ControlPair, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_signal(c.f1, out / "f1.csv")
    write_signal(c.f2, out / "f2.csv")


def _supports(rep: Report, c: ControlPair) -> None:
    rep.set("f1_support", c.f1.support())
    rep.set("f2_support", c.f2.support())


# ---------------------------------------------------------------- commands


def cmd_synthesize(args, rep: Report, tol: dict) -> None:
    from .spectral import exact_control
    from .synthesis import cycle_shape_control, cycle_velocity_control, star_shape_control

    spec, g, q = _load(args)
    T = _horizon(args, spec, g)
    rep.set("template", g.template.value)
    rep.set("T", T)
    rep.set("relabeled", ",".join(g.relabeled) or "none")
    info: dict = {}
    potential = any(np.any(v) for v in q.values())
    if args.mode == "shape":
        phi = read_state(g, args.shape)
        bad = check_target_compatibility(phi, g)
        if not bad:
            raise IncompatibleTarget("; ".join(bad.violations))
        if g.template is Template.CYCLE:
            c = cycle_shape_control(g, phi, T, q, info=info)
        elif g.template is Template.STAR:
            c = star_shape_control(g, phi, T, q, info=info)
        else:
            raise UnsupportedTemplate("shape synthesis needs the CycleWithTails or ThreeStar template")
        err = verify_control(g, q, c, shape=phi)
        rep.set("rel_h1_error", err.rel_h1)
        rep.set("abs_h1_error", err.abs_h1)
        limit = tol["shape_potential"] if potential else tol["shape"]
        value = err.rel_h1
    elif args.mode == "velocity":
        if g.template is not Template.CYCLE:
            raise UnsupportedTemplate("velocity synthesis needs the CycleWithTails template")
        phi2 = read_state(g, args.velocity, StateRole.VELOCITY)
        c = cycle_velocity_control(g, phi2, T, q, info=info)
        err = verify_control(g, q, c, velocity=phi2)
        rep.set("rel_l2_velocity_error", err.rel_l2_velocity)
        rep.set("abs_l2_velocity_error", err.abs_l2_velocity)
        limit = tol["velocity"]
        value = err.rel_l2_velocity
    else:
        if g.template is not Template.CYCLE:
            raise UnsupportedTemplate("exact synthesis needs the CycleWithTails template")
        psi1 = read_state(g, args.shape)
        psi2 = read_state(g, args.velocity, StateRole.VELOCITY)
        N = args.n or spec.N or 64
        c = exact_control(g, psi1, psi2, T, q, N, info=info)
        fld = simulate(g, q, c, 2 * T)
        e1 = state_norms(fld.state(2 * T) - psi1, g)[0]
        e2 = state_norms(fld.velocity(2 * T) - psi2, g)[1]
        ref = math.hypot(state_norms(psi1, g)[0], state_norms(psi2, g)[1])
        value = math.hypot(e1, e2) / ref if ref > 0 else (0.0 if e1 == e2 == 0 else math.inf)
        rep.set("modes", N)
        rep.set("rel_h1xl2_error", value)
        limit = tol["exact"]
    _write_controls(c, Path(args.out))
    _supports(rep, c)
    if "mismatch" in info:
        rep.set("window_mismatch", info["mismatch"])
    rep.set("tolerance", limit)
    rep.set("tolerance_profile", tol["name"])
    rep.set("within_tolerance", bool(value <= limit))
    if not value <= limit:
        raise ToleranceFailure(f"error {value:.6g} exceeds tolerance {limit}")


def cmd_simulate(args, rep: Report, tol: dict) -> None:
    spec, g, q = _load(args)
    c = _controls(args, None)
    T = args.T if args.T is not None else c.T
    nsteps(T, c.dt)
    fld = simulate(g, q, c, T)
    out = Path(args.out)
    write_state(fld.state(T), g, out / "u")
    write_state(fld.velocity(T), g, out / "ut")
    rep.set("T", T)
    rep.set("dt", fld.dt)
    rep.set("steps", fld.nt)
    rep.set("energy_final", energy(fld, q, T))
    h1, l2 = state_norms(fld.state(T), g)
    rep.set("h1_norm_final", h1)
    rep.set("l2_norm_final", l2)
    _supports(rep, c)


def cmd_verify(args, rep: Report, tol: dict) -> None:
    spec, g, q = _load(args)
    c = _controls(args, None)
    shape = read_state(g, args.shape) if args.shape else None
    vel = read_state(g, args.velocity, StateRole.VELOCITY) if args.velocity else None
    if shape is None and vel is None:
        raise SpecSemanticError(["verify needs --shape and/or --velocity"])
    err = verify_control(g, q, c, shape=shape, velocity=vel)
    for k, v in err.as_dict().items():
        rep.set(k, v)
    _supports(rep, c)
    potential = any(np.any(v) for v in q.values())
    ok = True
    if shape is not None:
        ok &= err.rel_h1 <= (tol["shape_potential"] if potential else tol["shape"])
    if vel is not None:
        ok &= err.rel_l2_velocity <= tol["velocity"]
    rep.set("tolerance_profile", tol["name"])
    rep.set("within_tolerance", bool(ok))
    if not ok:
        raise ToleranceFailure("verification error exceeds tolerance")


def cmd_spectrum(args, rep: Report, tol: dict) -> None:
    spec, g, q = _load(args)
    N = args.n or spec.N or 64
    pairs = compute_spectrum(g, q, N)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["n,omega,kappa1,kappa2,multiplicity"]
    lines += [f"{i},{p.omega:.17g},{p.kappa1:.17g},{p.kappa2:.17g},{p.multiplicity}" for i, p in enumerate(pairs, 1)]
    (out / "spectrum.csv").write_text("\n".join(lines) + "\n")
    defect = float(np.max(np.abs(gram_matrix(pairs) - np.eye(len(pairs)))))
    rep.set("modes", len(pairs))
    rep.set("omega_min", pairs[0].omega)
    rep.set("omega_max", pairs[-1].omega)
    rep.set("orthonormality_defect", defect)
    if len(pairs) >= 10:
        for k, v in trace_growth_check(pairs).as_dict().items():
            rep.set(f"trace_{k}", v)
    rep.set("tolerance_profile", tol["name"])
    rep.set("within_tolerance", bool(defect <= tol["orthonormality"]))
    if defect > tol["orthonormality"]:
        raise ToleranceFailure("eigenfunctions are not orthonormal within tolerance")


def cmd_kernels(args, rep: Report, tol: dict) -> None:
    spec, g, q = _load(args)
    e = g.edge(args.edge)
    T = _horizon(args, spec, g)
    K = compute_goursat_kernels(q[e.id], e.length, T, eager=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.set("edge", e.id)
    rep.set("T", T)
    rep.set("step", K.h)
    rep.set("zero_potential", K.zero)
    for name in ("w_plus", "w_minus", "k_plus", "k_minus"):
        tab = np.zeros((1, 1)) if K.zero else K.table(name)
        np.savetxt(out / f"{name}.csv", tab, delimiter=",", fmt="%.17g")
        rep.set(f"{name}_max", float(np.max(np.abs(tab))))


COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "spectrum": cmd_spectrum,
    "kernels": cmd_kernels,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavegraph", description="Control synthesis for the wave equation on metric graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--spec", required=True, help="graph-spec document")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--dx", type=float, help="override the grid step of the graph-spec document")
        sp.add_argument("--tolerance", choices=sorted(TOLERANCE_PROFILES), help=f"overrides ${ENV_TOLERANCE}")

    s = sub.add_parser("synthesize", help="build controls for a shape, velocity or exact target")
    common(s)
    s.add_argument("--mode", choices=("shape", "velocity", "exact"), required=True)
    s.add_argument("--shape", help="directory of per-edge shape target files")
    s.add_argument("--velocity", help="directory of per-edge velocity target files")
    s.add_argument("--T", type=float)
    s.add_argument("--n", type=int, help="modes for --mode exact")
    s = sub.add_parser("simulate", help="run the finite-difference solver under given controls")
    common(s)
    s.add_argument("--f1", required=True)
    s.add_argument("--f2", required=True)
    s.add_argument("--T", type=float)
    s = sub.add_parser("verify", help="simulate and compare with targets")
    common(s)
    s.add_argument("--f1", required=True)
    s.add_argument("--f2", required=True)
    s.add_argument("--shape")
    s.add_argument("--velocity")
    s = sub.add_parser("spectrum", help="eigenpairs of the graph operator")
    common(s)
    s.add_argument("--n", type=int)
    s = sub.add_parser("kernels", help="Goursat kernel tables of one edge")
    common(s)
    s.add_argument("--edge", required=True)
    s.add_argument("--T", type=float)
    return p


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    rep = Report(args.command)
    out = Path(args.out)
    code = EXIT_OK
    try:
        tol = tolerance_profile(args.tolerance)
        if args.command == "synthesize":
            need = {"shape": ("shape",), "velocity": ("velocity",), "exact": ("shape", "velocity")}[args.mode]
            missing = [n for n in need if getattr(args, n) is None]
            if missing:
                raise SpecSemanticError([f"--mode {args.mode} needs --{m}" for m in missing])
        COMMANDS[args.command](args, rep, tol)
    except (SpecSyntaxError, SignalFormatError, OSError) as exc:
        code, kind = EXIT_PARSE, "parse"
        rep.set("error", f"{kind}: {exc}")
    except (SpecSemanticError, GridMismatch, IncompatibleTarget, HorizonTooShort, UnsupportedTemplate, KeyError) as exc:
        code, kind = EXIT_VALIDATION, "validation"
        rep.set("error", f"{kind}: {exc}")
    except (MarchingError, SpectrumError, KernelNonconvergence, SingularVolterra, CFLViolation, np.linalg.LinAlgError) as exc:
        code, kind = EXIT_NUMERICAL, "numerical"
        rep.set("error", f"{kind}: {exc}")
    except ToleranceFailure as exc:
        code = EXIT_TOLERANCE
        rep.set("error", f"tolerance: {exc}")
    rep.set("exit_code", code)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.render())
    sys.stdout.write(rep.render())
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()

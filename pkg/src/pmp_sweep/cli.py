"""``pmp-sweep``: solve problem files and write CSV results.

Exit status: 0 converged, 2 finished without converging, 1 error.

Output files (in ``--out``, default ``$PMP_SWEEP_OUT`` or the current
directory; one subdirectory per problem when several are given):

============  =================================================================
kind          columns
============  =================================================================
trajectory    t, states (declaration order), lambda1..n, u1..m[, sigma1..m]
kkt           t, then per control k: activity_k, dH_du_k, residual_k, singular_k
phases        control, t_start, t_end, activity
comparison    quantity, value
gains         t, S11..Snn, K11..Kmn (row-major; ``--solver lqr`` only)
============  =================================================================

``sigma`` is accepted as an emit kind and adds switching-function columns to
the trajectory file.  Numbers are written with 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from pmp_sweep import control_law as CL
from pmp_sweep import diagnostics as D
from pmp_sweep import fbsm, lqr
from pmp_sweep.config import ConfigError, RunConfig, load_config
from pmp_sweep.expr import ExprError
from pmp_sweep.odeint import IntegrationError, Trajectory
from pmp_sweep.registry import BUILTINS, UnknownProblemError, registry_get, registry_names

EMIT_KINDS = ("trajectory", "kkt", "phases", "comparison", "gains", "sigma")
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
FMT = "%.17g"

log = logging.getLogger("pmp_sweep")


def _parse_set(items) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--set {key.strip()}: {value!r} is not a number") from None
    return out


def resolve(source: str, overrides: dict | None = None) -> RunConfig:
    """A problem file path, or ``builtin:NAME`` / a bare built-in name."""
    name = source[len("builtin:"):] if source.startswith("builtin:") else None
    if name is None and not Path(source).exists() and source in BUILTINS:
        name = source
    if name is not None:
        try:
            return RunConfig(problem=registry_get(name, **(overrides or {})), source=source)
        except UnknownProblemError as exc:
            raise ConfigError(exc.args[0]) from None
    return load_config(source, overrides)


def apply_flags(rc: RunConfig, args) -> RunConfig:
    changes = {}
    if args.grid is not None:
        changes["N"] = args.grid
    if args.damping is not None:
        changes["damping"] = args.damping
    if args.tol is not None:
        changes["tol"] = args.tol
    try:
        sweep = replace(rc.sweep, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    solver = args.solver or rc.solver
    return replace(rc, sweep=sweep, solver=solver)


# -- CSV ----------------------------------------------------------------


def _write_matrix(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack(columns)
    np.savetxt(path, data, fmt=FMT, delimiter=",", header=",".join(header), comments="", newline="\n")


def write_trajectory(path, p, traj: Trajectory, sigma=None) -> None:
    n, m = traj.x.shape[1], traj.u.shape[1]
    header = ["t", *p.states, *[f"lambda{i + 1}" for i in range(n)], *[f"u{k + 1}" for k in range(m)]]
    cols = [traj.t, traj.x, traj.lam, traj.u]
    if sigma is not None:
        header += [f"sigma{k + 1}" for k in range(m)]
        cols.append(sigma)
    _write_matrix(Path(path), header, cols)


def read_trajectory(path) -> tuple[list[str], np.ndarray]:
    """Header and data of a CSV written by this tool."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_kkt(path, t, kkt: CL.KktReport) -> None:
    m = kkt.dH_du.shape[1]
    names = kkt.activity_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["t"]
        for k in range(m):
            header += [f"activity{k + 1}", f"dH_du{k + 1}", f"residual{k + 1}", f"singular{k + 1}"]
        w.writerow(header)
        for i, ti in enumerate(t):
            row = [FMT % ti]
            for k in range(m):
                row += [
                    names[i, k],
                    FMT % kkt.dH_du[i, k],
                    FMT % kkt.residual[i, k],
                    int(kkt.singular[i, k]),
                ]
            w.writerow(row)


def write_phases(path, phases: D.PhaseSegmentation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["control", "t_start", "t_end", "activity"])
        for k, s, e, a in phases.as_rows():
            w.writerow([k + 1, FMT % s, FMT % e, a])


def write_comparison(path, rep: D.ComparisonReport) -> None:
    fields = [
        "J_projected",
        "J_clipped",
        "gap",
        "max_control_difference",
        "kkt_projected",
        "kkt_clipped",
        "kkt_projected_saturated",
        "kkt_clipped_saturated",
        "saturated_nodes",
        "vacuous",
        "route_b_available",
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for f in fields:
            v = getattr(rep, f)
            w.writerow([f, FMT % v if isinstance(v, float) else v])


def write_gains(path, sol: lqr.RiccatiSolution) -> None:
    N, n, _ = sol.S.shape
    m = sol.K.shape[1]
    header = ["t"] + [f"S{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    header += [f"K{i + 1}{j + 1}" for i in range(m) for j in range(n)]
    _write_matrix(Path(path), header, [sol.grid.nodes, sol.S.reshape(N, -1), sol.K.reshape(N, -1)])


# -- running ------------------------------------------------------------


@dataclass
class Outcome:
    converged: bool
    summary: str
    written: list


def _phase_table(phases: D.PhaseSegmentation, controls) -> list[str]:
    lines = ["  control  t_start        t_end          activity"]
    for k, s, e, a in phases.as_rows():
        lines.append(f"  {controls[k]:<8} {s:<14.6g} {e:<14.6g} {a}")
    return lines


def execute(rc: RunConfig, emit: set[str], out: Path) -> Outcome:
    p = rc.problem
    written: list[Path] = []
    sol = None
    if rc.solver == "lqr":
        lp = lqr.ocp_to_lqr(p)
        sol = lqr.riccati_solve(lp, rc.sweep.N)
        traj = lqr.closed_loop(lp, sol)
        kkt = CL.sign_condition_audit(p, traj, rc.sweep.audit_tol)
        converged, iterations, shooting = True, 0, ()
        objective = D.objective(p, traj)
    else:
        res = fbsm.solve(p, rc.sweep)
        traj, kkt = res.trajectory, res.kkt
        converged, iterations, objective = res.converged, res.iterations, res.objective
        shooting = tuple(zip((p.states[i] for i in res.fixed), res.shooting_parameters))
    phases = D.segment_phases(traj, p.bounds, rc.sweep.audit_tol, kkt.singular)
    lines = [
        f"problem     {p.name or rc.source}",
        f"solver      {rc.solver}",
        f"converged   {'yes' if converged else 'no'}",
        f"iterations  {iterations}",
        f"objective   {objective:.12g}",
        f"max KKT     {kkt.max_residual:.3g}",
    ]
    for state, s in shooting:
        lines.append(f"lambda_{state}(t1) = {s:.12g}  (shooting)")
    lines.append("phases:")
    lines += _phase_table(phases, p.controls)
    if emit:
        out.mkdir(parents=True, exist_ok=True)
    if "trajectory" in emit or "sigma" in emit:
        sigma = D.switching_function(p, traj) if "sigma" in emit else None
        path = out / "trajectory.csv"
        write_trajectory(path, p, traj, sigma)
        written.append(path)
    if "kkt" in emit:
        write_kkt(out / "kkt.csv", traj.t, kkt)
        written.append(out / "kkt.csv")
    if "phases" in emit:
        write_phases(out / "phases.csv", phases)
        written.append(out / "phases.csv")
    if "gains" in emit:
        if sol is None:
            raise ConfigError("--emit gains needs --solver lqr")
        write_gains(out / "gains.csv", sol)
        written.append(out / "gains.csv")
    if "comparison" in emit:
        rep = D.clip_comparison(p, rc.sweep)
        write_comparison(out / "comparison.csv", rep)
        written.append(out / "comparison.csv")
        lines += ["comparison:", rep.summary()]
    lines += [f"wrote {w}" for w in written]
    return Outcome(converged, "\n".join(lines), written)


def _run_one(source: str, args, out: Path) -> tuple[int, str]:
    try:
        rc = apply_flags(resolve(source, _parse_set(args.set)), args)
        outcome = execute(rc, set(args.emit), out)
    except (ConfigError, ExprError, lqr.LqrError) as exc:
        return EXIT_ERROR, f"error: {exc}"
    except (IntegrationError, fbsm.ShootingError, CL.ControlLawError, OSError) as exc:
        return EXIT_ERROR, f"error: {type(exc).__name__}: {exc}"
    return (EXIT_OK if outcome.converged else EXIT_NOT_CONVERGED), outcome.summary


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("PMP_SWEEP_OUT") or ".")


def _combine(codes) -> int:
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED if EXIT_NOT_CONVERGED in codes else EXIT_OK


def cmd_run(args) -> int:
    out = _out_dir(args)
    sources = args.problems
    if len(sources) == 1:
        code, text = _run_one(sources[0], args, out)
        print(text, file=sys.stderr if code == EXIT_ERROR else sys.stdout)
        return code
    # several problems: isolated output directories, optionally in parallel
    dirs = [out / Path(s.removeprefix("builtin:")).stem for s in sources]
    if args.batch and args.batch > 1:
        with ProcessPoolExecutor(max_workers=args.batch) as pool:
            results = list(pool.map(_run_one, sources, [args] * len(sources), dirs))
    else:
        results = [_run_one(s, args, d) for s, d in zip(sources, dirs)]
    for s, (code, text) in zip(sources, results):
        print(f"== {s}")
        print(text)
    return _combine([c for c, _ in results])


def cmd_compare(args) -> int:
    try:
        rc = apply_flags(resolve(args.problem, _parse_set(args.set)), args)
        rep = D.clip_comparison(rc.problem, rc.sweep)
    except (ConfigError, ExprError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (IntegrationError, fbsm.ShootingError, CL.ControlLawError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(rep.summary())
    if args.out or os.environ.get("PMP_SWEEP_OUT"):
        out = _out_dir(args)
        out.mkdir(parents=True, exist_ok=True)
        write_comparison(out / "comparison.csv", rep)
        print(f"wrote {out / 'comparison.csv'}")
    return EXIT_OK if rep.projected.converged else EXIT_NOT_CONVERGED


def cmd_list(args) -> int:
    for name in registry_names():
        entry = BUILTINS[name]
        params = ", ".join(f"{k}={v:g}" for k, v in entry.defaults.items())
        print(f"{name:<24} {entry.summary}\n{'':<24} [{params}]")
    return EXIT_OK


def cmd_validate(args) -> int:
    code = EXIT_OK
    for source in args.problems:
        try:
            rc = resolve(source, _parse_set(args.set))
            if (args.solver or rc.solver) == "lqr":
                lqr.ocp_to_lqr(rc.problem)
        except (ConfigError, ExprError, lqr.LqrError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_ERROR
            continue
        p = rc.problem
        print(
            f"{source}: ok ({p.sense}, n={p.n}, m={p.m}, "
            f"fixed terminal states: {[p.states[i] for i in p.boundary.fixed_indices] or 'none'})"
        )
    return code


def _emit_list(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    for k in kinds:
        if k not in EMIT_KINDS:
            raise argparse.ArgumentTypeError(f"unknown emit kind {k!r}; choose from {', '.join(EMIT_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmp-sweep", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--grid", type=int, help="number of grid nodes N (default 1001)")
        sp.add_argument("--damping", type=float, help="damping theta in (0, 1] (default 0.5)")
        sp.add_argument("--tol", type=float, help="relative control-change tolerance (default 1e-8)")
        sp.add_argument("--solver", choices=("fbsm", "lqr"))
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a parameter")
        sp.add_argument("--out", help="output directory (default $PMP_SWEEP_OUT or .)")

    run = sub.add_parser("run", help="solve and write results")
    run.add_argument("problems", nargs="+", help="problem file(s) or builtin:NAME")
    run.add_argument("--emit", type=_emit_list, action="extend", default=[], help="comma-separated kinds")
    run.add_argument("--batch", type=int, metavar="WORKERS", help="run several problems in parallel")
    solver_flags(run)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="projection inside the sweep versus clipping afterwards")
    cmp_.add_argument("problem")
    solver_flags(cmp_)
    cmp_.set_defaults(func=cmd_compare)

    ls = sub.add_parser("list-builtins", help="list built-in problems and parameters")
    ls.set_defaults(func=cmd_list)

    val = sub.add_parser("validate", help="parse problem files without solving")
    val.add_argument("problems", nargs="+")
    val.add_argument("--set", action="append", metavar="KEY=VALUE")
    val.add_argument("--solver", choices=("fbsm", "lqr"))
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for non-convergence
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

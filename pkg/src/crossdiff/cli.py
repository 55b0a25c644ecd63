"""Command line entry point: ``crossdiff {check,run,sweep,renorm-audit} <scenario>``.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import grid as G
from .hypotheses import classify_hypotheses
from .io import MANIFEST, emit_csv, emit_json, emit_manifest
from .renorm import BumpTest, RenormTestFunction, XiFunction, defect_ladder, defect_trend, renorm_residual
from .scenario import PRESETS, SCHEMA_VERSION, Scenario, ScenarioError, parse_scenario
from .scheme import NonConvergence, SolverError, limit_sweep, march

log = logging.getLogger("crossdiff")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 1, 2, 3


class InvariantViolation(RuntimeError):
    pass


class _Run:
    """Collects artifacts for one command and writes the manifest last."""

    def __init__(self, out: Path, command: str, scenario: Scenario, seed: int):
        self.out = out
        self.command = command
        self.scenario = scenario
        self.seed = seed
        self.files: list[str] = []
        self.extra: dict = {}
        self.start = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        stale = out / MANIFEST
        if stale.exists():
            stale.unlink()

    def csv(self, name, header, rows):
        emit_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, data):
        emit_json(self.out / name, data)
        self.files.append(name)

    def finish(self, status: str, code: int, classification: str | None = None) -> int:
        emit_manifest(self.out, {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "command": self.command,
            "scenario_name": self.scenario.name,
            "scenario_hash": self.scenario.digest(),
            "scenario": self.scenario.raw,
            "seed": self.seed,
            "wall_clock_seconds": time.perf_counter() - self.start,
            "artifacts": self.files,
            "classification": classification,
            "status": status,
            "exit_code": code,
            **self.extra,
        })
        return code


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------


def _check(sc: Scenario, run: _Run) -> int:
    rep = classify_hypotheses(sc.system, seed=run.seed, count=sc.audit["samples"])
    run.json("hypotheses.json", rep.to_dict())
    return run.finish("ok", EXIT_OK, rep.classification)


def _audit_rows(traj):
    for r in traj.reports:
        yield [r.step, r.time, r.newton_iters, r.residual, r.entropy_after, *r.mass_after, *r.prod_l2,
               *r.prod_sqrt, *r.mass_balance]


def _audit_header(n):
    sp = range(1, n + 1)
    return (["step", "time", "newton_iters", "residual", "entropy"] + [f"mass_{i}" for i in sp]
            + [f"prodL2_{i}" for i in sp] + [f"prodSqrt_{i}" for i in sp] + [f"massbal_{i}" for i in sp])


def snapshot_steps(num_steps: int, stride: int) -> list[int]:
    """Steps written as snapshots: multiples of ``stride`` plus the last step."""
    if stride <= 0:
        stride = max(num_steps, 1)
    steps = list(range(0, num_steps + 1, stride))
    if steps[-1] != num_steps:
        steps.append(num_steps)
    return steps


def _write_snapshots(run: _Run, traj, stride: int, total_steps: int):
    grid = traj.grid
    x = grid.coords
    coords = ["x", "y"][: grid.dim]
    header = coords + [f"u_{i}" for i in range(1, traj.spec.n + 1)]
    for k in snapshot_steps(total_steps, stride):
        if k > traj.num_steps:
            break
        u = traj.fields[k]
        run.csv(f"snapshot_{k:06d}.csv", header, (list(x[j]) + list(u[:, j]) for j in range(grid.size)))


def _check_invariants(traj, sc: Scenario):
    tol = 10.0 * sc.params.newton.tol * max(1.0, traj.grid.volume)
    for k, u in enumerate(traj.fields):
        if not np.all(u > 0):
            raise InvariantViolation(f"nonpositive density at step {k}")
    for r in traj.reports:
        if np.max(np.abs(r.mass_balance)) > tol:
            raise InvariantViolation(f"mass-balance residual {np.max(np.abs(r.mass_balance)):.3e} at step {r.step}")


def _run(sc: Scenario, run: _Run) -> int:
    rep = classify_hypotheses(sc.system, seed=run.seed, count=sc.audit["samples"])
    status, code, traj = "ok", EXIT_OK, None
    try:
        traj = march(sc.system, sc.grid, sc.initial_values(), sc.params, hypotheses=rep)
    except NonConvergence as exc:
        log.error("solver failed at step %s: %s", exc.step, exc)
        traj = exc.trajectory
        status, code = "nonconvergence", EXIT_SOLVER
        run.extra["failure"] = {"step": exc.step, "message": str(exc), "trace": exc.trace}
    except SolverError as exc:
        log.error("solver failed: %s", exc)
        run.extra["failure"] = {"message": str(exc)}
        return run.finish("solver-error", EXIT_SOLVER, rep.classification)
    if traj is not None:
        run.csv("audit.csv", _audit_header(sc.n), _audit_rows(traj))
        _write_snapshots(run, traj, sc.snapshot_stride, sc.params.num_steps)
    if code == EXIT_OK:
        try:
            _check_invariants(traj, sc)
        except InvariantViolation as exc:
            log.error("invariant violated: %s", exc)
            run.extra["failure"] = {"message": str(exc)}
            return run.finish("invariant-violation", EXIT_INVARIANT, rep.classification)
    return run.finish(status, code, rep.classification)


def _sweep(sc: Scenario, run: _Run) -> int:
    aud = sc.audit
    taus = aud["tau_ladder"] or [sc.params.tau]
    ladder = [sc.params.replace(tau=t, eps=t if aud["eps_equals_tau"] else sc.params.eps) for t in taus]
    try:
        rep = limit_sweep(sc.system, sc.grid, sc.initial_values, ladder, aud["delta_ladder"])
    except NonConvergence as exc:
        log.error("sweep run failed: %s", exc)
        run.extra["failure"] = {"message": str(exc), "trace": exc.trace}
        return run.finish("nonconvergence", EXIT_SOLVER)
    n = sc.n
    header = ["stage", "index", "tau", "eps", "delta", "l1_diff_prev", "final_entropy", "newton_iters"] + [
        f"mass_{i}" for i in range(1, n + 1)]
    run.csv("sweep.csv", header, ([e.stage, e.index, e.tau, e.eps, e.delta, e.l1_diff_prev, e.final_entropy,
                                   e.newton_iters, *e.final_mass] for e in rep.entries))
    return run.finish("ok", EXIT_OK)


def _xi_suite(kinds, n: int, top: float) -> list[XiFunction]:
    suite = []
    for kind in kinds:
        if kind == "coord":
            suite += [XiFunction("coord", 0.25 * top, 0.5 * top, index=i) for i in range(n)]
        elif kind == "sum":
            suite.append(XiFunction("sum", 0.5 * top, 0.75 * top))
        else:
            suite.append(XiFunction("const", shift=1.0))
    return suite


def _renorm_audit(sc: Scenario, run: _Run) -> int:
    aud = sc.audit
    deltas = [sc.params.delta] + [d for d in aud["delta_ladder"] if d != sc.params.delta]
    defect_rows, resid_rows, trend = [], [], {}
    for idx, delta in enumerate(deltas):
        params = sc.params.replace(delta=delta)
        try:
            traj = march(sc.system, sc.grid, sc.initial_values(), params)
        except NonConvergence as exc:
            log.error("renorm audit run failed: %s", exc)
            run.extra["failure"] = {"delta": delta, "message": str(exc), "trace": exc.trace}
            return run.finish("nonconvergence", EXIT_SOLVER)
        top = traj.max_density_sum
        levels = [f * top for f in aud["L_ladder"]] if aud["L_relative"] else list(aud["L_ladder"])
        estimates = defect_ladder(traj, sorted(levels))
        for est in estimates:
            for i, total in enumerate(est.totals):
                defect_rows.append([i + 1, est.L, delta, total])
        trend[f"{delta!r}"] = [{"species": s + 1, "L": L, "ratio": r} for s, L, r in defect_trend(estimates)]
        if idx == 0 and params.t_end > 0:
            bump = BumpTest(tuple(0.5 * e for e in sc.grid.extents), 0.25 * min(sc.grid.extents), params.t_end)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for xi in _xi_suite(aud["xi_suite"], sc.n, top):
                    res = renorm_residual(traj, RenormTestFunction(xi, bump))
                    resid_rows.append([res.xi_id, res.phi_id, res.residual, res.normalizer])
    run.csv("defects.csv", ["species", "L", "delta", "total_variation"], defect_rows)
    run.csv("residuals.csv", ["xi_id", "phi_id", "residual", "normalizer"], resid_rows)
    run.extra["defect_trend_violations"] = trend
    return run.finish("ok", EXIT_OK)


COMMANDS = {"check": _check, "run": _run, "sweep": _sweep, "renorm-audit": _renorm_audit}


def dispatch(command: str, scenario: Scenario, out: str | Path, seed: int | None = None) -> int:
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    seed = scenario.audit["seed"] if seed is None else seed
    run = _Run(Path(out), command, scenario, seed)
    return COMMANDS[command](scenario, run)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossdiff",
        description="Entropy-variable solver and audits for SKT-type cross-diffusion systems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("check", "certify the structural hypotheses and write hypotheses.json"),
        ("run", "march the scheme and write audit.csv plus snapshots"),
        ("sweep", "run the eps = tau and delta ladders and write sweep.csv"),
        ("renorm-audit", "write defect estimates and renormalized residuals"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("scenario", help=f"scenario JSON path or preset ({', '.join(PRESETS)})")
        p.add_argument("--out", help="output directory (default: scenario 'output' or out/<name>)")
        p.add_argument("--seed", type=int, help="sampler seed (overrides the scenario)")
        p.add_argument("--snapshot-stride", type=int, help="write a snapshot every n steps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = parse_scenario(args.scenario)
        if args.seed is not None and args.seed < 0:
            raise ScenarioError("seed must be nonnegative", "--seed")
        if args.snapshot_stride is not None:
            if args.snapshot_stride < 0:
                raise ScenarioError("snapshot stride must be nonnegative", "--snapshot-stride")
            sc.snapshot_stride = args.snapshot_stride
            sc.raw["scheme"]["snapshot_stride"] = args.snapshot_stride
        if args.seed is not None:
            sc.audit["seed"] = args.seed
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or sc.output or Path("out") / sc.name)
    try:
        return dispatch(args.command, sc, out, args.seed)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: ``pqgalerkin {mesh,eigen,check,solve,probe}``.

Exit codes: 0 success, 1 configuration or usage error, 2 hypothesis check
failed, 3 solver failure or violated solution invariant, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, default_config, parse_config
from .eigen import EigenConvergenceError, EigenEstimate, eigen_sequence
from .femspace import field_csv, space_of
from .galerkin import bump_state, certify, run_hierarchy
from .hypotheses import HypothesisConstants, SamplingPlan, reports_csv, violations_csv
from .mesh import unit_square_hierarchy
from .nonlinear import SolverError, epsilon_schedule
from .operators import nonmonotonicity_root, probe_nonmonotonicity
from .reactions import (ZERO_REACTION, ExampleReactionParams, build_example_reactions,
                        expression_reaction, spatial)

EXIT_OK, EXIT_PARSE, EXIT_HYPOTHESIS, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
OUTPUT_ENV = "PQGALERKIN_OUTPUT_DIR"

log = logging.getLogger("pqgalerkin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- output

def write_all(outdir: Path, files: dict):
    """Stage every file first so a failure leaves none of them behind."""
    outdir.mkdir(parents=True, exist_ok=True)
    staged, moved = [], []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=outdir)
            staged.append((tmp, outdir / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
        for tmp, final in staged:
            os.replace(tmp, final)
            moved.append(final)
    except BaseException:
        # outputs of this run come as a set; drop the part already renamed
        for final in moved:
            final.unlink(missing_ok=True)
        raise
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- building blocks

def build_problem(cfg: RunConfig):
    """``(spec with reactions, HypothesisConstants)`` from the config."""
    try:
        return _build_problem(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_problem(cfg: RunConfig):
    spec = cfg.problem_spec()
    r, h = cfg.reactions, cfg.hypotheses
    if r.type == "convective":
        params = ExampleReactionParams(alpha1=r.alpha1, alpha2=r.alpha2, beta1=r.beta1,
                                       beta2=r.beta2, h1=spatial(r.h1), h2=spatial(r.h2),
                                       r1=r.r1, r2=r.r2)
        f1, f2, constants = build_example_reactions(params, spec, (h.c1, h.c2), (h.d1, h.d2))
        return spec.with_reactions(f1, f2), constants
    if r.type == "expression":
        f1, f2 = expression_reaction(r.f1), expression_reaction(r.f2)
    else:
        f1 = f2 = ZERO_REACTION
    if r.type == "expression" and (h.C1 is None or h.C2 is None):
        raise ConfigError("expression reactions need hypotheses.C1 and hypotheses.C2")
    constants = HypothesisConstants(
        C1=h.C1 if h.C1 is not None else 1.0, C2=h.C2 if h.C2 is not None else 1.0,
        sigma1=spatial(h.sigma1 or "0"), sigma2=spatial(h.sigma2 or "0"),
        c1=h.c1, c2=h.c2, d1=h.d1, d2=h.d2,
        gamma1=spatial(h.gamma1 or "0"), gamma2=spatial(h.gamma2 or "0"),
        D1=h.D1, D2=h.D2, r1=h.r1, s1=h.s1, r2=h.r2, s2=h.s2)
    constants.validate_windows(spec)
    return spec.with_reactions(f1, f2), constants


def _hierarchy(cfg: RunConfig):
    return unit_square_hierarchy(cfg.domain.levels, cells=cfg.domain.cells)


def _sampler(cfg: RunConfig, mesh) -> SamplingPlan:
    s = cfg.sampling
    return SamplingPlan.for_mesh(mesh, n_samples=s.samples, max_magnitude=s.max_magnitude,
                                 min_magnitude=s.min_magnitude, zero_fraction=s.zero_fraction,
                                 seed=s.seed, workers=s.workers)


def _eigen_levels(cfg: RunConfig):
    d = cfg.domain
    return list(range(max(d.first_level, d.levels - 1), d.levels + 1))


def _lambda_csv(lam: dict) -> str:
    rows = [e.csv_row() for seq in lam.values() for e in seq]
    return _csv(EigenEstimate.CSV_HEADER, rows)


# ---------------------------------------------------------------- subcommands

def cmd_mesh(cfg: RunConfig, outdir: Path) -> int:
    hier = _hierarchy(cfg)
    files, rows = {}, []
    for level in range(hier.max_level + 1):
        m = hier.mesh(level)
        files[f"mesh_level{level}.txt"] = m.to_text()
        rows.append((level, m.n_vertices, m.n_triangles, m.n_interior))
    files["mesh.csv"] = _csv(("level", "vertices", "triangles", "interior_vertices"), rows)
    write_all(outdir, files)
    sys.stdout.write(files["mesh.csv"])
    return EXIT_OK


def cmd_eigen(cfg: RunConfig, outdir: Path) -> int:
    hier = _hierarchy(cfg)
    p = cfg.problem
    rs = [cfg.eigen.r] if cfg.eigen.r is not None else sorted({p.p1, p.p2})
    levels = list(range(cfg.domain.first_level, cfg.domain.levels + 1))
    rows = []
    for r in rs:
        try:
            seq = eigen_sequence(r, hier, levels, cfg.solver.eigen_tol)
        except EigenConvergenceError as exc:
            log.error("%s", exc)
            return EXIT_SOLVER
        rows += [e.csv_row() for e in seq]
    text = _csv(EigenEstimate.CSV_HEADER, rows)
    write_all(outdir, {"eigen.csv": text})
    sys.stdout.write(text)
    return EXIT_OK


def _quick_margin_failure(constants: HypothesisConstants) -> bool:
    """c1 + c2 >= 1 breaks the coercivity inequality for every eigenvalue."""
    return constants.c1 + constants.c2 >= 1.0


def _check(cfg: RunConfig, spec, constants, hier):
    level = cfg.domain.levels
    return certify(spec, constants, hier, level, _sampler(cfg, hier.mesh(level)),
                   _eigen_levels(cfg), cfg.solver.eigen_tol)


def _check_files(reports, lam, R) -> dict:
    summary = "\n".join(r.summary() for r in reports)
    for r, seq in lam.items():
        summary += "\nlambda_1,{:g}: ".format(r) + ", ".join(
            f"level {e.level} {e.lam:.10g}" for e in seq)
    summary += "\n" + (f"a-priori radius R = {R!r}" if R is not None else "a-priori radius: none")
    return {"check.csv": reports_csv(reports), "violations.csv": violations_csv(reports),
            "lambda.csv": _lambda_csv(lam), "check_summary.txt": summary + "\n"}


def cmd_check(cfg: RunConfig, outdir: Path) -> int:
    spec, constants = build_problem(cfg)
    if _quick_margin_failure(constants):
        log.error("coercivity condition violated: c1 + c2 = %g >= 1", constants.c1 + constants.c2)
        return EXIT_HYPOTHESIS
    hier = _hierarchy(cfg)
    reports, lam, R = _check(cfg, spec, constants, hier)
    files = _check_files(reports, lam, R)
    write_all(outdir, files)
    sys.stdout.write(files["check_summary.txt"])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_HYPOTHESIS


def cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    spec, constants = build_problem(cfg)
    s = cfg.solver
    if _quick_margin_failure(constants) and not s.override_hypotheses:
        log.error("coercivity condition violated: c1 + c2 = %g >= 1", constants.c1 + constants.c2)
        return EXIT_HYPOTHESIS
    hier = _hierarchy(cfg)
    files = {}
    R = np.inf
    reports = None
    if not _quick_margin_failure(constants):
        reports, lam, R_cert = _check(cfg, spec, constants, hier)
        files.update(_check_files(reports, lam, R_cert))
        if not all(r.passed for r in reports) and not s.override_hypotheses:
            write_all(outdir, files)
            log.error("hypothesis checks failed; see check.csv")
            return EXIT_HYPOTHESIS
        if R_cert is not None:
            R = R_cert
    levels = list(range(cfg.domain.first_level, cfg.domain.levels + 1))
    if len(levels) < 2:
        raise ConfigError("solve needs at least two levels (domain.levels > domain.first_level)")
    init = None
    if s.initial == "bump":
        init = bump_state(space_of(hier.mesh(levels[0])), s.initial_amplitude)
    report = run_hierarchy(spec, hier, levels, s.tol, R=R, hypotheses=reports,
                           override=s.override_hypotheses, init=init,
                           stages=epsilon_schedule(s.eps_start, s.eps_end, s.eps_stages),
                           max_iter=s.max_newton)
    report.hypothesis_reports = reports or []
    files["solve.csv"] = report.to_csv()
    for sol in report.levels:
        files[f"field_level{sol.level}.csv"] = field_csv(sol.state.u, sol.state.v)
    write_all(outdir, files)
    sys.stdout.write(files["solve.csv"])
    if not report.succeeded:
        log.error("%s", report.failure)
        return EXIT_SOLVER
    bad = [sol.level for sol, gap in zip(report.levels, report.energy_gaps)
           if not (sol.inside_ball and sol.residual_linf <= s.tol and gap <= 10 * s.tol)]
    if bad:
        log.error("solution invariants violated on levels %s", bad)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_probe(cfg: RunConfig, outdir: Path) -> int:
    p = cfg.problem
    hier = _hierarchy(cfg)
    space = space_of(hier.mesh(cfg.domain.levels))
    f0 = space.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    mu = p.mu1
    t_star = nonmonotonicity_root(f0, p.p1, p.q1, mu) if mu > 0 else 1.0
    t_min = cfg.probe.t_min if cfg.probe.t_min is not None else 1e-3 * t_star
    t_max = cfg.probe.t_max if cfg.probe.t_max is not None else 1e3 * t_star
    if not t_min < t_max:
        raise ConfigError("probe.t_min must be below probe.t_max")
    grid = np.geomspace(t_min, t_max, cfg.probe.points)
    pairs = probe_nonmonotonicity(f0, p.p1, p.q1, mu, grid)
    text = _csv(("t", "E"), [(repr(t), repr(e)) for t, e in pairs])
    write_all(outdir, {"probe.csv": text})
    sys.stdout.write(text)
    signs = {np.sign(e) for _, e in pairs}
    log.info("mu = %g: E changes sign: %s (t* = %g)", mu, {-1.0, 1.0} <= signs, t_star)
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "eigen": cmd_eigen, "check": cmd_check, "solve": cmd_solve,
            "probe": cmd_probe}


# ---------------------------------------------------------------- entry point

def make_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", help="TOML run configuration")
    common.add_argument("-o", "--output", help=f"output directory (overrides ${OUTPUT_ENV} and output.dir)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="pqgalerkin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    m = sub.add_parser("mesh", parents=[common], help="write the refinement hierarchy")
    m.add_argument("--levels", type=int)
    e = sub.add_parser("eigen", parents=[common], help="first r-Laplacian eigenvalue per level")
    e.add_argument("--r", type=float)
    e.add_argument("--levels", type=int)
    for name, text in (("check", "audit the hypotheses"), ("solve", "solve the level hierarchy")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--levels", type=int)
    pr = sub.add_parser("probe", parents=[common], help="energy along a ray")
    pr.add_argument("--mu", type=float)
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = parse_config(Path(args.config).read_text())
    else:
        cfg = default_config()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "levels", None) is not None:
        overrides["domain.levels"] = args.levels
    if getattr(args, "r", None) is not None:
        overrides["eigen.r"] = args.r
    if getattr(args, "mu", None) is not None:
        overrides["problem.mu1"] = args.mu
        overrides["problem.mu2"] = args.mu
    env = os.environ.get(OUTPUT_ENV)
    if args.output:
        overrides["output.dir"] = args.output
    elif env:
        overrides["output.dir"] = env
    return apply_overrides(cfg, overrides) if overrides else cfg


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"pqgalerkin: {exc}\n")
        return EXIT_PARSE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        sys.stderr.write(f"pqgalerkin: configuration error: {exc}\n")
        return EXIT_PARSE
    except OSError as exc:
        sys.stderr.write(f"pqgalerkin: cannot read configuration: {exc}\n")
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg, Path(cfg.output.dir))
    except ConfigError as exc:
        sys.stderr.write(f"pqgalerkin: configuration error: {exc}\n")
        return EXIT_PARSE
    except SolverError as exc:
        sys.stderr.write(f"pqgalerkin: solver failure: {exc}\n")
        return EXIT_SOLVER
    except OSError as exc:
        sys.stderr.write(f"pqgalerkin: I/O error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

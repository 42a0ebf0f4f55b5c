"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 synthesis failure,
3 structural refusal, 4 internal-consistency failure (oracle deviation,
failed certificate, divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import _numerics as nm
from . import benchmark
from .config import load_experiment
from .errors import (ConfigError, ConsistencyError, DimensionError, DivergedError,
                     EigenvalueError, GraphError, StructuralError, SynthesisError)
from .lti import analyze, load_system
from .sim import export_run, run
from .synthesis import (augment_exosystem, compensator_to_dict, default_target, design_gains,
                        design_precompensator, exosystem_to_dict, gains_to_dict, write_json)
from .verify import certificate_to_dict, certify_synchronization, oracle_compare

EXIT_OK, EXIT_USAGE, EXIT_SYNTHESIS, EXIT_STRUCTURAL, EXIT_CONSISTENCY = 0, 1, 2, 3, 4
DEFAULT_TOL = 1e-6
ORACLE_TOL = 1e-9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, sim=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="seed for random initial conditions")
    if sim:
        p.add_argument("--horizon", type=int, default=None, help="number of simulated steps")
        p.add_argument("--allow-unverified", action="store_true",
                       help="simulate even if the graph condition fails")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalefree", description="Scale-free collaborative protocol toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="design gains, pre-compensators and exosystem augmentation")
    p.add_argument("agents", nargs="+", help="agent system files")
    p.add_argument("--nq", type=int, default=None,
                   help="uniform rank of the target; enables pre-compensator design")
    p.add_argument("--exosystem", default=None,
                   help="exosystem file {Ar, Cr}; its augmentation becomes the target")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="allowed defect of the compensated agents (default 1e-8)")
    _common(p, sim=False)

    p = sub.add_parser("simulate", help="simulate an experiment and export the trace")
    p.add_argument("config", help="experiment file")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="disagreement level that counts as settled (default 1e-6)")
    _common(p)

    p = sub.add_parser("verify", help="certify an experiment and cross-check the simulator")
    p.add_argument("config", help="experiment file")
    p.add_argument("--tol", type=float, default=ORACLE_TOL,
                   help="allowed oracle deviation (default 1e-9)")
    _common(p)

    p = sub.add_parser("paper-example", help="reproduce the three-case benchmark")
    p.add_argument("--gains", choices=("printed", "designed"), default="printed",
                   help="published gains (default) or Riccati-designed gains")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="disagreement level that counts as settled (default 1e-6)")
    _common(p)

    p = sub.add_parser("batch", help="simulate and verify several experiments")
    p.add_argument("configs", nargs="+", help="experiment files")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="disagreement level that counts as settled (default 1e-6)")
    _common(p)
    return parser


def _error_code(exc) -> int:
    if isinstance(exc, StructuralError):
        return EXIT_STRUCTURAL
    if isinstance(exc, SynthesisError):
        return EXIT_SYNTHESIS
    if isinstance(exc, (ConsistencyError, DivergedError, EigenvalueError)):
        return EXIT_CONSISTENCY
    return EXIT_USAGE


def cmd_design(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agents = [load_system(p) for p in args.agents]
    report = []
    if args.nq is None and args.exosystem is None:
        if len(agents) != 1:
            raise ConfigError("homogeneous design takes one agent file (use --nq for several)")
        gains = design_gains(agents[0])
        write_json(gains_to_dict(gains), out / "gains.json")
        report += [f"K = {nm.dump_matrix(gains.K)}", f"H = {nm.dump_matrix(gains.H)}",
                   f"rho(A - BK) = {nm.format_decimal(gains.rho_feedback)}",
                   f"rho(A - HC) = {nm.format_decimal(gains.rho_observer)}"]
    else:
        if args.exosystem is not None:
            exo_obj = json.loads(Path(args.exosystem).read_text())
            if not isinstance(exo_obj, dict) or set(exo_obj) - {"Ar", "Cr"}:
                raise ConfigError("exosystem file must hold exactly 'Ar' and 'Cr'")
            nq = args.nq if args.nq is not None else len(exo_obj["Ar"])
            exo = augment_exosystem(nm.parse_matrix(exo_obj["Cr"], "Cr"),
                                    nm.parse_matrix(exo_obj["Ar"], "Ar"), nq)
            write_json(exosystem_to_dict(exo), out / "exosystem.json")
            target = exo.target
        else:
            target = default_target(args.nq)
        gains = design_gains(target.system)
        write_json(gains_to_dict(gains), out / "gains.json")
        report += [f"target nq = {target.nq}", f"K = {nm.dump_matrix(gains.K)}",
                   f"H = {nm.dump_matrix(gains.H)}"]
        for i, agent in enumerate(agents, start=1):
            comp = design_precompensator(agent, target, check_tol=args.tol)
            write_json(compensator_to_dict(comp), out / f"compensator{i}.json")
            rep = analyze(agent)
            report.append(f"agent {i}: relative degree {rep.relative_degree}, "
                          f"compensator order {comp.order}, "
                          f"rho(As) = {nm.format_decimal(comp.residual_radius)}")
    (out / "report.txt").write_text("\n".join(report) + "\n")
    print("\n".join(report))
    return EXIT_OK


def _simulate_one(path, out, horizon, seed, allow, tol):
    exp = load_experiment(path).with_options(horizon, seed, allow)
    trace = run(exp.sim)
    summary = export_run(trace, out, tol=tol, title=Path(path).stem, seed=exp.sim.seed,
                         source=str(path))
    return exp, summary


def _verify_one(exp, out, steps, tol):
    cfg = exp.sim
    cert = certify_synchronization(cfg)
    deviation = oracle_compare(cfg, steps)
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "certificate.json").write_text(json.dumps(
        certificate_to_dict(cert, oracle_deviation=nm.format_decimal(deviation),
                            oracle_steps=steps, source=exp.source),
        indent=2, sort_keys=True) + "\n")
    if deviation >= tol:
        raise ConsistencyError(f"simulator and matrix oracle differ by {deviation:.3e} "
                               f"(threshold {tol:g})")
    if not cert.certified:
        raise ConsistencyError(f"certification failed: spectral radius "
                               f"{cert.spectral_radius:.12g}")
    return cert, deviation


def cmd_simulate(args) -> int:
    _, summary = _simulate_one(args.config, args.out, args.horizon, args.seed,
                               args.allow_unverified, args.tol)
    print(f"final disagreement {summary.final_disagreement:.6g}, "
          f"decay rate {summary.decay_rate:.6g}, settled step {summary.settled_step}")
    return EXIT_OK


def cmd_verify(args) -> int:
    exp = load_experiment(args.config).with_options(None, args.seed, args.allow_unverified)
    steps = args.horizon if args.horizon is not None else 200
    cert, deviation = _verify_one(exp, args.out, steps, args.tol)
    print(f"certified: spectral radius {cert.spectral_radius:.12g}, "
          f"oracle deviation {deviation:.3e}")
    return EXIT_OK


def cmd_paper_example(args) -> int:
    report, ok = benchmark.reproduce(args.out, horizon=args.horizon, seed=args.seed,
                                     gains=args.gains, tol=args.tol)
    print((Path(args.out) / "report.txt").read_text(), end="")
    return EXIT_OK if ok else EXIT_CONSISTENCY


def _batch_item(item):
    path, out, horizon, seed, allow, tol = item
    try:
        exp, summary = _simulate_one(path, out, horizon, seed, allow, tol)
        cert, deviation = _verify_one(exp, out, min(200, exp.sim.horizon), ORACLE_TOL)
        return path, EXIT_OK, (f"certified rho={cert.spectral_radius:.6g} "
                               f"final disagreement {summary.final_disagreement:.3g}")
    except Exception as exc:  # noqa: BLE001 - reported per item
        return path, _error_code(exc), str(exc)


def cmd_batch(args) -> int:
    out = Path(args.out)
    items = [(p, str(out / f"{i + 1:03d}_{Path(p).stem}"), args.horizon, args.seed,
              args.allow_unverified, args.tol) for i, p in enumerate(args.configs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_batch_item, items))
    else:
        results = [_batch_item(it) for it in items]
    out.mkdir(parents=True, exist_ok=True)
    (out / "batch.json").write_text(json.dumps(
        [{"config": str(p), "exit_code": code, "message": msg} for p, code, msg in results],
        indent=2) + "\n")
    for p, code, msg in results:
        print(f"[{code}] {p}: {msg}")
    return max(code for _, code, _ in results)


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "verify": cmd_verify,
            "paper-example": cmd_paper_example, "batch": cmd_batch}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("horizon", "seed"):
        value = getattr(args, name, None)
        if value is not None and value < 0:
            parser.error(f"--{name} must be nonnegative")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GraphError, DimensionError, SynthesisError, StructuralError,
            ConsistencyError, DivergedError, EigenvalueError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _error_code(exc)


if __name__ == "__main__":
    sys.exit(main())

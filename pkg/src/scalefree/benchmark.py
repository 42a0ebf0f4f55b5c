"""The three-state benchmark agent, its published gains and the bundled cases.

The agent has one real mode at 0.5 and a lightly damped rotation with
modulus ``sqrt(0.866^2 + 0.5^2) ~= 0.999978``. The published gains are
kept verbatim so they can be checked independently of any design routine.
"""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

import numpy as np

from . import _numerics as nm
from .config import ExperimentConfig, load_experiment
from .errors import DivergedError, SynthesisError
from .lti import LtiSystem
from .protocols import ProtocolKind, ProtocolSpec
from .sim import export_run, run
from .synthesis import GainSet, design_gains, gains_to_dict
from .verify import certificate_to_dict, certify_synchronization, oracle_compare

__all__ = ["EXAMPLE_A", "EXAMPLE_B", "EXAMPLE_C", "PRINTED_K", "PRINTED_H", "CASE_NAMES",
           "data_path", "example_agent", "printed_gain_check", "printed_spec", "load_case", "reproduce",
           "ORACLE_TOL"]

EXAMPLE_A = np.array([[0.5, 1.0, 1.0], [0.0, 0.866, -0.5], [0.0, 0.5, 0.866]])
EXAMPLE_B = np.array([[0.0], [0.0], [1.0]])
EXAMPLE_C = np.array([[1.0, 0.0, 0.0]])
PRINTED_K = np.array([[0.0695, 1.7625, 1.2051]])
PRINTED_H = np.array([[1.4327], [0.4143], [0.6993]])

CASE_NAMES = ("case1", "case2", "case3")
ORACLE_TOL = 1e-9
ORACLE_STEPS = 200


def data_path(name: str) -> Path:
    """Path of a bundled data file (``case1.json``, ``hetero_agents.json``...)."""
    return Path(str(resources.files("scalefree") / "data" / name))


def example_agent() -> LtiSystem:
    return LtiSystem(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C)


def printed_gain_check(K=PRINTED_K, H=PRINTED_H) -> dict:
    """Spectral radii of ``A``, ``A - BK`` and ``A - HC`` for the published gains."""
    A, B, C = EXAMPLE_A, EXAMPLE_B, EXAMPLE_C
    rho_k = nm.spectral_radius(A - B @ K)
    rho_h = nm.spectral_radius(A - H @ C)
    return {
        "rho_A": nm.spectral_radius(A),
        "rho_A_minus_BK": rho_k,
        "rho_A_minus_HC": rho_h,
        "feedback_schur": bool(rho_k < 1.0 - nm.UNIT_DISK_TOL),
        "observer_schur": bool(rho_h < 1.0 - nm.UNIT_DISK_TOL),
    }


def load_case(name: str) -> ExperimentConfig:
    if name not in CASE_NAMES:
        raise ValueError(f"unknown case {name!r}; choose from {CASE_NAMES}")
    return load_experiment(data_path(f"{name}.json"))


def reproduce(out_dir, horizon=None, seed=None, gains="printed", tol=1e-6):
    """Gain check, then simulate and certify the three bundled cases.

    ``gains="printed"`` runs the cases with the published ``K`` and ``H``
    and stops with :class:`SynthesisError` if they fail certification (the
    report is written first). ``gains="designed"`` uses Riccati gains and
    still reports the published ones.
    """
    if gains not in ("printed", "designed"):
        raise ValueError(f"gains must be 'printed' or 'designed', got {gains!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    check = printed_gain_check()
    report = {
        "gain_source": gains,
        "printed_gains": {
            "K": nm.dump_matrix(PRINTED_K), "H": nm.dump_matrix(PRINTED_H),
            **{k: (nm.format_decimal(v) if isinstance(v, float) else v) for k, v in check.items()},
        },
        "cases": {},
    }
    if gains == "printed":
        if not (check["feedback_schur"] and check["observer_schur"]):
            report["status"] = "printed gains fail Schur certification"
            report["printed_diagnostics"] = _printed_diagnostics(horizon, seed)
            _write_report(report, out)
            raise SynthesisError(
                f"printed gains are not Schur-certified: rho(A - BK) = "
                f"{check['rho_A_minus_BK']:.12g}, rho(A - HC) = {check['rho_A_minus_HC']:.12g}")
        gain_set = GainSet(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C, PRINTED_K, PRINTED_H)
    else:
        gain_set = design_gains(example_agent())
    report["gains_used"] = gains_to_dict(gain_set)
    spec = ProtocolSpec.partial_state(gain_set)

    all_ok = True
    for name in CASE_NAMES:
        exp = load_case(name).with_options(horizon=horizon, seed=seed)
        cfg = dataclasses.replace(exp.sim, protocol=spec)
        trace = run(cfg)
        summary = export_run(trace, out / name, tol=tol, title=name, seed=cfg.seed,
                             gain_source=gains)
        cert = certify_synchronization(cfg)
        deviation = oracle_compare(cfg, min(ORACLE_STEPS, cfg.horizon))
        (out / name / "certificate.json").write_text(json.dumps(
            certificate_to_dict(cert, oracle_deviation=nm.format_decimal(deviation)),
            indent=2, sort_keys=True) + "\n")
        ok = cert.certified and deviation < ORACLE_TOL
        all_ok = all_ok and ok
        report["cases"][name] = {
            "agents": cfg.graph.n,
            "certified": cert.certified,
            "spectral_radius": nm.format_decimal(cert.spectral_radius),
            "oracle_deviation": nm.format_decimal(deviation),
            "initial_disagreement": nm.format_decimal(summary.initial_disagreement),
            "final_disagreement": nm.format_decimal(summary.final_disagreement),
            "decay_rate": nm.format_decimal(summary.decay_rate),
            "settled_step": summary.settled_step,
        }
    report["status"] = "ok" if all_ok else "certification or oracle check failed"
    _write_report(report, out)
    return report, all_ok


def printed_spec() -> ProtocolSpec:
    """Partial-state spec with the published gains, certificates recorded but not enforced."""
    return ProtocolSpec(ProtocolKind.PARTIAL_STATE, EXAMPLE_A, EXAMPLE_B, EXAMPLE_C,
                        PRINTED_K, PRINTED_H, require_certified=False)


def _printed_diagnostics(horizon, seed) -> dict:
    """Closed-loop radius and simulated outcome of each case under the published gains."""
    spec = printed_spec()
    out = {}
    for name in CASE_NAMES:
        exp = load_case(name).with_options(horizon=horizon, seed=seed, allow_unverified=True)
        cfg = dataclasses.replace(exp.sim, protocol=spec)
        cert = certify_synchronization(cfg)
        try:
            trace = run(cfg)
            outcome = f"final disagreement {trace.disagreement[-1]:.6g}"
        except DivergedError as exc:
            outcome = f"diverged: {exc}"
        out[name] = {"spectral_radius": nm.format_decimal(cert.spectral_radius),
                     "simulation": outcome}
    return out


def _write_report(report: dict, out: Path) -> None:
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    pg = report["printed_gains"]
    lines = [
        "Benchmark reproduction",
        f"gain source: {report['gain_source']}",
        f"rho(A) = {pg['rho_A']}",
        f"printed K: rho(A - BK) = {pg['rho_A_minus_BK']}  schur={pg['feedback_schur']}",
        f"printed H: rho(A - HC) = {pg['rho_A_minus_HC']}  schur={pg['observer_schur']}",
    ]
    for name, d in report.get("printed_diagnostics", {}).items():
        lines.append(f"{name} with printed gains: closed-loop rho={d['spectral_radius']}, "
                     f"{d['simulation']}")
    if "gains_used" in report:
        g = report["gains_used"]
        lines.append(f"gains used: K = {g['K']}, H = {g['H']}")
    for name, c in report["cases"].items():
        lines.append(f"{name}: N={c['agents']} certified={c['certified']} "
                     f"rho={c['spectral_radius']} oracle_dev={c['oracle_deviation']} "
                     f"disagreement {c['initial_disagreement']} -> {c['final_disagreement']}")
    lines.append(f"status: {report['status']}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")

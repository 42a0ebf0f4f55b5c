"""Experiment files: parsing and validation into a :class:`SimConfig`.

An experiment is a JSON object::

    {
      "graph": {...} | "graph.json",
      "agent": {...} | "agent.json",          # replicated to every node
      "agents": [{...} | "a1.json", ...],     # or one per node (list or file)
      "protocol": {"kind": "partial_state", "K": ..., "H": ...},
      "horizon": 200, "seed": 0,
      "x0": [[...], ...], "exo_x0": [...],
      "rootset": [1], "allow_unverified": false,
      "description": "free text"
    }

Paths are resolved relative to the experiment file. Omitted gains are
designed with the Riccati routines; ``output_sync`` takes a ``target``
(``{"nq": 3}`` for a delay chain, or ``{"coefficients": [...]}`` for a
companion target) and ``regulated_sync`` an ``exosystem``
(``{"Ar", "Cr", "nq"}``). Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _numerics as nm
from .errors import ConfigError, DimensionError, GraphError
from .lti import LtiSystem, system_from_dict
from .netgraph import graph_from_dict
from .protocols import ProtocolKind, ProtocolSpec
from .sim import SimConfig
from .synthesis import (GainSet, augment_exosystem, companion_target, default_target,
                        design_gains, design_precompensator, design_state_gain)

__all__ = ["ExperimentConfig", "parse_experiment", "load_experiment", "build_protocol"]

_EXPERIMENT_KEYS = {"graph", "agent", "agents", "protocol", "horizon", "seed", "x0", "exo_x0",
                    "rootset", "allow_unverified", "description"}
_PROTOCOL_KEYS = {"kind", "K", "H", "target", "exosystem"}
_TARGET_KEYS = {"nq", "coefficients"}
_EXO_KEYS = {"Ar", "Cr", "nq", "max_infinite_zero_order"}

DEFAULT_HORIZON = 200


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    sim: SimConfig
    source: str | None = None
    description: str = ""

    def with_options(self, horizon=None, seed=None, allow_unverified=None) -> "ExperimentConfig":
        changes = {}
        if horizon is not None:
            changes["horizon"] = int(horizon)
        if seed is not None:
            changes["seed"] = int(seed)
        if allow_unverified:
            changes["allow_unverified"] = True
        return replace(self, sim=replace(self.sim, **changes)) if changes else self


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _resolve(value, base: Path, where):
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        try:
            return json.loads(path.read_text()), path.parent
        except FileNotFoundError as exc:
            raise ConfigError(f"{where} file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where} file {path} is not valid JSON: {exc}") from exc
    return value, base


def _integer(value, where, minimum=0):
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}, got {value!r}")
    return value


def _matrix(value, where):
    try:
        return nm.parse_matrix(value, where)
    except (ValueError, DimensionError) as exc:
        raise ConfigError(str(exc)) from exc


def build_protocol(obj, agents) -> ProtocolSpec:
    """Protocol coefficients from a protocol object, designing what is omitted."""
    _reject_unknown(obj, _PROTOCOL_KEYS, "protocol")
    try:
        kind = ProtocolKind(obj.get("kind"))
    except ValueError as exc:
        raise ConfigError(f"protocol kind must be one of "
                          f"{[k.value for k in ProtocolKind]}, got {obj.get('kind')!r}") from exc
    K = _matrix(obj["K"], "K") if "K" in obj else None
    H = _matrix(obj["H"], "H") if "H" in obj else None
    if kind in (ProtocolKind.FULL_STATE, ProtocolKind.PARTIAL_STATE):
        for key in ("target", "exosystem"):
            if key in obj:
                raise ConfigError(f"'{key}' does not apply to a {kind.value} protocol")
        base = agents[0]
        if any(not a.same_dynamics(base) for a in agents[1:]):
            raise ConfigError(f"{kind.value} protocol needs identical agents")
        if kind is ProtocolKind.FULL_STATE:
            if H is not None:
                raise ConfigError("full_state protocol takes no observer gain H")
            K = design_state_gain(base.A, base.B) if K is None else K
            return ProtocolSpec.full_state(base.A, base.B, K)
        gains = _gains(base, K, H)
        return ProtocolSpec.partial_state(gains)

    if kind is ProtocolKind.OUTPUT_SYNC:
        if "exosystem" in obj:
            raise ConfigError("'exosystem' does not apply to an output_sync protocol")
        if "target" not in obj:
            raise ConfigError("output_sync protocol needs a 'target'")
        target = _target(obj["target"])
        comps = [design_precompensator(a, target) for a in agents]
        return ProtocolSpec.output_sync(target, _gains(target.system, K, H), comps)

    if "target" in obj:
        raise ConfigError("'target' does not apply to a regulated_sync protocol; "
                          "the augmented exosystem is the target")
    if "exosystem" not in obj:
        raise ConfigError("regulated_sync protocol needs an 'exosystem'")
    exo_obj = obj["exosystem"]
    _reject_unknown(exo_obj, _EXO_KEYS, "exosystem")
    for key in ("Ar", "Cr", "nq"):
        if key not in exo_obj:
            raise ConfigError(f"exosystem is missing '{key}'")
    exo = augment_exosystem(_matrix(exo_obj["Cr"], "Cr"), _matrix(exo_obj["Ar"], "Ar"),
                            _integer(exo_obj["nq"], "exosystem nq", 1),
                            _integer(exo_obj.get("max_infinite_zero_order", 0),
                                     "max_infinite_zero_order"))
    target = exo.target
    comps = [design_precompensator(a, target) for a in agents]
    return ProtocolSpec.regulated_sync(exo, _gains(target.system, K, H), comps)


def _gains(sys: LtiSystem, K, H) -> GainSet:
    if K is None and H is None:
        return design_gains(sys)
    designed = design_gains(sys) if K is None or H is None else None
    return GainSet(sys.A, sys.B, sys.C, designed.K if K is None else K,
                   designed.H if H is None else H)


def _target(obj):
    _reject_unknown(obj, _TARGET_KEYS, "target")
    if ("nq" in obj) == ("coefficients" in obj):
        raise ConfigError("target needs exactly one of 'nq' or 'coefficients'")
    if "nq" in obj:
        return default_target(_integer(obj["nq"], "target nq", 1))
    coeffs = obj["coefficients"]
    if not isinstance(coeffs, list):
        raise ConfigError("target coefficients must be a list")
    return companion_target(np.array([nm.parse_decimal(c) for c in coeffs]))


def parse_experiment(obj, base_dir=".", source=None) -> ExperimentConfig:
    base = Path(base_dir)
    _reject_unknown(obj, _EXPERIMENT_KEYS, "experiment")
    for key in ("graph", "protocol"):
        if key not in obj:
            raise ConfigError(f"experiment is missing '{key}'")
    if ("agent" in obj) == ("agents" in obj):
        raise ConfigError("experiment needs exactly one of 'agent' or 'agents'")

    graph_obj, _ = _resolve(obj["graph"], base, "graph")
    try:
        graph = graph_from_dict(graph_obj)
    except GraphError as exc:
        raise ConfigError(f"graph: {exc}") from exc

    def system(value, where):
        data, _ = _resolve(value, base, where)
        try:
            return system_from_dict(data)
        except (DimensionError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    if "agent" in obj:
        agents = (system(obj["agent"], "agent"),) * graph.n
    else:
        listed, _ = _resolve(obj["agents"], base, "agents")
        if not isinstance(listed, list) or len(listed) != graph.n:
            raise ConfigError(f"'agents' must list one system per node ({graph.n})")
        agents = tuple(system(a, f"agent {i + 1}") for i, a in enumerate(listed))

    protocol_obj, _ = _resolve(obj["protocol"], base, "protocol")
    spec = build_protocol(protocol_obj, agents)

    rootset = None
    if "rootset" in obj:
        roots = obj["rootset"]
        if not isinstance(roots, list):
            raise ConfigError("rootset must be a list of 1-based node indices")
        rootset = frozenset(_integer(r, "rootset entry", 1) - 1 for r in roots)
        if any(r >= graph.n for r in rootset):
            raise ConfigError(f"rootset entries must lie in 1..{graph.n}")
    if spec.kind is ProtocolKind.REGULATED_SYNC and rootset is None and not graph.rootset:
        raise ConfigError("regulated_sync needs a rootset (in the graph or the experiment)")

    x0 = None
    if "x0" in obj:
        if not isinstance(obj["x0"], list):
            raise ConfigError("x0 must be a list of per-agent state vectors")
        x0 = tuple(np.array([nm.parse_decimal(v) for v in row]) for row in obj["x0"])
    exo_x0 = None
    if "exo_x0" in obj:
        exo_x0 = np.array([nm.parse_decimal(v) for v in obj["exo_x0"]])
    allow = obj.get("allow_unverified", False)
    if not isinstance(allow, bool):
        raise ConfigError("allow_unverified must be true or false")
    description = obj.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("description must be a string")

    sim_cfg = SimConfig(graph=graph, agents=agents, protocol=spec,
                        horizon=_integer(obj.get("horizon", DEFAULT_HORIZON), "horizon"),
                        x0=x0, exo_x0=exo_x0, seed=_integer(obj.get("seed", 0), "seed"),
                        rootset=rootset, allow_unverified=allow)
    return ExperimentConfig(sim=sim_cfg, source=source, description=description)


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"experiment file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_experiment(obj, path.parent, source=str(path))

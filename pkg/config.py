"""
cdbound - Experiment Config
JSON experiment configs: built-in defaults, file and command-line overrides,
schema validation, and builders for the numeric objects a run needs.
"""
import copy
import hashlib
import json
import logging
import math
import os
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from bath import SpectralDensity
from errors import ConfigError, DomainError
from protocol import FAMILIES, CouplingAngle, ProtocolSpec

logger = logging.getLogger(__name__)

KINDS = ("bound-sweep", "dynamics-sweep", "optimize", "sta-verify", "bath-functionals")
METHODS = ("heom", "pseudomode")
WORKERS_ENV = "CDBOUND_WORKERS"

DEFAULT_CONFIG: Dict[str, object] = {
    "kind": "dynamics-sweep",
    "protocol": {
        "family": "sinh",
        "delta": 1.0,
        "tau": 2.0,
        "q_i": -1.0,
        "q_f": 1.0,
        "a": 3.0,
        "plateau": None,
        "knots": [],
        "values": [],
        "samples_csv": None,
    },
    "coupling": {"mode": "static", "phi": math.pi / 4},
    "bath": {
        "kind": "underdamped",
        "omega0": 1.0,
        "gamma": 0.1,
        "lam": 0.1,
        "beta": 1.0,
        "table_csv": None,
        "tail_exponent": 3.0,
    },
    "solver": {
        "method": "heom",
        "N_c": 6,
        "K": 3,
        "N_f": 10,
        "dt": None,
        "M": 1001,
        "x_points": 201,
        "terminator": True,
        "check_convergence": True,
        "max_escalations": 3,
        "margin_tolerance": 1e-3,
        "sta_min_fidelity": 0.999,
        "sta_min_beta": 10.0,
        "allow_low_beta": False,
    },
    "sweep": {
        "deltas": None,
        "delta_start": 0.1,
        "delta_stop": 2.0,
        "delta_points": 20,
        "a_values": [1.0, 3.0, 10.0],
    },
    "optimize": {
        "parameters": ["a"],
        "lower": [0.5],
        "upper": [50.0],
        "initial": None,
        "seeds": [0, 1, 2],
        "theta_dot_ceiling": 50.0,
        "xtol": 1e-4,
        "max_iterations": 400,
        "scan_points": 25,
        "verify": False,
        "ledger": "results/optimize_ledger.csv",
    },
    "output": {"path": "results/dynamics_sweep.csv"},
    "workers": 1,
}


def default_config() -> Dict[str, object]:
    return copy.deepcopy(DEFAULT_CONFIG)


def _merge(base: Dict, update: Mapping, prefix: str, errors: List[str]) -> Dict:
    for key, value in update.items():
        name = f"{prefix}{key}"
        if key not in base:
            errors.append(f"ERROR: unknown key '{name}'")
        elif isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                errors.append(f"ERROR: '{name}' must be an object")
            else:
                _merge(base[key], value, f"{name}.", errors)
        else:
            base[key] = copy.deepcopy(value)
    return base


def parse_override(text: str) -> Tuple[List[str], object]:
    """'solver.N_c=8' -> (['solver', 'N_c'], 8); values are JSON when they parse, else strings."""
    if "=" not in text:
        raise ConfigError([f"ERROR: override '{text}' is not of the form key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def _nest(path: List[str], value) -> Dict:
    nested: Dict = {path[-1]: value}
    for key in reversed(path[:-1]):
        nested = {key: nested}
    return nested


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> Dict[str, object]:
    """
    Resolves a config: defaults, then the JSON file, then CDBOUND_WORKERS, then
    key=value overrides. Raises ConfigError listing every problem found.
    """
    environ = os.environ if environ is None else environ
    config = default_config()
    errors: List[str] = []
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"ERROR: config file '{path}' not found"])
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ConfigError([f"ERROR: {path} is not valid JSON: {error}"])
        if not isinstance(raw, dict):
            raise ConfigError([f"ERROR: {path} must hold a JSON object"])
        _merge(config, raw, "", errors)
    if environ.get(WORKERS_ENV):
        try:
            config["workers"] = int(environ[WORKERS_ENV])
        except ValueError:
            errors.append(f"ERROR: {WORKERS_ENV}='{environ[WORKERS_ENV]}' is not an integer")
    for text in overrides:
        keys, value = parse_override(text)
        _merge(config, _nest(keys, value), "", errors)

    _, problems = validate_config(config)
    errors.extend(problems)
    if errors:
        raise ConfigError(errors)
    logger.debug("resolved %s config from %s (sha256 %s)", config["kind"], path or "defaults", config_hash(config))
    return config


def _number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def beta_value(raw) -> float:
    if isinstance(raw, str) and raw.lower() in ("inf", "infinity"):
        return math.inf
    return float(raw)


def validate_config(config: Mapping) -> Tuple[bool, List[str]]:
    """Collects every schema problem; (True, []) for a runnable config."""
    errors = []
    protocol, bath, solver = config["protocol"], config["bath"], config["solver"]
    sweep, optimize = config["sweep"], config["optimize"]

    if config["kind"] not in KINDS:
        errors.append(f"ERROR: kind '{config['kind']}' is not one of {KINDS}")
    if protocol["family"] not in FAMILIES:
        errors.append(f"ERROR: protocol.family '{protocol['family']}' is not one of {FAMILIES}")
    for key in ("delta", "tau", "q_i", "q_f", "a"):
        if not _number(protocol[key]):
            errors.append(f"ERROR: protocol.{key} must be a number")
    if _number(protocol["delta"]) and protocol["delta"] <= 0:
        errors.append("ERROR: protocol.delta must be positive")
    if _number(protocol["tau"]) and protocol["tau"] <= 0:
        errors.append("ERROR: protocol.tau must be positive")
    if protocol["family"] == "tabulated" and not protocol["samples_csv"]:
        errors.append("ERROR: tabulated protocols need protocol.samples_csv")

    if config["coupling"]["mode"] not in ("static", "sta"):
        errors.append("ERROR: coupling.mode must be 'static' or 'sta'")
    if not _number(config["coupling"]["phi"]):
        errors.append("ERROR: coupling.phi must be a number")

    if bath["kind"] not in ("underdamped", "custom"):
        errors.append("ERROR: bath.kind must be 'underdamped' or 'custom'")
    if bath["kind"] == "custom" and not bath["table_csv"]:
        errors.append("ERROR: custom baths need bath.table_csv")
    for key in ("omega0", "gamma", "lam"):
        if not _number(bath[key]) or bath[key] < 0:
            errors.append(f"ERROR: bath.{key} must be a non-negative number")
    try:
        if not beta_value(bath["beta"]) > 0:
            errors.append("ERROR: bath.beta must be positive (or \"inf\")")
    except (TypeError, ValueError):
        errors.append("ERROR: bath.beta must be a number or \"inf\"")

    if solver["method"] not in METHODS:
        errors.append(f"ERROR: solver.method must be one of {METHODS}")
    checks = (("N_c", 1), ("K", 0), ("N_f", 4), ("x_points", 4), ("max_escalations", 0))
    for key, minimum in checks:
        if not isinstance(solver[key], int) or isinstance(solver[key], bool) or solver[key] < minimum:
            errors.append(f"ERROR: solver.{key} must be an integer >= {minimum}")
    if not isinstance(solver["M"], int) or solver["M"] < 101 or solver["M"] % 2 == 0:
        errors.append("ERROR: solver.M must be an odd integer >= 101")
    if solver["dt"] is not None and (not _number(solver["dt"]) or solver["dt"] <= 0):
        errors.append("ERROR: solver.dt must be positive or null")

    if sweep["deltas"] is not None:
        if not isinstance(sweep["deltas"], list) or not all(_number(d) and d > 0 for d in sweep["deltas"]):
            errors.append("ERROR: sweep.deltas must be a list of positive numbers")
    elif not isinstance(sweep["delta_points"], int) or sweep["delta_points"] < 1:
        errors.append("ERROR: sweep.delta_points must be a positive integer")
    if not isinstance(sweep["a_values"], list) or not all(_number(a) and a > 0 for a in sweep["a_values"]):
        errors.append("ERROR: sweep.a_values must be a list of positive numbers")

    n_free = len(optimize["parameters"]) if isinstance(optimize["parameters"], list) else -1
    if n_free < 1:
        errors.append("ERROR: optimize.parameters must be a non-empty list")
    elif len(optimize["lower"]) != n_free or len(optimize["upper"]) != n_free:
        errors.append("ERROR: optimize.lower and optimize.upper must match optimize.parameters")
    if not optimize["seeds"] or not all(isinstance(s, int) for s in optimize["seeds"]):
        errors.append("ERROR: optimize.seeds must be a non-empty list of integers")

    if not isinstance(config["workers"], int) or config["workers"] < 1:
        errors.append("ERROR: workers must be a positive integer")
    if not config["output"]["path"]:
        errors.append("ERROR: output.path is required")
    return len(errors) == 0, errors


def canonical_json(config: Mapping) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def sweep_deltas(config: Mapping) -> List[float]:
    sweep = config["sweep"]
    if sweep["deltas"] is not None:
        return [float(d) for d in sweep["deltas"]]
    return [float(d) for d in np.linspace(sweep["delta_start"], sweep["delta_stop"], sweep["delta_points"])]


def build_protocol(config: Mapping, **changes) -> ProtocolSpec:
    """ProtocolSpec from the protocol section; keyword changes (delta, a, ...) win."""
    section = dict(config["protocol"])
    section.update(changes)
    try:
        if section["family"] == "tabulated":
            return ProtocolSpec.from_csv(section["samples_csv"], delta=float(section["delta"]))
        return ProtocolSpec(
            family=section["family"],
            delta=float(section["delta"]),
            tau=float(section["tau"]),
            q_i=float(section["q_i"]),
            q_f=float(section["q_f"]),
            a=float(section["a"]),
            plateau=None if section["plateau"] is None else float(section["plateau"]),
            knots=tuple(float(k) for k in section["knots"]),
            values=tuple(float(v) for v in section["values"]),
        )
    except (DomainError, OSError) as error:
        raise ConfigError([f"ERROR: protocol section: {error}"])


def build_angle(config: Mapping, mode: Optional[str] = None) -> CouplingAngle:
    section = config["coupling"]
    mode = mode or section["mode"]
    try:
        return CouplingAngle.sta() if mode == "sta" else CouplingAngle.static(float(section["phi"]))
    except DomainError as error:
        raise ConfigError([f"ERROR: coupling section: {error}"])


def build_density(config: Mapping) -> SpectralDensity:
    section = config["bath"]
    try:
        if section["kind"] == "custom":
            return SpectralDensity.from_csv(section["table_csv"], tail_exponent=float(section["tail_exponent"]))
        return SpectralDensity.underdamped(
            omega0=float(section["omega0"]), gamma=float(section["gamma"]), lam=float(section["lam"])
        )
    except (DomainError, OSError) as error:
        raise ConfigError([f"ERROR: bath section: {error}"])

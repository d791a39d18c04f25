"""
cdbound - Experiment Engine
Runs configured experiments (bound sweeps, HEOM verification sweeps, STA
checks, protocol optimisation, bath tables), validates the resulting rows and
writes CSV artifacts stamped with the resolved config.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from bath import BathFunctionals, tabulate_functionals
from bounds import l_bd_lz, weak_coupling_bound
from config import (
    beta_value, build_angle, build_density, build_protocol, canonical_json, config_hash, sweep_deltas,
)
from dynamics import run_heom, run_pseudomode
from errors import (
    ConfigError, ConvergenceError, InsufficientTermsError, IntegrabilityError, StateValidationError,
)
from optimizer import OptimizationProblem, optimize_multi, optimize_scalar
from protocol import CouplingAngle, ProtocolSpec

logger = logging.getLogger(__name__)

__version__ = "1.0.0"

EXIT_OK = 0
EXIT_BOUND_VIOLATED = 2
EXIT_UNCONVERGED = 3
EXIT_CONFIG = 4

SOLVER_FAILURES = (ConvergenceError, InsufficientTermsError, IntegrabilityError, StateValidationError)

LEDGER_COLUMNS = (
    "family", "delta", "tau", "q_i", "q_f", "coupling", "phi", "parameters", "lower", "upper", "seeds",
    "best", "l_bd", "fidelity_bound", "bound_valid", "status", "boundary", "evaluations", "config_sha256",
    "fidelity", "margin",
)


@dataclass
class ExperimentOutcome:
    kind: str
    frame: pd.DataFrame
    exit_code: int = EXIT_OK
    errors: List[str] = field(default_factory=list)
    path: Optional[Path] = None


def _bound_row(config: Mapping, functionals: BathFunctionals, delta: float, a: Optional[float]) -> Dict:
    changes = {"delta": delta} if a is None else {"delta": delta, "a": a}
    spec = build_protocol(config, **changes)
    angle = build_angle(config)
    solver = config["solver"]
    result = l_bd_lz(spec, angle, functionals, solver["M"])
    weak = weak_coupling_bound(spec, angle, build_density(config), beta_value(config["bath"]["beta"]), solver["M"])
    return {
        "delta": delta,
        "a": spec.a if spec.family == "sinh" else math.nan,
        "l_bd": result.l_bd,
        "fidelity_bound": result.fidelity_lower_bound,
        "bound_valid": result.valid,
        "weak_coupling_bound": weak,
        "l_bd_error": result.error,
        "under_resolved": result.under_resolved,
    }


def _simulate(config: Mapping, spec: ProtocolSpec, angle: CouplingAngle):
    solver = config["solver"]
    J = build_density(config)
    beta = beta_value(config["bath"]["beta"])
    if solver["method"] == "pseudomode" or angle.is_sta:
        return run_pseudomode(
            spec, angle, J, beta, N_f=solver["N_f"], dt=solver["dt"],
            check_convergence=solver["check_convergence"], max_escalations=solver["max_escalations"],
        )
    return run_heom(
        spec, angle, J, beta, N_c=solver["N_c"], K=solver["K"], dt=solver["dt"],
        terminator=solver["terminator"], check_convergence=solver["check_convergence"],
        max_escalations=solver["max_escalations"],
    )


def _dynamics_row(config: Mapping, functionals: BathFunctionals, delta: float, a: Optional[float]) -> Dict:
    row = _bound_row(config, functionals, delta, a)
    changes = {"delta": delta} if a is None else {"delta": delta, "a": a}
    spec = build_protocol(config, **changes)
    try:
        result = _simulate(config, spec, build_angle(config))
    except SOLVER_FAILURES as error:
        logger.warning("solver failed at delta=%.4g a=%s: %s", delta, a, error)
        row.update({
            "fidelity": math.nan,
            "margin": math.nan,
            "converged": False,
            "deltas": json.dumps(getattr(error, "deltas", {}), sort_keys=True),
            "failure": f"{type(error).__name__}: {error}",
        })
        return row
    row.update({
        "fidelity": result.final_fidelity,
        "margin": result.final_fidelity - row["fidelity_bound"],
        "converged": result.converged,
        "deltas": json.dumps(result.metadata.get("deltas", {}), sort_keys=True),
        "failure": "",
    })
    return row


class ExperimentEngine:
    """Runs one resolved experiment config."""

    def __init__(self, config: Mapping):
        self.config = config
        self.hash = config_hash(config)
        self.output_path = Path(config["output"]["path"])

    @property
    def workers(self) -> int:
        return int(self.config["workers"])

    def run(self) -> ExperimentOutcome:
        runners = {
            "bound-sweep": self.run_bound_sweep,
            "dynamics-sweep": self.run_dynamics_sweep,
            "optimize": self.run_optimize,
            "sta-verify": self.run_sta_verify,
            "bath-functionals": self.run_bath_functionals,
        }
        outcome = runners[self.config["kind"]]()
        outcome.path = self.write_csv(outcome.frame, self.output_path)
        for message in outcome.errors:
            logger.error(message)
        return outcome

    # --- Shared inputs ---
    def functionals(self) -> BathFunctionals:
        solver = self.config["solver"]
        tau = float(self.config["protocol"]["tau"])
        if self.config["protocol"]["family"] == "tabulated":
            tau = build_protocol(self.config).tau
        return tabulate_functionals(
            build_density(self.config), beta_value(self.config["bath"]["beta"]), tau,
            points=solver["x_points"], n_jobs=self.workers,
        )

    def sweep_points(self) -> List[Tuple[float, Optional[float]]]:
        a_values = self.config["sweep"]["a_values"] if self.config["protocol"]["family"] == "sinh" else [None]
        return [(delta, a) for delta in sweep_deltas(self.config) for a in a_values]

    def _sweep(self, row_function) -> pd.DataFrame:
        functionals = self.functionals()
        points = self.sweep_points()
        logger.info("sweeping %d points with %d workers", len(points), self.workers)
        rows = Parallel(n_jobs=self.workers)(
            delayed(row_function)(self.config, functionals, delta, a) for delta, a in points
        )
        return pd.DataFrame(rows)

    # --- Experiments ---
    def run_bound_sweep(self) -> ExperimentOutcome:
        frame = self._sweep(_bound_row)
        errors = [
            f"WARNING: l_BD under-resolved at delta={row.delta:.6g}" for row in frame.itertuples() if row.under_resolved
        ]
        return ExperimentOutcome("bound-sweep", frame, EXIT_OK, errors)

    def run_dynamics_sweep(self) -> ExperimentOutcome:
        """Bound and simulated fidelity for every (delta, a) sweep point."""
        frame = self._sweep(_dynamics_row)
        ok, errors = self.validate_rows(frame)
        exit_code = EXIT_OK
        if not ok:
            violated = any("bound violated" in error for error in errors)
            exit_code = EXIT_BOUND_VIOLATED if violated else EXIT_UNCONVERGED
        return ExperimentOutcome("dynamics-sweep", frame, exit_code, errors)

    def validate_rows(self, frame: pd.DataFrame) -> Tuple[bool, List[str]]:
        """
        Checks every sweep row:
        1. the solver converged
        2. fidelity >= cos^2 l_BD - margin tolerance
        """
        tolerance = float(self.config["solver"]["margin_tolerance"])
        errors = []
        for row in frame.itertuples():
            label = f"delta={row.delta:.6g}" + ("" if math.isnan(row.a) else f" a={row.a:.6g}")
            if not row.converged:
                failure = getattr(row, "failure", "")
                detail = f": {failure}" if isinstance(failure, str) and failure else ""
                errors.append(f"ERROR: solver unconverged at {label} (deltas {row.deltas}){detail}")
            elif row.margin < -tolerance:
                errors.append(
                    f"ERROR: bound violated at {label}: fidelity {row.fidelity:.8f} < cos^2 l_BD {row.fidelity_bound:.8f}"
                )
        if frame.empty:
            errors.append("ERROR: sweep produced no rows.")
        return len(errors) == 0, errors

    def run_sta_verify(self) -> ExperimentOutcome:
        """Pseudomode run with phi = theta_t, paired with a static-phi control run."""
        solver = self.config["solver"]
        beta = beta_value(self.config["bath"]["beta"])
        if beta < solver["sta_min_beta"] and not solver["allow_low_beta"]:
            raise ConfigError([
                f"ERROR: sta-verify needs bath.beta >= {solver['sta_min_beta']} (got {beta}); "
                "set solver.allow_low_beta to override"
            ])
        spec = build_protocol(self.config)
        sta_config = dict(self.config, solver=dict(solver, method="pseudomode"))
        try:
            sta = _simulate(sta_config, spec, CouplingAngle.sta())
            control = _simulate(sta_config, spec, build_angle(self.config, mode="static"))
        except SOLVER_FAILURES as error:
            deltas = json.dumps(getattr(error, "deltas", {}), sort_keys=True)
            frame = pd.DataFrame([{"t": math.nan, "fidelity": math.nan, "deltas": deltas}])
            return ExperimentOutcome("sta-verify", frame, EXIT_UNCONVERGED, [f"ERROR: {error}"])

        frame = sta.to_frame()
        frame["control_fidelity"] = np.interp(sta.times, control.times, control.fidelities)
        errors = []
        threshold = float(solver["sta_min_fidelity"])
        if sta.final_fidelity < threshold:
            trace = ", ".join(f"{f:.6f}" for f in sta.fidelities[:: max(1, len(sta.fidelities) // 10)])
            errors.append(f"ERROR: STA final fidelity {sta.final_fidelity:.8f} < {threshold} (trace: {trace})")
        frame["control_below_sta"] = control.final_fidelity < sta.final_fidelity
        if control.final_fidelity >= sta.final_fidelity:
            errors.append(
                f"ERROR: static control fidelity {control.final_fidelity:.8f} does not score below "
                f"the STA run ({sta.final_fidelity:.8f})"
            )
        logger.info("STA fidelity %.8f, static control %.8f", sta.final_fidelity, control.final_fidelity)
        return ExperimentOutcome("sta-verify", frame, EXIT_BOUND_VIOLATED if errors else EXIT_OK, errors)

    def problem(self, functionals: Optional[BathFunctionals] = None) -> OptimizationProblem:
        section = self.config["optimize"]
        return OptimizationProblem(
            base=build_protocol(self.config),
            angle=build_angle(self.config),
            bath=self.functionals() if functionals is None else functionals,
            parameters=tuple(section["parameters"]),
            lower=tuple(float(v) for v in section["lower"]),
            upper=tuple(float(v) for v in section["upper"]),
            initial=None if section["initial"] is None else tuple(float(v) for v in section["initial"]),
            points=self.config["solver"]["M"],
            theta_dot_ceiling=float(section["theta_dot_ceiling"]),
            xtol=float(section["xtol"]),
            seeds=tuple(section["seeds"]),
            max_iterations=int(section["max_iterations"]),
            scan_points=int(section["scan_points"]),
        )

    def run_optimize(self) -> ExperimentOutcome:
        """Minimises l_BD, appends a ledger row, and optionally verifies with HEOM."""
        problem = self.problem()
        if len(problem.parameters) == 1 and not problem.parameters[0].startswith("value_"):
            result = optimize_scalar(problem)
        else:
            result = optimize_multi(problem, n_jobs=self.workers)
        row = result.to_row(problem)
        row["config_sha256"] = self.hash
        errors: List[str] = []
        exit_code = EXIT_OK
        if self.config["optimize"]["verify"] and math.isfinite(result.l_bd):
            try:
                simulated = _simulate(self.config, problem.build(result.parameters), problem.angle)
                row["fidelity"] = simulated.final_fidelity
                row["margin"] = simulated.final_fidelity - row["fidelity_bound"]
                if row["margin"] < -float(self.config["solver"]["margin_tolerance"]):
                    errors.append(f"ERROR: bound violated for the optimised protocol (margin {row['margin']:.3e})")
                    exit_code = EXIT_BOUND_VIOLATED
            except SOLVER_FAILURES as error:
                errors.append(f"ERROR: verification run failed: {error}")
                exit_code = EXIT_UNCONVERGED
        frame = pd.DataFrame([row]).reindex(columns=list(LEDGER_COLUMNS))
        self.append_ledger(frame, Path(self.config["optimize"]["ledger"]))
        return ExperimentOutcome("optimize", frame, exit_code, errors)

    def run_bath_functionals(self) -> ExperimentOutcome:
        table = self.functionals()
        frame = pd.DataFrame({
            "t": table.times,
            "X": table.X,
            "X_error": table.X_errors,
            "S": table.S,
            "S_error": table.S_error,
        })
        frame["interpolation_error"] = table.interpolation_error
        return ExperimentOutcome("bath-functionals", frame)

    # --- Output ---
    def header_lines(self) -> List[str]:
        return [
            f"# cdbound {__version__}",
            f"# config-sha256 {self.hash}",
            f"# config {canonical_json(self.config)}",
        ]

    def write_csv(self, frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        """Writes header comments plus the frame, and the resolved config as a sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write("\n".join(self.header_lines()) + "\n")
            frame.to_csv(handle, index=False, lineterminator="\n")
        sidecar = path.with_suffix(".config.json")
        sidecar.write_text(json.dumps(self.config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def append_ledger(self, frame: pd.DataFrame, path: Path) -> Path:
        """Appends rows under the fixed LEDGER_COLUMNS header; missing fields are written empty."""
        frame = frame.reindex(columns=list(LEDGER_COLUMNS))
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists():
            frame.to_csv(path, mode="a", header=False, index=False, lineterminator="\n")
        else:
            with open(path, "w", encoding="utf-8", newline="") as handle:
                handle.write(f"# cdbound {__version__} optimisation ledger\n")
                frame.to_csv(handle, index=False, lineterminator="\n")
        return path

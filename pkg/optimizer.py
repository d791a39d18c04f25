"""
cdbound - Protocol Optimizer
Minimises l_BD over the free knobs of a drive family. Endpoints q_i and q_f
stay fixed by construction; candidates whose CD field exceeds a ceiling are
rejected rather than penalised.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize, minimize_scalar

from bath import BathFunctionals
from bounds import fidelity_bound, l_bd_lz
from errors import DomainError
from protocol import CouplingAngle, ProtocolSpec

logger = logging.getLogger(__name__)

THETA_DOT_CEILING = 50.0
MAX_FREE_PARAMETERS = 8
SCALAR_PARAMETERS = ("a", "plateau")
FIXED_PARAMETERS = ("q_i", "q_f", "delta", "tau")


@dataclass(frozen=True)
class OptimizationProblem:
    """
    Free parameters are "a", "plateau" or "value_<j>" (the j-th spline control
    value). Everything else comes from base and stays fixed.
    """

    base: ProtocolSpec
    angle: CouplingAngle
    bath: BathFunctionals
    parameters: Tuple[str, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    initial: Optional[Tuple[float, ...]] = None
    points: int = 1001
    theta_dot_ceiling: float = THETA_DOT_CEILING
    xtol: float = 1e-4
    seeds: Tuple[int, ...] = (0, 1, 2)
    max_iterations: int = 400
    scan_points: int = 25

    def __post_init__(self):
        errors = []
        if not self.parameters:
            errors.append("at least one free parameter is required")
        if len(self.parameters) > MAX_FREE_PARAMETERS:
            errors.append(f"at most {MAX_FREE_PARAMETERS} free parameters, got {len(self.parameters)}")
        if len(self.lower) != len(self.parameters) or len(self.upper) != len(self.parameters):
            errors.append("bounds must match the free-parameter list")
        for name in self.parameters:
            if name in FIXED_PARAMETERS:
                errors.append(f"'{name}' is fixed and cannot be optimised")
            elif name.startswith("value_"):
                if self.base.family != "spline":
                    errors.append(f"'{name}' needs the spline family")
                elif not name[6:].isdigit() or int(name[6:]) >= len(self.base.values):
                    errors.append(f"'{name}' does not name a spline control value")
            elif name not in SCALAR_PARAMETERS:
                errors.append(f"unknown free parameter '{name}'")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            errors.append("every lower bound must not exceed its upper bound")
        if self.initial is not None and len(self.initial) != len(self.parameters):
            errors.append("initial point must match the free-parameter list")
        if errors:
            raise DomainError("; ".join(errors))

    @property
    def degenerate(self) -> bool:
        return all(lo == hi for lo, hi in zip(self.lower, self.upper))

    def build(self, params: Sequence[float]) -> ProtocolSpec:
        changes: Dict[str, object] = {}
        values = list(self.base.values)
        for name, value in zip(self.parameters, params):
            if name.startswith("value_"):
                values[int(name[6:])] = float(value)
            else:
                changes[name] = float(value)
        if self.base.family == "spline":
            changes["values"] = tuple(values)
        return self.base.replace(**changes)

    def evaluate(self, params: Sequence[float]) -> Tuple[float, str]:
        """(l_BD, status) with status 'ok', 'rejected' (CD ceiling) or 'invalid'."""
        try:
            spec = self.build(params)
        except DomainError as error:
            logger.debug("invalid candidate %s: %s", list(params), error)
            return math.inf, "invalid"
        peak = spec.max_theta_dot()
        if peak > self.theta_dot_ceiling:
            logger.debug("rejected candidate %s: max|theta_dot|=%.3g", list(params), peak)
            return math.inf, "rejected"
        return l_bd_lz(spec, self.angle, self.bath, self.points).l_bd, "ok"

    def objective(self, params: Sequence[float]) -> float:
        return self.evaluate(np.atleast_1d(params))[0]


@dataclass(frozen=True)
class OptimizationResult:
    parameters: Tuple[float, ...]
    l_bd: float
    status: str
    evaluations: int
    boundary: bool = False
    message: str = ""
    seed_values: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "boundary", "degenerate")

    def to_row(self, problem: OptimizationProblem) -> Dict[str, object]:
        """One optimisation-ledger row with full parameter provenance."""
        bound = fidelity_bound(self.l_bd) if math.isfinite(self.l_bd) else fidelity_bound(math.inf)
        return {
            "family": problem.base.family,
            "delta": problem.base.delta,
            "tau": problem.base.tau,
            "q_i": problem.base.q_i,
            "q_f": problem.base.q_f,
            "coupling": problem.angle.mode,
            "phi": problem.angle.phi,
            "parameters": json.dumps(list(problem.parameters)),
            "lower": json.dumps(list(problem.lower)),
            "upper": json.dumps(list(problem.upper)),
            "seeds": json.dumps(list(problem.seeds)),
            "best": json.dumps([float(p) for p in self.parameters]),
            "l_bd": self.l_bd,
            "fidelity_bound": bound.value,
            "bound_valid": bound.valid,
            "status": self.status,
            "boundary": self.boundary,
            "evaluations": self.evaluations,
        }


class _Counter:
    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        self.calls = 0

    def __call__(self, params) -> float:
        self.calls += 1
        return self.problem.objective(params)


def _degenerate(problem: OptimizationProblem) -> OptimizationResult:
    params = tuple(float(lo) for lo in problem.lower)
    value, status = problem.evaluate(params)
    return OptimizationResult(
        parameters=params, l_bd=value, status="degenerate" if status == "ok" else status, evaluations=1
    )


def optimize_scalar(problem: OptimizationProblem) -> OptimizationResult:
    """
    Coarse pre-scan (geometric when the bracket is positive), then golden-section
    search around the best scan point. A scan minimum on the bracket edge is
    returned with boundary=True.
    """
    if len(problem.parameters) != 1:
        raise DomainError(f"optimize_scalar needs exactly one free parameter, got {len(problem.parameters)}")
    if problem.degenerate:
        return _degenerate(problem)
    lo, hi = problem.lower[0], problem.upper[0]
    if problem.bath.S == 0 and not np.any(problem.bath.X):
        return OptimizationResult((float(lo),), 0.0, "converged", 0, message="uncoupled bath")
    if lo > 0:
        scan = np.geomspace(lo, hi, problem.scan_points)
    else:
        scan = np.linspace(lo, hi, problem.scan_points)
    counter = _Counter(problem)
    values = np.array([counter(x) for x in scan])
    finite = np.isfinite(values)
    if not finite.any():
        return OptimizationResult(
            parameters=(float(scan[0]),), l_bd=math.inf, status="rejected", evaluations=counter.calls,
            message="every scanned candidate exceeded the CD ceiling or was invalid",
        )
    best = int(np.argmin(np.where(finite, values, np.inf)))
    best_value = float(values[best])
    if best_value == 0.0:
        return OptimizationResult((float(scan[best]),), 0.0, "converged", counter.calls, message="objective is zero")
    if best in (0, len(scan) - 1):
        return OptimizationResult(
            (float(scan[best]),), best_value, "boundary", counter.calls, boundary=True,
            message="minimum on the bracket edge",
        )

    descents = np.diff(values[finite]) < 0
    local_minima = int(np.sum(descents[:-1] & ~descents[1:]))
    message = "" if local_minima <= 1 else f"scan shows {local_minima} local minima; refined around the best"
    if message:
        logger.info(message)
    try:
        outcome = minimize_scalar(
            counter, bracket=(scan[best - 1], scan[best], scan[best + 1]), method="golden",
            options={"xtol": problem.xtol},
        )
    except ValueError as error:
        logger.warning("golden-section bracket failed: %s", error)
        return OptimizationResult(
            (float(scan[best]),), best_value, "unconverged", counter.calls, message=str(error)
        )
    x = float(outcome.x)
    value = problem.objective(x)
    if not value <= best_value:
        return OptimizationResult(
            (float(scan[best]),), best_value, "unconverged", counter.calls,
            message="golden-section search did not improve on the scan",
        )
    status = "converged" if outcome.success else "unconverged"
    return OptimizationResult((x,), value, status, counter.calls, message=message)


def _start_point(problem: OptimizationProblem, seed: int, index: int) -> np.ndarray:
    lower, upper = np.array(problem.lower, dtype=float), np.array(problem.upper, dtype=float)
    if index == 0:
        if problem.initial is not None:
            return np.clip(np.array(problem.initial, dtype=float), lower, upper)
        return 0.5 * (lower + upper)
    rng = np.random.default_rng(seed)
    return lower + (upper - lower) * rng.uniform(0.25, 0.75, size=len(lower))


def _simplex(start: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    width = upper - lower
    vertices = [start]
    for axis in range(len(start)):
        vertex = start.copy()
        step = 0.1 * width[axis] if width[axis] > 0 else 0.05 * max(1.0, abs(start[axis]))
        vertex[axis] = start[axis] + step if start[axis] + step <= upper[axis] else start[axis] - step
        vertices.append(vertex)
    return np.array(vertices)


def _restart(problem: OptimizationProblem, seed: int, index: int):
    lower, upper = np.array(problem.lower, dtype=float), np.array(problem.upper, dtype=float)
    start = _start_point(problem, seed, index)
    counter = _Counter(problem)
    start_value = counter(start)
    outcome = minimize(
        counter, start, method="Nelder-Mead", bounds=list(zip(lower, upper)),
        options={
            "initial_simplex": _simplex(start, lower, upper), "xatol": problem.xtol,
            "fatol": 1e-10, "maxiter": problem.max_iterations,
        },
    )
    return np.asarray(outcome.x, dtype=float), float(outcome.fun), start_value, bool(outcome.success), counter.calls


def optimize_multi(problem: OptimizationProblem, n_jobs: int = 1) -> OptimizationResult:
    """Bounded Nelder-Mead from one deterministic start per seed; the best restart wins."""
    if problem.degenerate:
        return _degenerate(problem)
    runs: List[tuple] = Parallel(n_jobs=n_jobs)(
        delayed(_restart)(problem, seed, index) for index, seed in enumerate(problem.seeds)
    )
    evaluations = sum(run[4] for run in runs)
    seed_values = tuple(run[2] for run in runs)
    best = min(range(len(runs)), key=lambda i: (runs[i][1], i))
    params, _, _, success, _ = runs[best]
    value, status = problem.evaluate(params)
    if status != "ok":
        return OptimizationResult(
            tuple(float(p) for p in params), math.inf, status, evaluations, seed_values=seed_values
        )
    if not value < min(seed_values):
        index = int(np.argmin(seed_values))
        start = _start_point(problem, problem.seeds[index], index)
        return OptimizationResult(
            tuple(float(p) for p in start), float(seed_values[index]), "no-improvement", evaluations,
            message="no restart improved on its starting point", seed_values=seed_values,
        )
    return OptimizationResult(
        tuple(float(p) for p in params), value, "converged" if success else "unconverged", evaluations,
        seed_values=seed_values,
    )

"""
cdbound - Open Dynamics
Reduced dynamics of the CD-driven spin: hierarchical equations of motion for a
static coupling angle, a damped pseudomode for time-dependent coupling, and
plain Schrodinger integration of the isolated drive.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from bath import CorrelationDecomposition, SpectralDensity, decompose_correlation
from errors import ConvergenceError, DomainError, InsufficientTermsError, UnsupportedRegimeError
from operators import IDENTITY, SOLVER_ATOL, fidelity, ground_state, partial_trace_spin, projector
from protocol import CouplingAngle, ProtocolSpec, coupling_matrix, hamiltonian_cd

logger = logging.getLogger(__name__)

STEP_RESOLUTION = 0.01
RK4_STABILITY = 2.0
DEPTH_TOLERANCE = 1e-4
STEP_TOLERANCE = 1e-6
FOCK_TOLERANCE = 1e-4
MAX_ESCALATIONS = 3
MAX_MATSUBARA_TERMS = 16
MAX_STEPS = 2_000_000


@dataclass(frozen=True)
class SimulationResult:
    """Reduced spin trajectory plus fidelity against the instantaneous ground state."""

    solver: str
    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    fidelities: np.ndarray = field(repr=False)
    metadata: Dict[str, object] = field(default_factory=dict)
    converged: bool = True

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelities[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        """Time series with Re/Im of every rho entry and the fidelity."""
        columns = {"t": self.times}
        for row, col in itertools.product(range(2), range(2)):
            columns[f"rho_{row}{col}_re"] = self.states[:, row, col].real
            columns[f"rho_{row}{col}_im"] = self.states[:, row, col].imag
        columns["fidelity"] = self.fidelities
        return pd.DataFrame(columns)


def default_time_step(spec: ProtocolSpec, omega0: float = 1.0) -> float:
    """min(0.01 / omega0, 0.01 / max|theta_dot|), also resolving the bare gap."""
    q_max = max(abs(spec.q_i), abs(spec.q_f), float(np.max(np.abs(spec.q(spec.grid())))))
    scale = max(omega0, spec.max_theta_dot(), 0.5 * math.hypot(spec.delta, q_max))
    return STEP_RESOLUTION / scale


def time_grid(tau: float, dt: float) -> np.ndarray:
    if dt <= 0:
        raise DomainError(f"time step must be positive, got {dt}")
    steps = max(1, int(math.ceil(tau / dt - 1e-9)))
    if steps > MAX_STEPS:
        raise DomainError(f"time step {dt} needs {steps} steps over tau={tau}")
    return np.linspace(0.0, tau, steps + 1)


def integrate_rk4(
    derivative: Callable[[float, np.ndarray], np.ndarray],
    initial: np.ndarray,
    times: np.ndarray,
    observe: Callable[[float, np.ndarray], object],
) -> List[object]:
    """Classic fixed-step Runge-Kutta; observe(t, y) is recorded at every grid time."""
    y = initial
    records = [observe(times[0], y)]
    for start, stop in zip(times[:-1], times[1:]):
        h = stop - start
        k1 = derivative(start, y)
        k2 = derivative(start + 0.5 * h, y + 0.5 * h * k1)
        k3 = derivative(start + 0.5 * h, y + 0.5 * h * k2)
        k4 = derivative(stop, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        records.append(observe(stop, y))
    return records


def _require_drivable(spec: ProtocolSpec):
    if spec.singular_cd:
        raise UnsupportedRegimeError(
            "quasi-step drive has a divergent CD field; use the bounds module for its l_BD"
        )


def _fidelity_trace(spec: ProtocolSpec, times: np.ndarray, states: np.ndarray) -> np.ndarray:
    qs = spec.q(times)
    return np.array([
        fidelity(ground_state(float(q), spec.delta), rho, atol=SOLVER_ATOL) for q, rho in zip(qs, states)
    ])


def run_unitary_isolated(
    spec: ProtocolSpec, dt: Optional[float] = None, include_cd: bool = True
) -> SimulationResult:
    """Schrodinger equation of H_cd (or H_0 when include_cd is False) from |psi_g(0)>."""
    _require_drivable(spec)
    dt = dt or default_time_step(spec)
    times = time_grid(spec.tau, dt)

    def derivative(t, psi):
        return -1j * (hamiltonian_cd(spec, t, include_cd=include_cd) @ psi)

    psis = integrate_rk4(derivative, ground_state(spec.q_i, spec.delta), times, lambda t, psi: psi.copy())
    states = np.array([projector(psi) for psi in psis])
    return SimulationResult(
        solver="unitary",
        times=times,
        states=states,
        fidelities=_fidelity_trace(spec, times, states),
        metadata={"dt": float(times[1] - times[0]), "steps": len(times) - 1, "include_cd": include_cd},
    )


def unitary_propagator(spec: ProtocolSpec, dt: Optional[float] = None, include_cd: bool = True) -> np.ndarray:
    """U(tau, 0) of the isolated drive."""
    _require_drivable(spec)
    times = time_grid(spec.tau, dt or default_time_step(spec))

    def derivative(t, unitary):
        return -1j * (hamiltonian_cd(spec, t, include_cd=include_cd) @ unitary)

    return integrate_rk4(derivative, IDENTITY.copy(), times, lambda t, u: u)[-1]


@dataclass(frozen=True)
class HierarchyState:
    """
    Multi-index bookkeeping of the hierarchy: indices[i] is the occupation of
    ADO i over the decomposition terms. ADO 0 is the physical density matrix.
    upper[k][i] / lower[k][i] point at n + e_k / n - e_k, with size() as the
    index of a padding zero block when the neighbour is truncated.
    """

    indices: Tuple[Tuple[int, ...], ...]
    upper: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, terms: int, depth: int) -> "HierarchyState":
        indices = [()] if terms == 0 else []
        for level in range(depth + 1 if terms else 0):
            for combo in itertools.combinations_with_replacement(range(terms), level):
                index = [0] * terms
                for k in combo:
                    index[k] += 1
                indices.append(tuple(index))
        lookup = {index: i for i, index in enumerate(indices)}
        pad = len(indices)
        upper = np.full((terms, pad), pad, dtype=int)
        lower = np.full((terms, pad), pad, dtype=int)
        for i, index in enumerate(indices):
            for k in range(terms):
                raised = index[:k] + (index[k] + 1,) + index[k + 1:]
                upper[k, i] = lookup.get(raised, pad)
                if index[k]:
                    lowered = index[:k] + (index[k] - 1,) + index[k + 1:]
                    lower[k, i] = lookup[lowered]
        return cls(indices=tuple(indices), upper=upper, lower=lower)

    def size(self) -> int:
        return len(self.indices)

    def occupations(self) -> np.ndarray:
        if not self.indices or not self.indices[0]:
            return np.zeros((self.size(), 0))
        return np.array(self.indices, dtype=float)


def resolve_decomposition(
    J: SpectralDensity, beta: float, K: int, horizon: float, terminator: bool = True,
    max_terms: int = MAX_MATSUBARA_TERMS,
) -> CorrelationDecomposition:
    """Decomposition with at least K Matsubara terms, adding terms one at a time until C(t) is reproduced."""
    while True:
        try:
            return decompose_correlation(J, beta, K=K, horizon=horizon, terminator=terminator)
        except InsufficientTermsError as error:
            if K >= max_terms:
                raise InsufficientTermsError(f"{error} (stopped at K={K})") from error
            logger.info("Matsubara escalation: K=%d -> %d (%s)", K, K + 1, error)
            K += 1


def _solve_heom(
    spec: ProtocolSpec, phi: float, J: SpectralDensity, beta: float, depth: int, K: int, dt: float, terminator: bool
):
    decomposition = resolve_decomposition(J, beta, K, spec.tau, terminator)
    hierarchy = HierarchyState.build(decomposition.size, depth if decomposition.size else 0)
    Q = coupling_matrix(phi)
    amplitudes = np.asarray(decomposition.amplitudes, dtype=complex)
    rates = np.asarray(decomposition.rates, dtype=complex)
    partner = np.conj(amplitudes[list(decomposition.conjugate)]) if decomposition.size else amplitudes
    occupations = hierarchy.occupations()
    damping = occupations @ rates if decomposition.size else np.zeros(hierarchy.size(), dtype=complex)
    lower_weights = occupations.T[:, :, None, None] if decomposition.size else None
    delta = decomposition.terminator

    fastest = float(np.max(np.abs(damping), initial=0.0))
    if fastest * dt > RK4_STABILITY:
        dt = RK4_STABILITY / fastest
    times = time_grid(spec.tau, dt)
    n_ado = hierarchy.size()

    def derivative(t, rho):
        H = hamiltonian_cd(spec, t)
        d = -1j * (H @ rho - rho @ H) - damping[:, None, None] * rho
        if delta:
            commutator = Q @ rho - rho @ Q
            d -= delta * (Q @ commutator - commutator @ Q)
        if decomposition.size:
            padded = np.concatenate([rho, np.zeros((1, 2, 2), dtype=complex)])
            for k in range(decomposition.size):
                up = padded[hierarchy.upper[k]]
                down = padded[hierarchy.lower[k]]
                d -= 1j * (Q @ up - up @ Q)
                d -= 1j * lower_weights[k] * (amplitudes[k] * (Q @ down) - partner[k] * (down @ Q))
        return d

    initial = np.zeros((n_ado, 2, 2), dtype=complex)
    initial[0] = projector(ground_state(spec.q_i, spec.delta))
    physical = integrate_rk4(derivative, initial, times, lambda t, rho: rho[0].copy())
    states = np.array(physical)
    return times, states, n_ado, decomposition.matsubara_terms


def run_heom(
    spec: ProtocolSpec,
    phi: Union[float, CouplingAngle],
    J: SpectralDensity,
    beta: float,
    N_c: int = 6,
    K: int = 3,
    dt: Optional[float] = None,
    terminator: bool = True,
    check_convergence: bool = True,
    max_escalations: int = MAX_ESCALATIONS,
) -> SimulationResult:
    """
    HEOM for H_cd(t) with the static coupling cos(2 phi) sigma_z + sin(2 phi) sigma_x.

    With check_convergence, the final fidelity must move by less than 1e-4 when
    N_c and K each grow by one and by less than 1e-6 when dt halves; a failing
    parameter is doubled up to max_escalations times before ConvergenceError.
    K itself grows one term at a time while the exponential decomposition misses
    C(t) by more than 1e-3, up to MAX_MATSUBARA_TERMS.
    """
    if isinstance(phi, CouplingAngle):
        if phi.is_sta:
            raise UnsupportedRegimeError(
                "HEOM needs a static coupling operator; use run_pseudomode for phi = theta_t"
            )
        phi = phi.phi
    _require_drivable(spec)
    if N_c < 1 or K < 0:
        raise DomainError(f"hierarchy depth must be >= 1 and K >= 0, got N_c={N_c}, K={K}")
    dt = dt or default_time_step(spec, J.omega0)

    def final(depth, terms, step):
        _, trial, _, _ = _solve_heom(spec, phi, J, beta, depth, terms, step, terminator)
        return fidelity(ground_state(spec.q_f, spec.delta), trial[-1], atol=SOLVER_ATOL)

    deltas: Dict[str, float] = {}
    escalations = 0
    while True:
        times, states, n_ado, K = _solve_heom(spec, phi, J, beta, N_c, K, dt, terminator)
        if J.is_zero or not check_convergence:
            break
        base = fidelity(ground_state(spec.q_f, spec.delta), states[-1], atol=SOLVER_ATOL)
        deltas = {
            "depth": abs(final(N_c + 1, K, dt) - base),
            "matsubara": abs(final(N_c, K + 1, dt) - base),
            "step": abs(final(N_c, K, dt / 2) - base),
        }
        failing = [
            name for name, tolerance in
            (("depth", DEPTH_TOLERANCE), ("matsubara", DEPTH_TOLERANCE), ("step", STEP_TOLERANCE))
            if deltas[name] >= tolerance
        ]
        if not failing:
            break
        if escalations >= max_escalations:
            raise ConvergenceError(
                f"HEOM unconverged after {escalations} escalations (N_c={N_c}, K={K}, dt={dt:.3e}): {failing}",
                deltas=deltas,
            )
        escalations += 1
        if "depth" in failing:
            N_c *= 2
        if "matsubara" in failing:
            K = max(1, 2 * K)
        if "step" in failing:
            dt /= 2
        logger.info("HEOM escalation %d: N_c=%d K=%d dt=%.3e (deltas %s)", escalations, N_c, K, dt, deltas)

    return SimulationResult(
        solver="heom",
        times=times,
        states=states,
        fidelities=_fidelity_trace(spec, times, states),
        metadata={
            "N_c": N_c, "K": K, "dt": float(times[1] - times[0]), "ados": n_ado,
            "escalations": escalations, "deltas": deltas,
        },
    )


def thermal_occupation(omega0: float, beta: float) -> float:
    """n = 1 / (exp(beta omega0) - 1); 0 at zero temperature."""
    if math.isinf(beta):
        return 0.0
    if beta <= 0:
        raise DomainError(f"inverse temperature must be positive, got {beta}")
    return 1.0 / math.expm1(beta * omega0)


def _thermal_mode(omega0: float, beta: float, levels: int) -> np.ndarray:
    if math.isinf(beta):
        populations = np.zeros(levels)
        populations[0] = 1.0
    else:
        populations = np.exp(-beta * omega0 * np.arange(levels))
        populations /= populations.sum()
    return np.diag(populations).astype(complex)


def _solve_pseudomode(spec, angle, J, beta, levels, dt):
    half_width = J.gamma / 2
    frequency = math.sqrt(J.omega0**2 - half_width**2)
    g = J.lam / math.sqrt(2.0 * frequency)
    occupation = thermal_occupation(J.omega0, beta)

    mode_identity = np.eye(levels, dtype=complex)
    annihilation = np.diag(np.sqrt(np.arange(1, levels)), k=1).astype(complex)
    a = np.kron(IDENTITY, annihilation)
    a_dag = a.conj().T
    position = np.kron(IDENTITY, annihilation + annihilation.conj().T)
    mode_energy = frequency * (a_dag @ a)
    decay = J.gamma * (occupation + 1.0)
    gain = J.gamma * occupation
    anticommutator = 0.5 * (decay * (a_dag @ a) + gain * (a @ a_dag))
    x_ops = [coupling_matrix(angle.phi)] if not angle.is_sta else None

    def hamiltonian(t):
        spin = hamiltonian_cd(spec, t)
        coupling = x_ops[0] if x_ops else coupling_matrix(float(spec.theta(t)))
        return np.kron(spin, mode_identity) + mode_energy + g * (np.kron(coupling, mode_identity) @ position)

    def derivative(t, rho):
        H = hamiltonian(t)
        d = -1j * (H @ rho - rho @ H)
        d += decay * (a @ rho @ a_dag) + gain * (a_dag @ rho @ a)
        d -= anticommutator @ rho + rho @ anticommutator
        return d

    def observe(t, rho):
        spin = partial_trace_spin(rho, 2, levels)
        mode = np.einsum("ikil->kl", rho.reshape(2, levels, 2, levels))
        top = float(np.max(np.real(np.diag(mode))[-2:]))
        return spin, top

    initial = np.kron(projector(ground_state(spec.q_i, spec.delta)), _thermal_mode(J.omega0, beta, levels))
    times = time_grid(spec.tau, dt)
    records = integrate_rk4(derivative, initial, times, observe)
    states = np.array([spin for spin, _ in records])
    top_population = max(top for _, top in records)
    return times, states, top_population, occupation


def run_pseudomode(
    spec: ProtocolSpec,
    angle: CouplingAngle,
    J: SpectralDensity,
    beta: float,
    N_f: int = 10,
    dt: Optional[float] = None,
    check_convergence: bool = True,
    max_escalations: int = MAX_ESCALATIONS,
) -> SimulationResult:
    """
    Spin (x) one damped mode: H_cd + Omega a^dag a + g M(phi(t)) (a + a^dag), with
    thermal Lindblad rates gamma (n + 1) and gamma n. Exact at zero temperature;
    accepts the co-rotating coupling phi = theta_t.

    The Fock tail is always checked (top two mode populations below 1e-4,
    doubling N_f otherwise); check_convergence adds the dt/2 comparison.
    """
    _require_drivable(spec)
    if J.kind != "underdamped":
        raise UnsupportedRegimeError("pseudomode mapping needs the underdamped spectral density")
    if J.omega0 <= J.gamma / 2:
        raise UnsupportedRegimeError("pseudomode mapping needs omega0 > gamma / 2")
    if N_f < 4:
        raise DomainError(f"Fock cutoff must be at least 4, got {N_f}")
    dt = dt or default_time_step(spec, J.omega0)

    escalations = 0
    deltas: Dict[str, float] = {}
    while True:
        times, states, top, occupation = _solve_pseudomode(spec, angle, J, beta, N_f, dt)
        deltas = {"fock_population": top}
        failing = []
        if top >= FOCK_TOLERANCE:
            failing.append("fock")
        if check_convergence and not failing and not J.is_zero:
            _, halved, _, _ = _solve_pseudomode(spec, angle, J, beta, N_f, dt / 2)
            target = ground_state(spec.q_f, spec.delta)
            deltas["step"] = abs(
                fidelity(target, halved[-1], atol=SOLVER_ATOL) - fidelity(target, states[-1], atol=SOLVER_ATOL)
            )
            if deltas["step"] >= STEP_TOLERANCE:
                failing.append("step")
        if not failing:
            break
        if escalations >= max_escalations:
            raise ConvergenceError(
                f"pseudomode unconverged after {escalations} escalations (N_f={N_f}, dt={dt:.3e}): {failing}",
                deltas=deltas,
            )
        escalations += 1
        if "fock" in failing:
            N_f *= 2
        if "step" in failing:
            dt /= 2
        logger.info("pseudomode escalation %d: N_f=%d dt=%.3e (deltas %s)", escalations, N_f, dt, deltas)

    return SimulationResult(
        solver="pseudomode",
        times=times,
        states=states,
        fidelities=_fidelity_trace(spec, times, states),
        metadata={
            "N_f": N_f, "dt": float(times[1] - times[0]), "n_thermal": occupation,
            "coupling": angle.mode, "escalations": escalations, "deltas": deltas,
        },
    )

"""
cdbound - Performance Bounds
Bures-angle bound l_BD for the dissipative Landau-Zener drive, the fidelity
bound cos^2 l_BD, its weak-coupling expansion, and the multi-bath bound for an
arbitrary system.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from bath import BathFunctionals, SpectralDensity, compute_S
from errors import DomainError, InconsistentInputError
from operators import ALGEBRAIC_ATOL, is_hermitian, projector, state_from_angle
from protocol import CouplingAngle, ProtocolSpec, coupling_matrix

logger = logging.getLogger(__name__)

RICHARDSON_RTOL = 1e-6
NEGATIVE_G_ATOL = 1e-12
KINK_PROBE_FACTOR = 4


@dataclass(frozen=True)
class TimeGrid:
    """
    Sorted sample times plus panel boundaries (indices into times).
    Every panel spans a multiple of 4 intervals, so both the grid and its
    every-other-point subgrid admit composite Simpson.
    """

    times: np.ndarray = field(repr=False)
    breaks: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.times)

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def panels(self):
        return list(zip(self.breaks[:-1], self.breaks[1:]))

    def integrate(self, values: np.ndarray, coarse: bool = False) -> float:
        step = 2 if coarse else 1
        pieces = []
        for start, stop in self.panels():
            pieces.append(simpson(values[start:stop + 1:step], x=self.times[start:stop + 1:step]))
        return math.fsum(pieces)


def _integrand_kinks(spec: ProtocolSpec, angle: CouplingAngle, probes: int):
    if angle.is_sta:
        return []

    def mismatch(t):
        return float(np.sin(spec.theta(t) - angle.phi))

    times = np.linspace(0.0, spec.tau, probes)
    values = np.sin(spec.theta(times) - angle.phi)
    if spec.singular_cd:
        times, values = times[1:-1], values[1:-1]
    if np.all(values == 0):
        return []
    zero = values == 0.0
    kinks = []
    for i in range(len(values) - 1):
        if zero[i]:
            # only the ends of a run of exact zeros
            if (i > 0 and not zero[i - 1]) or not zero[i + 1]:
                kinks.append(float(times[i]))
        elif not zero[i + 1] and values[i] * values[i + 1] < 0:
            kinks.append(brentq(mismatch, times[i], times[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    edge = 1e-9 * spec.tau
    return [k for k in np.unique(kinks) if edge < k < spec.tau - edge]


def kink_aligned_grid(spec: ProtocolSpec, angle: CouplingAngle, points: int = 1001) -> TimeGrid:
    """
    Grid of 2 * points - 1 samples whose panels end where theta_t crosses phi,
    so the |sin| kink never sits inside a Simpson panel.
    """
    if points < 101 or points % 2 == 0:
        raise DomainError(f"grid size must be odd and at least 101, got {points}")
    edges = [0.0] + _integrand_kinks(spec, angle, KINK_PROBE_FACTOR * points) + [spec.tau]
    lengths = np.diff(edges)

    pairs_total = (points - 1) // 2
    if pairs_total < len(lengths):
        raise DomainError(f"grid size {points} too small for {len(lengths)} kink-aligned panels")
    pairs = np.maximum(1, np.round(pairs_total * lengths / spec.tau).astype(int))
    while pairs.sum() > pairs_total:
        pairs[np.argmax(pairs)] -= 1
    while pairs.sum() < pairs_total:
        pairs[np.argmax(lengths / pairs)] += 1

    times, breaks = [0.0], [0]
    for left, right, n_pairs in zip(edges[:-1], edges[1:], pairs):
        panel = np.linspace(left, right, 4 * n_pairs + 1)
        times.extend(panel[1:])
        breaks.append(len(times) - 1)
    return TimeGrid(times=np.array(times), breaks=tuple(breaks))


class VarianceTerms(NamedTuple):
    system_second: np.ndarray
    system_mean: np.ndarray
    bath_first: np.ndarray
    bath_second: np.ndarray
    variance: np.ndarray


def variance_terms(theta_t, phi, S: float, X) -> VarianceTerms:
    """Pieces of the energy variance of the mismatch Hamiltonian in the exact-STA state."""
    sin2 = np.sin(np.asarray(theta_t) - np.asarray(phi)) ** 2
    X = np.asarray(X, dtype=float)
    second = 4.0 * sin2
    mean = -2.0 * sin2
    bath_first = X
    bath_second = S + X**2
    return VarianceTerms(second, mean, bath_first, bath_second, second * bath_second - mean**2 * bath_first**2)


def lz_integrand(theta_t, phi, S: float, X):
    mismatch = np.asarray(theta_t) - np.asarray(phi)
    return np.abs(2.0 * np.sin(mismatch)) * np.sqrt(S + np.cos(mismatch) ** 2 * np.asarray(X) ** 2)


class FidelityBound(NamedTuple):
    value: float
    valid: bool


@dataclass(frozen=True)
class BoundResult:
    l_bd: float
    valid: bool
    fidelity_lower_bound: float
    error: float
    under_resolved: bool = False
    coarse_l_bd: float = 0.0
    times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False, compare=False)
    integrand: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False, compare=False)

    def trace(self):
        """(t, integrand) pairs for diagnostics."""
        return list(zip(self.times.tolist(), self.integrand.tolist()))


def fidelity_bound(result: Union[BoundResult, float]) -> FidelityBound:
    """cos^2 l_BD when l_BD <= pi/2; otherwise the bound is vacuous and reported as 0."""
    l_bd = result.l_bd if isinstance(result, BoundResult) else float(result)
    if l_bd <= np.pi / 2:
        return FidelityBound(float(np.cos(l_bd) ** 2), True)
    return FidelityBound(0.0, False)


def _finish(grid: TimeGrid, integrand: np.ndarray, extra_error: float) -> BoundResult:
    fine = grid.integrate(integrand)
    coarse = grid.integrate(integrand, coarse=True)
    difference = abs(fine - coarse)
    scale = abs(fine)
    under_resolved = difference > RICHARDSON_RTOL * scale if scale > 0 else difference > 0
    if under_resolved:
        logger.warning(
            "l_BD under-resolved: grid halving changes %.6e by %.3e; refine the time grid", fine, difference
        )
    bound = fidelity_bound(fine)
    return BoundResult(
        l_bd=fine,
        valid=bound.valid,
        fidelity_lower_bound=bound.value,
        error=difference / 15.0 + extra_error,
        under_resolved=bool(under_resolved),
        coarse_l_bd=coarse,
        times=grid.times,
        integrand=integrand,
    )


def l_bd_lz(spec: ProtocolSpec, angle: CouplingAngle, bath: BathFunctionals, points: int = 1001) -> BoundResult:
    """l_BD = int_0^tau |2 sin(theta_t - phi)| sqrt(S + cos^2(theta_t - phi) X_t^2) dt."""
    if not bath.covers(spec.tau):
        raise DomainError(f"bath table spans [0, {bath.horizon}] but the drive lasts {spec.tau}")
    grid = kink_aligned_grid(spec, angle, points)
    t = grid.times
    mismatch = spec.theta(t) - angle.phi_at(spec, t)
    X = bath.x_at(t)
    integrand = lz_integrand(mismatch, 0.0, bath.S, X)

    radicand = bath.S + np.cos(mismatch) ** 2 * X**2
    safe = np.where(radicand > 0, np.sqrt(np.maximum(radicand, 1e-300)), np.inf)
    sin_abs = np.abs(2.0 * np.sin(mismatch))
    dS = grid.integrate(sin_abs / (2.0 * safe))
    dX = grid.integrate(sin_abs * np.cos(mismatch) ** 2 * X / safe)
    return _finish(grid, integrand, dS * bath.S_error + dX * bath.x_error)


def l_bd_quasi_step(spec: ProtocolSpec, angle: CouplingAngle, bath: BathFunctionals, n_steps: int) -> float:
    """
    Midpoint-rule l_BD of a drive held at q_i for the first step, at its
    interior value for the middle steps and at q_f for the last step.
    With the interior at q* only the two end steps contribute.
    """
    if n_steps < 3:
        raise DomainError(f"need at least 3 steps, got {n_steps}")
    if not bath.covers(spec.tau):
        raise DomainError(f"bath table spans [0, {bath.horizon}] but the drive lasts {spec.tau}")
    dt = spec.tau / n_steps
    t = (np.arange(n_steps) + 0.5) * dt
    q = spec.q(t)
    q[0], q[-1] = spec.q_i, spec.q_f
    theta_t = np.asarray(0.5 * np.arctan2(spec.delta, q))
    phi = theta_t if angle.is_sta else angle.phi
    return float(math.fsum(lz_integrand(theta_t, phi, bath.S, bath.x_at(t)) * dt))


def weak_coupling_bound(
    spec: ProtocolSpec, angle: CouplingAngle, J: SpectralDensity, beta: float, points: int = 1001
) -> float:
    """1 - 4 S [int_0^tau |sin(theta_t - phi)| dt]^2, the O(lam^2) form of the fidelity bound."""
    S = compute_S(J, beta).value
    if angle.is_sta or S == 0:
        return 1.0
    grid = kink_aligned_grid(spec, angle, points)
    overlap = grid.integrate(np.abs(np.sin(spec.theta(grid.times) - angle.phi)))
    return 1.0 - 4.0 * S * overlap**2


@dataclass(frozen=True)
class GeneralSystemSpec:
    """
    d-level system with coupling operators A_i and a target eigenstate
    trajectory |psi_n(t)> sampled on the integration grid. couplings has shape
    (n_baths, d, d) for static operators or (n_times, n_baths, d, d).
    """

    grid: TimeGrid
    couplings: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    baths: Tuple[BathFunctionals, ...]

    def __post_init__(self):
        couplings = np.asarray(self.couplings, dtype=complex)
        states = np.asarray(self.states, dtype=complex)
        if states.ndim != 2 or states.shape[0] != self.grid.size:
            raise DomainError(f"states must have shape ({self.grid.size}, d), got {states.shape}")
        d = states.shape[1]
        if couplings.ndim not in (3, 4) or couplings.shape[-2:] != (d, d):
            raise DomainError(f"couplings must be (n, {d}, {d}) or (T, n, {d}, {d}), got {couplings.shape}")
        if couplings.ndim == 4 and couplings.shape[0] != self.grid.size:
            raise DomainError("time-dependent couplings must be sampled on the grid")
        if couplings.shape[-3] != len(self.baths):
            raise DomainError(f"{couplings.shape[-3]} coupling operators but {len(self.baths)} baths")
        if not is_hermitian(couplings, atol=ALGEBRAIC_ATOL):
            raise DomainError("coupling operators must be Hermitian")
        norms = np.linalg.norm(states, axis=1)
        if np.max(np.abs(norms - 1.0)) > ALGEBRAIC_ATOL:
            raise DomainError("target trajectory must be normalised at every grid time")

    @property
    def dimension(self) -> int:
        return np.asarray(self.states).shape[1]


def general_variance(system: GeneralSystemSpec) -> np.ndarray:
    """g(t) = sum_i <(A_i + I)^2> S_i + sum_ij Cov(A_i, A_j) X^i_t X^j_t on the grid."""
    states = np.asarray(system.states, dtype=complex)
    couplings = np.asarray(system.couplings, dtype=complex)
    if couplings.ndim == 3:
        couplings = np.broadcast_to(couplings, (len(states),) + couplings.shape)
    t = system.grid.times
    S = np.array([bath.S for bath in system.baths])
    X = np.stack([bath.x_at(t) for bath in system.baths], axis=1)

    applied = np.einsum("tkab,tb->tka", couplings, states)
    means = np.einsum("ta,tka->tk", np.conj(states), applied).real
    seconds = np.einsum("tia,tja->tij", np.conj(applied), applied)
    covariance = seconds - means[:, :, None] * means[:, None, :]
    shifted = np.sum(np.abs(applied + states[:, None, :]) ** 2, axis=2)
    return shifted @ S + np.einsum("tij,ti,tj->t", covariance, X, X).real


def l_bd_general(system: GeneralSystemSpec, tau: float) -> BoundResult:
    """l_BD = int_0^tau sqrt(g) dt for any system and any number of baths."""
    start, stop = system.grid.span
    if abs(start) > 1e-12 or abs(stop - tau) > 1e-12 * max(1.0, tau):
        raise DomainError(f"trajectory grid spans [{start}, {stop}], expected [0, {tau}]")
    for bath in system.baths:
        if not bath.covers(tau):
            raise DomainError(f"bath table spans [0, {bath.horizon}] but the drive lasts {tau}")
    g = general_variance(system)
    if np.min(g) < -NEGATIVE_G_ATOL:
        raise InconsistentInputError(
            f"variance g reached {np.min(g):.3e}; check that every A_i is Hermitian and the trajectory is valid"
        )
    negative = g < 0
    if np.any(negative & (g < -1e-15)):
        logger.warning("clamping %d slightly negative variance samples to zero", int(np.sum(negative)))
    g = np.where(negative, 0.0, g)
    x_error = max((bath.x_error for bath in system.baths), default=0.0)
    s_error = max((bath.S_error for bath in system.baths), default=0.0)
    return _finish(system.grid, np.sqrt(g), tau * (s_error + x_error))


def lz_system(spec: ProtocolSpec, angle: CouplingAngle, bath: BathFunctionals, points: int = 1001) -> GeneralSystemSpec:
    """The Landau-Zener drive written as a general system on the same grid l_bd_lz uses."""
    if angle.is_sta:
        raise DomainError("lz_system needs a static coupling angle")
    grid = kink_aligned_grid(spec, angle, points)
    states = np.array([state_from_angle(float(theta_t)) for theta_t in spec.theta(grid.times)])
    return GeneralSystemSpec(
        grid=grid, couplings=coupling_matrix(angle.phi)[None, :, :], states=states, baths=(bath,)
    )


def sta_coupling_operator(states: Sequence[np.ndarray]) -> np.ndarray:
    """A_sta(t) = -|psi_n(t)><psi_n(t)|, sampled per time: shape (T, 1, d, d)."""
    return np.array([-projector(state) for state in states])[:, None, :, :]

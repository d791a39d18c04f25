"""
cdbound - Bath Functionals
Spectral densities, the functionals S and X_t that feed the bounds, and the
exponential decomposition of the bath correlation function used by HEOM.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, PchipInterpolator

from errors import DomainError, InsufficientTermsError, IntegrabilityError, UnsupportedRegimeError

logger = logging.getLogger(__name__)

QUAD_EPSREL = 1e-10
QUAD_LIMIT = 400
REPORT_RTOL = 1e-8
REPORT_ATOL = 1e-12
ZERO_PATCH = 1e-6
MAX_X_PANELS = 4000
RECONSTRUCTION_ATOL = 1e-3
MATSUBARA_TAIL_TERMS = 20000


@dataclass(frozen=True)
class SpectralDensity:
    """
    J(omega) for omega >= 0.

    kind 'underdamped': gamma lam^2 omega / [(omega^2 - omega0^2)^2 + gamma^2 omega^2]
    kind 'custom': a tabulated (omega, J) table (monotone cubic inside, linear
    below the first point, power-law tail omega^-tail_exponent above the last),
    or an arbitrary callable with its small-omega slope supplied.
    """

    kind: str = "underdamped"
    omega0: float = 1.0
    gamma: float = 0.1
    lam: float = 0.1
    table: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)
    tail_exponent: float = 3.0
    function: Optional[Callable] = field(default=None, compare=False, repr=False)
    slope_at_zero: Optional[float] = None

    def __post_init__(self):
        if self.kind == "underdamped":
            if self.omega0 <= 0 or self.gamma <= 0:
                raise DomainError(f"underdamped density needs omega0 > 0 and gamma > 0, got {self.omega0}, {self.gamma}")
            if self.lam < 0:
                raise DomainError(f"coupling strength must be non-negative, got {self.lam}")
        elif self.kind == "custom":
            if self.function is None and len(self.table) < 4:
                raise DomainError("custom density needs a callable or at least 4 (omega, J) rows")
            if self.function is None:
                omegas, values = np.array(self.table, dtype=float).T
                if omegas[0] <= 0 or np.any(np.diff(omegas) <= 0):
                    raise DomainError("custom density omegas must be positive and strictly increasing")
                if np.any(values < 0):
                    raise DomainError("custom density must be non-negative")
            if self.tail_exponent <= 1:
                raise DomainError(f"tail exponent must exceed 1 for an integrable S, got {self.tail_exponent}")
        else:
            raise DomainError(f"unknown spectral density kind '{self.kind}'")

    @classmethod
    def underdamped(cls, omega0: float, gamma: float, lam: float) -> "SpectralDensity":
        return cls(kind="underdamped", omega0=omega0, gamma=gamma, lam=lam)

    @classmethod
    def from_csv(cls, path: Union[str, Path], tail_exponent: float = 3.0) -> "SpectralDensity":
        frame = pd.read_csv(path, comment="#")
        if frame.shape[1] != 2:
            raise DomainError(f"{path}: expected two columns (omega, J), found {frame.shape[1]}")
        table = tuple((float(w), float(j)) for w, j in frame.to_numpy(dtype=float))
        return cls(kind="custom", table=table, tail_exponent=tail_exponent)

    @property
    def is_zero(self) -> bool:
        return self.kind == "underdamped" and self.lam == 0

    @cached_property
    def _table_interpolant(self):
        omegas, values = np.array(self.table, dtype=float).T
        return PchipInterpolator(omegas, values, extrapolate=False)

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        if self.kind == "underdamped":
            value = self.gamma * self.lam**2 * omega / (
                (omega**2 - self.omega0**2) ** 2 + self.gamma**2 * omega**2
            )
        elif self.function is not None:
            value = np.asarray(self.function(omega), dtype=float)
        else:
            omegas, values = np.array(self.table, dtype=float).T
            inside = np.nan_to_num(self._table_interpolant(omega))
            below = values[0] * omega / omegas[0]
            above = values[-1] * (np.maximum(omega, omegas[-1]) / omegas[-1]) ** (-self.tail_exponent)
            value = np.where(omega < omegas[0], below, np.where(omega > omegas[-1], above, inside))
        return value if value.ndim else float(value)

    @property
    def low_frequency_slope(self) -> float:
        """lim J(omega)/omega as omega -> 0."""
        if self.kind == "underdamped":
            return self.gamma * self.lam**2 / self.omega0**4
        if self.slope_at_zero is not None:
            return self.slope_at_zero
        if self.function is not None:
            probe = 1e-8
            return float(self.function(probe)) / probe
        return self.table[0][1] / self.table[0][0]

    @property
    def scale(self) -> float:
        """Characteristic frequency used to place quadrature breakpoints."""
        if self.kind == "underdamped":
            return self.omega0
        if self.table:
            omegas, values = np.array(self.table, dtype=float).T
            return float(omegas[np.argmax(values)])
        return 1.0

    def breakpoints(self) -> List[float]:
        if self.kind == "underdamped":
            w0, g = self.omega0, self.gamma
            points = [w0 - 5 * g, w0 - g, w0, w0 + g, w0 + 5 * g, 2 * w0 + 10 * g]
        elif self.table:
            omegas = np.array(self.table, dtype=float)[:, 0]
            points = list(np.linspace(omegas[0], omegas[-1], 9))
        else:
            points = [self.scale, 2 * self.scale, 4 * self.scale]
        return sorted(p for p in points if p > ZERO_PATCH * self.scale)

    @property
    def support_edge(self) -> float:
        """Frequency beyond which J is treated as a smooth tail."""
        if self.table:
            return float(self.table[-1][0])
        return self.breakpoints()[-1]


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float


def _coth_weight(omega, beta: float):
    if math.isinf(beta):
        return np.ones_like(omega)
    return 1.0 / np.tanh(0.5 * beta * omega)


def _quad_panel(integrand, a: float, b: float, **kwargs) -> Tuple[float, float]:
    result = quad(integrand, a, b, limit=QUAD_LIMIT, full_output=1, **kwargs)
    value, error = result[:2]
    if len(result) > 3:
        message = result[3]
        if not np.isfinite(value) or "divergent" in str(message):
            raise IntegrabilityError(f"quadrature on [{a}, {b}] did not converge: {message}")
        logger.debug("quad on [%s, %s] reported: %s", a, b, message)
    if not np.isfinite(value):
        raise IntegrabilityError(f"quadrature on [{a}, {b}] produced {value}")
    return value, error


def _check_reported(name: str, value: float, error: float) -> QuadratureResult:
    if error > max(REPORT_RTOL * abs(value), REPORT_ATOL):
        raise IntegrabilityError(
            f"{name}: error estimate {error:.3e} exceeds tolerance for value {value:.6e}"
        )
    return QuadratureResult(value=value, error=error)


def _integrate_panels(integrand, points: Sequence[float], tail: bool = True) -> Tuple[float, float]:
    values, errors = [], []
    for a, b in zip(points[:-1], points[1:]):
        value, error = _quad_panel(integrand, a, b, epsabs=0.0, epsrel=QUAD_EPSREL)
        values.append(value)
        errors.append(error)
    if tail:
        value, error = _quad_panel(integrand, points[-1], np.inf, epsabs=0.0, epsrel=QUAD_EPSREL)
        values.append(value)
        errors.append(error)
    return math.fsum(values), math.fsum(errors)


def compute_S(J: SpectralDensity, beta: float) -> QuadratureResult:
    """S = int_0^inf d omega (J / pi) coth(beta omega / 2), the correlation function at zero delay."""
    if not beta > 0:
        raise DomainError(f"inverse temperature must be positive, got {beta}")
    if J.is_zero:
        return QuadratureResult(0.0, 0.0)

    epsilon = ZERO_PATCH * J.scale
    slope = J.low_frequency_slope
    # coth(beta w / 2) ~ 2 / (beta w): the integrand tends to 2 slope / (pi beta)
    if math.isinf(beta):
        patch = slope * epsilon**2 / (2 * np.pi)
    else:
        patch = 2.0 * slope * epsilon / (np.pi * beta)

    def integrand(omega):
        return J(omega) * _coth_weight(omega, beta) / np.pi

    value, error = _integrate_panels(integrand, [epsilon] + J.breakpoints())
    return _check_reported("S", value + patch, error)


def _x_integrand(J: SpectralDensity, t: float):
    def integrand(omega):
        return (2.0 / (np.pi * omega)) * J(omega) * 2.0 * np.sin(0.5 * omega * t) ** 2
    return integrand


def compute_X(J: SpectralDensity, t: float) -> QuadratureResult:
    """X_t = int_0^inf d omega (2 / pi omega) J (1 - cos omega t), panels split at 2 pi k / t."""
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if t == 0 or J.is_zero:
        return QuadratureResult(0.0, 0.0)

    epsilon = ZERO_PATCH * J.scale
    slope = J.low_frequency_slope
    patch = slope * t**2 * epsilon**3 / (3 * np.pi)

    period = 2 * np.pi / t
    edge = max(J.support_edge, 4 * J.scale)
    n_periods = min(int(np.ceil(edge / period)), MAX_X_PANELS)
    edge = n_periods * period
    points = np.union1d(period * np.arange(1, n_periods + 1), [p for p in J.breakpoints() if p < edge])
    points = [epsilon] + [float(p) for p in points if p > epsilon]

    body, body_error = _integrate_panels(_x_integrand(J, t), points, tail=False)

    # tail: (2/pi) int J/w dw - (2/pi) int J/w cos(w t) dw, the second by QAWF
    def smooth(omega):
        return 2.0 * J(omega) / (np.pi * omega)

    flat, flat_error = _quad_panel(smooth, edge, np.inf, epsabs=0.0, epsrel=QUAD_EPSREL)
    wave, wave_error = _quad_panel(smooth, edge, np.inf, weight="cos", wvar=t, epsabs=1e-15)
    value = math.fsum([patch, body, flat, -wave])
    return _check_reported("X", value, math.fsum([body_error, flat_error, wave_error]))


def x_limit(J: SpectralDensity) -> QuadratureResult:
    """Long-time value (2 / pi) int J / omega, approached by X_t as t -> infinity."""
    if J.is_zero:
        return QuadratureResult(0.0, 0.0)
    epsilon = ZERO_PATCH * J.scale
    patch = 2.0 * J.low_frequency_slope * epsilon / np.pi

    def integrand(omega):
        return 2.0 * J(omega) / (np.pi * omega)

    value, error = _integrate_panels(integrand, [epsilon] + J.breakpoints())
    return _check_reported("X limit", value + patch, error)


@dataclass(frozen=True)
class BathFunctionals:
    """S and a tabulated X_t on [0, tau] for one bath at inverse temperature beta."""

    S: float
    times: Tuple[float, ...]
    X: Tuple[float, ...]
    beta: float
    S_error: float = 0.0
    X_errors: Tuple[float, ...] = ()
    interpolation_error: float = 0.0

    def __post_init__(self):
        if len(self.times) != len(self.X) or len(self.times) < 4:
            raise DomainError("X table needs matching times and values (at least 4)")
        if self.S < 0 or min(self.X) < -REPORT_ATOL:
            raise DomainError("bath functionals must be non-negative")

    @classmethod
    def from_values(cls, S: float, times: Sequence[float], X: Sequence[float], beta: float) -> "BathFunctionals":
        return cls(S=float(S), times=tuple(float(t) for t in times), X=tuple(float(x) for x in X), beta=beta)

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def x_error(self) -> float:
        return max(self.X_errors, default=0.0) + self.interpolation_error

    @cached_property
    def _spline(self):
        return CubicSpline(np.asarray(self.times), np.asarray(self.X))

    def x_at(self, t):
        values = np.maximum(self._spline(np.asarray(t, dtype=float)), 0.0)
        return values if values.ndim else float(values)

    def covers(self, tau: float) -> bool:
        return self.times[0] <= 0.0 and self.horizon >= tau * (1 - 1e-12)


def tabulate_functionals(
    J: SpectralDensity, beta: float, tau: float, points: int = 201, n_jobs: int = 1
) -> BathFunctionals:
    """Computes S and X_t on a uniform grid over [0, tau], with an interpolation error probe."""
    if tau <= 0:
        raise DomainError(f"duration must be positive, got {tau}")
    if points < 4:
        raise DomainError(f"need at least 4 tabulation points, got {points}")
    S = compute_S(J, beta)
    times = np.linspace(0.0, tau, points)
    results = Parallel(n_jobs=n_jobs)(delayed(compute_X)(J, float(t)) for t in times)
    table = BathFunctionals(
        S=S.value, S_error=S.error, beta=beta,
        times=tuple(float(t) for t in times),
        X=tuple(r.value for r in results),
        X_errors=tuple(r.error for r in results),
    )

    probes = 0.5 * (times[:-1] + times[1:])[:: max(1, (points - 1) // 8)]
    exact = np.array([compute_X(J, float(t)).value for t in probes])
    interpolation_error = float(np.max(np.abs(table.x_at(probes) - exact), initial=0.0))
    return BathFunctionals(
        S=table.S, S_error=table.S_error, beta=beta, times=table.times, X=table.X,
        X_errors=table.X_errors, interpolation_error=interpolation_error,
    )


@dataclass(frozen=True)
class CorrelationDecomposition:
    """
    C(t) = sum_k amplitudes[k] exp(-rates[k] t) for t >= 0.

    conjugate[k] is the index whose rate is the complex conjugate of rates[k]
    (the pairing HEOM needs for the anti-commutator part). terminator is the
    Ishizaki-Tanimura white-noise weight of the dropped Matsubara terms.
    """

    amplitudes: Tuple[complex, ...]
    rates: Tuple[complex, ...]
    conjugate: Tuple[int, ...]
    matsubara_terms: int
    beta: float
    terminator: float = 0.0
    reconstruction_error: float = 0.0
    horizon: float = 0.0

    @property
    def size(self) -> int:
        return len(self.amplitudes)

    def correlation(self, t):
        t = np.asarray(t, dtype=float)
        amplitudes = np.asarray(self.amplitudes, dtype=complex)
        rates = np.asarray(self.rates, dtype=complex)
        if not len(amplitudes):
            return np.zeros_like(t, dtype=complex)
        return np.sum(amplitudes[:, None] * np.exp(-np.multiply.outer(rates, np.atleast_1d(t))), axis=0).reshape(t.shape)


def _coth(z):
    return 1.0 / np.tanh(z)


def _matsubara(J: SpectralDensity, beta: float, ks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    nu = 2 * np.pi * ks / beta
    denominator = (nu**2 + J.omega0**2) ** 2 - J.gamma**2 * nu**2
    return -(2 * J.gamma * J.lam**2 / beta) * nu / denominator, nu


def correlation_function(J: SpectralDensity, beta: float, t: float) -> complex:
    """C(t) = (1/pi) int J [coth(beta w / 2) cos(w t) - i sin(w t)] by QAWO/QAWF quadrature."""
    if J.is_zero:
        return 0j
    edge = J.support_edge
    epsilon = ZERO_PATCH * J.scale

    def real_part(omega):
        return J(omega) * _coth_weight(omega, beta) / np.pi

    def imag_part(omega):
        return -J(omega) / np.pi

    if t == 0:
        return complex(compute_S(J, beta).value, 0.0)
    patch = 2.0 * J.low_frequency_slope * epsilon / (np.pi * beta) if not math.isinf(beta) else 0.0
    real, _ = _quad_panel(real_part, epsilon, edge, weight="cos", wvar=t, epsabs=1e-14, epsrel=QUAD_EPSREL)
    real_tail, _ = _quad_panel(real_part, edge, np.inf, weight="cos", wvar=t, epsabs=1e-15)
    imag, _ = _quad_panel(imag_part, 0.0, edge, weight="sin", wvar=t, epsabs=1e-14, epsrel=QUAD_EPSREL)
    imag_tail, _ = _quad_panel(imag_part, edge, np.inf, weight="sin", wvar=t, epsabs=1e-15)
    return complex(patch + real + real_tail, imag + imag_tail)


def decompose_correlation(
    J: SpectralDensity,
    beta: float,
    K: int = 3,
    horizon: float = 2.0,
    terminator: bool = True,
    check_points: int = 41,
    tolerance: float = RECONSTRUCTION_ATOL,
) -> CorrelationDecomposition:
    """
    Resonant pair of exponentials with rates gamma/2 -/+ i Omega plus K Matsubara
    terms, checked against a direct Fourier transform of J over [0, horizon].
    """
    if J.kind != "underdamped":
        raise UnsupportedRegimeError("exponential decomposition is only available for the underdamped density")
    if K < 0:
        raise DomainError(f"Matsubara term count must be non-negative, got {K}")
    if not beta > 0 or math.isinf(beta):
        raise UnsupportedRegimeError(f"decomposition needs a finite positive beta, got {beta}")
    if J.omega0 <= J.gamma / 2:
        raise UnsupportedRegimeError(
            f"overdamped parameters (omega0={J.omega0} <= gamma/2={J.gamma / 2}) are not supported"
        )
    if J.is_zero:
        return CorrelationDecomposition((), (), (), K, beta, horizon=horizon)

    half_width = J.gamma / 2
    omega = np.sqrt(J.omega0**2 - half_width**2)
    weight = J.lam**2 / (4 * omega)
    amplitudes = [
        weight * (_coth(beta * (omega + 1j * half_width) / 2) - 1),
        weight * (_coth(beta * (omega - 1j * half_width) / 2) + 1),
    ]
    rates = [half_width - 1j * omega, half_width + 1j * omega]
    conjugate = [1, 0]

    ks = np.arange(1, K + 1)
    coefficients, nus = _matsubara(J, beta, ks)
    for index, (c, nu) in enumerate(zip(coefficients, nus)):
        amplitudes.append(complex(c))
        rates.append(complex(nu))
        conjugate.append(2 + index)

    delta = 0.0
    if terminator:
        tail_c, tail_nu = _matsubara(J, beta, np.arange(K + 1, K + 1 + MATSUBARA_TAIL_TERMS))
        delta = float(math.fsum(tail_c / tail_nu))

    decomposition = CorrelationDecomposition(
        amplitudes=tuple(complex(a) for a in amplitudes),
        rates=tuple(complex(r) for r in rates),
        conjugate=tuple(conjugate),
        matsubara_terms=K,
        beta=beta,
        terminator=delta,
        horizon=horizon,
    )

    times = np.linspace(0.0, horizon, check_points)
    exact = np.array([correlation_function(J, beta, float(t)) for t in times])
    error = float(np.max(np.abs(decomposition.correlation(times) - exact)))
    if error > tolerance:
        raise InsufficientTermsError(
            f"decomposition with K={K} misses C(t) by {error:.3e} (> {tolerance:.1e}); try a larger K"
        )
    return dataclasses.replace(decomposition, reconstruction_error=error)

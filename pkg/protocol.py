"""
cdbound - Drive Protocols
Drive families q(t), the mixing angle theta_t, and the time-dependent
Hamiltonians and coupling operators built from them.
"""
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline, PchipInterpolator

from errors import DomainError, SingularCouplingError, UnsupportedRegimeError
from operators import SIGMA_X, SIGMA_Y, SIGMA_Z, lz_hamiltonian, mixing_angle

FAMILIES = ("linear", "sinh", "quasi-step", "tabulated", "spline")
TIME_ATOL = 1e-12


def theta(q, delta):
    """theta = (1/2) arccot(q / delta) on the branch (0, pi/2)."""
    return mixing_angle(q, delta)


def theta_dot(q, q_dot, delta):
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError(f"minimum gap must be positive, got {delta}")
    q = np.asarray(q, dtype=float)
    return -np.asarray(q_dot, dtype=float) * delta / (2.0 * (delta**2 + q**2))


def q_optimal(phi: float, delta: float) -> float:
    """Plateau q* = delta * cot(2 phi) of the optimal quasi-step drive."""
    if delta <= 0:
        raise DomainError(f"minimum gap must be positive, got {delta}")
    sin2 = np.sin(2.0 * phi)
    if abs(sin2) < 1e-12:
        raise SingularCouplingError(
            f"coupling angle phi={phi} gives pure sigma_z coupling; no finite q* exists"
        )
    return float(delta * np.cos(2.0 * phi) / sin2)


@dataclass(frozen=True)
class ProtocolSpec:
    """
    A drive q(t) on [0, tau] with fixed endpoints.

    family-specific knobs:
      sinh        a (steepness), plateau (interior value, default midpoint)
      quasi-step  plateau (required)
      spline      knots (interior times) and values (control points), PCHIP
      tabulated   samples ((t, q) pairs), cubic spline
    """

    family: str
    delta: float
    tau: float
    q_i: float = -1.0
    q_f: float = 1.0
    a: float = 1.0
    plateau: Optional[float] = None
    knots: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()
    samples: Tuple[Tuple[float, float], ...] = field(default=(), repr=False)
    resolution: int = 1001

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown protocol family '{self.family}', expected one of {FAMILIES}")
        if self.delta <= 0:
            raise DomainError(f"minimum gap must be positive, got {self.delta}")
        if self.tau <= 0:
            raise DomainError(f"duration must be positive, got {self.tau}")
        if self.resolution < 3:
            raise DomainError(f"resolution must be at least 3, got {self.resolution}")
        if self.family == "sinh" and self.a <= 0:
            raise DomainError(f"sinh steepness must be positive, got {self.a}")
        if self.family == "quasi-step" and self.plateau is None:
            raise DomainError("quasi-step family needs a plateau value")
        if self.family == "spline":
            knots = np.asarray(self.knots, dtype=float)
            if len(self.knots) != len(self.values) or not len(self.knots):
                raise DomainError("spline family needs matching, non-empty knots and values")
            if knots[0] <= 0 or knots[-1] >= self.tau or np.any(np.diff(knots) <= 0):
                raise DomainError("spline knots must be strictly increasing inside (0, tau)")
        if self.family == "tabulated":
            self._check_samples()

    def _check_samples(self):
        if len(self.samples) < 4:
            raise DomainError("tabulated protocol needs at least 4 samples")
        times = np.array([s[0] for s in self.samples], dtype=float)
        qs = np.array([s[1] for s in self.samples], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise DomainError("tabulated times must be strictly increasing")
        if abs(times[0]) > TIME_ATOL or abs(times[-1] - self.tau) > TIME_ATOL * max(1.0, self.tau):
            raise DomainError(f"tabulated times must span [0, {self.tau}], got [{times[0]}, {times[-1]}]")
        if abs(qs[0] - self.q_i) > TIME_ATOL or abs(qs[-1] - self.q_f) > TIME_ATOL:
            raise DomainError("tabulated endpoints disagree with q_i / q_f")

    @classmethod
    def from_csv(cls, path: Union[str, Path], delta: float, resolution: int = 1001) -> "ProtocolSpec":
        """Loads a two-column (t, q) CSV as a tabulated protocol."""
        frame = pd.read_csv(path, comment="#")
        if frame.shape[1] != 2:
            raise DomainError(f"{path}: expected two columns (t, q), found {frame.shape[1]}")
        times = frame.iloc[:, 0].to_numpy(dtype=float)
        qs = frame.iloc[:, 1].to_numpy(dtype=float)
        samples = tuple((float(t), float(q)) for t, q in zip(times, qs))
        return cls(
            family="tabulated", delta=delta, tau=float(times[-1]), q_i=float(qs[0]), q_f=float(qs[-1]),
            samples=samples, resolution=resolution,
        )

    def replace(self, **changes) -> "ProtocolSpec":
        return dataclasses.replace(self, **changes)

    @property
    def singular_cd(self) -> bool:
        """True when the CD field diverges at the endpoints (quasi-step)."""
        return self.family == "quasi-step"

    @cached_property
    def _interpolant(self):
        if self.family == "tabulated":
            times, qs = np.array(self.samples, dtype=float).T
            return CubicSpline(times, qs)
        if self.family == "spline":
            times = np.concatenate(([0.0], self.knots, [self.tau]))
            qs = np.concatenate(([self.q_i], self.values, [self.q_f]))
            return PchipInterpolator(times, qs)
        return None

    def _sinh_parts(self, t):
        # sinh(x)/sinh(h) and its derivative in overflow-free form
        half = 0.5 * self.a * self.tau
        x = self.a * (t - 0.5 * self.tau)
        scale = np.exp(np.abs(x) - half) / -np.expm1(-2.0 * half)
        u = np.sign(x) * scale * -np.expm1(-2.0 * np.abs(x))
        u_dot = self.a * scale * (1.0 + np.exp(-2.0 * np.abs(x)))
        return u, u_dot

    def _sinh_coefficients(self):
        plateau = 0.5 * (self.q_i + self.q_f) if self.plateau is None else self.plateau
        return plateau, 0.5 * (self.q_f - self.q_i), 0.5 * (self.q_i + self.q_f) - plateau

    def q(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "linear":
            value = self.q_i + (self.q_f - self.q_i) * t / self.tau
        elif self.family == "sinh":
            u, _ = self._sinh_parts(t)
            plateau, b, c = self._sinh_coefficients()
            value = plateau + b * u + c * u**2
        elif self.family == "quasi-step":
            value = np.full_like(t, self.plateau, dtype=float)
        else:
            value = np.asarray(self._interpolant(t), dtype=float)
        value = np.where(t <= 0.0, self.q_i, value)
        value = np.where(t >= self.tau, self.q_f, value)
        return value if value.ndim else float(value)

    def q_dot(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "linear":
            value = np.full_like(t, (self.q_f - self.q_i) / self.tau, dtype=float)
        elif self.family == "sinh":
            u, u_dot = self._sinh_parts(t)
            _, b, c = self._sinh_coefficients()
            value = (b + 2.0 * c * u) * u_dot
        elif self.family == "quasi-step":
            value = np.zeros_like(t, dtype=float)
        else:
            value = np.asarray(self._interpolant(t, 1), dtype=float)
        return value if value.ndim else float(value)

    def theta(self, t):
        return theta(self.q(t), self.delta)

    def theta_dot(self, t):
        return theta_dot(self.q(t), self.q_dot(t), self.delta)

    def grid(self, points: Optional[int] = None) -> np.ndarray:
        return np.linspace(0.0, self.tau, points or self.resolution)

    def max_theta_dot(self, points: Optional[int] = None) -> float:
        if self.singular_cd:
            return float("inf")
        return float(np.max(np.abs(self.theta_dot(self.grid(points)))))

    def check_time(self, t: float) -> float:
        if t < -TIME_ATOL or t > self.tau + TIME_ATOL * max(1.0, self.tau):
            raise DomainError(f"time {t} outside [0, {self.tau}]")
        return min(max(float(t), 0.0), self.tau)


@dataclass(frozen=True)
class CouplingAngle:
    """Direction of the system-bath coupling: a fixed phi, or phi(t) = theta_t."""

    mode: str = "static"
    phi: float = np.pi / 4

    def __post_init__(self):
        if self.mode not in ("static", "sta"):
            raise DomainError(f"coupling mode must be 'static' or 'sta', got '{self.mode}'")
        if self.mode == "static" and not 0.0 <= self.phi < np.pi:
            raise DomainError(f"static coupling angle must lie in [0, pi), got {self.phi}")

    @classmethod
    def static(cls, phi: float) -> "CouplingAngle":
        return cls(mode="static", phi=phi)

    @classmethod
    def sta(cls) -> "CouplingAngle":
        return cls(mode="sta", phi=0.0)

    @property
    def is_sta(self) -> bool:
        return self.mode == "sta"

    def phi_at(self, spec: ProtocolSpec, t):
        if self.is_sta:
            return spec.theta(t)
        return np.full_like(np.asarray(t, dtype=float), self.phi) if np.ndim(t) else self.phi


def hamiltonian_0(spec: ProtocolSpec, t: float) -> np.ndarray:
    t = spec.check_time(t)
    return lz_hamiltonian(spec.q(t), spec.delta)


def hamiltonian_cd(spec: ProtocolSpec, t: float, include_cd: bool = True) -> np.ndarray:
    """H_0 + theta_dot sigma_y; include_cd=False drops the counter-diabatic term."""
    if spec.singular_cd:
        raise UnsupportedRegimeError("quasi-step drive has a divergent CD field at its endpoints")
    t = spec.check_time(t)
    q = spec.q(t)
    hamiltonian = lz_hamiltonian(q, spec.delta)
    if include_cd:
        hamiltonian = hamiltonian + float(theta_dot(q, spec.q_dot(t), spec.delta)) * SIGMA_Y
    return hamiltonian


def coupling_matrix(phi: float) -> np.ndarray:
    return np.cos(2.0 * phi) * SIGMA_Z + np.sin(2.0 * phi) * SIGMA_X


def coupling_operator(angle: CouplingAngle, spec: ProtocolSpec, t: float) -> np.ndarray:
    """cos(2 phi) sigma_z + sin(2 phi) sigma_x, with phi = theta_t in sta mode."""
    t = spec.check_time(t)
    return coupling_matrix(float(angle.phi_at(spec, t)))


def interaction_mismatch(theta_t: float, phi: float) -> np.ndarray:
    """Difference between the angle-matched and the actual coupling operator."""
    return (
        (np.cos(2.0 * theta_t) - np.cos(2.0 * phi)) * SIGMA_Z
        + (np.sin(2.0 * theta_t) - np.sin(2.0 * phi)) * SIGMA_X
    )

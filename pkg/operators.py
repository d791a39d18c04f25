"""
cdbound - Two-Level Operators
Dense 2x2 complex algebra and state metrics (fidelity, Bures angle).

Basis convention, used by every module: index 0 is |up>, index 1 is |down>,
with sigma_z |up> = +|up>. Units are dimensionless with hbar = 1.
"""
from typing import Optional

import numpy as np

from errors import DomainError, StateValidationError

ALGEBRAIC_ATOL = 1e-12
SOLVER_ATOL = 1e-8
POSITIVITY_ATOL = 1e-10
IMAG_ATOL = 1e-10


def _frozen(matrix) -> np.ndarray:
    array = np.array(matrix, dtype=complex)
    array.flags.writeable = False
    return array


IDENTITY = _frozen([[1, 0], [0, 1]])
SIGMA_X = _frozen([[0, 1], [1, 0]])
SIGMA_Y = _frozen([[0, -1j], [1j, 0]])
SIGMA_Z = _frozen([[1, 0], [0, -1]])

SPIN_UP = _frozen([1, 0])
SPIN_DOWN = _frozen([0, 1])


def dagger(operator: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(operator, -1, -2))


def is_hermitian(operator: np.ndarray, atol: float = ALGEBRAIC_ATOL) -> bool:
    return bool(np.max(np.abs(operator - dagger(operator)), initial=0.0) <= atol)


def projector(state: np.ndarray) -> np.ndarray:
    """|psi><psi| for a state vector of any dimension."""
    state = np.asarray(state, dtype=complex)
    return np.outer(state, np.conj(state))


def expectation(state: np.ndarray, operator: np.ndarray) -> complex:
    state = np.asarray(state, dtype=complex)
    return complex(np.conj(state) @ operator @ state)


def validate_state(state: np.ndarray, atol: float = ALGEBRAIC_ATOL) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim != 1:
        raise StateValidationError(f"state must be a vector, got shape {state.shape}")
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > atol:
        raise StateValidationError(f"normalisation violated: |psi| = {norm:.15g}")
    return state


def validate_density_matrix(rho: np.ndarray, atol: float = ALGEBRAIC_ATOL) -> np.ndarray:
    """
    Checks the density-matrix invariants and returns rho as a complex array.
    Raises StateValidationError naming the first violated invariant.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateValidationError(f"density matrix must be square, got shape {rho.shape}")
    deviation = np.max(np.abs(rho - dagger(rho)))
    if deviation > atol:
        raise StateValidationError(f"Hermiticity violated: max |rho - rho^dagger| = {deviation:.3e}")
    trace = np.trace(rho)
    if abs(trace - 1.0) > atol:
        raise StateValidationError(f"unit trace violated: Tr rho = {trace:.15g}")
    smallest = np.min(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))))
    if smallest < -max(POSITIVITY_ATOL, atol):
        raise StateValidationError(f"positivity violated: smallest eigenvalue {smallest:.3e}")
    return rho


def fidelity(target: np.ndarray, rho: np.ndarray, atol: float = ALGEBRAIC_ATOL) -> float:
    """<target|rho|target>, clamped to [0, 1] once its imaginary part is checked."""
    target = validate_state(target, atol=max(atol, ALGEBRAIC_ATOL))
    rho = validate_density_matrix(rho, atol=atol)
    overlap = np.conj(target) @ rho @ target
    if abs(overlap.imag) > IMAG_ATOL:
        raise StateValidationError(f"fidelity has imaginary part {overlap.imag:.3e}")
    return float(min(1.0, max(0.0, overlap.real)))


def bures_angle(target: np.ndarray, rho: np.ndarray, atol: float = ALGEBRAIC_ATOL) -> float:
    return angle_from_fidelity(fidelity(target, rho, atol=atol))


def angle_from_fidelity(value: float) -> float:
    return float(np.arccos(np.sqrt(min(1.0, max(0.0, value)))))


def mixing_angle(q, delta):
    """Half of atan2(delta, q): the continuous arccot branch in (0, pi/2)."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError(f"minimum gap must be positive, got {delta}")
    return 0.5 * np.arctan2(delta, np.asarray(q, dtype=float))


def state_from_angle(theta: float) -> np.ndarray:
    """cos(theta)|down> - sin(theta)|up>."""
    return np.array([-np.sin(theta), np.cos(theta)], dtype=complex)


def ground_state(q: float, delta: float) -> np.ndarray:
    return state_from_angle(float(mixing_angle(q, delta)))


def excited_state(q: float, delta: float) -> np.ndarray:
    theta = float(mixing_angle(q, delta))
    return np.array([np.cos(theta), np.sin(theta)], dtype=complex)


def lz_hamiltonian(q: float, delta: float) -> np.ndarray:
    """Bare Landau-Zener Hamiltonian (q/2) sigma_z + (delta/2) sigma_x."""
    return 0.5 * q * SIGMA_Z + 0.5 * delta * SIGMA_X


def rotation(theta: float) -> np.ndarray:
    """R = exp(-i theta sigma_y), written in closed form."""
    return np.cos(theta) * IDENTITY - 1j * np.sin(theta) * SIGMA_Y


def ground_energy(q: float, delta: float) -> float:
    return -0.5 * float(np.hypot(delta, q))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def partial_trace_spin(joint: np.ndarray, spin_dim: int = 2, mode_dim: Optional[int] = None) -> np.ndarray:
    """Traces the second tensor factor out of a spin (x) mode operator."""
    mode_dim = mode_dim or joint.shape[0] // spin_dim
    return np.einsum("ikjk->ij", joint.reshape(spin_dim, mode_dim, spin_dim, mode_dim))

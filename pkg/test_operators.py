import unittest

import numpy as np

from errors import DomainError, StateValidationError
from operators import (
    IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z, SPIN_DOWN, SPIN_UP, angle_from_fidelity, bures_angle, excited_state,
    fidelity, ground_energy, ground_state, lz_hamiltonian, mixing_angle, partial_trace_spin, projector, purity,
    rotation, validate_density_matrix,
)


class TestStateMetrics(unittest.TestCase):

    def test_pure_state_fidelity(self):
        rho = projector(SPIN_UP)
        self.assertEqual(fidelity(SPIN_UP, rho), 1.0)
        self.assertEqual(fidelity(SPIN_DOWN, rho), 0.0)
        self.assertEqual(bures_angle(SPIN_UP, rho), 0.0)
        self.assertAlmostEqual(bures_angle(SPIN_DOWN, rho), np.pi / 2, places=12)

    def test_mixed_state_fidelity(self):
        rho = 0.5 * IDENTITY
        self.assertAlmostEqual(fidelity(SPIN_UP, rho), 0.5, places=14)
        self.assertAlmostEqual(bures_angle(SPIN_UP, rho), np.pi / 4, places=12)
        self.assertAlmostEqual(purity(rho), 0.5, places=14)

    def test_fidelity_ignores_global_phase(self):
        rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
        psi = ground_state(0.4, 0.9)
        for phase in (0.3, np.pi / 2, 2.5):
            self.assertAlmostEqual(fidelity(np.exp(1j * phase) * psi, rho), fidelity(psi, rho), places=14)

    def test_bures_angle_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            rho = A @ A.conj().T
            rho /= np.trace(rho).real
            target = rng.normal(size=2) + 1j * rng.normal(size=2)
            target /= np.linalg.norm(target)
            self.assertAlmostEqual(np.cos(bures_angle(target, rho)) ** 2, fidelity(target, rho), delta=1e-12)

    def test_angle_from_fidelity_clamps(self):
        self.assertEqual(angle_from_fidelity(1.0 + 1e-15), 0.0)
        self.assertAlmostEqual(angle_from_fidelity(-1e-15), np.pi / 2, places=12)

    def test_invalid_density_matrices_name_the_invariant(self):
        cases = {
            "Hermiticity": np.array([[1.0, 0.1], [0.0, 0.0]]),
            "trace": np.array([[0.6, 0.0], [0.0, 0.6]]),
            "positivity": np.array([[1.2, 0.0], [0.0, -0.2]]),
        }
        for invariant, rho in cases.items():
            with self.assertRaises(StateValidationError) as context:
                validate_density_matrix(rho)
            self.assertIn(invariant, str(context.exception))

    def test_unnormalised_target_rejected(self):
        with self.assertRaises(StateValidationError):
            fidelity(np.array([1.0, 1.0]), projector(SPIN_UP))


class TestLandauZenerEigenstates(unittest.TestCase):

    def test_mixing_angle_branch(self):
        self.assertAlmostEqual(mixing_angle(0.0, 1.0), np.pi / 4, places=14)
        self.assertLess(mixing_angle(1e6, 1.0), 1e-6)
        self.assertGreater(mixing_angle(-1e6, 1.0), np.pi / 2 - 1e-6)
        # continuous through q = 0
        qs = np.linspace(-5, 5, 1001)
        self.assertLess(np.max(np.abs(np.diff(mixing_angle(qs, 0.3)))), 0.1)

    def test_gap_must_be_positive(self):
        with self.assertRaises(DomainError):
            mixing_angle(0.0, 0.0)
        with self.assertRaises(DomainError):
            ground_state(1.0, -0.5)

    def test_ground_state_is_lowest_eigenvector(self):
        for q, delta in [(-1.0, 1.0), (0.0, 0.1), (2.5, 0.7), (-3.0, 2.0)]:
            H = lz_hamiltonian(q, delta)
            psi = ground_state(q, delta)
            np.testing.assert_allclose(H @ psi, ground_energy(q, delta) * psi, atol=1e-12)
            self.assertAlmostEqual(ground_energy(q, delta), np.linalg.eigvalsh(H)[0], places=12)

    def test_excited_state_is_orthogonal_eigenvector(self):
        q, delta = 0.4, 0.9
        psi = excited_state(q, delta)
        self.assertLess(abs(np.vdot(ground_state(q, delta), psi)), 1e-14)
        np.testing.assert_allclose(lz_hamiltonian(q, delta) @ psi, -ground_energy(q, delta) * psi, atol=1e-12)

    def test_rotation_maps_down_to_ground_state(self):
        theta = 0.37
        R = rotation(theta)
        np.testing.assert_allclose(R @ SPIN_DOWN, np.array([-np.sin(theta), np.cos(theta)]), atol=1e-15)
        np.testing.assert_allclose(R.conj().T @ R, IDENTITY, atol=1e-15)
        # R sigma_z R^dagger = cos(2 theta) sigma_z + sin(2 theta) sigma_x
        np.testing.assert_allclose(
            R @ SIGMA_Z @ R.conj().T, np.cos(2 * theta) * SIGMA_Z + np.sin(2 * theta) * SIGMA_X, atol=1e-15
        )

    def test_pauli_constants_are_read_only(self):
        with self.assertRaises(ValueError):
            SIGMA_Y[0, 0] = 1.0


class TestPartialTrace(unittest.TestCase):

    def test_product_state(self):
        spin = projector(ground_state(0.3, 1.0))
        mode = np.diag([0.7, 0.2, 0.1]).astype(complex)
        np.testing.assert_allclose(partial_trace_spin(np.kron(spin, mode), 2, 3), spin, atol=1e-15)


if __name__ == '__main__':
    unittest.main()

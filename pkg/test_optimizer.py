import math
import unittest
from dataclasses import replace

import numpy as np

from bath import SpectralDensity, tabulate_functionals
from bounds import l_bd_lz
from errors import DomainError
from optimizer import OptimizationProblem, optimize_multi, optimize_scalar
from protocol import CouplingAngle, ProtocolSpec, q_optimal

TAU = 2.0
POINTS = 501
# cot(2 phi) = 1/2 puts the optimal plateau at q* = 0.5 for delta = 1
PLATEAU_PHI = 0.5 * math.atan(2.0)


def reference_table(lam=0.1):
    return tabulate_functionals(SpectralDensity.underdamped(omega0=1.0, gamma=0.1, lam=lam), 1.0, TAU, points=101)


class TestProblemValidation(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = reference_table()
        cls.base = ProtocolSpec(family="sinh", delta=1.0, tau=TAU, a=3.0)

    def test_fixed_endpoints_cannot_be_free(self):
        with self.assertRaises(DomainError):
            OptimizationProblem(
                base=self.base, angle=CouplingAngle.static(np.pi / 4), bath=self.table,
                parameters=("q_i",), lower=(-2.0,), upper=(0.0,),
            )

    def test_spline_values_need_the_spline_family(self):
        with self.assertRaises(DomainError):
            OptimizationProblem(
                base=self.base, angle=CouplingAngle.static(np.pi / 4), bath=self.table,
                parameters=("value_0",), lower=(-1.0,), upper=(1.0,),
            )

    def test_inverted_bounds(self):
        with self.assertRaises(DomainError):
            OptimizationProblem(
                base=self.base, angle=CouplingAngle.static(np.pi / 4), bath=self.table,
                parameters=("a",), lower=(5.0,), upper=(1.0,),
            )

    def test_ceiling_rejects_steep_candidates(self):
        problem = OptimizationProblem(
            base=self.base, angle=CouplingAngle.static(np.pi / 4), bath=self.table,
            parameters=("a",), lower=(0.5,), upper=(500.0,), points=POINTS,
        )
        self.assertEqual(problem.evaluate((500.0,)), (math.inf, "rejected"))
        value, status = problem.evaluate((3.0,))
        self.assertEqual(status, "ok")
        self.assertTrue(math.isfinite(value))


class TestScalarSearch(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = reference_table()
        cls.base = ProtocolSpec(family="sinh", delta=1.0, tau=TAU, a=3.0)

    def steepness(self, lower, upper, table=None):
        return OptimizationProblem(
            base=self.base, angle=CouplingAngle.static(np.pi / 4), bath=self.table if table is None else table,
            parameters=("a",), lower=(lower,), upper=(upper,), points=POINTS,
        )

    def test_monotone_steepness_hits_the_upper_edge(self):
        result = optimize_scalar(self.steepness(0.5, 50.0))
        self.assertEqual(result.status, "boundary")
        self.assertTrue(result.boundary)
        self.assertAlmostEqual(result.parameters[0], 50.0, places=9)
        self.assertTrue(result.converged)

    def test_uncoupled_bath_returns_immediately(self):
        result = optimize_scalar(self.steepness(0.5, 50.0, table=reference_table(lam=0.0)))
        self.assertEqual(result.l_bd, 0.0)
        self.assertEqual(result.evaluations, 0)

    def test_degenerate_bracket(self):
        problem = self.steepness(3.0, 3.0)
        result = optimize_scalar(problem)
        self.assertEqual(result.status, "degenerate")
        self.assertEqual(result.evaluations, 1)
        expected = l_bd_lz(self.base, CouplingAngle.static(np.pi / 4), self.table, POINTS).l_bd
        self.assertAlmostEqual(result.l_bd, expected, delta=1e-12)

    def test_every_candidate_rejected(self):
        result = optimize_scalar(self.steepness(400.0, 500.0))
        self.assertEqual(result.status, "rejected")
        self.assertEqual(result.l_bd, math.inf)
        self.assertFalse(result.converged)

    def test_plateau_settles_near_the_optimal_field(self):
        problem = OptimizationProblem(
            base=self.base.replace(a=10.0), angle=CouplingAngle.static(PLATEAU_PHI), bath=self.table,
            parameters=("plateau",), lower=(-0.9,), upper=(0.9,), points=POINTS,
        )
        result = optimize_scalar(problem)
        self.assertEqual(result.status, "converged")
        self.assertAlmostEqual(result.parameters[0], q_optimal(PLATEAU_PHI, 1.0), delta=0.15)
        # the reported value is reproducible from the reported parameters
        self.assertAlmostEqual(problem.evaluate(result.parameters)[0], result.l_bd, delta=1e-12)

        multi = optimize_multi(replace(problem, seeds=(0,)))
        self.assertAlmostEqual(multi.l_bd, result.l_bd, delta=1e-3)


class TestMultiSearch(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = reference_table()
        cls.angle = CouplingAngle.static(np.pi / 4)
        base = ProtocolSpec(
            family="spline", delta=1.0, tau=TAU, knots=(0.05, 0.1, 1.9, 1.95), values=(0.0, 0.0, 0.0, 0.0)
        )
        cls.problem = OptimizationProblem(
            base=base, angle=cls.angle, bath=cls.table,
            parameters=("value_0", "value_1", "value_2", "value_3"),
            lower=(-1.0,) * 4, upper=(1.0,) * 4, initial=(0.0,) * 4,
            points=POINTS, seeds=(0, 1), max_iterations=150,
        )
        cls.result = optimize_multi(cls.problem)

    def test_spline_beats_the_steepest_reference_drive(self):
        reference = l_bd_lz(ProtocolSpec(family="sinh", delta=1.0, tau=TAU, a=10.0), self.angle, self.table, POINTS)
        self.assertIn(self.result.status, ("converged", "unconverged", "no-improvement"))
        self.assertLessEqual(self.result.l_bd, reference.l_bd)
        self.assertLessEqual(self.result.l_bd, min(self.result.seed_values))

    def test_reported_parameters_reproduce_the_value(self):
        value, status = self.problem.evaluate(self.result.parameters)
        self.assertEqual(status, "ok")
        self.assertAlmostEqual(value, self.result.l_bd, delta=1e-12)

    def test_restarts_are_reproducible(self):
        again = optimize_multi(self.problem, n_jobs=2)
        self.assertEqual(again.parameters, self.result.parameters)
        self.assertEqual(again.l_bd, self.result.l_bd)
        self.assertEqual(again.seed_values, self.result.seed_values)

    def test_ledger_row(self):
        row = self.result.to_row(self.problem)
        for key in ("family", "delta", "tau", "q_i", "q_f", "coupling", "phi", "parameters", "lower", "upper",
                    "seeds", "best", "l_bd", "fidelity_bound", "bound_valid", "status", "evaluations"):
            self.assertIn(key, row)
        self.assertEqual(row["family"], "spline")
        self.assertEqual(row["seeds"], "[0, 1]")


if __name__ == '__main__':
    unittest.main()

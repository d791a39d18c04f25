import json
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from config import config_hash, default_config
from dynamics import SimulationResult
from engine import EXIT_BOUND_VIOLATED, EXIT_OK, EXIT_UNCONVERGED, LEDGER_COLUMNS, ExperimentEngine
from errors import ConfigError, StateValidationError
from operators import SPIN_DOWN, projector


def small_config(tmp, **sections):
    config = default_config()
    config["sweep"]["deltas"] = [1.0]
    config["sweep"]["a_values"] = [3.0]
    config["solver"]["x_points"] = 21
    config["solver"]["M"] = 101
    config["output"]["path"] = os.path.join(tmp, "out.csv")
    config["optimize"]["ledger"] = os.path.join(tmp, "ledger.csv")
    for name, values in sections.items():
        if isinstance(config[name], dict):
            config[name].update(values)
        else:
            config[name] = values
    return config


class TestCsvOutput(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_header_and_sidecar(self):
        config = small_config(self.tmp.name)
        engine = ExperimentEngine(config)
        path = engine.write_csv(pd.DataFrame({"delta": [1.0], "l_bd": [0.05]}), Path(self.tmp.name) / "nested" / "x.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("# cdbound "))
        self.assertEqual(lines[1], f"# config-sha256 {config_hash(config)}")
        self.assertEqual(lines[3], "delta,l_bd")

        frame = pd.read_csv(path, comment="#")
        self.assertEqual(frame["l_bd"].tolist(), [0.05])
        sidecar = json.loads(path.with_suffix(".config.json").read_text(encoding="utf-8"))
        self.assertEqual(sidecar, config)


class TestBoundSweep(unittest.TestCase):

    def test_small_sweep_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = small_config(tmp, kind="bound-sweep")
            outcome = ExperimentEngine(config).run()
            first = outcome.path.read_bytes()
            self.assertEqual(outcome.exit_code, EXIT_OK)
            self.assertEqual(len(outcome.frame), 1)
            row = outcome.frame.iloc[0]
            self.assertGreater(row["l_bd"], 0.0)
            self.assertAlmostEqual(row["fidelity_bound"], math.cos(row["l_bd"]) ** 2, places=12)

            second = ExperimentEngine(config).run()
            self.assertEqual(second.path.read_bytes(), first)

    def test_sweep_points(self):
        config = default_config()
        self.assertEqual(len(ExperimentEngine(config).sweep_points()), 60)
        config["protocol"]["family"] = "linear"
        self.assertEqual(len(ExperimentEngine(config).sweep_points()), 20)


class TestRowValidation(unittest.TestCase):

    def setUp(self):
        self.engine = ExperimentEngine(default_config())

    def test_violations_and_unconverged_rows(self):
        frame = pd.DataFrame([
            {"delta": 0.5, "a": 3.0, "fidelity": 0.95, "fidelity_bound": 0.96, "margin": -0.01,
             "converged": True, "deltas": "{}"},
            {"delta": 1.0, "a": math.nan, "fidelity": math.nan, "fidelity_bound": 0.9, "margin": math.nan,
             "converged": False, "deltas": "{\"depth\": 0.01}"},
            {"delta": 1.5, "a": 3.0, "fidelity": 0.9595, "fidelity_bound": 0.96, "margin": -0.0005,
             "converged": True, "deltas": "{}"},
        ])
        ok, errors = self.engine.validate_rows(frame)
        self.assertFalse(ok)
        self.assertEqual(len(errors), 2)
        self.assertIn("bound violated at delta=0.5 a=3", errors[0])
        self.assertIn("unconverged at delta=1", errors[1])

    def test_empty_sweep(self):
        ok, errors = self.engine.validate_rows(pd.DataFrame())
        self.assertFalse(ok)
        self.assertEqual(errors, ["ERROR: sweep produced no rows."])


class TestExperiments(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_uncoupled_dynamics_sweep_saturates(self):
        config = small_config(self.tmp.name, bath={"lam": 0.0}, solver={"margin_tolerance": 0.0, "M": 101})
        outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_OK, msg=outcome.errors)
        row = outcome.frame.iloc[0]
        self.assertEqual(row["fidelity_bound"], 1.0)
        self.assertGreater(row["fidelity"], 1 - 1e-8)

    def test_sta_needs_low_temperature(self):
        config = small_config(self.tmp.name, kind="sta-verify", coupling={"mode": "sta"})
        with self.assertRaises(ConfigError):
            ExperimentEngine(config).run()

    def test_failed_sta_check_exits_with_violation(self):
        config = small_config(
            self.tmp.name, kind="sta-verify", coupling={"mode": "sta"}, bath={"beta": 10.0},
            solver={"sta_min_fidelity": 1.5, "N_f": 4, "check_convergence": False, "dt": 0.02},
        )
        outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_BOUND_VIOLATED)
        self.assertIn("control_fidelity", outcome.frame.columns)

    def test_degenerate_optimisation_appends_to_the_ledger(self):
        config = small_config(
            self.tmp.name, kind="optimize", optimize={"parameters": ["a"], "lower": [3.0], "upper": [3.0]}
        )
        for _ in range(2):
            outcome = ExperimentEngine(config).run()
            self.assertEqual(outcome.exit_code, EXIT_OK)
        ledger = pd.read_csv(config["optimize"]["ledger"], comment="#")
        self.assertEqual(len(ledger), 2)
        self.assertEqual(ledger["status"].tolist(), ["degenerate", "degenerate"])
        self.assertEqual(ledger["config_sha256"].iloc[0], config_hash(config))

    def test_ledger_keeps_one_schema_with_and_without_verification(self):
        optimize = {"parameters": ["a"], "lower": [3.0], "upper": [3.0]}
        config = small_config(self.tmp.name, kind="optimize", optimize=dict(optimize, verify=False))
        self.assertEqual(ExperimentEngine(config).run().exit_code, EXIT_OK)
        config = small_config(
            self.tmp.name, kind="optimize", optimize=dict(optimize, verify=True),
            solver={"check_convergence": False, "M": 101},
        )
        outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_OK, msg=outcome.errors)

        ledger = pd.read_csv(config["optimize"]["ledger"], comment="#")
        self.assertEqual(list(ledger.columns), list(LEDGER_COLUMNS))
        self.assertEqual(len(ledger), 2)
        self.assertTrue(math.isnan(ledger["fidelity"].iloc[0]))
        self.assertGreater(ledger["fidelity"].iloc[1], 0.9)
        self.assertAlmostEqual(
            ledger["margin"].iloc[1], ledger["fidelity"].iloc[1] - ledger["fidelity_bound"].iloc[1], places=12
        )

    def test_failed_solver_flags_the_row(self):
        config = small_config(self.tmp.name)
        with patch("engine._simulate", side_effect=StateValidationError("positivity violated: smallest eigenvalue -1e-6")):
            outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_UNCONVERGED)
        row = outcome.frame.iloc[0]
        self.assertFalse(row["converged"])
        self.assertTrue(math.isnan(row["fidelity"]))
        self.assertIn("StateValidationError", row["failure"])
        self.assertIn("solver unconverged at delta=1 a=3", outcome.errors[0])

    def test_sta_run_reaches_unit_fidelity(self):
        config = small_config(
            self.tmp.name, kind="sta-verify", coupling={"mode": "sta"}, bath={"beta": 10.0},
            solver={"N_f": 4, "check_convergence": False},
        )
        outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_OK, msg=outcome.errors)
        self.assertGreaterEqual(outcome.frame["fidelity"].iloc[-1], 1 - 1e-8)
        self.assertLess(outcome.frame["control_fidelity"].iloc[-1], outcome.frame["fidelity"].iloc[-1])
        self.assertTrue(outcome.frame["control_below_sta"].all())

    def test_control_scoring_above_sta_fails_the_check(self):
        def fake_run(fidelity):
            times = np.array([0.0, 2.0])
            states = np.array([projector(SPIN_DOWN)] * 2)
            return SimulationResult("pseudomode", times, states, np.array([1.0, fidelity]))

        config = small_config(self.tmp.name, kind="sta-verify", coupling={"mode": "sta"}, bath={"beta": 10.0})
        with patch("engine._simulate", side_effect=[fake_run(0.9995), fake_run(0.9999)]):
            outcome = ExperimentEngine(config).run()
        self.assertEqual(outcome.exit_code, EXIT_BOUND_VIOLATED)
        self.assertFalse(outcome.frame["control_below_sta"].any())
        self.assertIn("does not score below the STA run", outcome.errors[0])

    def test_bath_table(self):
        config = small_config(self.tmp.name, kind="bath-functionals")
        outcome = ExperimentEngine(config).run()
        self.assertEqual(list(outcome.frame.columns), ["t", "X", "X_error", "S", "S_error", "interpolation_error"])
        self.assertEqual(len(outcome.frame), 21)
        self.assertEqual(outcome.frame["X"].iloc[0], 0.0)


if __name__ == '__main__':
    unittest.main()

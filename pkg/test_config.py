import json
import math
import os
import tempfile
import unittest

import numpy as np

from config import (
    build_angle, build_density, build_protocol, config_hash, default_config, load_config, parse_override,
    sweep_deltas, validate_config,
)
from errors import ConfigError


class TestConfigDefaults(unittest.TestCase):

    def test_defaults_describe_the_reference_sweep(self):
        config = load_config(environ={})
        self.assertEqual(config["kind"], "dynamics-sweep")
        self.assertEqual(config["protocol"]["tau"], 2.0)
        self.assertEqual(config["coupling"]["phi"], math.pi / 4)
        self.assertEqual(
            {k: config["bath"][k] for k in ("omega0", "gamma", "lam", "beta")},
            {"omega0": 1.0, "gamma": 0.1, "lam": 0.1, "beta": 1.0},
        )
        self.assertEqual(config["sweep"]["a_values"], [1.0, 3.0, 10.0])
        np.testing.assert_allclose(sweep_deltas(config), np.linspace(0.1, 2.0, 20))
        self.assertEqual(validate_config(config), (True, []))

    def test_defaults_are_independent_copies(self):
        first = default_config()
        first["protocol"]["delta"] = 7.0
        self.assertEqual(default_config()["protocol"]["delta"], 1.0)


class TestConfigLoading(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.json")

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, payload):
        with open(self.path, "w") as f:
            json.dump(payload, f)

    def test_precedence(self):
        self.write({"solver": {"N_c": 8}, "workers": 2})
        config = load_config(self.path, ["solver.N_c=9"], environ={"CDBOUND_WORKERS": "3"})
        self.assertEqual(config["solver"]["N_c"], 9)
        self.assertEqual(config["workers"], 3)
        self.assertEqual(config["solver"]["K"], 3)

        config = load_config(self.path, environ={})
        self.assertEqual(config["solver"]["N_c"], 8)
        self.assertEqual(config["workers"], 2)

    def test_worker_override_beats_environment(self):
        self.write({"workers": 2})
        config = load_config(self.path, ["workers=5"], environ={"CDBOUND_WORKERS": "3"})
        self.assertEqual(config["workers"], 5)

    def test_unknown_key(self):
        self.write({"solver": {"depth": 8}})
        with self.assertRaises(ConfigError) as context:
            load_config(self.path, environ={})
        self.assertIn("ERROR: unknown key 'solver.depth'", context.exception.errors)

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as context:
            load_config(os.path.join(self.tmp.name, "absent.json"), environ={})
        self.assertIn("not found", context.exception.errors[0])

    def test_invalid_json(self):
        with open(self.path, "w") as f:
            f.write("{solver: ")
        with self.assertRaises(ConfigError):
            load_config(self.path, environ={})

    def test_every_problem_is_reported(self):
        self.write({"kind": "fit", "protocol": {"delta": -1.0}, "solver": {"M": 100}})
        with self.assertRaises(ConfigError) as context:
            load_config(self.path, environ={})
        errors = context.exception.errors
        self.assertEqual(len(errors), 3)
        self.assertTrue(all(error.startswith("ERROR: ") for error in errors))

    def test_bad_worker_environment(self):
        with self.assertRaises(ConfigError):
            load_config(environ={"CDBOUND_WORKERS": "many"})

    def test_zero_temperature_accepted(self):
        config = load_config(overrides=["bath.beta=inf"], environ={})
        self.assertEqual(config["bath"]["beta"], "inf")


class TestOverrides(unittest.TestCase):

    def test_parse_override(self):
        self.assertEqual(parse_override("solver.N_c=8"), (["solver", "N_c"], 8))
        self.assertEqual(parse_override("sweep.deltas=[0.5, 1.0]"), (["sweep", "deltas"], [0.5, 1.0]))
        self.assertEqual(parse_override("solver.method=pseudomode"), (["solver", "method"], "pseudomode"))
        self.assertEqual(parse_override("protocol.plateau=null"), (["protocol", "plateau"], None))

    def test_malformed_override(self):
        with self.assertRaises(ConfigError):
            parse_override("solver.N_c")


class TestHashing(unittest.TestCase):

    def test_hash_ignores_key_order(self):
        config = default_config()
        reordered = json.loads(json.dumps(config, sort_keys=True))
        self.assertEqual(config_hash(config), config_hash(reordered))
        self.assertEqual(len(config_hash(config)), 64)

    def test_hash_tracks_values(self):
        config = default_config()
        changed = default_config()
        changed["bath"]["lam"] = 0.2
        self.assertNotEqual(config_hash(config), config_hash(changed))


class TestBuilders(unittest.TestCase):

    def test_protocol_changes_win(self):
        spec = build_protocol(default_config(), delta=0.5, a=10.0)
        self.assertEqual((spec.family, spec.delta, spec.a, spec.tau), ("sinh", 0.5, 10.0, 2.0))

    def test_domain_errors_become_config_errors(self):
        config = default_config()
        config["protocol"]["family"] = "quasi-step"
        with self.assertRaises(ConfigError):
            build_protocol(config)
        config["coupling"]["phi"] = 5.0
        with self.assertRaises(ConfigError):
            build_angle(config)
        config["bath"]["kind"] = "custom"
        config["bath"]["table_csv"] = "/nonexistent/density.csv"
        with self.assertRaises(ConfigError):
            build_density(config)

    def test_sta_angle(self):
        self.assertTrue(build_angle(default_config(), mode="sta").is_sta)


if __name__ == '__main__':
    unittest.main()

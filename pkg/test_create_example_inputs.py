import io
import os
import tempfile
import unittest
from contextlib import redirect_stdout

import numpy as np

from config import build_density, build_protocol, load_config
from create_example_inputs import create_example_inputs
from protocol import ProtocolSpec


class TestExampleInputs(unittest.TestCase):

    def test_written_config_loads_and_builds(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = os.path.join(tmp, "inputs")
            with redirect_stdout(io.StringIO()):
                create_example_inputs(root)
            self.assertEqual(
                sorted(os.listdir(root)),
                ["sinh_a3_protocol.csv", "tabulated_bound.json", "underdamped_density.csv"],
            )
            config = load_config(os.path.join(root, "tabulated_bound.json"), environ={})
            spec = build_protocol(config)
            density = build_density(config)

        reference = ProtocolSpec(family="sinh", delta=1.0, tau=2.0, a=3.0)
        probe = np.linspace(0.1, 1.9, 7)
        np.testing.assert_allclose(spec.q(probe), reference.q(probe), atol=1e-4)
        self.assertEqual(density.kind, "custom")


if __name__ == '__main__':
    unittest.main()

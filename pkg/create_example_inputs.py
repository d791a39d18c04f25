import json
import os

import numpy as np
import pandas as pd

from bath import SpectralDensity
from config import default_config
from protocol import ProtocolSpec

EXAMPLE_ROOT = "example_inputs"


def create_example_inputs(root: str = EXAMPLE_ROOT):
    if not os.path.exists(root):
        os.makedirs(root)

    # Tabulated drive: the sinh a=3 protocol sampled on 201 points
    spec = ProtocolSpec(family="sinh", delta=1.0, tau=2.0, a=3.0)
    times = spec.grid(201)
    protocol_path = os.path.join(root, "sinh_a3_protocol.csv")
    pd.DataFrame({"t": times, "q": spec.q(times)}).to_csv(protocol_path, index=False)
    print(f"Created: {protocol_path}")

    # Custom spectral density: the reference underdamped bath tabulated on [0.01, 6]
    J = SpectralDensity.underdamped(omega0=1.0, gamma=0.1, lam=0.1)
    omegas = np.linspace(0.01, 6.0, 600)
    density_path = os.path.join(root, "underdamped_density.csv")
    pd.DataFrame({"omega": omegas, "J": J(omegas)}).to_csv(density_path, index=False)
    print(f"Created: {density_path}")

    config = default_config()
    config["kind"] = "bound-sweep"
    config["protocol"].update({"family": "tabulated", "samples_csv": protocol_path})
    config["bath"].update({"kind": "custom", "table_csv": density_path})
    config["sweep"]["deltas"] = [1.0]
    config["output"]["path"] = os.path.join("results", "tabulated_bound.csv")
    config_path = os.path.join(root, "tabulated_bound.json")
    with open(config_path, "w") as f:
        json.dump(config, f, indent=2)
    print(f"Created: {config_path}")

    print("\nExample Inputs Created Successfully.")


if __name__ == "__main__":
    create_example_inputs()

import csv
import json
import math

import pytest


COLUMNS = [
    "time", "energy", "kinetic", "gradient", "mass_part", "potential",
    "h_sc_norm", "morawetz_cum", "center_0", "scatter_residual",
]


@pytest.fixture
def diagnostics_csv(tmp_path):
    """A small artifact in the kgflow diagnostics schema (d=1)."""
    path = tmp_path / "diagnostics.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for k in range(12):
            t = 0.5 * k
            energy = 1.25 + 1e-7 * math.sin(k)
            residual = 10.0 ** (-2 - 0.3 * k) if k < 11 else float("nan")
            writer.writerow(
                [
                    repr(float(v))
                    for v in (
                        t, energy, 0.4, 0.5, 0.3, 0.05 + 1e-7 * k,
                        1.1, 0.02 * t, 0.01 * k, residual,
                    )
                ]
            )
    summary = {"schema": 1, "config_hash": "cafecafecafecafe", "pass": True}
    with open(tmp_path / "summary.json", "w") as fh:
        json.dump(summary, fh)
    return path


@pytest.fixture
def stability_summary(tmp_path):
    path = tmp_path / "summary.json"
    payload = {
        "schema": 1,
        "config_hash": "beadbeadbeadbead",
        "pass": True,
        "stability_constant": 1.08,
        "linear_ratio": 1.0,
        "ladder": [
            {"eps_amplitude": 1e-2, "epsilon": 3e-3, "diff_st_norm": 3.2e-3, "ratio": 1.08},
            {"eps_amplitude": 1e-3, "epsilon": 3e-4, "diff_st_norm": 3.1e-4, "ratio": 1.03},
            {"eps_amplitude": 1e-4, "epsilon": 3e-5, "diff_st_norm": 3.0e-5, "ratio": 1.01},
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return path


@pytest.fixture
def decomposition_json(tmp_path):
    path = tmp_path / "decomposition.json"
    payload = {
        "schema": 1,
        "config_hash": "feedfeedfeedfeed",
        "k": 2,
        "saturated": False,
        "profiles": [
            {"ladder_index": 0, "scale": 1.0, "shift": [-8.002], "l2_mass": 1.34, "witness": 0.52},
            {"ladder_index": 2, "scale": 0.25, "shift": [8.001], "l2_mass": 1.07, "witness": 0.28},
        ],
        "decoupling_defect": [0.057, 0.004, 0.0001],
        "ground_truth": [
            {"scale": 1.0, "shift": [-8.0]},
            {"scale": 0.25, "shift": [8.0]},
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return path

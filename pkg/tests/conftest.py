import copy
import json

import pytest

from fmfsdm.scenario import scenario_from_dict, scenarios_dir

SHIPPED = scenarios_dir()


def toy_dict(**changes):
    """Three-mode (two-group) link with one classical carrier."""
    d = {
        "name": "toy",
        "fiber": {"length": 100.0, "groups": 2, "intra_group_rate": 0.5,
                  "inter_group_d": {"1-2": 1e-3}, "attenuation_db_per_km": 2.0},
        "mux": {"insertion_loss_db": -1.0, "group_crosstalk_db": [[None, -20.0], [-20.0, None]]},
        "demux": {"insertion_loss_db": -1.0},
        "wdm_filters": [{"center": 1540, "bandwidth": 1.0, "passband_loss_db": -0.5, "extinction_db": 60.0}],
        "detectors": {"herald": {"efficiency": 0.8, "dark_rate": 2000.0},
                      "idler": {"efficiency": 0.5, "dark_rate": 500.0}},
        "channels": [
            {"kind": "quantum", "mode": "HG00", "wavelength": 1540, "pair_rate": 20000.0},
            {"kind": "quantum", "mode": "HG10", "wavelength": 1540, "pair_rate": 10000.0},
            {"kind": "classical", "mode": "HG01", "wavelength": 1565, "power": 1e-6},
        ],
        "counting": {"pair_rate_in": 8000.0, "window": 4e-9, "acquisition": 1.0, "repetitions": 20, "seed": 3},
    }
    d = copy.deepcopy(d)
    for path, value in changes.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return d


@pytest.fixture
def toy():
    return scenario_from_dict(toy_dict())


@pytest.fixture(scope="session")
def link_dict():
    return json.loads((SHIPPED / "link_8km.json").read_text())


@pytest.fixture(scope="session")
def coex_dict():
    return json.loads((SHIPPED / "coexistence_8km.json").read_text())

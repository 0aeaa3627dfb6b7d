import json

import jsonschema
import pytest

from conftest import SHIPPED, toy_dict
from fmfsdm.errors import ScenarioError
from fmfsdm.scenario import (
    apply_overrides,
    load_schema,
    load_scenario,
    scenario_from_dict,
    scenario_hash,
    scenario_to_dict,
    validate_scenario,
)


@pytest.mark.parametrize("name", ["b2b_40m.json", "link_8km.json", "coexistence_8km.json"])
def test_shipped_scenarios_validate(name):
    raw = json.loads((SHIPPED / name).read_text())
    jsonschema.validate(raw, load_schema())
    s = load_scenario(SHIPPED / name)
    assert s.fiber.mode_count == 15
    assert s.notes


def test_positive_loss_flag_negates():
    s = load_scenario(SHIPPED / "link_8km.json")
    assert set(s.devices.mux.insertion_loss_db) == {-4.2}


def test_roundtrip_through_dict():
    s = scenario_from_dict(toy_dict())
    again = scenario_from_dict(scenario_to_dict(s))
    assert again == s
    assert scenario_hash(again) == scenario_hash(s)


def test_validate_is_idempotent(toy):
    again = validate_scenario(toy.plan, toy.fiber, toy.devices, toy.counting,
                              reference_length=toy.reference_length, sweep_powers=toy.sweep_powers,
                              monitor=toy.monitor, calibration=toy.calibration, name=toy.name, notes=toy.notes)
    assert again == toy


def test_all_violations_reported():
    d = toy_dict()
    d["channels"].append({"kind": "quantum", "mode": "HG00", "wavelength": 1540, "pair_rate": 1.0})
    d["channels"].append({"kind": "quantum", "mode": "HG30", "wavelength": 1540, "pair_rate": 1.0})
    d["channels"].append({"kind": "quantum", "mode": "HG01", "wavelength": 1550, "pair_rate": 1.0})
    d["mux"]["wavelength_range"] = [1530, 1560]
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(d)
    text = " | ".join(info.value.violations)
    assert "duplicate" in text
    assert "not supported" in text or "not guided" in text
    assert "outside the mux validity" in text
    assert "no WDM filter" in text
    assert "share one wavelength" in text


def test_schema_errors_are_listed():
    d = toy_dict()
    del d["fiber"]
    d["counting"]["bogus"] = 1
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(d)
    assert len(info.value.violations) == 2


def test_mode_count_mismatch():
    d = toy_dict()
    d["mux"]["insertion_loss_db"] = [-1.0] * 6
    d["mux"].pop("group_crosstalk_db")
    with pytest.raises(ScenarioError, match="6 entries"):
        scenario_from_dict(d)


def test_overrides():
    d = apply_overrides(toy_dict(), {"counting.seed": 9, "fiber.length": 40.0, "sweep.output_powers": [1e-9]})
    s = scenario_from_dict(d)
    assert s.counting.seed == 9 and s.fiber.length == 40.0 and s.sweep_powers == (1e-9,)


def test_hash_changes_with_content():
    a = scenario_from_dict(toy_dict())
    b = scenario_from_dict(toy_dict(counting__seed=4))
    assert scenario_hash(a) != scenario_hash(b)

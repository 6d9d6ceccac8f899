import json
import math
from pathlib import Path

import pytest

from core.errors import ConfigParseError, ConfigValidationError
from core.geometry import layout_to_json
from utils.config_loader import config_hash, default_config, load_config, parse_config

REFERENCE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "four_rail.json"


def _problems(document):
    with pytest.raises(ConfigValidationError) as info:
        parse_config(document)
    return info.value.problems


def test_reference_document_matches_defaults():
    config = load_config(REFERENCE_CONFIG)
    assert config == default_config()
    assert config_hash(config) == config_hash(default_config())


def test_reference_document_builds_core_types(trap_layout):
    config = load_config(REFERENCE_CONFIG)
    drive = config.drive_state()
    assert drive.V_rf == 200.0
    assert drive.Omega == pytest.approx(2.0 * math.pi * 22e6)
    assert drive.dc_voltages == {"dc_neg": -8.4, "dc_pos": 6.0}
    assert config.build_layout().electrodes == trap_layout.electrodes
    assert config.target().final_vce == 100.0
    assert config.heating_model().rate_at_reference == 3.1
    spec = config.sweep_spec()
    assert spec.N_values == (2.5, 5.0, 10.0)
    assert spec.T_grid[0] == pytest.approx(1e-4)
    assert len(spec.T_grid) == 10
    assert spec.scenario.settings.steps_per_period == 200


def test_round_trip_is_stable():
    config = default_config()
    again = parse_config(json.dumps(config.to_dict()))
    assert again == config
    assert config_hash(again) == config_hash(config)


def test_hash_tracks_content():
    base = default_config().to_dict()
    changed = json.loads(json.dumps(base))
    changed["protocol"]["N"] = 5.0
    assert config_hash(parse_config(changed)) != config_hash(parse_config(base))


def test_species_is_required():
    assert "ion.mass_amu: required" in _problems({"ion": {"charge_e": 1}})
    assert "ion.charge_e: required" in _problems({"ion": {"mass_amu": 202}})


def test_voltage_limit_rejected():
    problems = _problems({"ion": {"mass_amu": 202, "charge_e": 1}, "drive": {"V_rf": 600.0}})
    assert problems == ["drive.V_rf: 600.0 V exceeds the 500.0 V limit"]


def test_every_problem_is_reported():
    problems = _problems({
        "ion": {"mass_amu": -1, "charge_e": 1},
        "protocol": {"kind": "cubic", "N": 0, "colour": "red"},
        "sweep": {"T_ms": [0.2, 0.1]},
        "extras": {},
    })
    assert "extras: unknown section" in problems
    assert "protocol.colour: unknown key" in problems
    assert "ion.mass_amu: must be > 0" in problems
    assert "protocol.N: must be > 0" in problems
    assert "sweep.T_ms: must be strictly ascending" in problems
    assert any(p.startswith("protocol.kind: must be one of") for p in problems)


def test_type_errors_name_the_path():
    problems = _problems({"ion": {"mass_amu": "heavy", "charge_e": 1},
                          "integrator": {"steps_per_period": 250.5}})
    assert any(p.startswith("ion.mass_amu: expected a number") for p in problems)
    assert "integrator.steps_per_period: expected an integer, got 250.5" in problems


def test_malformed_documents():
    with pytest.raises(ConfigParseError):
        parse_config("{ not json")
    with pytest.raises(ConfigParseError):
        parse_config("[1, 2]")
    with pytest.raises(ConfigParseError):
        load_config(Path("no/such/config.json"))


def test_explicit_electrode_layout(trap_layout):
    entries = json.loads(layout_to_json(trap_layout))["electrodes"]
    config = parse_config({"ion": {"mass_amu": 202, "charge_e": 1}, "layout": {"electrodes": entries}})
    assert config.build_layout().electrodes == trap_layout.electrodes
    assert parse_config(config.to_dict()) == config


def test_overlapping_electrodes_rejected():
    entries = [
        {"id": "a", "role": "dc_segment", "x1": 0, "x2": 10, "z1": 0, "z2": 10, "node": "n1"},
        {"id": "b", "role": "dc_segment", "x1": 5, "x2": 15, "z1": 5, "z2": 15, "node": "n2"},
    ]
    problems = _problems({"ion": {"mass_amu": 202, "charge_e": 1}, "layout": {"electrodes": entries}})
    assert any(p.startswith("layout.electrodes:") and "overlap" in p for p in problems)

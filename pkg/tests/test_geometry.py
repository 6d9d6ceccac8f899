import json

import pytest

from core.errors import InvalidParamsError
from core.geometry import (DC_NEG_NODE, DC_POS_NODE, Electrode, ElectrodeRole, LayoutParams,
                           TrapLayout, build_four_rail_trap, layout_from_json, layout_to_json,
                           load_layout, save_layout, validate_layout)


def test_four_rail_trap_electrodes_and_nodes(trap_layout):
    ids = [e.id for e in trap_layout.electrodes]
    assert ids[:3] == ["rf_left", "ce", "rf_right"]
    assert len(ids) == 3 + 2 * 3
    assert set(trap_layout.nodes()) == {"rf", "ce", DC_POS_NODE, DC_NEG_NODE}
    assert trap_layout.voltage_nodes["dc_left_1"] == DC_NEG_NODE
    assert trap_layout.voltage_nodes["dc_right_0"] == DC_POS_NODE
    assert trap_layout.voltage_nodes["dc_right_2"] == DC_POS_NODE


def test_four_rail_trap_dimensions(trap_layout):
    rf_left = next(e for e in trap_layout.electrodes if e.id == "rf_left")
    ce = next(e for e in trap_layout.electrodes if e.id == "ce")
    assert (ce.x1, ce.x2) == (-42.5, 42.5)
    assert (rf_left.x1, rf_left.x2) == (-342.5, -42.5)
    assert rf_left.z2 - rf_left.z1 == pytest.approx(12000.0)
    middle = next(e for e in trap_layout.electrodes if e.id == "dc_right_1")
    assert (middle.z1, middle.z2) == pytest.approx((-155.0, 155.0))
    assert (middle.x1, middle.x2) == pytest.approx((342.5, 1042.5))


def test_four_rail_trap_is_sound_and_symmetric(trap_layout):
    assert validate_layout(trap_layout) == []
    assert trap_layout.is_mirror_symmetric("x")
    assert trap_layout.is_mirror_symmetric("z")


def test_node_roles(trap_layout):
    assert trap_layout.node_role("rf") is ElectrodeRole.RF_RAIL
    assert trap_layout.node_role("ce") is ElectrodeRole.CENTRAL_RF
    assert trap_layout.node_role(DC_NEG_NODE) is ElectrodeRole.DC_SEGMENT
    assert len(trap_layout.electrodes_of("rf")) == 2


def test_extra_segments_alternate_outward():
    layout = build_four_rail_trap(LayoutParams(dc_segment_count=5))
    nodes = [layout.voltage_nodes[f"dc_left_{k}"] for k in range(5)]
    assert nodes == ["dc_2", DC_POS_NODE, DC_NEG_NODE, DC_POS_NODE, "dc_2"]


@pytest.mark.parametrize("params", [
    LayoutParams(rf_width=0.0),
    LayoutParams(central_width=-1.0),
    LayoutParams(dc_segment_count=2),
    LayoutParams(dc_segment_width=310.0, rail_length=900.0),
])
def test_invalid_params_rejected(params):
    with pytest.raises(InvalidParamsError):
        build_four_rail_trap(params)


def test_short_rails_remain_valid():
    layout = build_four_rail_trap(LayoutParams(rail_length=3000.0))
    assert validate_layout(layout) == []


def test_overlap_is_reported():
    layout = TrapLayout(
        electrodes=(Electrode("a", ElectrodeRole.DC_SEGMENT, 0.0, 10.0, 0.0, 10.0),
                    Electrode("b", ElectrodeRole.DC_SEGMENT, 5.0, 15.0, 5.0, 15.0)),
        voltage_nodes={"a": "n1", "b": "n2"},
    )
    assert any("overlap" in d for d in validate_layout(layout))


def test_same_node_overlap_is_allowed():
    layout = TrapLayout(
        electrodes=(Electrode("a", ElectrodeRole.DC_SEGMENT, 0.0, 10.0, 0.0, 10.0),
                    Electrode("b", ElectrodeRole.DC_SEGMENT, 5.0, 15.0, 5.0, 15.0)),
        voltage_nodes={"a": "n1", "b": "n1"},
    )
    assert validate_layout(layout) == []


def test_diagnostics_collect_every_problem():
    layout = TrapLayout(
        electrodes=(Electrode("a", ElectrodeRole.DC_SEGMENT, 0.0, 10.0, 0.0, 10.0),
                    Electrode("a", ElectrodeRole.DC_SEGMENT, 20.0, 30.0, 0.0, 10.0),
                    Electrode("flat", ElectrodeRole.GROUND, 40.0, 40.0, 0.0, 10.0)),
        voltage_nodes={"a": "n1", "ghost": "n2"},
    )
    problems = validate_layout(layout)
    assert "duplicate electrode id a" in problems
    assert any(p.startswith("degenerate electrode flat") for p in problems)
    assert "electrode flat is not assigned to a voltage node" in problems
    assert "voltage node entry for unknown electrode ghost" in problems


def test_asymmetric_layout_flagged_symmetric():
    layout = TrapLayout(
        electrodes=(Electrode("a", ElectrodeRole.DC_SEGMENT, 0.0, 10.0, 0.0, 10.0),),
        voltage_nodes={"a": "n1"},
        symmetric=True,
    )
    assert any("mirror-symmetric" in d for d in validate_layout(layout))


def test_mirrored_electrode():
    e = Electrode("a", ElectrodeRole.DC_SEGMENT, 1.0, 3.0, -2.0, 5.0)
    assert e.reflected("x") == Electrode("a", ElectrodeRole.DC_SEGMENT, -3.0, -1.0, -2.0, 5.0)
    assert e.reflected("z") == Electrode("a", ElectrodeRole.DC_SEGMENT, 1.0, 3.0, -5.0, 2.0)
    assert e.area == pytest.approx(14.0)


def test_json_field_order(trap_layout):
    document = json.loads(layout_to_json(trap_layout))
    assert list(document["electrodes"][0]) == ["id", "role", "x1", "x2", "z1", "z2", "node"]
    assert document["electrodes"][1]["node"] == "ce"


def test_json_reload(trap_layout, tmp_path):
    path = save_layout(trap_layout, tmp_path / "layout.json")
    loaded = load_layout(path)
    assert loaded.electrodes == trap_layout.electrodes
    assert dict(loaded.voltage_nodes) == dict(trap_layout.voltage_nodes)
    assert layout_from_json(layout_to_json(loaded)).electrodes == loaded.electrodes

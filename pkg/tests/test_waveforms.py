import numpy as np
import pytest

from core.errors import InvalidProtocolError, UnreachableTargetError, VoltageLimitError
from core.fields import EffectivePotential, FieldPoint
from core.trap_analysis import find_minimum
from core.waveforms import (DcSchedule, Shaping, ShuttleTarget, TrajectoryKind, VoltageRamp,
                            build_protocol, compensate_dc, plan_shuttle_path, ramp_voltage,
                            resolve_final_vce, trajectory_position)

from tests.conftest import nil_height

T = 0.5e-3


@pytest.fixture(scope="module")
def path(trap_layout, trap_drive, hg):
    return plan_shuttle_path(trap_layout, trap_drive, hg, 100.0, knots=9)


@pytest.fixture(scope="module")
def protocol(trap_layout, trap_drive, hg, path):
    return build_protocol(trap_layout, trap_drive, hg, ShuttleTarget(final_vce=100.0), T, 2.5, path=path)


@pytest.mark.parametrize("kind", list(TrajectoryKind))
def test_trajectory_endpoints_and_midpoint(kind):
    L = 44.0
    assert trajectory_position(kind, L, T, 2.5, 0.0) == 0.0
    assert trajectory_position(kind, L, T, 2.5, T) == pytest.approx(L, abs=1e-12)
    assert trajectory_position(kind, L, T, 2.5, T / 2.0) == pytest.approx(L / 2.0, abs=1e-12)


def test_trajectory_clamps_outside_window():
    assert trajectory_position("tanh", 10.0, T, 2.5, -1e-3) == 0.0
    assert trajectory_position("tanh", 10.0, T, 2.5, 2 * T) == 10.0


def test_tanh_is_monotonic_and_steepens_with_n():
    t = np.linspace(0.0, T, 501)
    soft = trajectory_position("tanh", 1.0, T, 2.5, t)
    sharp = trajectory_position("tanh", 1.0, T, 10.0, t)
    assert np.all(np.diff(soft) > 0.0)
    slope = lambda s: np.max(np.diff(s))
    assert slope(sharp) > slope(soft)


def test_tanh_small_n_is_linear():
    t = np.linspace(0.0, T, 101)
    s = trajectory_position("tanh", 1.0, T, 1e-3, t)
    assert np.max(np.abs(s - t / T)) < 1e-5


def test_trajectory_rejects_bad_parameters():
    with pytest.raises(InvalidProtocolError):
        trajectory_position("tanh", 1.0, T, 0.0, 0.0)
    with pytest.raises(InvalidProtocolError):
        trajectory_position("linear", 1.0, 0.0, 2.5, 0.0)


def test_ramp_voltage_midpoint_and_bounds():
    r = VoltageRamp(a1=0.0, a2=100.0, tt1=T / 2.0, tau=T / 5.0)
    assert ramp_voltage(r, T / 2.0) == pytest.approx(50.0, abs=1e-12)
    v = ramp_voltage(r, np.linspace(-T, 2 * T, 301))
    assert np.all((v > 0.0) & (v < 100.0))
    assert ramp_voltage(r, -100 * T) == pytest.approx(0.0, abs=1e-9)
    dc = ramp_voltage(VoltageRamp(a1=-8.4, a2=-8.25, tt1=T / 2.0, tau=T / 5.0), np.linspace(0.0, T, 101))
    assert np.all((dc >= -8.4) & (dc <= -8.25))
    with pytest.raises(InvalidProtocolError):
        VoltageRamp(0.0, 1.0, 0.0, 0.0)


def test_compensation_voltage(trap_layout, trap_drive, hg):
    at_rest = compensate_dc(trap_layout, trap_drive, hg, 0.0)
    shuttled = compensate_dc(trap_layout, trap_drive, hg, 100.0)
    assert at_rest == pytest.approx(-8.39, abs=0.1)
    # gapless rails put the 100 V value at -7.94 V rather than the measured -8.25 V
    assert shuttled == pytest.approx(-7.94, abs=0.1)
    assert shuttled - at_rest == pytest.approx(0.45, abs=0.05)


@pytest.mark.parametrize("v_ce", [0.0, 50.0, 100.0])
def test_compensation_cancels_dc_field_at_minimum(trap_layout, trap_drive, hg, v_ce):
    drive = trap_drive.with_vce(v_ce)
    nil = find_minimum(trap_layout, drive, hg, FieldPoint(0.0, 120.0, 0.0), dims=2, include_dc=False)
    volts = compensate_dc(trap_layout, trap_drive, hg, v_ce)
    field = EffectivePotential(trap_layout, drive.with_dc("dc_neg", volts), hg).dc_field(nil.to_si())
    assert np.linalg.norm(field) < 1e-2


def test_planned_path(path):
    assert path.v_start == 0.0 and path.v_final == 100.0
    assert len(path.vce_knots) == 9
    assert np.all(np.diff(path.heights_um) < 0.0)
    assert path.h_start == pytest.approx(nil_height(0.0), rel=5e-3)
    assert path.h_final == pytest.approx(nil_height(100.0), rel=5e-3)
    assert float(path.height_at(50.0)) == pytest.approx(nil_height(50.0), rel=5e-3)
    assert float(path.vce_for_height(path.height_at(37.0))) == pytest.approx(37.0, abs=0.5)
    assert path.reversed().v_start == 100.0


def test_identity_path(trap_layout, trap_drive, hg):
    path = plan_shuttle_path(trap_layout, trap_drive, hg, 0.0)
    assert path.vce_knots == (0.0,)
    protocol = build_protocol(trap_layout, trap_drive, hg, ShuttleTarget(final_vce=0.0), T, 2.5,
                              path=path)
    assert protocol.is_identity
    assert protocol.L == 0.0
    assert np.all(np.asarray(protocol.vce_at(np.linspace(0.0, T, 11))) == 0.0)


def test_protocol_voltage_schedule(protocol, path):
    assert protocol.vce_at(0.0) == pytest.approx(0.0, abs=1e-12)
    assert protocol.vce_at(T / 2.0) == pytest.approx(50.0, abs=1e-9)
    assert protocol.vce_at(T) == pytest.approx(100.0, abs=1e-9)
    assert protocol.L == pytest.approx(path.h_start - path.h_final)
    assert protocol.dc_at(0.0)["dc_neg"] == pytest.approx(path.dc_knots[0], abs=1e-9)
    assert protocol.dc_at(T)["dc_pos"] == 6.0
    assert protocol.drive_at(T).V_ce == pytest.approx(100.0, abs=1e-9)
    assert protocol.vce_ramp.tau == pytest.approx(T / 5.0)


def test_ramp_dc_schedule(trap_layout, trap_drive, hg, path):
    protocol = build_protocol(trap_layout, trap_drive, hg, ShuttleTarget(final_vce=100.0), T, 2.5,
                              dc_schedule=DcSchedule.RAMP, path=path)
    mid = 0.5 * (path.dc_knots[0] + path.dc_knots[-1])
    assert float(protocol.adjusted_dc_at(T / 2.0)) == pytest.approx(mid, abs=1e-12)


def test_height_shaping(trap_layout, trap_drive, hg, path):
    protocol = build_protocol(trap_layout, trap_drive, hg, ShuttleTarget(final_vce=100.0), T, 2.5,
                              shaping=Shaping.HEIGHT, path=path)
    mid = 0.5 * (path.h_start + path.h_final)
    assert float(protocol.height_at(T / 2.0)) == pytest.approx(mid, abs=0.5)


def test_reversed_and_shifted(protocol):
    back = protocol.reversed()
    assert back.vce_at(0.0) == pytest.approx(100.0, abs=1e-9)
    assert back.vce_at(T) == pytest.approx(0.0, abs=1e-9)
    later = protocol.shifted(1e-3)
    assert later.t_end == pytest.approx(1e-3 + T)
    assert later.vce_at(1e-3 + T / 2.0) == pytest.approx(50.0, abs=1e-9)
    assert later.vce_at(0.0) == pytest.approx(0.0, abs=1e-12)


def test_voltage_table(protocol):
    header, rows = protocol.voltage_table(1e6)
    assert header[:3] == ["t_s", "V_rf_V", "V_ce_V"]
    assert header[3:] == ["V_dc_pos_V", "V_dc_neg_V"]
    assert len(rows) == 501
    assert rows[0][0] == 0.0 and rows[-1][0] == pytest.approx(T)
    assert all(row[1] == 200.0 for row in rows)


def test_voltage_limit_enforced(trap_layout, trap_drive, hg):
    with pytest.raises(VoltageLimitError):
        build_protocol(trap_layout, trap_drive, hg, ShuttleTarget(final_vce=600.0), T, 2.5)


def test_target_needs_exactly_one_goal():
    with pytest.raises(InvalidProtocolError):
        ShuttleTarget()
    with pytest.raises(InvalidProtocolError):
        ShuttleTarget(final_vce=100.0, distance_um=20.0)


def test_distance_target(trap_layout, trap_drive, hg):
    v = resolve_final_vce(trap_layout, trap_drive, hg, ShuttleTarget(distance_um=20.0))
    assert v == pytest.approx(49.0, abs=1.5)
    with pytest.raises(UnreachableTargetError):
        resolve_final_vce(trap_layout, trap_drive, hg, ShuttleTarget(distance_um=500.0))

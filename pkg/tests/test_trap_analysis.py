import math

import numpy as np
import pytest

from core.errors import NoMinimumError, NotAMinimumError, UnboundedTrapError
from core.fields import DriveState, FieldPoint
from core.trap_analysis import (analyze_trap, curve_rows, find_minimum, grid_search_minimum,
                                height_vs_vce, mathieu_parameters, secular_frequencies, trap_depth)

from tests.conftest import nil_height


def _mhz(omega):
    return omega / (2.0 * math.pi) / 1e6


@pytest.mark.parametrize("v_ce, guess_y", [(0.0, 120.0), (50.0, 100.0), (100.0, 90.0)])
def test_rf_nil_height(trap_layout, dc_off_drive, hg, v_ce, guess_y):
    nil = find_minimum(trap_layout, dc_off_drive.with_vce(v_ce), hg, FieldPoint(0.0, guess_y, 0.0),
                       dims=2, include_dc=False)
    assert nil.y == pytest.approx(nil_height(v_ce), rel=5e-3)
    assert abs(nil.x) < 1e-3


def test_radial_frequencies_without_dc(trap_layout, dc_off_drive, hg):
    expected = {0.0: 1.661, 100.0: 2.583}
    for v_ce, f in expected.items():
        drive = dc_off_drive.with_vce(v_ce)
        nil = find_minimum(trap_layout, drive, hg, FieldPoint(0.0, nil_height(v_ce), 0.0), dims=2)
        freqs = secular_frequencies(trap_layout, drive, hg, nil, dims=2)
        assert [_mhz(w) for w in freqs.radial] == pytest.approx([f, f], rel=0.02)
        assert freqs.axial is None


def test_trap_with_dc_is_three_dimensional(trap_layout, trap_drive, hg):
    tp = analyze_trap(trap_layout, trap_drive, hg, FieldPoint(0.0, 120.0, 0.0), with_depth=False)
    assert tp.ion_height == pytest.approx(nil_height(0.0), rel=0.02)
    assert abs(tp.position.z) < 1e-3
    assert tp.frequencies.axial is not None and tp.frequencies.axial > 0.0
    # radial frequency within the reported band around 1.55 MHz
    assert _mhz(tp.frequencies.vertical) == pytest.approx(1.55, rel=0.15)
    assert abs(tp.frequencies.vertical_axis[1]) > 0.7
    assert tp.mathieu.stable


def test_newton_agrees_with_grid_search(trap_layout, trap_drive, hg):
    guess = FieldPoint(3.0, 115.0, 2.0)
    newton = find_minimum(trap_layout, trap_drive, hg, guess)
    grid = grid_search_minimum(trap_layout, trap_drive, hg, FieldPoint(0.0, 120.0, 0.0))
    distance = math.dist((newton.x, newton.y, newton.z), (grid.x, grid.y, grid.z))
    assert distance < 0.1


def test_mathieu_q_without_dc(trap_layout, dc_off_drive, hg):
    at = FieldPoint(0.0, nil_height(0.0), 0.0)
    params = mathieu_parameters(trap_layout, dc_off_drive, hg, at, dims=2)
    assert sorted(abs(q) for q in params.q) == pytest.approx([0.2135, 0.2135], rel=0.02)
    assert params.a == pytest.approx((0.0, 0.0), abs=1e-12)
    assert params.stable


def test_depth_increases_with_central_voltage(trap_layout, dc_off_drive, hg):
    depths = []
    guess = FieldPoint(0.0, 120.0, 0.0)
    for v_ce in (0.0, 50.0, 100.0):
        drive = dc_off_drive.with_vce(v_ce)
        guess = find_minimum(trap_layout, drive, hg, guess, dims=2, include_dc=False)
        depths.append(trap_depth(trap_layout, drive, hg, guess))
    assert 0.08 < depths[0] < 0.3
    assert depths[0] < depths[1] < depths[2]


def test_depth_scales_with_rf_amplitude_squared(trap_layout, dc_off_drive, hg):
    at = find_minimum(trap_layout, dc_off_drive, hg, FieldPoint(0.0, 120.0, 0.0), dims=2, include_dc=False)
    base = trap_depth(trap_layout, dc_off_drive, hg, at)
    doubled = trap_depth(trap_layout, dc_off_drive.scaled_rf(2.0), hg, at)
    assert doubled == pytest.approx(4.0 * base, rel=1e-3)


def test_height_curve_is_monotonic(trap_layout, trap_drive, hg):
    curve = height_vs_vce(trap_layout, trap_drive, hg, [0.0, 25.0, 50.0, 75.0, 100.0], with_depth=False)
    heights = [p.height_um for p in curve]
    omegas = [p.omega_radial for p in curve]
    assert np.all(np.diff(heights) < 0.0)
    assert np.all(np.diff(omegas) > 0.0)
    assert heights[-1] == pytest.approx(nil_height(100.0), rel=0.02)

    header, rows = curve_rows(curve)
    assert header == ["V_ce_V", "height_um", "omega_radial_MHz", "omega_axial_MHz", "depth_eV"]
    assert rows[0][0] == 0.0 and rows[0][4] == ""
    assert rows[-1][2] == pytest.approx(2.58, rel=0.15)


def test_guess_below_plane_rejected(trap_layout, trap_drive, hg):
    with pytest.raises(NoMinimumError):
        find_minimum(trap_layout, trap_drive, hg, FieldPoint(0.0, -5.0, 0.0))


def test_dc_only_point_is_not_a_minimum(trap_layout, hg):
    drive = DriveState(V_rf=0.0, dc_voltages={"dc_pos": 6.0, "dc_neg": -8.4})
    with pytest.raises(NotAMinimumError):
        secular_frequencies(trap_layout, drive, hg, FieldPoint(0.0, 120.0, 0.0))


def test_depth_without_rf_is_unbounded(trap_layout, hg):
    drive = DriveState(V_rf=0.0, V_ce=0.0, dc_voltages={"dc_neg": -8.4})
    with pytest.raises(UnboundedTrapError):
        trap_depth(trap_layout, drive, hg, FieldPoint(0.0, 120.0, 0.0))

"""
Shared fixtures: the four-rail layout, its drive and the calibrated ion.
"""
import math

import pytest

from core.fields import DriveState, PhysicalConstants
from core.geometry import build_four_rail_trap


@pytest.fixture(scope="session")
def trap_layout():
    return build_four_rail_trap()


@pytest.fixture(scope="session")
def trap_drive():
    return DriveState(V_rf=200.0, V_ce=0.0, Omega=2.0 * math.pi * 22e6,
                      dc_voltages={"dc_pos": 6.0, "dc_neg": -8.4})


@pytest.fixture(scope="session")
def dc_off_drive(trap_drive):
    return trap_drive.without_dc()


@pytest.fixture(scope="session")
def hg():
    return PhysicalConstants.from_species(202.0, 1.0)


def nil_height(v_ce: float, v_rf: float = 200.0, a: float = 42.5, b: float = 342.5) -> float:
    """RF-nil height (um) of infinitely long rails with the central electrode at v_ce."""
    c = 1.0 - v_ce / v_rf
    return math.sqrt(a * b * (c * b - a) / (b - c * a))

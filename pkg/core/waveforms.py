"""
Shuttling schedules: trajectory shapes, tanh voltage ramps, DC compensation
and validated protocols.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from config import COMPENSATION, VOLTAGE_LIMIT
from core.errors import (InvalidProtocolError, NoMinimumError, NoRootError,
                         UnreachableTargetError, VoltageLimitError)
from core.fields import UM, DriveState, EffectivePotential, FieldPoint, PhysicalConstants
from core.geometry import DC_NEG_NODE, DC_POS_NODE, TrapLayout
from core.trap_analysis import find_minimum

logger = logging.getLogger(__name__)

VALIDATION_SAMPLES = 10_000


class TrajectoryKind(str, Enum):
    LINEAR = "linear"
    SINUSOIDAL = "sinusoidal"
    TANH = "tanh"


class Shaping(str, Enum):
    VOLTAGE = "voltage"
    HEIGHT = "height"


class DcSchedule(str, Enum):
    TRACKING = "tracking"
    RAMP = "ramp"


@dataclass(frozen=True)
class VoltageRamp:
    a1: float
    a2: float
    tt1: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidProtocolError(f"ramp steepness tau must be > 0, got {self.tau}")


def trajectory_position(kind, L: float, T_total: float, N: float, t):
    """
    Displacement along the transport direction after time t; clamps to 0
    before the start and to L after T_total. Works on scalars and arrays.
    """
    kind = TrajectoryKind(kind)
    if not T_total > 0:
        raise InvalidProtocolError(f"T_total must be > 0, got {T_total}")
    if kind is TrajectoryKind.TANH and not N > 0:
        raise InvalidProtocolError(f"tanh trajectory needs N > 0, got {N}")

    u = np.clip(np.asarray(t, dtype=float) / T_total, 0.0, 1.0)
    if kind is TrajectoryKind.LINEAR:
        s = u
    elif kind is TrajectoryKind.SINUSOIDAL:
        s = 0.5 * (1.0 - np.cos(math.pi * u))
    else:
        tn = math.tanh(N)
        s = 0.5 * (np.tanh(N * (2.0 * u - 1.0)) + tn) / tn
    out = L * s
    return float(out) if np.ndim(out) == 0 else out


def ramp_voltage(r: VoltageRamp, t):
    v = np.tanh((np.asarray(t, dtype=float) - r.tt1) / r.tau) * (r.a2 - r.a1) / 2.0 + (r.a1 + r.a2) / 2.0
    return float(v) if np.ndim(v) == 0 else v


def _compensation_at(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                     point: FieldPoint, adjust_node: str, bracket: Tuple[float, float],
                     xtol: float) -> float:
    """
    Voltage on adjust_node that removes the vertical and axial DC field at
    point, all other DC nodes held at their drive values.
    """
    base = EffectivePotential(layout, drive.with_dc(adjust_node, 0.0), consts)
    unit = EffectivePotential(layout, DriveState(V_rf=0.0, V_ce=0.0, Omega=drive.Omega,
                                                 dc_voltages={adjust_node: 1.0}), consts)
    r = point.to_si()
    e_base = base.dc_field(r)[1:]
    e_unit = unit.dc_field(r)[1:]

    def residual(v):
        return float(e_unit @ (e_base + v * e_unit))

    lo, hi = bracket
    if residual(lo) * residual(hi) > 0:
        raise NoRootError(
            f"DC field residual does not change sign over [{lo}, {hi}] V at y={point.y:.2f} um"
        )
    v = brentq(residual, lo, hi, xtol=xtol)
    logger.debug(f"Compensation at y={point.y:.3f} um: {adjust_node}={v:.5f} V")
    return float(v)


def compensate_dc(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants, V_ce: float,
                  guess: Optional[FieldPoint] = None, adjust_node: str = COMPENSATION["adjust_node"],
                  bracket: Tuple[float, float] = COMPENSATION["bracket"],
                  xtol: float = COMPENSATION["xtol"]) -> float:
    """Compensating voltage for adjust_node at the pseudopotential minimum for this V_ce."""
    guess = guess or FieldPoint(0.0, 120.0, 0.0)
    drive_v = drive.with_vce(V_ce)
    nil = find_minimum(layout, drive_v, consts, guess, dims=2, include_dc=False)
    return _compensation_at(layout, drive_v, consts, nil, adjust_node, bracket, xtol)


@dataclass(frozen=True)
class ShuttlePath:
    """Quasi-static path: V_ce knots with RF-nil heights and compensating DC."""
    vce_knots: Tuple[float, ...]
    heights_um: Tuple[float, ...]
    dc_knots: Tuple[float, ...]
    adjust_node: str
    z_um: float = 0.0

    @property
    def v_start(self) -> float:
        return self.vce_knots[0]

    @property
    def v_final(self) -> float:
        return self.vce_knots[-1]

    @property
    def h_start(self) -> float:
        return self.heights_um[0]

    @property
    def h_final(self) -> float:
        return self.heights_um[-1]

    def _interp(self, values):
        order = np.argsort(self.vce_knots)
        return PchipInterpolator(np.asarray(self.vce_knots)[order], np.asarray(values)[order])

    @cached_property
    def _height_of_v(self):
        return self._interp(self.heights_um) if len(self.vce_knots) > 1 else None

    @cached_property
    def _dc_of_v(self):
        return self._interp(self.dc_knots) if len(self.vce_knots) > 1 else None

    @cached_property
    def _v_of_height(self):
        if len(self.vce_knots) < 2:
            return None
        order = np.argsort(self.heights_um)
        return PchipInterpolator(np.asarray(self.heights_um)[order],
                                 np.asarray(self.vce_knots)[order])

    def height_at(self, v_ce):
        if self._height_of_v is None:
            return np.full_like(np.asarray(v_ce, dtype=float), self.heights_um[0])
        return self._height_of_v(v_ce)

    def dc_at(self, v_ce):
        if self._dc_of_v is None:
            return np.full_like(np.asarray(v_ce, dtype=float), self.dc_knots[0])
        return self._dc_of_v(v_ce)

    def vce_for_height(self, h_um):
        if self._v_of_height is None:
            return np.full_like(np.asarray(h_um, dtype=float), self.vce_knots[0])
        return self._v_of_height(h_um)

    def reversed(self) -> "ShuttlePath":
        return replace(self, vce_knots=self.vce_knots[::-1], heights_um=self.heights_um[::-1],
                       dc_knots=self.dc_knots[::-1])


def plan_shuttle_path(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                      v_final: float, knots: int = COMPENSATION["knots"],
                      guess: Optional[FieldPoint] = None, threads: int = 1,
                      adjust_node: str = COMPENSATION["adjust_node"]) -> ShuttlePath:
    """
    Follow the RF nil from drive.V_ce to v_final by continuation and solve the
    DC compensation at each knot (in parallel when threads > 1).
    """
    v_start = drive.V_ce
    for name, v in (("V_ce start", v_start), ("V_ce final", v_final)):
        if abs(v) > VOLTAGE_LIMIT:
            raise VoltageLimitError(f"{name}={v} V exceeds the {VOLTAGE_LIMIT} V limit")

    if v_final == v_start:
        vces = [float(v_start)]
    else:
        vces = [float(v) for v in np.linspace(v_start, v_final, knots)]

    guess = guess or FieldPoint(0.0, 120.0, 0.0)
    nils: List[FieldPoint] = []
    for v in vces:
        try:
            nil = find_minimum(layout, drive.with_vce(v), consts, guess, dims=2, include_dc=False)
        except NoMinimumError as e:
            raise UnreachableTargetError(f"no trapping minimum at V_ce={v:.3f} V: {e}") from e
        nils.append(nil)
        guess = nil

    def solve(item):
        v, nil = item
        return _compensation_at(layout, drive.with_vce(v), consts, nil, adjust_node,
                                COMPENSATION["bracket"], COMPENSATION["xtol"])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            dc = list(pool.map(solve, zip(vces, nils)))
    else:
        dc = [solve(item) for item in zip(vces, nils)]

    path = ShuttlePath(
        vce_knots=tuple(vces),
        heights_um=tuple(p.y for p in nils),
        dc_knots=tuple(dc),
        adjust_node=adjust_node,
        z_um=nils[0].z,
    )
    logger.info(f"Shuttle path planned: V_ce {v_start}->{v_final} V, "
                f"h {path.h_start:.2f}->{path.h_final:.2f} um, "
                f"{adjust_node} {dc[0]:.4f}->{dc[-1]:.4f} V")
    return path


@dataclass(frozen=True)
class ShuttleTarget:
    """Either a final central-electrode voltage or a transport distance (um)."""
    final_vce: Optional[float] = None
    distance_um: Optional[float] = None

    def __post_init__(self):
        if (self.final_vce is None) == (self.distance_um is None):
            raise InvalidProtocolError("target needs exactly one of final_vce or distance_um")


def _vce_for_distance(layout, drive, consts, distance_um: float) -> float:
    if not distance_um > 0:
        raise InvalidProtocolError(f"transport distance must be > 0, got {distance_um}")
    start = find_minimum(layout, drive, consts, FieldPoint(0.0, 120.0, 0.0), dims=2, include_dc=False)
    if distance_um >= start.y:
        raise UnreachableTargetError(
            f"distance {distance_um} um exceeds the starting height {start.y:.2f} um"
        )
    v_max = min(VOLTAGE_LIMIT, drive.V_rf)

    def gap(v):
        try:
            nil = find_minimum(layout, drive.with_vce(v), consts, start, dims=2, include_dc=False)
        except NoMinimumError:
            # nil has merged with the trap plane
            return start.y - distance_um
        return (start.y - nil.y) - distance_um

    if gap(v_max) < 0:
        raise UnreachableTargetError(
            f"distance {distance_um} um not reachable below V_ce={v_max} V"
        )
    return float(brentq(gap, drive.V_ce, v_max, xtol=1e-6))


def resolve_final_vce(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                      target: ShuttleTarget) -> float:
    if target.final_vce is not None:
        v_final = float(target.final_vce)
        if abs(v_final) > VOLTAGE_LIMIT:
            raise VoltageLimitError(f"final V_ce={v_final} V exceeds the {VOLTAGE_LIMIT} V limit")
        return v_final
    return _vce_for_distance(layout, drive, consts, target.distance_um)


@dataclass(frozen=True)
class ShuttleProtocol:
    """Voltage schedule on [t_start, t_start + T_total]; frozen outside it."""
    kind: TrajectoryKind
    L: float
    T_total: float
    N: float
    vce_ramp: VoltageRamp
    dc_ramp: VoltageRamp
    drive: DriveState
    consts: PhysicalConstants
    layout: TrapLayout
    path: ShuttlePath
    shaping: Shaping = Shaping.VOLTAGE
    dc_schedule: DcSchedule = DcSchedule.TRACKING
    t_start: float = 0.0

    @property
    def t_end(self) -> float:
        return self.t_start + self.T_total

    @property
    def is_identity(self) -> bool:
        return self.path.v_start == self.path.v_final

    def progress(self, t):
        """Fraction of the transport covered at time t (0 before, 1 after)."""
        return trajectory_position(self.kind, 1.0, self.T_total, self.N,
                                   np.asarray(t, dtype=float) - self.t_start)

    def vce_at(self, t):
        s = self.progress(t)
        if self.is_identity:
            return np.full_like(np.asarray(s, dtype=float), self.path.v_start) + 0.0
        if self.shaping is Shaping.VOLTAGE:
            return self.path.v_start + (self.path.v_final - self.path.v_start) * s
        h = self.path.h_start - (self.path.h_start - self.path.h_final) * np.asarray(s)
        return self.path.vce_for_height(h)

    def adjusted_dc_at(self, t):
        if self.dc_schedule is DcSchedule.RAMP:
            return ramp_voltage(self.dc_ramp, t)
        return self.path.dc_at(self.vce_at(t))

    def dc_at(self, t) -> Dict[str, float]:
        volts = dict(self.drive.dc_voltages)
        volts[self.path.adjust_node] = float(self.adjusted_dc_at(t))
        return volts

    def drive_at(self, t: float) -> DriveState:
        return replace(self.drive, V_ce=float(self.vce_at(t)), dc_voltages=self.dc_at(t))

    def height_at(self, t):
        """Height of the instantaneous RF nil (um)."""
        return self.path.height_at(self.vce_at(t))

    def validate(self, samples: int = VALIDATION_SAMPLES) -> None:
        t = np.linspace(self.t_start, self.t_end, samples)
        traces = {"V_rf": np.full_like(t, self.drive.V_rf), "V_ce": np.asarray(self.vce_at(t))}
        adjusted = np.asarray(self.adjusted_dc_at(t))
        for node, v in self.drive.dc_voltages.items():
            traces[node] = np.full_like(t, v)
        traces[self.path.adjust_node] = adjusted
        for name, trace in traces.items():
            peak = float(np.max(np.abs(trace)))
            if peak > VOLTAGE_LIMIT:
                raise VoltageLimitError(f"{name} reaches {peak:.2f} V, above the {VOLTAGE_LIMIT} V limit")

    def voltage_table(self, rate_hz: float) -> Tuple[List[str], List[list]]:
        n = max(int(math.floor(self.T_total * rate_hz + 1e-9)) + 1, 2)
        t = self.t_start + np.arange(n) / rate_hz
        vce = np.asarray(self.vce_at(t))
        adjusted = np.asarray(self.adjusted_dc_at(t))
        present = set(self.drive.dc_voltages) | {self.path.adjust_node}
        nodes = [n for n in (DC_POS_NODE, DC_NEG_NODE) if n in present]
        nodes += sorted(present - set(nodes))
        header = ["t_s", "V_rf_V", "V_ce_V"] + [f"V_{node}_V" for node in nodes]
        columns = [t, np.full_like(t, self.drive.V_rf), vce]
        for node in nodes:
            columns.append(adjusted if node == self.path.adjust_node
                           else np.full_like(t, self.drive.dc_voltages[node]))
        rows = [list(map(float, r)) for r in zip(*columns)]
        return header, rows

    def reversed(self) -> "ShuttleProtocol":
        """Same schedule run backwards in time."""
        path = self.path.reversed()
        drive = replace(self.drive, V_ce=path.v_start,
                        dc_voltages={**self.drive.dc_voltages, path.adjust_node: path.dc_knots[0]})
        dc_ramp = VoltageRamp(self.dc_ramp.a2, self.dc_ramp.a1,
                              2.0 * self.t_start + self.T_total - self.dc_ramp.tt1, self.dc_ramp.tau)
        vce_ramp = VoltageRamp(self.vce_ramp.a2, self.vce_ramp.a1, self.vce_ramp.tt1, self.vce_ramp.tau)
        return replace(self, path=path, drive=drive, dc_ramp=dc_ramp, vce_ramp=vce_ramp)

    def shifted(self, t0: float) -> "ShuttleProtocol":
        dt = t0 - self.t_start
        return replace(
            self,
            t_start=t0,
            vce_ramp=replace(self.vce_ramp, tt1=self.vce_ramp.tt1 + dt),
            dc_ramp=replace(self.dc_ramp, tt1=self.dc_ramp.tt1 + dt),
        )


def build_protocol(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                   target: ShuttleTarget, T_total: float, N: float,
                   kind=TrajectoryKind.TANH, shaping=Shaping.VOLTAGE,
                   dc_schedule=DcSchedule.TRACKING, path: Optional[ShuttlePath] = None,
                   threads: int = 1) -> ShuttleProtocol:
    kind = TrajectoryKind(kind)
    shaping = Shaping(shaping)
    dc_schedule = DcSchedule(dc_schedule)
    if not T_total > 0:
        raise InvalidProtocolError(f"T_total must be > 0, got {T_total}")
    if kind is TrajectoryKind.TANH and not N > 0:
        raise InvalidProtocolError(f"tanh trajectory needs N > 0, got {N}")
    drive.validate(layout)

    v_final = resolve_final_vce(layout, drive, consts, target)

    if path is None or path.v_start != drive.V_ce or path.v_final != v_final:
        path = plan_shuttle_path(layout, drive, consts, v_final, threads=threads)

    adjust = path.adjust_node
    start_drive = drive.with_dc(adjust, path.dc_knots[0])
    tau = T_total / (2.0 * N) if N > 0 else T_total / 5.0
    vce_ramp = VoltageRamp(path.v_start, path.v_final, T_total / 2.0, tau)
    dc_ramp = VoltageRamp(path.dc_knots[0], path.dc_knots[-1], T_total / 2.0, tau)

    protocol = ShuttleProtocol(
        kind=kind,
        L=path.h_start - path.h_final,
        T_total=T_total,
        N=N,
        vce_ramp=vce_ramp,
        dc_ramp=dc_ramp,
        drive=start_drive,
        consts=consts,
        layout=layout,
        path=path,
        shaping=shaping,
        dc_schedule=dc_schedule,
    )
    protocol.validate()
    logger.info(f"Protocol built: {kind.value} N={N} T={T_total * 1e3:.4f} ms, "
                f"V_ce {path.v_start}->{path.v_final} V, L={protocol.L:.2f} um")
    return protocol

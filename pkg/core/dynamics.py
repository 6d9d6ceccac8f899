"""
Classical ion motion under a shuttling protocol and the motional quanta it
leaves behind.

Two force evaluators share one fixed-step RK4 scheme:
- the general 3-D evaluator uses the analytic field engine at every stage;
- the axial evaluator applies when the layout is mirror-symmetric in x and z
  and the ion starts on the symmetry axis with no transverse velocity. The
  motion then stays on the axis and on-axis basis derivatives are tabulated
  once per path.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import constants
from scipy.ndimage import uniform_filter1d

from config import INTEGRATOR_SETTINGS
from core.errors import (DomainError, InvalidProtocolError, IonLostError,
                         MissingWindowError, StepFailureError)
from core.fields import (UM, DriveState, EffectivePotential, FieldPoint, PhysicalConstants,
                         layout_field, resolve_node_voltages)
from core.geometry import ElectrodeRole, TrapLayout
from core.trap_analysis import TrapPoint, analyze_trap
from core.waveforms import (ShuttlePath, ShuttleProtocol, ShuttleTarget, TrajectoryKind,
                            build_protocol, plan_shuttle_path, resolve_final_vce)

logger = logging.getLogger(__name__)

_TWO_PI = 2.0 * math.pi
LOST_DISTANCE_FACTOR = 5.0


class SimulationMode(str, Enum):
    PSEUDOPOTENTIAL = "pseudopotential"
    FULL_RF = "full_rf"


class ExcitationMeasure(str, Enum):
    PEAK = "peak"
    RESIDUAL = "residual"


class ForceModel(str, Enum):
    AUTO = "auto"
    FULL = "full"
    AXIAL = "axial"


@dataclass(frozen=True)
class IntegratorSettings:
    steps_per_period: int = INTEGRATOR_SETTINGS["steps_per_period"]
    steps_per_rf_period: int = INTEGRATOR_SETTINGS["steps_per_rf_period"]
    post_periods: float = INTEGRATOR_SETTINGS["post_periods"]
    pre_periods: float = INTEGRATOR_SETTINGS["pre_periods"]
    self_test: bool = INTEGRATOR_SETTINGS["self_test"]
    self_test_periods: float = INTEGRATOR_SETTINGS["self_test_periods"]
    energy_drift_bound: float = INTEGRATOR_SETTINGS["energy_drift_bound"]
    axial_table_step_um: float = INTEGRATOR_SETTINGS["axial_table_step_um"]
    force_model: ForceModel = ForceModel(INTEGRATOR_SETTINGS["force_model"])
    record_every: int = 1

    def __post_init__(self):
        if self.steps_per_period < 200:
            raise InvalidProtocolError("steps_per_period must be >= 200")
        if self.steps_per_rf_period < 100:
            raise InvalidProtocolError("steps_per_rf_period must be >= 100")
        if self.post_periods < 10:
            raise InvalidProtocolError("post-transport window must cover >= 10 periods")
        if self.record_every < 1:
            raise InvalidProtocolError("record_every must be >= 1")


@dataclass(frozen=True)
class InitialState:
    position: FieldPoint
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # m/s


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    t: np.ndarray              # s
    position: np.ndarray       # (n, 3) m
    velocity: np.ndarray       # (n, 3) m/s
    kinetic_energy: np.ndarray  # J
    mass: float
    mode: SimulationMode
    pre_window: slice
    transport_window: slice
    post_window: Optional[slice]
    protocol: Optional[ShuttleProtocol] = None
    initial_minimum: Optional[TrapPoint] = None
    final_minimum: Optional[TrapPoint] = None
    rf_period_samples: Optional[int] = None

    def heights_um(self) -> np.ndarray:
        return self.position[:, 1] / UM

    def table(self, downsample: int = 1) -> Tuple[List[str], List[list]]:
        header = ["t_s", "x_um", "y_um", "z_um", "vx", "vy", "vz", "ke_J"]
        idx = np.arange(0, len(self.t), max(int(downsample), 1))
        pos = self.position[idx] / UM
        rows = [
            [float(self.t[i]), *map(float, p), *map(float, self.velocity[i]), float(self.kinetic_energy[i])]
            for i, p in zip(idx, pos)
        ]
        return header, rows


@dataclass(frozen=True)
class QuantaResult:
    n_shuttle: float
    ke_max_final: float
    ke_max_initial: float
    omega_used: float
    measure: ExcitationMeasure = ExcitationMeasure.PEAK


@dataclass(frozen=True, eq=False)
class GainSample:
    """Compact result of one shuttle simulation."""
    N: float
    T: float
    quanta: QuantaResult
    omega_vertical: float
    height_t: np.ndarray = field(repr=False)   # s, relative to transport start
    height_um: np.ndarray = field(repr=False)

    @property
    def n_shuttle(self) -> float:
        return self.quanta.n_shuttle


# ---------------------------------------------------------------- schedules

@dataclass
class _Schedule:
    """Per-half-step voltages of the time-varying nodes."""
    t0: float
    dt: float
    n_steps: int
    v_ce: np.ndarray
    v_adj: np.ndarray
    cos_rf: Optional[np.ndarray]
    nil_height: np.ndarray  # per full step, m


def _node_masks(layout: TrapLayout, drive: DriveState, adjust_node: str):
    lf = layout_field(layout)
    rf_base, dc_base = resolve_node_voltages(layout, drive)
    ce_mask = np.array([lf.roles[n] == ElectrodeRole.CENTRAL_RF for n in lf.nodes], dtype=float)
    adj_mask = np.array([n == adjust_node for n in lf.nodes], dtype=float)
    rf_base = rf_base * (1.0 - ce_mask)
    dc_base = dc_base * (1.0 - adj_mask)
    return rf_base, ce_mask, dc_base, adj_mask


def _build_schedule(protocol: ShuttleProtocol, t0: float, dt: float, n_steps: int,
                    mode: SimulationMode) -> _Schedule:
    half = t0 + 0.5 * dt * np.arange(2 * n_steps + 1)
    v_ce = np.asarray(protocol.vce_at(half), dtype=float)
    v_adj = np.asarray(protocol.adjusted_dc_at(half), dtype=float)
    cos_rf = np.cos(protocol.drive.Omega * half) if mode is SimulationMode.FULL_RF else None
    nil = np.asarray(protocol.height_at(half[::2]), dtype=float) * UM
    return _Schedule(t0, dt, n_steps, v_ce, v_adj, cos_rf, nil)


# ---------------------------------------------------------------- axial tables

@dataclass(frozen=True)
class _AxialTables:
    y0: float
    dy: float
    rf_g: np.ndarray     # fixed-amplitude RF nodes, d phi / dy
    rf_gp: np.ndarray    # d2 phi / dy2
    ce_g: np.ndarray     # central node per volt
    ce_gp: np.ndarray
    dc_phi: np.ndarray   # fixed DC nodes
    dc_g: np.ndarray
    adj_phi: np.ndarray  # adjusted DC node per volt
    adj_g: np.ndarray


@lru_cache(maxsize=8)
def _axial_tables(layout: TrapLayout, drive: DriveState, adjust_node: str, z_um: float,
                  y_lo_um: float, y_hi_um: float, step_um: float) -> _AxialTables:
    rf_base, ce_mask, dc_base, adj_mask = _node_masks(layout, drive, adjust_node)
    n = int(math.ceil((y_hi_um - y_lo_um) / step_um)) + 1
    ys = (y_lo_um + step_um * np.arange(n)) * UM
    pts = np.column_stack([np.zeros(n), ys, np.full(n, z_um * UM)])
    nf = layout_field(layout).evaluate(pts, 2)
    g = nf.grad[:, :, 1]
    gp = nf.hess[:, :, 1, 1]
    logger.debug(f"Axial tables: {n} heights in [{y_lo_um:.2f}, {y_hi_um:.2f}] um")
    return _AxialTables(
        y0=ys[0], dy=step_um * UM,
        rf_g=rf_base @ g, rf_gp=rf_base @ gp,
        ce_g=ce_mask @ g, ce_gp=ce_mask @ gp,
        dc_phi=dc_base @ nf.phi, dc_g=dc_base @ g,
        adj_phi=adj_mask @ nf.phi, adj_g=adj_mask @ g,
    )


def _hermite(y0: float, dy: float, values: np.ndarray, slopes: np.ndarray, y: float) -> float:
    u = (y - y0) / dy
    i = int(u)
    f = u - i
    f2 = f * f
    f3 = f2 * f
    return ((2 * f3 - 3 * f2 + 1) * values[i] + (f3 - 2 * f2 + f) * dy * slopes[i]
            + (-2 * f3 + 3 * f2) * values[i + 1] + (f3 - f2) * dy * slopes[i + 1])


def _axial_energy(tab: _AxialTables, psi_scale: float, charge: float, v_ce: float,
                  v_adj: float, y: float) -> float:
    G = _hermite(tab.y0, tab.dy, tab.rf_g + v_ce * tab.ce_g, tab.rf_gp + v_ce * tab.ce_gp, y)
    phi = _hermite(tab.y0, tab.dy, tab.dc_phi + v_adj * tab.adj_phi, tab.dc_g + v_adj * tab.adj_g, y)
    return psi_scale * G * G + charge * phi


def _integrate_axial(tab: _AxialTables, sched: _Schedule, psi_scale: float, consts: PhysicalConstants,
                     mode: SimulationMode, y_start: float, v_start: float, record_every: int,
                     check_lost: bool = True) -> Tuple[List[float], List[float]]:
    y0, inv_dy = tab.y0, 1.0 / tab.dy
    A, Ap = tab.rf_g.tolist(), tab.rf_gp.tolist()
    C, Cp = tab.ce_g.tolist(), tab.ce_gp.tolist()
    D, E = tab.dc_g.tolist(), tab.adj_g.tolist()
    last = len(A) - 1
    vce = sched.v_ce.tolist()
    vadj = sched.v_adj.tolist()
    cos_rf = sched.cos_rf.tolist() if sched.cos_rf is not None else None
    nil = sched.nil_height.tolist()
    k_psi = 2.0 * psi_scale / consts.mass
    k_q = consts.charge / consts.mass
    full_rf = mode is SimulationMode.FULL_RF

    def accel(y, j):
        u = (y - y0) * inv_dy
        i = int(u)
        if u < 0.0 or i >= last:
            raise IonLostError(f"ion left the tabulated region at y={y / UM:.3f} um")
        f = u - i
        vc = vce[j]
        G = A[i] + f * (A[i + 1] - A[i]) + vc * (C[i] + f * (C[i + 1] - C[i]))
        Ed = D[i] + f * (D[i + 1] - D[i]) + vadj[j] * (E[i] + f * (E[i + 1] - E[i]))
        if full_rf:
            return -k_q * (cos_rf[j] * G + Ed)
        Gp = Ap[i] + f * (Ap[i + 1] - Ap[i]) + vc * (Cp[i] + f * (Cp[i + 1] - Cp[i]))
        return -(k_psi * G * Gp + k_q * Ed)

    dt = sched.dt
    h2 = 0.5 * dt
    h6 = dt / 6.0
    y, v = y_start, v_start
    ys, vs = [y], [v]
    for k in range(sched.n_steps):
        j = 2 * k
        a1 = accel(y, j)
        y2 = y + h2 * v
        v2 = v + h2 * a1
        a2 = accel(y2, j + 1)
        y3 = y + h2 * v2
        v3 = v + h2 * a2
        a3 = accel(y3, j + 1)
        y4 = y + dt * v3
        v4 = v + dt * a3
        a4 = accel(y4, j + 2)
        y += h6 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v += h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if check_lost and abs(y - nil[k + 1]) > LOST_DISTANCE_FACTOR * nil[k + 1]:
            raise IonLostError(f"ion lost at t={sched.t0 + (k + 1) * dt:.6e} s, y={y / UM:.3f} um")
        if (k + 1) % record_every == 0:
            ys.append(y)
            vs.append(v)
    return ys, vs


# ---------------------------------------------------------------- 3-D path

def _integrate_full(layout: TrapLayout, drive: DriveState, adjust_node: str, sched: _Schedule,
                    psi_scale: float, consts: PhysicalConstants, mode: SimulationMode,
                    r_start: np.ndarray, v_start: np.ndarray, z_nil: float, record_every: int,
                    check_lost: bool = True) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    lf = layout_field(layout)
    rf_base, ce_mask, dc_base, adj_mask = _node_masks(layout, drive, adjust_node)
    q_over_m = consts.charge / consts.mass
    full_rf = mode is SimulationMode.FULL_RF

    def accel(r, j):
        try:
            nf = lf.evaluate(r, 1 if full_rf else 2)
        except DomainError as e:
            raise IonLostError(f"ion reached the trap plane: {e}") from e
        rf = rf_base + sched.v_ce[j] * ce_mask
        dc = dc_base + sched.v_adj[j] * adj_mask
        g = nf.grad[:, 0]
        e_dc = dc @ g
        if full_rf:
            return -q_over_m * (sched.cos_rf[j] * (rf @ g) + e_dc)
        g_rf = rf @ g
        h_rf = np.einsum("n,nij->ij", rf, nf.hess[:, 0])
        return -(2.0 * psi_scale * (h_rf @ g_rf) / consts.mass + q_over_m * e_dc)

    dt = sched.dt
    r, v = r_start.astype(float).copy(), v_start.astype(float).copy()
    rs, vs = [r.copy()], [v.copy()]
    for k in range(sched.n_steps):
        j = 2 * k
        a1 = accel(r, j)
        r2, v2 = r + 0.5 * dt * v, v + 0.5 * dt * a1
        a2 = accel(r2, j + 1)
        r3, v3 = r + 0.5 * dt * v2, v + 0.5 * dt * a2
        a3 = accel(r3, j + 1)
        r4, v4 = r + dt * v3, v + dt * a3
        a4 = accel(r4, j + 2)
        r = r + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if check_lost:
            h = sched.nil_height[k + 1]
            offset = r - np.array([0.0, h, z_nil])
            if r[1] <= 0.0 or np.linalg.norm(offset) > LOST_DISTANCE_FACTOR * h:
                raise IonLostError(f"ion lost at t={sched.t0 + (k + 1) * dt:.6e} s")
        if (k + 1) % record_every == 0:
            rs.append(r.copy())
            vs.append(v.copy())
    return rs, vs


# ---------------------------------------------------------------- public API

def _axial_eligible(layout: TrapLayout, r: np.ndarray, v: np.ndarray, z_nil: float) -> bool:
    on_axis = abs(r[0]) < 1e-12 and abs(r[2] - z_nil) < 1e-12 and v[0] == 0.0 and v[2] == 0.0
    return on_axis and layout.is_mirror_symmetric("x") and layout.is_mirror_symmetric("z")


def _time_step(initial: TrapPoint, final: TrapPoint, protocol: ShuttleProtocol,
               mode: SimulationMode, settings: IntegratorSettings) -> float:
    omega_max = max(float(np.max(initial.frequencies.omegas)), float(np.max(final.frequencies.omegas)))
    dt = _TWO_PI / omega_max / settings.steps_per_period
    if mode is SimulationMode.FULL_RF:
        dt = min(dt, _TWO_PI / protocol.drive.Omega / settings.steps_per_rf_period)
    return dt


def static_energy_drift(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                        minimum: TrapPoint, displacement_um: float, periods: float,
                        steps_per_period: int = INTEGRATOR_SETTINGS["steps_per_period"],
                        force_model: ForceModel = ForceModel.AUTO, adjust_node: str = "dc_neg",
                        table_step_um: float = INTEGRATOR_SETTINGS["axial_table_step_um"]) -> float:
    """
    Relative total-energy drift of a free oscillation in the frozen potential,
    normalized by the oscillation energy. The ion starts displaced vertically.
    """
    omega_max = float(np.max(minimum.frequencies.omegas))
    dt = _TWO_PI / omega_max / steps_per_period
    n_steps = int(math.ceil(periods * steps_per_period))
    r_min = minimum.position.to_si()
    r_start = r_min + np.array([0.0, displacement_um * UM, 0.0])
    h = r_min[1]
    sched = _Schedule(
        t0=0.0, dt=dt, n_steps=n_steps,
        v_ce=np.full(2 * n_steps + 1, drive.V_ce),
        v_adj=np.full(2 * n_steps + 1, drive.dc_voltages.get(adjust_node, 0.0)),
        cos_rf=None, nil_height=np.full(n_steps + 1, h),
    )
    ep = EffectivePotential(layout, drive, consts)
    psi_scale = ep.psi_scale
    zero_v = np.zeros(3)
    use_axial = ForceModel(force_model) is ForceModel.AXIAL or (
        ForceModel(force_model) is ForceModel.AUTO and _axial_eligible(layout, r_start, zero_v, r_min[2]))

    if use_axial:
        span = abs(displacement_um) + 1.0
        tab = _axial_tables(layout, drive, adjust_node, float(r_min[2] / UM),
                            float(h / UM - 2 * span), float(h / UM + 2 * span), table_step_um)
        v_adj = drive.dc_voltages.get(adjust_node, 0.0)
        ys, vs = _integrate_axial(tab, sched, psi_scale, consts, SimulationMode.PSEUDOPOTENTIAL,
                                  r_start[1], 0.0, n_steps, check_lost=False)

        def energy(y, v):
            return 0.5 * consts.mass * v * v + _axial_energy(tab, psi_scale, consts.charge,
                                                             drive.V_ce, v_adj, y)
        e0, e1 = energy(ys[0], vs[0]), energy(ys[-1], vs[-1])
        u_min = _axial_energy(tab, psi_scale, consts.charge, drive.V_ce, v_adj, r_min[1])
    else:
        rs, vs = _integrate_full(layout, drive, adjust_node, sched, psi_scale, consts,
                                 SimulationMode.PSEUDOPOTENTIAL, r_start, zero_v, r_min[2],
                                 n_steps, check_lost=False)

        def energy(r, v):
            return 0.5 * consts.mass * float(v @ v) + float(ep.value(r))
        e0, e1 = energy(rs[0], vs[0]), energy(rs[-1], vs[-1])
        u_min = float(ep.value(r_min))

    oscillation = e0 - u_min
    drift = abs(e1 - e0) / oscillation
    logger.debug(f"Static energy drift over {periods} periods: {drift:.3e}")
    return drift


def integrate_trajectory(protocol: ShuttleProtocol,
                         mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                         initial_state: Optional[InitialState] = None,
                         settings: Optional[IntegratorSettings] = None) -> TrajectoryRecord:
    settings = settings or IntegratorSettings()
    mode = SimulationMode(mode)
    layout, consts, path = protocol.layout, protocol.consts, protocol.path

    initial = analyze_trap(layout, protocol.drive_at(protocol.t_start), consts,
                           FieldPoint(0.0, path.h_start, path.z_um), with_depth=False)
    final = analyze_trap(layout, protocol.drive_at(protocol.t_end), consts,
                         FieldPoint(0.0, path.h_final, path.z_um), with_depth=False)

    dt_target = _time_step(initial, final, protocol, mode, settings)
    n_transport = max(int(math.ceil(protocol.T_total / dt_target)), 1)
    dt = protocol.T_total / n_transport
    n_pre = int(math.ceil(settings.pre_periods * _TWO_PI / initial.frequencies.vertical / dt))
    n_post = max(int(math.ceil(settings.post_periods * _TWO_PI / final.frequencies.vertical / dt)), 1)
    n_steps = n_pre + n_transport + n_post
    t0 = protocol.t_start - n_pre * dt

    state = initial_state or InitialState(initial.position)
    r_start = state.position.to_si()
    v_start = np.asarray(state.velocity, dtype=float)
    z_nil = path.z_um * UM

    ep = EffectivePotential(layout, protocol.drive, consts)
    adjust = path.adjust_node
    force_model = ForceModel(settings.force_model)
    use_axial = force_model is ForceModel.AXIAL or (
        force_model is ForceModel.AUTO and _axial_eligible(layout, r_start, v_start, z_nil))

    if settings.self_test and mode is SimulationMode.PSEUDOPOTENTIAL:
        drift = static_energy_drift(
            layout, protocol.drive_at(protocol.t_start), consts, initial,
            displacement_um=0.01 * initial.ion_height, periods=settings.self_test_periods,
            steps_per_period=settings.steps_per_period,
            force_model=ForceModel.AXIAL if use_axial else ForceModel.FULL, adjust_node=adjust,
            table_step_um=settings.axial_table_step_um)
        if drift > settings.energy_drift_bound:
            raise StepFailureError(f"static self-test energy drift {drift:.3e} exceeds "
                                   f"{settings.energy_drift_bound:.1e}")

    sched = _build_schedule(protocol, t0, dt, n_steps, mode)
    logger.debug(f"Integrating {n_steps} steps of {dt:.3e} s ({'axial' if use_axial else '3-D'} forces)")

    if use_axial:
        h_lo = min(path.heights_um)
        h_hi = max(path.heights_um)
        tab = _axial_tables(layout, protocol.drive, adjust, path.z_um,
                            0.02 * h_lo, (1.0 + LOST_DISTANCE_FACTOR) * h_hi,
                            settings.axial_table_step_um)
        ys, vs = _integrate_axial(tab, sched, ep.psi_scale, consts, mode, r_start[1],
                                  v_start[1], settings.record_every)
        n = len(ys)
        position = np.column_stack([np.full(n, r_start[0]), np.asarray(ys), np.full(n, r_start[2])])
        velocity = np.column_stack([np.zeros(n), np.asarray(vs), np.zeros(n)])
    else:
        rs, vs = _integrate_full(layout, protocol.drive, adjust, sched, ep.psi_scale, consts, mode,
                                 r_start, v_start, z_nil, settings.record_every)
        position = np.asarray(rs)
        velocity = np.asarray(vs)

    every = settings.record_every
    t = t0 + dt * every * np.arange(len(position))
    ke = 0.5 * consts.mass * np.sum(velocity * velocity, axis=1)
    start_idx = n_pre // every
    end_idx = (n_pre + n_transport) // every
    rf_samples = None
    if mode is SimulationMode.FULL_RF:
        rf_samples = max(int(round(_TWO_PI / protocol.drive.Omega / dt / every)), 1)

    record = TrajectoryRecord(
        t=t,
        position=position,
        velocity=velocity,
        kinetic_energy=ke,
        mass=consts.mass,
        mode=mode,
        pre_window=slice(0, start_idx + 1),
        transport_window=slice(start_idx, end_idx + 1),
        post_window=slice(end_idx + 1, len(t)),
        protocol=protocol,
        initial_minimum=initial,
        final_minimum=final,
        rf_period_samples=rf_samples,
    )
    logger.info(f"Trajectory integrated: T={protocol.T_total * 1e3:.4f} ms, {n_steps} steps, "
                f"peak KE {float(np.max(ke)):.3e} J")
    return record


def motional_quanta(record: TrajectoryRecord, omega: Optional[float] = None,
                    measure: ExcitationMeasure = ExcitationMeasure.PEAK) -> QuantaResult:
    """
    Quanta gained: (final KE maximum - initial KE maximum) / (hbar omega).
    The peak measure takes the final maximum over the transport and the
    post-transport window, the residual measure over the post window only.
    """
    measure = ExcitationMeasure(measure)
    post = record.post_window
    if post is None or post.stop <= post.start:
        raise MissingWindowError("record has no post-transport window")
    if omega is None:
        if record.final_minimum is None:
            raise MissingWindowError("no final minimum to take the mode frequency from")
        omega = record.final_minimum.frequencies.vertical

    if record.mode is SimulationMode.FULL_RF and record.rf_period_samples:
        secular = uniform_filter1d(record.velocity, size=record.rf_period_samples, axis=0, mode="nearest")
        ke = 0.5 * record.mass * np.sum(secular * secular, axis=1)
    else:
        ke = record.kinetic_energy

    pre = ke[record.pre_window]
    ke_initial = float(np.max(pre)) if len(pre) else float(ke[0])
    if measure is ExcitationMeasure.PEAK:
        ke_final = float(np.max(ke[record.transport_window.start:]))
    else:
        ke_final = float(np.max(ke[post]))

    hbar = record.protocol.consts.hbar if record.protocol is not None else constants.hbar
    n = (ke_final - ke_initial) / (hbar * omega)
    if n < 0.0:
        logger.debug(f"Negative excitation {n:.3e} clipped to zero")
        n = 0.0
    return QuantaResult(n_shuttle=n, ke_max_final=ke_final, ke_max_initial=ke_initial,
                        omega_used=float(omega), measure=measure)


def simulate_shuttle(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                     path: ShuttlePath, N: float, T: float, kind=TrajectoryKind.TANH,
                     mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                     settings: Optional[IntegratorSettings] = None,
                     measure: ExcitationMeasure = ExcitationMeasure.PEAK,
                     shaping="voltage", dc_schedule="tracking", height_stride: int = 10) -> GainSample:
    """One protocol on a planned path, reduced to quanta and a decimated height trace."""
    protocol = build_protocol(layout, drive, consts, ShuttleTarget(final_vce=path.v_final), T, N,
                              kind=kind, shaping=shaping, dc_schedule=dc_schedule, path=path)
    record = integrate_trajectory(protocol, mode=mode, settings=settings)
    quanta = motional_quanta(record, measure=measure)
    window = record.transport_window
    t = record.t[window][::height_stride]
    h = record.heights_um()[window][::height_stride]
    if t[-1] != record.t[window][-1]:
        t = np.append(t, record.t[window][-1])
        h = np.append(h, record.heights_um()[window][-1])
    return GainSample(N=N, T=T, quanta=quanta, omega_vertical=record.final_minimum.frequencies.vertical,
                      height_t=t - protocol.t_start, height_um=h)


def ke_gain_vs_time(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants, N: float,
                    T_grid: Sequence[float], target: ShuttleTarget = ShuttleTarget(final_vce=100.0),
                    kind=TrajectoryKind.TANH, mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                    settings: Optional[IntegratorSettings] = None,
                    measure: ExcitationMeasure = ExcitationMeasure.PEAK,
                    path: Optional[ShuttlePath] = None) -> List[GainSample]:
    if any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise InvalidProtocolError("T_grid must be strictly ascending")
    if path is None:
        path = plan_shuttle_path(layout, drive, consts, resolve_final_vce(layout, drive, consts, target))
    curve = []
    for T in T_grid:
        sample = simulate_shuttle(layout, drive, consts, path, N, T, kind=kind, mode=mode,
                                  settings=settings, measure=measure)
        logger.info(f"N={N} T={T * 1e3:.4f} ms: n_shuttle={sample.n_shuttle:.4f}")
        curve.append(sample)
    return curve


def thermal_ensemble(protocol: ShuttleProtocol, temperature_K: float, count: int,
                     seed: int = 0) -> List[InitialState]:
    """Gaussian positions and velocities around the initial minimum, one draw per mode."""
    if not temperature_K > 0:
        raise InvalidProtocolError(f"temperature must be > 0, got {temperature_K}")
    minimum = analyze_trap(protocol.layout, protocol.drive_at(protocol.t_start), protocol.consts,
                           FieldPoint(0.0, protocol.path.h_start, protocol.path.z_um), with_depth=False)
    rng = np.random.default_rng(seed)
    kT = constants.k * temperature_K
    m = protocol.consts.mass
    r0 = minimum.position.to_si()
    axes = minimum.frequencies.axes
    sigma_x = np.sqrt(kT / (m * minimum.frequencies.omegas ** 2))
    sigma_v = math.sqrt(kT / m)
    states = []
    for _ in range(count):
        r = r0 + axes @ (rng.standard_normal(axes.shape[1]) * sigma_x)
        v = axes @ (rng.standard_normal(axes.shape[1]) * sigma_v)
        states.append(InitialState(FieldPoint.from_si(r), tuple(map(float, v))))
    return states

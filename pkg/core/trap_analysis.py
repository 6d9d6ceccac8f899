"""
Trapping minima, secular frequencies, trap depth and Mathieu parameters.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from config import DEPTH_SEARCH, MINIMUM_SEARCH
from core.errors import NoMinimumError, NotAMinimumError, UnboundedTrapError
from core.fields import UM, DriveState, EffectivePotential, FieldPoint, PhysicalConstants
from core.geometry import TrapLayout

logger = logging.getLogger(__name__)

AXIAL_THRESHOLD = 0.7
_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SecularFrequencies:
    """Angular frequencies (rad/s) with principal axes as columns of `axes`."""
    omegas: np.ndarray
    axes: np.ndarray
    axial_mask: Tuple[bool, ...]

    @property
    def radial(self) -> Tuple[float, ...]:
        return tuple(float(w) for w, ax in zip(self.omegas, self.axial_mask) if not ax)

    @property
    def axial(self) -> Optional[float]:
        values = [float(w) for w, ax in zip(self.omegas, self.axial_mask) if ax]
        return values[0] if values else None

    @property
    def vertical(self) -> float:
        """Radial mode with the largest y-component; the transported mode."""
        weights = [abs(self.axes[1, i]) if not ax else -1.0
                   for i, ax in enumerate(self.axial_mask)]
        return float(self.omegas[int(np.argmax(weights))])

    @property
    def vertical_axis(self) -> np.ndarray:
        weights = [abs(self.axes[1, i]) if not ax else -1.0
                   for i, ax in enumerate(self.axial_mask)]
        return self.axes[:, int(np.argmax(weights))]


@dataclass(frozen=True)
class StabilityParams:
    q: Tuple[float, ...]
    a: Tuple[float, ...]

    @property
    def stable(self) -> bool:
        return all(abs(q) < 0.9 and 0.0 < a + q * q / 2.0 < 1.0 for q, a in zip(self.q, self.a))


@dataclass(frozen=True)
class TrapPoint:
    position: FieldPoint
    frequencies: SecularFrequencies
    mathieu: StabilityParams
    trap_depth: Optional[float] = None  # eV

    @property
    def ion_height(self) -> float:
        return self.position.y


@dataclass(frozen=True)
class CurvePoint:
    V_ce: float
    height_um: float
    omega_radial: float
    omega_axial: Optional[float]
    depth_eV: Optional[float]


def _active(dims: int) -> List[int]:
    if dims == 3:
        return [0, 1, 2]
    if dims == 2:
        return [0, 1]
    raise ValueError(f"dims must be 2 or 3, got {dims}")


def _newton(ep: EffectivePotential, r0: np.ndarray, active: List[int], y_limit: float,
            settings: dict) -> Optional[np.ndarray]:
    """Damped saddle-free Newton on grad U; None when the iteration diverges."""
    r = r0.copy()
    for iteration in range(settings["max_iterations"]):
        g = ep.gradient(r)[active]
        H = ep.hessian(r)[np.ix_(active, active)]
        lam, vec = np.linalg.eigh(H)
        scale = float(np.max(np.abs(lam)))
        if scale == 0.0:
            return None
        tol = settings["gradient_tolerance"] * scale * r[1]
        g_norm = float(np.linalg.norm(g))
        logger.debug(f"Newton {iteration}: y={r[1] / UM:.6f} um |grad U|={g_norm:.3e} tol={tol:.3e}")
        if g_norm < tol:
            return r

        step = -vec @ ((vec.T @ g) / np.maximum(np.abs(lam), 1e-6 * scale))
        max_step = settings["max_step_fraction"] * r[1]
        step_norm = float(np.linalg.norm(step))
        if step_norm > max_step:
            step *= max_step / step_norm
        if step_norm < 1e-15:
            return r

        u0 = ep.value(r)
        for _ in range(30):
            trial = r.copy()
            trial[active] += step
            if trial[1] > 0:
                if ep.value(trial) < u0 or np.linalg.norm(ep.gradient(trial)[active]) < g_norm:
                    break
            step *= 0.5
        else:
            return None
        r = trial
        if not 0.0 < r[1] < y_limit:
            return None
    return None


def _coordinate_descent(ep: EffectivePotential, r0: np.ndarray, active: List[int],
                        y_limit: float) -> np.ndarray:
    r = r0.copy()
    u = ep.value(r)
    step = 0.05 * r[1]
    floor = 1e-6 * r[1]
    while step > floor:
        moved = False
        for i in active:
            for sign in (1.0, -1.0):
                trial = r.copy()
                trial[i] += sign * step
                if not 0.0 < trial[1] < y_limit:
                    continue
                u_trial = ep.value(trial)
                if u_trial < u:
                    r, u, moved = trial, u_trial, True
        if not moved:
            step *= 0.5
    return r


def find_minimum(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                 guess: FieldPoint, dims: int = 3, include_dc: bool = True,
                 settings: Optional[dict] = None) -> FieldPoint:
    """
    Local minimum of U near guess. dims=2 searches the x-y plane at the
    guess's z; include_dc=False searches the pseudopotential alone.
    """
    settings = {**MINIMUM_SEARCH, **(settings or {})}
    if guess.y <= 0:
        raise NoMinimumError(f"guess must lie above the trap plane, got y={guess.y} um")
    ep = EffectivePotential(layout, drive, consts, include_dc=include_dc)
    active = _active(dims)
    y_limit = settings["region_factor"] * guess.to_si()[1]

    r0 = guess.to_si()
    r = _newton(ep, r0, active, y_limit, settings)
    if r is None:
        logger.warning(f"Newton iteration diverged from {guess}; falling back to grid refinement")
        r = _coordinate_descent(ep, r0, active, y_limit)
        polished = _newton(ep, r, active, y_limit, settings)
        if polished is not None:
            r = polished

    if not 0.0 < r[1] < y_limit:
        raise NoMinimumError(f"minimum search left the region y in (0, {y_limit / UM:.1f}) um")
    H = ep.hessian(r)[np.ix_(active, active)]
    if np.any(np.linalg.eigvalsh(H) <= 0.0):
        raise NoMinimumError(
            f"Hessian is not positive definite at y={r[1] / UM:.3f} um (V_ce={drive.V_ce} V)"
        )
    point = FieldPoint.from_si(r)
    logger.debug(f"Minimum at ({point.x:.4f}, {point.y:.4f}, {point.z:.4f}) um")
    return point


def secular_frequencies(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                        at: FieldPoint, dims: int = 3) -> SecularFrequencies:
    ep = EffectivePotential(layout, drive, consts)
    active = _active(dims)
    H = ep.hessian(at.to_si())[np.ix_(active, active)]
    lam, vec = np.linalg.eigh(H / consts.mass)
    if np.any(lam <= 0.0):
        raise NotAMinimumError(f"Hessian eigenvalues {lam} are not all positive at {at}")
    axes = np.zeros((3, len(active)))
    axes[active, :] = vec
    axial_mask = tuple(bool(abs(axes[2, i]) > AXIAL_THRESHOLD) for i in range(len(active)))
    return SecularFrequencies(omegas=np.sqrt(lam), axes=axes, axial_mask=axial_mask)


def _ray_barriers(ep: EffectivePotential, r0: np.ndarray, angles: np.ndarray,
                  radius: float, samples: int) -> Tuple[np.ndarray, np.ndarray]:
    """First interior maximum of U along each ray; NaN where none is found."""
    radii = np.linspace(0.0, radius, samples + 1)[1:]
    dirs = np.stack([np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=-1)
    pts = r0[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    y_floor = 0.01 * r0[1]
    valid = pts[..., 1] > y_floor
    safe = np.where(valid[..., None], pts, r0[None, None, :])
    u = ep.value(safe.reshape(-1, 3)).reshape(len(angles), len(radii))
    u = np.where(valid, u, np.nan)

    barrier_r = np.full(len(angles), np.nan)
    for k in range(len(angles)):
        row = u[k]
        for i in range(1, len(radii) - 1):
            if np.isnan(row[i + 1]):
                break
            if row[i] >= row[i - 1] and row[i] > row[i + 1]:
                barrier_r[k] = radii[i]
                break
    return barrier_r, radii


def _barrier_along(ep: EffectivePotential, r0: np.ndarray, angle: float, r_guess: float,
                   dr: float) -> float:
    direction = np.array([math.cos(angle), math.sin(angle), 0.0])
    result = minimize_scalar(
        lambda s: -float(ep.value(r0 + s * direction)),
        bounds=(max(r_guess - dr, 0.0), r_guess + dr),
        method="bounded",
        options={"xatol": 1e-4 * dr},
    )
    return -float(result.fun)


def trap_depth(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
               at: FieldPoint, settings: Optional[dict] = None) -> float:
    """Escape barrier in eV over the lowest ray maximum in the x-y plane through `at`."""
    settings = {**DEPTH_SEARCH, **(settings or {})}
    ep = EffectivePotential(layout, drive, consts)
    if not np.any(ep.rf):
        raise UnboundedTrapError("no RF barrier: all RF amplitudes are zero")

    r0 = at.to_si()
    u0 = float(ep.value(r0))
    radius = settings["radius_factor"] * r0[1]
    samples = settings["samples_per_ray"]
    angles = np.linspace(0.0, _TWO_PI, settings["rays"], endpoint=False)
    barrier_r, radii = _ray_barriers(ep, r0, angles, radius, samples)
    if np.all(np.isnan(barrier_r)):
        raise UnboundedTrapError(f"no barrier within {radius / UM:.1f} um of the minimum")

    dr = radii[1] - radii[0]
    barriers = np.array([
        _barrier_along(ep, r0, angles[k], barrier_r[k], dr) if not np.isnan(barrier_r[k]) else np.inf
        for k in range(len(angles))
    ])
    best = int(np.argmin(barriers))

    # refine the escape direction between neighbouring rays
    d_angle = angles[1] - angles[0]

    def barrier_at(angle):
        direction = np.array([math.cos(angle), math.sin(angle), 0.0])
        u = ep.value(r0[None, :] + radii[:, None] * direction[None, :])
        i = int(np.clip(np.argmin(np.abs(radii - barrier_r[best])), 1, len(radii) - 2))
        window = slice(max(i - 5, 0), min(i + 6, len(radii)))
        j = window.start + int(np.argmax(u[window]))
        return _barrier_along(ep, r0, angle, radii[j], dr)

    refined = minimize_scalar(barrier_at, bounds=(angles[best] - d_angle, angles[best] + d_angle),
                              method="bounded", options={"xatol": 1e-3 * d_angle})
    u_saddle = min(barriers[best], float(refined.fun))
    depth = (u_saddle - u0) / abs(consts.charge)
    logger.debug(f"Trap depth {depth:.4f} eV, escape angle {math.degrees(refined.x):.1f} deg")
    return float(depth)


def mathieu_parameters(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                       at: FieldPoint, dims: int = 3) -> StabilityParams:
    ep = EffectivePotential(layout, drive, consts)
    freqs = secular_frequencies(layout, drive, consts, at, dims=dims)
    h_rf, h_dc = ep.node_hessians(at.to_si())
    denom = consts.mass * drive.Omega ** 2
    q, a = [], []
    for i in range(freqs.axes.shape[1]):
        u = freqs.axes[:, i]
        q.append(float(2.0 * consts.charge * (u @ h_rf @ u) / denom))
        a.append(float(4.0 * consts.charge * (u @ h_dc @ u) / denom))
    return StabilityParams(q=tuple(q), a=tuple(a))


def analyze_trap(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                 guess: FieldPoint, with_depth: bool = True, dims: int = 3) -> TrapPoint:
    position = find_minimum(layout, drive, consts, guess, dims=dims)
    freqs = secular_frequencies(layout, drive, consts, position, dims=dims)
    mathieu = mathieu_parameters(layout, drive, consts, position, dims=dims)
    depth = trap_depth(layout, drive, consts, position) if with_depth else None
    if not mathieu.stable:
        logger.warning(f"Mathieu parameters outside the lowest stability region: q={mathieu.q}")
    return TrapPoint(position=position, frequencies=freqs, mathieu=mathieu, trap_depth=depth)


def height_vs_vce(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                  vce_samples: Sequence[float], guess: Optional[FieldPoint] = None,
                  with_depth: bool = True) -> List[CurvePoint]:
    """Continuation over V_ce: each minimum search starts from the previous minimum."""
    guess = guess or FieldPoint(0.0, 120.0, 0.0)
    curve: List[CurvePoint] = []
    for v_ce in vce_samples:
        try:
            tp = analyze_trap(layout, drive.with_vce(v_ce), consts, guess, with_depth=with_depth)
        except NoMinimumError as e:
            raise NoMinimumError(f"trap lost at V_ce={v_ce} V: {e}") from e
        guess = tp.position
        curve.append(CurvePoint(
            V_ce=float(v_ce),
            height_um=tp.ion_height,
            omega_radial=tp.frequencies.vertical,
            omega_axial=tp.frequencies.axial,
            depth_eV=tp.trap_depth,
        ))
        logger.info(f"V_ce={v_ce:.2f} V: h={tp.ion_height:.3f} um, "
                    f"f_radial={tp.frequencies.vertical / _TWO_PI / 1e6:.4f} MHz")
    return curve


def curve_rows(curve: Sequence[CurvePoint]) -> Tuple[List[str], List[list]]:
    header = ["V_ce_V", "height_um", "omega_radial_MHz", "omega_axial_MHz", "depth_eV"]
    rows = []
    for p in curve:
        rows.append([
            p.V_ce,
            p.height_um,
            p.omega_radial / _TWO_PI / 1e6,
            "" if p.omega_axial is None else p.omega_axial / _TWO_PI / 1e6,
            "" if p.depth_eV is None else p.depth_eV,
        ])
    return header, rows


def grid_search_minimum(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants,
                        center: FieldPoint, half_width_um: float = 30.0, step_um: float = 1.0,
                        refine_step_um: float = 0.1) -> FieldPoint:
    """Brute-force minimum of U on a cubic grid followed by a finer local grid."""
    ep = EffectivePotential(layout, drive, consts)

    def best_on_grid(c: np.ndarray, half: float, step: float) -> np.ndarray:
        n = int(round(half / step))
        offsets = np.arange(-n, n + 1) * step
        grid = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
        pts = (c[None, :] + grid) * UM
        pts = pts[pts[:, 1] > 0]
        u = ep.value(pts)
        return pts[int(np.argmin(u))] / UM

    c = np.array([center.x, center.y, center.z])
    coarse = best_on_grid(c, half_width_um, step_um)
    fine = best_on_grid(coarse, step_um, refine_step_um)
    return FieldPoint(*map(float, fine))

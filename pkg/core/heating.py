"""
Anomalous heating along a transport trajectory and the combined excitation budget.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from config import HEATING_DEFAULTS
from core.dynamics import (ExcitationMeasure, GainSample, IntegratorSettings, SimulationMode,
                           ke_gain_vs_time)
from core.errors import DomainError, InvalidParamsError, NoCrossoverError
from core.fields import DriveState, PhysicalConstants
from core.geometry import TrapLayout
from core.waveforms import ShuttlePath, ShuttleTarget, TrajectoryKind

logger = logging.getLogger(__name__)

_TWO_PI = 2.0 * math.pi
QUADRATURE_RTOL = 1e-6
_MAX_INTERVALS = 2 ** 20


@dataclass(frozen=True)
class HeatingModel:
    """Heating rate k / h^4 calibrated by its value at a reference height."""
    rate_at_reference: float = HEATING_DEFAULTS["rate_quanta_per_ms"]   # quanta/ms
    reference_height: float = HEATING_DEFAULTS["reference_height_um"]   # um
    exponent: int = 4

    def __post_init__(self):
        if not self.rate_at_reference > 0:
            raise InvalidParamsError(f"heating rate must be > 0, got {self.rate_at_reference}")
        if not self.reference_height > 0:
            raise InvalidParamsError(f"reference height must be > 0, got {self.reference_height}")
        if self.exponent != 4:
            raise InvalidParamsError("heating exponent is fixed at 4")

    @property
    def k(self) -> float:
        """quanta * um^4 / ms"""
        return self.rate_at_reference * self.reference_height ** self.exponent

    def rate(self, height_um):
        return self.k / np.asarray(height_um, dtype=float) ** self.exponent


@dataclass(frozen=True)
class HeatingBudget:
    T: float              # s
    n_shuttle: float
    n_anomalous: float
    omega: float          # rad/s, transported mode after the shuttle

    @property
    def n_total(self) -> float:
        return self.n_shuttle + self.n_anomalous

    @property
    def cycles(self) -> float:
        return self.T * self.omega / _TWO_PI


@dataclass(frozen=True)
class CrossoverResult:
    T_star: float
    n_at_crossover: float
    cycles_at_crossover: float
    argmin_T: float
    argmin_n_total: float


def _sample_heights(height_of_t: Callable, t: np.ndarray) -> np.ndarray:
    # scalar-only callables raise TypeError or ValueError on arrays
    try:
        h = np.asarray(height_of_t(t), dtype=float)
    except (TypeError, ValueError):
        h = None
    if h is None or h.shape != t.shape:
        h = np.array([float(height_of_t(x)) for x in t])
    return h


def anomalous_quanta(height_of_t: Callable, T: float, model: HeatingModel = HeatingModel()) -> float:
    """
    Integral of k / h(t)^4 over [0, T] (T in seconds, h in um) by composite
    Simpson with interval halving until the relative change is below 1e-6.
    """
    if T < 0:
        raise InvalidParamsError(f"duration must be >= 0, got {T}")
    if T == 0:
        return 0.0

    previous = None
    n = 16
    while True:
        t = np.linspace(0.0, T, n + 1)
        h = _sample_heights(height_of_t, t)
        if np.any(h <= 0.0):
            raise DomainError(f"height must stay above the trap plane, got min {h.min():.3e} um")
        current = float(simpson(model.rate(h), x=t * 1e3))
        if previous is not None and abs(current - previous) <= QUADRATURE_RTOL * abs(current):
            return current
        if n >= _MAX_INTERVALS:
            logger.warning(f"Heating quadrature stopped at {n} intervals without reaching tolerance")
            return current
        previous = current
        n *= 2


def budget_from_sample(sample: GainSample, model: HeatingModel) -> HeatingBudget:
    def height(t):
        return np.interp(t, sample.height_t, sample.height_um)

    n_anomalous = anomalous_quanta(height, sample.T, model)
    return HeatingBudget(T=sample.T, n_shuttle=sample.n_shuttle, n_anomalous=n_anomalous,
                         omega=sample.omega_vertical)


def total_budget(layout: TrapLayout, drive: DriveState, consts: PhysicalConstants, N: float,
                 T_grid: Sequence[float], model: HeatingModel = HeatingModel(),
                 target: ShuttleTarget = ShuttleTarget(final_vce=100.0),
                 kind=TrajectoryKind.TANH, mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                 settings: Optional[IntegratorSettings] = None,
                 measure: ExcitationMeasure = ExcitationMeasure.PEAK,
                 path: Optional[ShuttlePath] = None) -> List[HeatingBudget]:
    samples = ke_gain_vs_time(layout, drive, consts, N, T_grid, target=target, kind=kind, mode=mode,
                              settings=settings, measure=measure, path=path)
    budgets = [budget_from_sample(s, model) for s in samples]
    for b in budgets:
        logger.info(f"N={N} T={b.T * 1e3:.4f} ms: shuttle {b.n_shuttle:.3f}, "
                    f"anomalous {b.n_anomalous:.3f}, total {b.n_total:.3f}")
    return budgets


def crossover(budgets: Sequence[HeatingBudget]) -> CrossoverResult:
    """First intersection of the shuttle and anomalous curves by linear interpolation."""
    if not budgets:
        raise InvalidParamsError("crossover needs at least one budget")
    best = min(budgets, key=lambda b: b.n_total)
    argmin = (best.T, best.n_total)

    diff = [b.n_shuttle - b.n_anomalous for b in budgets]
    for i, d in enumerate(diff):
        if d == 0.0:
            b = budgets[i]
            return CrossoverResult(b.T, b.n_shuttle, b.cycles, *argmin)
        if i + 1 < len(diff) and d * diff[i + 1] < 0.0:
            lo, hi = budgets[i], budgets[i + 1]
            w = d / (d - diff[i + 1])
            T_star = lo.T + w * (hi.T - lo.T)
            n_star = lo.n_shuttle + w * (hi.n_shuttle - lo.n_shuttle)
            omega = lo.omega + w * (hi.omega - lo.omega)
            return CrossoverResult(T_star, n_star, T_star * omega / _TWO_PI, *argmin)
    raise NoCrossoverError("shuttle and anomalous quanta do not cross on this grid", argmin=argmin)


def has_single_interior_minimum(values: Sequence[float]) -> bool:
    """True when the discrete differences change sign exactly once, from falling to rising."""
    signs = [s for s in np.sign(np.diff(np.asarray(values, dtype=float))) if s != 0]
    if not signs:
        return False
    changes = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    return changes == 1 and signs[0] < 0 < signs[-1]


def budget_rows(budgets: Sequence[HeatingBudget]) -> Tuple[List[str], List[list]]:
    header = ["T_ms", "cycles", "n_shuttle", "n_anomalous", "n_total"]
    rows = [[b.T * 1e3, b.cycles, b.n_shuttle, b.n_anomalous, b.n_total] for b in budgets]
    return header, rows

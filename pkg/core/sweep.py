"""
N x T sweeps of the excitation budget and selection of the smoothness parameter.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from core.dynamics import ExcitationMeasure, IntegratorSettings, SimulationMode, simulate_shuttle
from core.errors import (AllCellsFailedError, EmptyResultError, InvalidParamsError,
                         NoCrossoverError, PhysicsError)
from core.fields import DriveState, PhysicalConstants
from core.geometry import TrapLayout
from core.heating import (CrossoverResult, HeatingBudget, HeatingModel, budget_from_sample,
                          crossover, has_single_interior_minimum)
from core.waveforms import (ShuttleTarget, TrajectoryKind, plan_shuttle_path,
                            resolve_final_vce)

logger = logging.getLogger(__name__)

STATUS_OK = "ok"


@dataclass(frozen=True)
class Scenario:
    layout: TrapLayout
    drive: DriveState
    consts: PhysicalConstants
    target: ShuttleTarget = ShuttleTarget(final_vce=100.0)
    kind: TrajectoryKind = TrajectoryKind.TANH
    mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL
    settings: IntegratorSettings = IntegratorSettings()
    measure: ExcitationMeasure = ExcitationMeasure.PEAK
    shaping: str = "voltage"
    dc_schedule: str = "tracking"


@dataclass(frozen=True)
class SweepSpec:
    N_values: Tuple[float, ...]
    T_grid: Tuple[float, ...]   # s
    scenario: Scenario
    model: HeatingModel = HeatingModel()

    def validate(self) -> None:
        if not self.N_values or not self.T_grid:
            raise InvalidParamsError("sweep needs at least one N and one T")
        if any(n <= 0 for n in self.N_values):
            raise InvalidParamsError(f"N values must be > 0, got {self.N_values}")
        if any(t <= 0 for t in self.T_grid):
            raise InvalidParamsError("durations must be > 0")
        if any(b <= a for a, b in zip(self.T_grid, self.T_grid[1:])):
            raise InvalidParamsError("T grid must be strictly ascending")


@dataclass(frozen=True)
class SweepCell:
    N: float
    T: float
    budget: Optional[HeatingBudget]
    status: str = STATUS_OK


@dataclass(frozen=True)
class PerNSummary:
    N: float
    crossover: Optional[CrossoverResult]
    argmin: Optional[Tuple[float, float]]
    single_interior_minimum: bool


@dataclass(frozen=True, eq=False)
class SweepResult:
    N_values: Tuple[float, ...]
    T_grid: Tuple[float, ...]
    cells: Mapping[Tuple[float, float], SweepCell]
    per_N: Dict[float, PerNSummary] = field(default_factory=dict)
    provenance: Mapping[str, str] = field(default_factory=dict)

    def budgets_for(self, N: float) -> List[HeatingBudget]:
        return [self.cells[(N, T)].budget for T in self.T_grid
                if self.cells[(N, T)].budget is not None]

    def rows(self) -> Tuple[List[str], List[list]]:
        header = ["N", "T_ms", "cycles", "n_shuttle", "n_anomalous", "n_total", "status"]
        rows = []
        for N in sorted(self.N_values):
            for T in self.T_grid:
                cell = self.cells[(N, T)]
                b = cell.budget
                if b is None:
                    rows.append([N, T * 1e3, "", "", "", "", cell.status])
                else:
                    rows.append([N, T * 1e3, b.cycles, b.n_shuttle, b.n_anomalous, b.n_total, cell.status])
        return header, rows

    def summary(self) -> dict:
        best_N, T_star, n_star = optimal_n(self)
        per_N = []
        for N in sorted(self.N_values):
            info = self.per_N.get(N)
            entry = {"N": N, "T_min_ms": None, "n_total_min": None,
                     "crossover_T_ms": None, "crossover_n": None, "crossover_cycles": None,
                     "single_interior_minimum": None}
            if info is not None:
                if info.argmin is not None:
                    entry["T_min_ms"] = info.argmin[0] * 1e3
                    entry["n_total_min"] = info.argmin[1]
                if info.crossover is not None:
                    entry["crossover_T_ms"] = info.crossover.T_star * 1e3
                    entry["crossover_n"] = info.crossover.n_at_crossover
                    entry["crossover_cycles"] = info.crossover.cycles_at_crossover
                entry["single_interior_minimum"] = info.single_interior_minimum
            per_N.append(entry)
        return {
            "best_N": best_N,
            "T_star_ms": T_star * 1e3,
            "n_total_star": n_star,
            "per_N": per_N,
            "provenance": dict(self.provenance),
        }


def summarize_column(N: float, budgets: List[HeatingBudget]) -> PerNSummary:
    if not budgets:
        return PerNSummary(N, None, None, False)
    try:
        result = crossover(budgets)
        cross, argmin = result, (result.argmin_T, result.argmin_n_total)
    except NoCrossoverError as e:
        logger.warning(f"N={N}: {e}")
        cross, argmin = None, e.argmin
    single = has_single_interior_minimum([b.n_total for b in budgets])
    if not single:
        logger.warning(f"N={N}: n_total(T) has no unique interior minimum on this grid")
    return PerNSummary(N, cross, argmin, single)


def run_sweep(spec: SweepSpec, threads: int = 1,
              provenance: Optional[Mapping[str, str]] = None) -> SweepResult:
    """Evaluate every (N, T) cell; failed cells are marked, results are keyed by (N, T)."""
    spec.validate()
    sc = spec.scenario
    try:
        v_final = resolve_final_vce(sc.layout, sc.drive, sc.consts, sc.target)
        path = plan_shuttle_path(sc.layout, sc.drive, sc.consts, v_final, threads=threads)
    except PhysicsError as e:
        raise AllCellsFailedError(f"shuttle path could not be planned: {e}") from e

    def evaluate(key):
        N, T = key
        try:
            sample = simulate_shuttle(sc.layout, sc.drive, sc.consts, path, N, T, kind=sc.kind,
                                      mode=sc.mode, settings=sc.settings, measure=sc.measure,
                                      shaping=sc.shaping, dc_schedule=sc.dc_schedule)
            budget = budget_from_sample(sample, spec.model)
        except PhysicsError as e:
            logger.warning(f"Cell N={N} T={T * 1e3:.4f} ms failed: {e}")
            return SweepCell(N, T, None, type(e).__name__)
        logger.info(f"Cell N={N} T={T * 1e3:.4f} ms: total {budget.n_total:.4f} quanta")
        return SweepCell(N, T, budget)

    keys = [(N, T) for N in spec.N_values for T in spec.T_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells: Dict[Tuple[float, float], SweepCell] = dict(zip(keys, pool.map(evaluate, keys)))
    else:
        cells = {key: evaluate(key) for key in keys}

    if all(cell.budget is None for cell in cells.values()):
        raise AllCellsFailedError(f"all {len(cells)} sweep cells failed")

    result = SweepResult(N_values=tuple(spec.N_values), T_grid=tuple(spec.T_grid), cells=cells,
                         provenance=dict(provenance or {}))
    for N in spec.N_values:
        result.per_N[N] = summarize_column(N, result.budgets_for(N))
    return result


def optimal_n(result: SweepResult) -> Tuple[float, float, float]:
    """(best N, duration of its minimum total, minimum total); ties go to the smaller N."""
    best = None
    for N in sorted(result.N_values):
        budgets = result.budgets_for(N)
        if not budgets:
            continue
        column_best = min(budgets, key=lambda b: b.n_total)
        if best is None or (column_best.n_total < best[2]
                            and not math.isclose(column_best.n_total, best[2], rel_tol=1e-12)):
            best = (N, column_best.T, column_best.n_total)
    if best is None:
        raise EmptyResultError("sweep has no successful cells")
    return best

import math

import pytest

from core.errors import EmptyResultError, InvalidParamsError
from core.heating import HeatingBudget
from core.sweep import (PerNSummary, Scenario, SweepCell, SweepResult, SweepSpec, optimal_n,
                        run_sweep, summarize_column)

OMEGA = 2.0 * math.pi * 2.5e6
T_GRID = (0.1e-3, 0.2e-3, 0.3e-3)


def _cell(N, T, shuttle, anomalous):
    return SweepCell(N, T, HeatingBudget(T=T, n_shuttle=shuttle, n_anomalous=anomalous, omega=OMEGA))


def _result(columns):
    cells = {}
    for N, values in columns.items():
        for T, v in zip(T_GRID, values):
            cells[(N, T)] = _cell(N, T, *v) if v is not None else SweepCell(N, T, None, "IonLostError")
    return SweepResult(N_values=tuple(columns), T_grid=T_GRID, cells=cells)


def test_optimal_n_picks_lowest_total():
    result = _result({
        2.5: [(5.0, 0.5), (2.0, 1.0), (1.0, 1.5)],
        5.0: [(3.0, 0.5), (0.5, 1.0), (0.2, 1.5)],
    })
    assert optimal_n(result) == (5.0, 0.2e-3, 1.5)


def test_optimal_n_ties_go_to_smaller_n():
    result = _result({
        10.0: [(1.0, 1.0), (0.5, 1.0), (0.4, 1.2)],
        5.0: [(1.0, 1.0), (0.5, 1.0), (0.4, 1.2)],
    })
    assert optimal_n(result)[0] == 5.0


def test_optimal_n_needs_a_successful_cell():
    with pytest.raises(EmptyResultError):
        optimal_n(_result({2.5: [None, None, None]}))


def test_rows_mark_failed_cells():
    result = _result({2.5: [(1.0, 0.5), None, (0.2, 1.5)]})
    header, rows = result.rows()
    assert header == ["N", "T_ms", "cycles", "n_shuttle", "n_anomalous", "n_total", "status"]
    assert rows[0][:3] == pytest.approx([2.5, 0.1, 250.0])
    assert rows[1][2:] == ["", "", "", "", "IonLostError"]
    assert len(result.budgets_for(2.5)) == 2


def test_summary_reports_crossover_and_minimum():
    result = _result({2.5: [(4.0, 1.0), (2.0, 2.0), (1.0, 4.0)]})
    result.per_N[2.5] = summarize_column(2.5, result.budgets_for(2.5))
    summary = result.summary()
    assert summary["best_N"] == 2.5
    assert summary["T_star_ms"] == pytest.approx(0.2)
    entry = summary["per_N"][0]
    assert entry["crossover_T_ms"] == pytest.approx(0.2)
    assert entry["crossover_cycles"] == pytest.approx(500.0)
    assert entry["n_total_min"] == pytest.approx(4.0)
    assert entry["single_interior_minimum"] is True


def test_column_without_crossover_keeps_argmin():
    result = _result({5.0: [(0.1, 1.0), (0.05, 2.0), (0.01, 3.0)]})
    summary = summarize_column(5.0, result.budgets_for(5.0))
    assert summary.crossover is None
    assert summary.argmin == pytest.approx((0.1e-3, 1.1))
    assert not summary.single_interior_minimum
    assert summarize_column(5.0, []) == PerNSummary(5.0, None, None, False)


@pytest.mark.parametrize("N_values, T_grid", [
    ((), (1e-4,)),
    ((0.0,), (1e-4,)),
    ((2.5,), (2e-4, 1e-4)),
    ((2.5,), (-1e-4,)),
])
def test_invalid_sweep_rejected(trap_layout, trap_drive, hg, N_values, T_grid):
    spec = SweepSpec(N_values, T_grid, Scenario(trap_layout, trap_drive, hg))
    with pytest.raises(InvalidParamsError):
        run_sweep(spec)


@pytest.mark.slow
def test_small_sweep(trap_layout, trap_drive, hg):
    spec = SweepSpec((2.5,), (0.1e-3, 0.3e-3), Scenario(trap_layout, trap_drive, hg))
    result = run_sweep(spec, threads=2, provenance={"config_sha256": "abc"})
    budgets = result.budgets_for(2.5)
    assert len(budgets) == 2
    assert all(b.n_anomalous > 0.0 and b.n_shuttle >= 0.0 for b in budgets)
    assert budgets[1].n_anomalous > budgets[0].n_anomalous
    assert result.summary()["provenance"] == {"config_sha256": "abc"}


@pytest.mark.slow
def test_full_sweep_prefers_the_gentlest_profile(trap_layout, trap_drive, hg):
    T_grid = tuple(k * 1e-4 for k in range(1, 11))
    spec = SweepSpec((2.5, 5.0, 10.0), T_grid, Scenario(trap_layout, trap_drive, hg))
    result = run_sweep(spec, threads=4)
    summary = result.summary()
    assert summary["best_N"] == 2.5
    assert 0.1 < summary["T_star_ms"] < 1.0
    gentle = result.per_N[2.5]
    assert gentle.single_interior_minimum
    assert gentle.crossover is not None
    assert T_grid[0] < gentle.crossover.T_star < T_grid[-1]
    assert all(cell.status == "ok" for cell in result.cells.values())

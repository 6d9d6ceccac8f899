import math

import numpy as np
import pytest
from scipy.integrate import quad

from core.dynamics import GainSample, QuantaResult
from core.errors import DomainError, InvalidParamsError, NoCrossoverError
from core.heating import (HeatingBudget, HeatingModel, anomalous_quanta, budget_from_sample,
                          budget_rows, crossover, has_single_interior_minimum)
from core.waveforms import trajectory_position

OMEGA = 2.0 * math.pi * 2.5e6


def _budgets(T_ms, shuttle, anomalous):
    return [HeatingBudget(T=t * 1e-3, n_shuttle=s, n_anomalous=a, omega=OMEGA)
            for t, s, a in zip(T_ms, shuttle, anomalous)]


def test_reference_height_gives_calibrated_rate():
    assert anomalous_quanta(lambda t: np.full_like(t, 134.0), 1e-3) == pytest.approx(3.1, rel=1e-12)


def test_rate_scales_with_inverse_fourth_power():
    assert anomalous_quanta(lambda t: 86.0, 1e-3) == pytest.approx(18.27, rel=1e-3)
    model = HeatingModel(rate_at_reference=1.0, reference_height=100.0)
    assert float(model.rate(50.0)) == pytest.approx(16.0)


@pytest.mark.parametrize("model", [HeatingModel(), HeatingModel(rate_at_reference=3.0)])
def test_transport_profile_heating(model):
    T = 0.5e-3

    def height(t):
        return 134.0 - trajectory_position("tanh", 48.0, T, 2.5, t)

    expected, _ = quad(lambda t: model.k / height(t) ** 4, 0.0, T, epsabs=0.0, epsrel=1e-10)
    assert anomalous_quanta(height, T, model) == pytest.approx(expected * 1e3, rel=1e-5)
    assert anomalous_quanta(height, T, model) == pytest.approx(
        4.427 * model.rate_at_reference / 3.1, rel=1e-2)


def test_scalar_height_functions_are_sampled_pointwise():
    assert anomalous_quanta(lambda t: 134.0 + math.sin(t), 1e-3) == pytest.approx(3.1, rel=1e-4)


def test_height_function_bugs_are_not_swallowed():
    def broken(t):
        return {}["height"]

    with pytest.raises(KeyError):
        anomalous_quanta(broken, 1e-3)


def test_zero_duration_and_bad_inputs():
    assert anomalous_quanta(lambda t: 100.0, 0.0) == 0.0
    with pytest.raises(InvalidParamsError):
        anomalous_quanta(lambda t: 100.0, -1e-3)
    with pytest.raises(DomainError):
        anomalous_quanta(lambda t: 100.0 - 1e6 * t, 1e-3)
    with pytest.raises(InvalidParamsError):
        HeatingModel(rate_at_reference=0.0)
    with pytest.raises(InvalidParamsError):
        HeatingModel(exponent=2)


def test_budget_from_sample():
    sample = GainSample(
        N=2.5, T=1e-3,
        quanta=QuantaResult(n_shuttle=0.7, ke_max_final=0.0, ke_max_initial=0.0, omega_used=OMEGA),
        omega_vertical=OMEGA,
        height_t=np.array([0.0, 1e-3]), height_um=np.array([134.0, 134.0]),
    )
    budget = budget_from_sample(sample, HeatingModel())
    assert budget.n_anomalous == pytest.approx(3.1)
    assert budget.n_total == pytest.approx(3.8)
    assert budget.cycles == pytest.approx(2500.0)


def test_crossover_interpolates():
    budgets = _budgets([0.1, 0.2, 0.3], [4.0, 2.0, 0.5], [1.0, 2.0, 3.0])
    result = crossover(budgets)
    assert result.T_star == pytest.approx(0.2e-3)
    assert result.n_at_crossover == pytest.approx(2.0)
    assert result.cycles_at_crossover == pytest.approx(500.0)
    assert (result.argmin_T, result.argmin_n_total) == pytest.approx((0.3e-3, 3.5))

    between = crossover(_budgets([0.1, 0.2], [3.0, 1.0], [1.0, 2.0]))
    assert between.T_star == pytest.approx(0.1e-3 + 2.0 / 3.0 * 0.1e-3)


def test_no_crossover_reports_argmin():
    budgets = _budgets([0.1, 0.2, 0.3], [0.1, 0.05, 0.01], [1.0, 2.0, 3.0])
    with pytest.raises(NoCrossoverError) as info:
        crossover(budgets)
    assert info.value.argmin == pytest.approx((0.1e-3, 1.1))
    with pytest.raises(InvalidParamsError):
        crossover([])


@pytest.mark.parametrize("values, expected", [
    ([5.0, 3.0, 2.0, 4.0], True),
    ([5.0, 3.0, 3.0, 4.0], True),
    ([1.0, 2.0, 3.0], False),
    ([3.0, 2.0, 1.0], False),
    ([3.0, 1.0, 2.0, 0.5, 4.0], False),
    ([2.0, 2.0], False),
])
def test_single_interior_minimum(values, expected):
    assert has_single_interior_minimum(values) is expected


def test_budget_rows():
    header, rows = budget_rows(_budgets([0.5], [1.0], [2.0]))
    assert header == ["T_ms", "cycles", "n_shuttle", "n_anomalous", "n_total"]
    assert rows[0] == pytest.approx([0.5, 1250.0, 1.0, 2.0, 3.0])

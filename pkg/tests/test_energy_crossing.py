import math

import numpy as np
import pytest

from hmhf_control.energy_crossing import build_crossing_control, crossing_sweep, execute_crossing, remainder_norm
from hmhf_control.errors import DimensionTooSmall, ValidationError
from hmhf_control.flow_solver import SolverConfig
from hmhf_control.spectral_grid import TWO_PI, PeriodicGrid, Window
from hmhf_control.sphere_geometry import GeodesicChart, harmonic_map


GRID = PeriodicGrid(64)
WINDOW = Window(GRID, ((0.0, 1.5 * math.pi),))


def test_crossing_needs_a_normal_direction():
    with pytest.raises(DimensionTooSmall):
        build_crossing_control(GeodesicChart.standard(1, 1), 0.05, 1.0, WINDOW)


@pytest.mark.parametrize('n, epsilon', [(0, 0.05), (1, 0.0), (1, 0.2)])
def test_crossing_argument_validation(n, epsilon):
    with pytest.raises(ValidationError):
        build_crossing_control(GeodesicChart.standard(n, 2), epsilon, 1.0, WINDOW)


def test_crossing_force_is_normal_and_windowed():
    chart = GeodesicChart.standard(1, 3)
    plan = build_crossing_control(chart, 0.05, 1.0, WINDOW)
    assert plan.n == 1
    assert abs(plan.direction @ chart.alpha) < 1e-12
    assert abs(plan.direction @ chart.beta) < 1e-12
    forces = plan.force.forces
    assert np.all(forces[:, WINDOW.mask == 0, :] == 0)
    assert np.allclose(forces @ chart.alpha, 0.0)
    assert plan.flux == pytest.approx(-math.pi, rel=1e-3)


def test_crossing_rejects_distant_start():
    plan = build_crossing_control(GeodesicChart.standard(1, 2), 0.05, 1.0, WINDOW)
    with pytest.raises(ValidationError):
        execute_crossing(harmonic_map(GeodesicChart.standard(2, 2), GRID), plan)


@pytest.mark.slow
def test_crossing_drops_below_the_level():
    chart = GeodesicChart.standard(1, 2)
    plan = build_crossing_control(chart, 0.05, 1.0, WINDOW)
    trajectory, delta_e = execute_crossing(harmonic_map(chart, GRID), plan, SolverConfig(dt=1e-3))
    assert delta_e < 0
    assert trajectory.energies[-1] < TWO_PI
    assert trajectory.summary['level'] == pytest.approx(TWO_PI)


@pytest.mark.slow
def test_crossing_sweep_matches_the_linear_oracle():
    sweep = crossing_sweep(GeodesicChart.standard(1, 2), (0.02, 0.01, 0.005), 1.0, Window.full(GRID),
                           SolverConfig(dt=1e-3))
    assert [row['epsilon'] for row in sweep['rows']] == [0.02, 0.01, 0.005]
    assert all(row['delta_e'] < 0 for row in sweep['rows'])
    assert sweep['relative_error'] <= 0.1
    assert len(sweep['remainder_ratios']) == 2
    assert all(3.0 <= ratio <= 5.0 for ratio in sweep['remainder_ratios'])


@pytest.mark.slow
def test_remainder_is_quadratic_in_epsilon():
    chart = GeodesicChart.standard(1, 2)
    config = SolverConfig(dt=1e-3)
    remainders = []
    for epsilon in (0.02, 0.01):
        plan = build_crossing_control(chart, epsilon, 1.0, WINDOW)
        trajectory, _ = execute_crossing(harmonic_map(chart, GRID), plan, config)
        remainders.append(remainder_norm(trajectory, plan))
    assert 3.0 <= remainders[0] / remainders[1] <= 5.0

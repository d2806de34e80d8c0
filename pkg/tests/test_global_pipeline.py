import math

import numpy as np
import pytest

from hmhf_control import global_pipeline
from hmhf_control.errors import DimensionTooSmall, StageFailure, ValidationError
from hmhf_control.flow_solver import ControlRecord, SolverConfig, replay_distance, simulate
from hmhf_control.global_pipeline import (
    PhaseLog,
    PhaseRecord,
    PipelineConfig,
    descent_step,
    nearest_circle_point,
    run_global,
    transfer_chart,
)
from hmhf_control.spectral_grid import TWO_PI, PeriodicGrid, Window
from hmhf_control.sphere_geometry import GeodesicChart, SphereField, harmonic_map, stereo_inverse


GRID = PeriodicGrid(64)
FULL = Window.full(GRID)


def make_config(**kwargs):
    return PipelineConfig(solver=SolverConfig(dt=1e-3), **kwargs)


@pytest.mark.parametrize('kwargs', [
    {'nu1': 0.01},
    {'crossing_epsilon': 0.2},
    {'crossing_retries': 0},
    {'null_horizon': 0.0},
    {'settle_horizon': 0.0},
    {'tracking_gain': 1e5},
])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        PipelineConfig(**kwargs)


def test_phase_record_line():
    record = PhaseRecord('crossing', 0.0, 1.0, 6.5, 6.0, entry_level=1, notes={'epsilon': 0.05})
    assert record.line() == (
        'phase=crossing start=0 end=1 entry_energy=6.5 exit_energy=6 '
        'entry_level=1 exit_level= epsilon=0.050000000000000003'
    )


def test_phase_log_checks():
    log = PhaseLog()
    with pytest.raises(ValidationError):
        log.append(PhaseRecord('coffee', 0.0, 1.0, 0.0, 0.0))
    log.append(PhaseRecord('crossing', 0.0, 1.0, 4 * TWO_PI, 3.9 * TWO_PI, entry_level=2))
    log.append(PhaseRecord('crossing', 1.0, 2.0, TWO_PI, 1.1 * TWO_PI, entry_level=1))
    assert log.levels == [2, 1]
    problems = log.check()
    assert len(problems) == 1
    assert 'N=1' in problems[0]
    log.append(PhaseRecord('crossing', 2.0, 3.0, TWO_PI, 0.5 * TWO_PI, entry_level=1))
    assert any('strictly decreasing' in p for p in log.check())
    assert len(log.lines()) == 3


def test_transfer_chart_reaches_target_point():
    p = np.array([0.0, 0.0, 1.0])
    p_f = np.array([0.6, 0.0, 0.8])
    chart, angle = transfer_chart(p, p_f)
    assert np.allclose(chart.point(angle), p_f)
    antipodal, angle = transfer_chart(p, -p)
    assert np.allclose(antipodal.point(angle), -p)


def test_nearest_circle_point():
    target = GeodesicChart.standard(2, 2)
    assert np.allclose(nearest_circle_point(np.array([0.6, 0.0, 0.8]), target), [1.0, 0.0, 0.0])
    constant = GeodesicChart.standard(0, 2, phase=math.pi / 2)
    assert np.allclose(nearest_circle_point(np.array([1.0, 0.0, 0.0]), constant), [0.0, 1.0, 0.0])


def test_descent_step_skips_low_energy():
    north = np.tile([0.0, 0.0, 1.0], (GRID.size, 1))
    result = descent_step(north, make_config(), FULL)
    assert result.level == 0
    assert result.phases == []


def test_run_global_rejects_circle_targets():
    chart = GeodesicChart.standard(1, 1)
    with pytest.raises(DimensionTooSmall):
        run_global(harmonic_map(chart, GRID), chart, FULL)
    with pytest.raises(ValidationError):
        run_global(harmonic_map(GeodesicChart.standard(1, 2), GRID), GeodesicChart.standard(1, 3), FULL)


def test_run_global_at_target_is_zero_control():
    chart = GeodesicChart.standard(1, 2)
    control, trajectory, log = run_global(harmonic_map(chart, GRID), chart, FULL)
    assert control.l_inf_l2() == 0.0
    assert log.records == []
    assert trajectory.summary['terminal_h1'] == 0.0


@pytest.mark.slow
def test_run_global_to_a_point():
    x = GRID.nodes
    v = 0.05 * np.stack([np.cos(x), np.sin(2 * x)], axis=1)
    u0 = SphereField(stereo_inverse(v), GRID)
    target = GeodesicChart.standard(0, 2, phase=0.5)
    control, trajectory, log = run_global(u0, target, FULL, make_config())
    assert [r.phase for r in log.records] == ['decay', 'local_null', 'point_transfer']
    assert trajectory.summary['terminal_h1'] < 1e-6
    assert trajectory.summary['realized_terminal_h1'] < 1e-6
    assert replay_distance(trajectory, control, make_config().solver) < 1e-10
    assert np.all(np.diff(trajectory.times) > 0)
    assert control.end == pytest.approx(trajectory.summary['total_time'])
    assert log.check() == []


@pytest.mark.slow
def test_run_global_fails_when_the_replay_misses(monkeypatch):
    def idle_transfer(theta0, target, horizon, window, config, pieces, rho, u0=None, gain=None, settle=0.0):
        record = ControlRecord.zero(window, u0.shape[1], 0.0, horizon)
        return record, simulate(u0, horizon, record, config, window.grid)

    monkeypatch.setattr(global_pipeline, 'steer_on_geodesic', idle_transfer)
    x = GRID.nodes
    v = 0.05 * np.stack([np.cos(x), np.sin(2 * x)], axis=1)
    target = GeodesicChart.standard(0, 2, phase=2.0)
    with pytest.raises(StageFailure, match='Replayed control') as caught:
        run_global(SphereField(stereo_inverse(v), GRID), target, FULL, make_config())
    assert [r.phase for r in caught.value.phase_log.records] == ['decay', 'local_null', 'point_transfer']

import math

import numpy as np
import pytest

from hmhf_control.errors import ValidationError
from hmhf_control.flow_solver import SolverConfig
from hmhf_control.spectral_grid import PeriodicGrid, Window, sobolev_norm
from hmhf_control.sphere_geometry import Rotation, SphereField, stereo_inverse
from hmhf_control.stabilization import (
    NullControlSchedule,
    RapidFeedbackPolicy,
    lyapunov_value,
    measure_basin,
    null_control_cost_sweep,
    policy_c0,
    rapid_stabilize,
    small_time_null_control,
    u_feedback,
)


GRID = PeriodicGrid(64)
FULL = Window.full(GRID)


def make_near_pole(*, amplitude=1e-3):
    x = GRID.nodes
    v = amplitude * np.stack([np.cos(x), np.sin(2 * x)], axis=1)
    return SphereField(stereo_inverse(v), GRID), v


def test_policy_validation():
    with pytest.raises(ValidationError):
        RapidFeedbackPolicy(1.0, 0.0, FULL, Rotation.identity(3))
    with pytest.raises(ValidationError):
        RapidFeedbackPolicy(4.0, -1.0, FULL, Rotation.identity(3))


def test_full_window_gain_equals_lambda():
    assert policy_c0(16, FULL) == pytest.approx(0.0, abs=1e-10)
    policy = RapidFeedbackPolicy.build(16, FULL)
    assert policy.gamma == pytest.approx(16.0)


def test_feedback_vanishes_at_the_pole():
    policy = RapidFeedbackPolicy.build(4, FULL)
    north = np.tile([0.0, 0.0, 1.0], (GRID.size, 1))
    assert np.allclose(u_feedback(north, policy), 0.0)
    assert lyapunov_value(np.zeros((GRID.size, 2)), policy) == 0.0


def test_schedule_build():
    schedule = NullControlSchedule.build(1.0, FULL)
    assert list(schedule.gains) == [4.0, 16.0, 64.0]
    assert list(schedule.switch_times) == [0.0, 0.5, 0.75, 1.0]
    assert schedule.thresholds[0] == 1e-2
    assert schedule.thresholds[1] == pytest.approx(1e-2 * math.exp(-0.25))
    assert schedule.stages == 3


def test_schedule_validation():
    with pytest.raises(ValidationError):
        NullControlSchedule.build(0.0, FULL)
    with pytest.raises(ValidationError):
        NullControlSchedule(1.0, [0.0, 0.5, 1.0], [4.0, 4.0], [1e-2, 1e-2])


def test_rapid_stabilization_decays():
    u0, _ = make_near_pole(amplitude=0.05)
    run = rapid_stabilize(u0, 4.0, 0.5, config=SolverConfig(dt=1e-3))
    seminorms = run.summary['v_seminorm']
    assert np.all(np.diff(seminorms) < 0)
    assert run.summary['decay_rate'] > 1.0
    assert run.summary['gamma'] == pytest.approx(4.0)


def test_null_control_at_target_is_zero():
    north = SphereField(np.tile([0.0, 0.0, 1.0], (GRID.size, 1)), GRID)
    record, trajectory = small_time_null_control(north, 1.0)
    assert record.l_inf_l2() == 0.0
    assert trajectory.summary['stages'] == 0


def test_null_control_reaches_the_pole():
    u0, v0 = make_near_pole()
    assert sobolev_norm(v0, GRID, 1) < 1e-2
    record, trajectory = small_time_null_control(u0, 1.0, config=SolverConfig(dt=1e-3))
    assert trajectory.summary['terminal_h1'] <= 1e-6
    assert np.allclose(trajectory.final, [0.0, 0.0, 1.0])
    assert trajectory.times[-1] == pytest.approx(1.0)
    assert record.end == pytest.approx(1.0)
    assert all(ratio < 1 for ratio in trajectory.summary['stage_ratios'])


def test_basin_measurement_admits_small_data():
    largest, outcomes = measure_basin(4.0, FULL, [1e-3, 1e-2], horizon=0.5)
    assert outcomes == {1e-3: True, 1e-2: True}
    assert largest == 1e-2


@pytest.mark.slow
def test_null_control_cost_grows_as_the_horizon_shrinks():
    u0, _ = make_near_pole(amplitude=1e-4)
    sweep = null_control_cost_sweep(u0, (1.0, 0.5, 0.25), FULL, SolverConfig(dt=1e-3))
    assert sweep['costs'][2] > sweep['costs'][0]
    assert sweep['slope'] > 0
    assert sweep['r_squared'] >= 0.9

import math

import numpy as np
import pytest

from hmhf_control import geodesic_control
from hmhf_control.errors import BlowupDetected, DegreeMismatch, DimensionTooSmall, ValidationError
from hmhf_control.flow_solver import ControlRecord, SolverConfig, replay_distance
from hmhf_control.geodesic_control import (
    TRACKING_GAIN,
    PolarState,
    PolarTracking,
    WindingProfile,
    build_theta1,
    change_winding,
    deformation_homotopy,
    off_circle_distance,
    steer_on_geodesic,
    wrap_angle,
)
from hmhf_control.spectral_grid import TWO_PI, PeriodicGrid, Window
from hmhf_control.sphere_geometry import GeodesicChart, SphereField, field_degree, harmonic_map, winding_degree


GRID = PeriodicGrid(128)
WINDOW = Window(GRID, ((0.0, 1.5 * math.pi),))


def test_wrap_angle():
    assert wrap_angle(3 * math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(0.5) == pytest.approx(0.5)


def test_polar_state_of_harmonic_map():
    chart = GeodesicChart.standard(2, 2, phase=0.3)
    field = harmonic_map(chart, GRID)
    polar = PolarState.from_field(field, chart)
    assert polar.winding == 2
    assert np.allclose(polar.lift(), field.values)
    assert off_circle_distance(field, chart) < 1e-14
    with pytest.raises(ValidationError):
        PolarState(polar.theta, chart, 1)


def test_theta1_profile():
    n, n1, delta = 1, 2, 1.0
    theta1 = build_theta1(GRID, n, n1, delta)
    x = GRID.nodes
    before = x < TWO_PI - delta
    assert np.allclose(theta1[before], n1 * x[before])
    assert winding_degree(theta1) == n


def test_erf_profile_derivative():
    profile = WindingProfile(1, 3, 1.0, 2.0, 'erf')
    x = np.linspace(2.0, 2.5, 11)
    h = 1e-6
    numeric = (profile.value(x + h) - profile.value(x - h)) / (2 * h)
    assert np.allclose(profile.jet(x)[1], numeric, rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize('kwargs', [
    {'delta': math.pi},
    {'blend': 'cubic'},
    {'start': 6.0},
])
def test_profile_validation(kwargs):
    params = {'n': 1, 'n1': 2, 'delta': 1.0, 'start': 1.0}
    params.update(kwargs)
    with pytest.raises(ValidationError):
        WindingProfile(**params)


def test_steering_keeps_the_degree():
    chart = GeodesicChart.standard(1, 1)
    polar = PolarState.from_field(harmonic_map(chart, GRID), chart)
    with pytest.raises(DegreeMismatch):
        steer_on_geodesic(polar, (2, 0.0), 1.0, WINDOW)


def test_steering_checks_gain_and_settle():
    chart = GeodesicChart.standard(1, 2)
    polar = PolarState.from_field(harmonic_map(chart, GRID), chart)
    with pytest.raises(ValidationError, match='Reduce dt'):
        steer_on_geodesic(polar, (1, 0.0), 1.0, WINDOW, SolverConfig(dt=1e-2))
    with pytest.raises(ValidationError):
        steer_on_geodesic(polar, (1, 0.0), 1.0, WINDOW, settle=-1.0)


def test_polar_tracking_turns_along_the_circle():
    chart = GeodesicChart.standard(1, 2)
    theta = GRID.nodes + 0.2
    values = chart.point(theta)
    drive = ControlRecord(np.array([0.0, 1.0]), np.full((2, GRID.size, 1), 0.5), Window.full(GRID))
    times = np.array([0.0, 1.0])
    tracker = PolarTracking(chart, drive, np.zeros(GRID.size), times, np.stack([theta, theta]),
                            Window.full(GRID), TRACKING_GAIN)
    tangent = np.outer(-np.sin(theta), chart.alpha) + np.outer(np.cos(theta), chart.beta)
    assert np.allclose(tracker.force_at(0.5, values), 0.5 * tangent)
    held = PolarTracking(chart, drive, np.zeros(GRID.size), times, np.stack([theta, theta]),
                         Window.full(GRID), 10.0, hold=theta - 0.1)
    after = held.force_at(2.0, values)
    assert np.allclose(after, 10.0 * (chart.point(theta - 0.1) - values))


def test_steering_blowup_suggests_a_smaller_dt(monkeypatch):
    chart = GeodesicChart.standard(1, 2)
    polar = PolarState.from_field(harmonic_map(GeodesicChart.standard(1, 2, phase=0.3), GRID), chart)

    def unstable(*args, **kwargs):
        raise BlowupDetected('Energy grew past the bound.', time=0.004)

    monkeypatch.setattr(geodesic_control, 'realize_feedback', unstable)
    with pytest.raises(BlowupDetected, match='try dt below') as info:
        steer_on_geodesic(polar, (1, 0.0), 0.5, WINDOW, SolverConfig(dt=1e-3))
    assert info.value.time == 0.004
    assert 'Energy grew past the bound.' in str(info.value)


@pytest.mark.slow
def test_steering_rotates_the_phase():
    grid = PeriodicGrid(64)
    chart = GeodesicChart.standard(1, 2)
    start = harmonic_map(GeodesicChart.standard(1, 2, phase=0.3), grid)
    polar = PolarState.from_field(start, chart)
    config = SolverConfig(dt=1e-3)
    record, trajectory = steer_on_geodesic(polar, (1, 0.0), 0.5, Window.full(grid), config)
    assert trajectory.summary['theta_error_exact'] < 1e-3
    assert trajectory.summary['theta_error_simulated'] < 1e-4
    assert trajectory.summary['off_circle'] < 1e-8
    assert np.all(trajectory.diagnostics['degree'] == 1)
    assert record.end == pytest.approx(0.5)
    assert replay_distance(trajectory, record, config) < 1e-12

def test_winding_change_argument_checks():
    with pytest.raises(DimensionTooSmall):
        change_winding(harmonic_map(GeodesicChart.standard(1, 1), GRID), GeodesicChart.standard(1, 1), 2, 1.0, WINDOW)
    with pytest.raises(DegreeMismatch):
        change_winding(harmonic_map(GeodesicChart.standard(2, 2), GRID), GeodesicChart.standard(1, 2), 3, 1.0, WINDOW)


def test_deformation_checks():
    circle = harmonic_map(GeodesicChart.standard(1, 1), GRID)
    with pytest.raises(DimensionTooSmall):
        deformation_homotopy(circle, circle, 1.0, WINDOW)
    a = harmonic_map(GeodesicChart.standard(1, 2), GRID)
    b = harmonic_map(GeodesicChart.standard(2, 2), GRID)
    with pytest.raises(ValidationError):
        deformation_homotopy(a, b, 1.0, WINDOW)


def test_deformation_of_a_harmonic_map_to_itself_needs_no_force():
    field = harmonic_map(GeodesicChart.standard(1, 2), GRID)
    path = deformation_homotopy(field, field, 1.0, WINDOW, samples=10)
    assert path.times.size == 11
    assert np.allclose(path.states, field.values[None], atol=1e-12)
    assert np.allclose(path.induced_force, 0.0, atol=1e-8)
    assert path.force_leak < 1e-8


def test_deformation_force_stays_in_window():
    x = GRID.nodes
    a = harmonic_map(GeodesicChart.standard(1, 2), GRID).values
    bump = np.where(WINDOW.mask > 0, np.sin(x * 4 / 3) ** 4, 0.0)
    b = a.copy()
    b[:, 2] = 0.5 * bump
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    path = deformation_homotopy(SphereField(a, GRID), SphereField(b, GRID), 1.0, WINDOW, samples=20)
    assert path.force_leak < 1e-8
    assert np.allclose(path.states[-1], b, atol=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize('n, n1', [(0, 1), (1, -1)])
def test_winding_change_replays_to_the_target(n, n1):
    window = Window.full(GRID)
    chart = GeodesicChart.standard(n, 2)
    config = SolverConfig(dt=1e-4)
    control, trajectory = change_winding(harmonic_map(chart, GRID), chart, n1, 1.0, window, config=config,
                                         settle=0.25)
    summary = trajectory.summary
    target = harmonic_map(GeodesicChart.standard(n1, 2), GRID).values
    assert summary['terminal_h1'] <= 1e-8
    assert summary['force_leak'] <= 1e-9
    assert len(control.records) == 3
    assert control.end == pytest.approx(1.25)
    assert trajectory.times[-1] == pytest.approx(1.25)
    assert field_degree(trajectory.final, chart.alpha, chart.beta) == n1
    assert np.allclose(trajectory.final, target, atol=1e-8)
    assert replay_distance(trajectory, control, config) <= 10 * config.dt


def test_winding_change_rejects_stiff_gain():
    chart = GeodesicChart.standard(1, 2)
    with pytest.raises(ValidationError, match='too stiff'):
        change_winding(harmonic_map(chart, GRID), chart, 2, 1.0, WINDOW, gain=TRACKING_GAIN,
                       config=SolverConfig(dt=5e-3))

import math

import numpy as np
import pytest

from hmhf_control.errors import (
    DegenerateMode,
    SizeMismatch,
    SouthPoleSingularity,
    UnresolvableWinding,
    ValidationError,
)
from hmhf_control.spectral_grid import TWO_PI, PeriodicGrid
from hmhf_control.sphere_geometry import (
    GeodesicChart,
    Rotation,
    SphereField,
    align_rotation,
    chart_fit,
    constraint_residual,
    family_gamma,
    field_degree,
    harmonic_map,
    pole_frame,
    renormalize,
    stereo_forward,
    stereo_inverse,
    stereo_push,
    tangent_project,
    winding_degree,
)


GRID = PeriodicGrid(64)


@pytest.mark.parametrize('n', [0, 1, 2, 3])
def test_harmonic_map_energy(n):
    field = harmonic_map(GeodesicChart.standard(n, 2), GRID)
    assert field.energy == pytest.approx(TWO_PI * n * n, abs=1e-8)
    assert constraint_residual(field.values) < 1e-12


def test_chart_rejects_non_orthogonal_vectors():
    with pytest.raises(ValidationError):
        GeodesicChart(1, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ValidationError):
        GeodesicChart(1, [2.0, 0.0, 0.0], [0.0, 1.0, 0.0])


def test_phase_folding_keeps_the_curve():
    chart = GeodesicChart.standard(2, 3, phase=0.7)
    folded = chart.with_phase_folded()
    assert folded.phase == 0.0
    assert np.allclose(harmonic_map(chart, GRID).values, harmonic_map(folded, GRID).values)


def test_sphere_field_validation():
    with pytest.raises(SizeMismatch):
        SphereField(np.ones((32, 3)) / math.sqrt(3), GRID)
    with pytest.raises(ValidationError):
        SphereField(np.ones((64, 3)), GRID)


def test_rotation_requires_orthogonal_matrix():
    with pytest.raises(ValidationError):
        Rotation(np.array([[1.0, 0.0], [0.0, 2.0]]))
    rot = Rotation(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.allclose(rot.inverse.apply(rot.apply([1.0, 0.0])), [1.0, 0.0])


def test_tangent_project_and_renormalize():
    u = np.array([[0.0, 0.0, 1.0]])
    f = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(tangent_project(f, u), [[1.0, 2.0, 0.0]])
    assert np.allclose(renormalize([[3.0, 4.0, 0.0]]), [[0.6, 0.8, 0.0]])


def test_stereographic_chart():
    assert np.allclose(stereo_forward([0.0, 0.0, 1.0]), [0.0, 0.0])
    assert np.allclose(stereo_forward([1.0, 0.0, 0.0]), [2.0, 0.0])
    u = renormalize(np.array([[0.3, -0.4, 0.5], [0.1, 0.9, -0.2]]))
    assert np.allclose(stereo_inverse(stereo_forward(u)), u)
    with pytest.raises(SouthPoleSingularity):
        stereo_forward([0.0, 0.0, -1.0])


def test_stereo_push_is_the_differential():
    v = np.array([0.4, -0.3])
    g = np.array([0.2, 0.5])
    h = 1e-6
    numeric = (stereo_inverse(v + h * g) - stereo_inverse(v - h * g)) / (2 * h)
    assert np.allclose(stereo_push(v, g), numeric, atol=1e-8)


@pytest.mark.parametrize('n', [-2, 0, 1, 3])
def test_winding_degree_of_linear_angle(n):
    assert winding_degree(n * GRID.nodes) == n


def test_winding_degree_rejects_half_turn_jumps():
    theta = np.zeros(8)
    theta[4] = math.pi
    with pytest.raises(UnresolvableWinding):
        winding_degree(theta)


def test_field_degree_of_harmonic_map():
    chart = GeodesicChart.standard(3, 2)
    values = harmonic_map(chart, GRID).values
    assert field_degree(values, chart.alpha, chart.beta) == 3
    assert field_degree(values, chart.beta, chart.alpha) == -3


def test_chart_fit_recovers_harmonic_map():
    rot = align_rotation(GeodesicChart(2, [0.0, 0.6, 0.8], [1.0, 0.0, 0.0])).inverse
    field = harmonic_map(GeodesicChart.standard(2, 2), GRID).rotated(rot)
    chart, residual = chart_fit(field)
    assert chart.n == 2
    assert residual < 1e-10
    assert np.allclose(harmonic_map(chart, GRID).values, field.values, atol=1e-10)


def test_chart_fit_degenerate_mode():
    # square wave between the poles: only odd modes, dominant level is even
    sign = np.where(GRID.nodes < math.pi, 1.0, -1.0)
    values = np.zeros((GRID.size, 3))
    values[:, 2] = sign
    with pytest.raises(DegenerateMode):
        chart_fit(SphereField(values, GRID))


def test_pole_frame_sends_point_to_north_pole():
    point = renormalize(np.array([0.2, -0.5, 0.3, 0.1]))
    assert np.allclose(pole_frame(point).apply(point), [0.0, 0.0, 0.0, 1.0])


def test_family_gamma_energy():
    s = [0.7, 1.1]
    field = family_gamma(3, s, GRID)
    expected = TWO_PI * math.sin(s[0]) ** 2 * math.sin(s[1]) ** 2
    assert field.energy == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ValidationError):
        family_gamma(3, [0.5], GRID)
    with pytest.raises(ValidationError):
        family_gamma(1, [], GRID)

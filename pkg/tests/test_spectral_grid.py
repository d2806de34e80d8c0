import math

import numpy as np
import pytest

from hmhf_control.errors import SingularGram, SizeMismatch, ValidationError
from hmhf_control.spectral_grid import (
    TWO_PI,
    PeriodicGrid,
    Window,
    dealias_mask,
    derivative,
    dft,
    energy,
    fit_c0,
    fourier_operator,
    idft,
    l2_inner,
    low_mode_mask,
    p_lambda,
    p_lambda_perp,
    resolvable_lambda_cap,
    sobolev_norm,
    spectral_constant,
)


def make_grid(*, size=64):
    return PeriodicGrid(size)


@pytest.mark.parametrize('size', [16, 48, 100, 0])
def test_grid_rejects_bad_sizes(size):
    with pytest.raises(ValidationError):
        PeriodicGrid(size)


def test_grid_nodes_and_wavenumbers():
    grid = make_grid()
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == pytest.approx(TWO_PI - grid.spacing)
    assert grid.wavenumbers[1] == 1.0
    assert grid.wavenumbers[grid.nyquist] == -32.0


def test_check_raises_size_mismatch():
    with pytest.raises(SizeMismatch):
        make_grid().check(np.zeros(63))


def test_dft_roundtrip_and_parseval():
    grid = make_grid()
    f = np.cos(3 * grid.nodes) + 0.5 * np.sin(grid.nodes)
    c = dft(f, grid)
    assert np.allclose(idft(c, grid), f)
    assert abs(c[3]) == pytest.approx(0.5)
    assert TWO_PI * np.sum(np.abs(c) ** 2) == pytest.approx(l2_inner(f, f, grid))


def test_derivatives_of_trig_polynomial():
    grid = make_grid()
    x = grid.nodes
    f = np.sin(2 * x)
    assert np.allclose(derivative(f, grid, 1), 2 * np.cos(2 * x), atol=1e-12)
    assert np.allclose(derivative(f, grid, 2), -4 * np.sin(2 * x), atol=1e-11)
    with pytest.raises(ValidationError):
        derivative(f, grid, 3)


def test_vector_derivative_acts_per_column():
    grid = make_grid()
    x = grid.nodes
    u = np.stack([np.cos(x), np.sin(x)], axis=1)
    ux = derivative(u, grid, 1)
    assert np.allclose(ux, np.stack([-np.sin(x), np.cos(x)], axis=1), atol=1e-12)


def test_sobolev_norms_of_single_mode():
    grid = make_grid()
    f = np.cos(4 * grid.nodes)
    assert sobolev_norm(f, grid, 0) == pytest.approx(math.sqrt(math.pi))
    assert sobolev_norm(f, grid, 1) == pytest.approx(math.sqrt(math.pi * 17))
    assert sobolev_norm(f, grid, 2, homogeneous=True) == pytest.approx(math.sqrt(math.pi) * 16)
    assert energy(f, grid) == pytest.approx(16 * math.pi)


def test_energy_of_circle_map_is_two_pi_n_squared():
    grid = make_grid()
    x = grid.nodes
    u = np.stack([np.cos(3 * x), np.sin(3 * x)], axis=1)
    assert energy(u, grid) == pytest.approx(TWO_PI * 9, rel=1e-12)


def test_projectors_split_modes():
    grid = make_grid()
    x = grid.nodes
    f = np.cos(x) + np.cos(5 * x)
    assert np.allclose(p_lambda(f, grid, 4), np.cos(x))
    assert np.allclose(p_lambda_perp(f, grid, 4), np.cos(5 * x))
    # boundary n^2 = lambda is kept
    assert low_mode_mask(grid, 25)[5]
    with pytest.raises(ValidationError):
        low_mode_mask(grid, 0)


def test_dealias_mask_keeps_two_thirds():
    grid = make_grid()
    mask = dealias_mask(grid)
    assert mask[:21].all()
    assert not mask[22]


def test_fourier_operator_matches_spectral_derivative():
    grid = make_grid(size=32)
    lap = fourier_operator(grid, -grid.wavenumbers ** 2)
    f = np.sin(3 * grid.nodes)
    assert np.allclose(lap @ f, derivative(f, grid, 2), atol=1e-10)


def test_window_mask_and_measure():
    grid = make_grid()
    window = Window(grid, ((0.0, math.pi),))
    assert window.mask.sum() == 32
    assert window.measure == pytest.approx(math.pi)
    assert not window.is_full
    assert Window.full(grid).is_full
    with pytest.raises(ValueError):
        window.mask[0] = 0.0


def test_window_wraps_through_zero():
    grid = make_grid()
    window = Window(grid, ((1.5 * math.pi, 0.5 * math.pi),))
    assert window.mask[0] == 1.0
    assert window.mask[grid.nyquist] == 0.0


def test_empty_window_rejected():
    with pytest.raises(ValidationError):
        Window(make_grid(size=32), ((0.01, 0.02),))


def test_window_restrict_vector_field():
    grid = make_grid()
    window = Window(grid, ((0.0, math.pi),))
    v = np.ones((grid.size, 3))
    restricted = window.restrict(v)
    assert restricted[:32].sum() == 96
    assert restricted[32:].sum() == 0


def test_spectral_constant_full_window_is_one():
    window = Window.full(make_grid())
    assert spectral_constant(16, window) == pytest.approx(1.0)


def test_spectral_constant_in_range_and_nonincreasing():
    window = Window(make_grid(size=128), ((0.0, math.pi),))
    values = [spectral_constant(n * n, window) for n in range(1, 6)]
    assert all(0 < c <= 1 for c in values)
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_spectral_constant_singular_for_tiny_window():
    window = Window(make_grid(size=256), ((0.0, math.pi / 4),))
    with pytest.raises(SingularGram):
        spectral_constant(900, window)


def test_fit_c0_is_non_negative_and_cap_is_square():
    window = Window(make_grid(size=128), ((0.0, 1.5 * math.pi),))
    assert fit_c0(window, [1, 4, 9]) >= 0.0
    cap = resolvable_lambda_cap(window, 64)
    assert math.isqrt(cap) ** 2 == cap
    assert cap <= 64

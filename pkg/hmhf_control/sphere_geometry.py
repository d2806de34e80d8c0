"""
Sphere Geometry
Pointwise algebra on S^k: tangent projection, harmonic maps, stereographic charts,
winding degree, chart fitting and the topological family A_{k-1}
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateMode,
    SizeMismatch,
    SouthPoleSingularity,
    UnresolvableWinding,
    ValidationError,
)
from .spectral_grid import PeriodicGrid, TWO_PI, dft, sobolev_norm, energy


logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-12
ROTATION_TOLERANCE = 1e-11
SOUTH_POLE_TOLERANCE = 1e-9
FIELD_TOLERANCE = 1e-8
MODE_FLOOR = 1e-6


def as_unit_vector(coords, tolerance=UNIT_TOLERANCE):
    """Validate a point of S^k and return it as a float array."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 1 or coords.size < 2:
        raise ValidationError(f"Unit vector must be 1-D with at least 2 entries, got shape {coords.shape}.")
    if abs(np.linalg.norm(coords) - 1.0) > tolerance:
        raise ValidationError(f"Vector {coords} is not unit length (norm {np.linalg.norm(coords):.15g}).")
    return coords


def basis_vector(index, dim):
    e = np.zeros(dim)
    e[index] = 1.0
    return e


@dataclass(frozen=True, eq=False)
class GeodesicChart:
    """Harmonic map descriptor x -> alpha cos(n x + phase) + beta sin(n x + phase)."""

    n: int
    alpha: np.ndarray
    beta: np.ndarray
    phase: float = 0.0

    def __post_init__(self):
        alpha = as_unit_vector(self.alpha)
        beta = as_unit_vector(self.beta)
        if alpha.shape != beta.shape:
            raise ValidationError("Chart vectors alpha and beta have different lengths.")
        if abs(float(alpha @ beta)) > UNIT_TOLERANCE:
            raise ValidationError(f"Chart vectors are not orthogonal (<alpha,beta> = {alpha @ beta:.3e}).")
        object.__setattr__(self, 'n', int(self.n))
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'phase', float(self.phase))

    @property
    def k(self):
        return self.alpha.size - 1

    @classmethod
    def standard(cls, n, k, phase=0.0):
        """Chart of phi(n x) = (cos nx, sin nx, 0, ..., 0)."""
        return cls(n, basis_vector(0, k + 1), basis_vector(1, k + 1), phase)

    def with_phase_folded(self):
        """Same curve with phase 0 (phase absorbed into alpha, beta)."""
        c, s = math.cos(self.phase), math.sin(self.phase)
        return GeodesicChart(self.n, c * self.alpha + s * self.beta, -s * self.alpha + c * self.beta, 0.0)

    def point(self, angle):
        """Point alpha cos(angle) + beta sin(angle) of the chart circle."""
        angle = np.asarray(angle, dtype=float)
        return np.multiply.outer(np.cos(angle), self.alpha) + np.multiply.outer(np.sin(angle), self.beta)


@dataclass(frozen=True, eq=False)
class Rotation:
    """Orthogonal matrix acting on R^{k+1}."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValidationError(f"Rotation must be square, got shape {matrix.shape}.")
        defect = np.max(np.abs(matrix.T @ matrix - np.eye(matrix.shape[0])))
        if defect > ROTATION_TOLERANCE:
            raise ValidationError(f"Matrix is not orthogonal (defect {defect:.3e}).")
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @property
    def inverse(self):
        return Rotation(self.matrix.T)

    def apply(self, values):
        """Rotate vectors stored along the last axis."""
        return np.asarray(values, dtype=float) @ self.matrix.T


@dataclass(frozen=True, eq=False)
class SphereField:
    """Grid samples of a map T1 -> S^k, one row per node."""

    values: np.ndarray
    grid: PeriodicGrid
    tolerance: float = FIELD_TOLERANCE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != self.grid.size:
            raise SizeMismatch(
                f"Sphere field has shape {values.shape}, expected ({self.grid.size}, k+1)."
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("Sphere field contains non-finite samples.")
        residual = constraint_residual(values)
        if residual > self.tolerance:
            raise ValidationError(
                f"Sphere field leaves the sphere by {residual:.3e} (tolerance {self.tolerance:.1e}).\n"
                f"Renormalize the samples first."
            )
        object.__setattr__(self, 'values', values)

    @property
    def k(self):
        return self.values.shape[1] - 1

    @property
    def energy(self):
        return energy(self.values, self.grid)

    def rotated(self, rotation):
        return SphereField(rotation.apply(self.values), self.grid, self.tolerance)


def field_values(field):
    """Raw (size, k+1) array behind a SphereField or array."""
    if isinstance(field, SphereField):
        return field.values
    return np.asarray(field, dtype=float)


def constraint_residual(values):
    """max_x | |u(x)| - 1 |."""
    return float(np.max(np.abs(np.linalg.norm(values, axis=-1) - 1.0)))


def renormalize(values):
    """Pointwise projection back to the sphere."""
    values = np.asarray(values, dtype=float)
    return values / np.linalg.norm(values, axis=-1, keepdims=True)


def tangent_project(f, u):
    """Tangential part f - <f,u> u, broadcast along the last axis."""
    f = np.asarray(f, dtype=float)
    u = np.asarray(u, dtype=float)
    return f - np.sum(f * u, axis=-1, keepdims=True) * u


def harmonic_map(chart, grid):
    """Sample the harmonic map described by chart on the grid."""
    angle = chart.n * grid.nodes + chart.phase
    return SphereField(chart.point(angle), grid)


# ---------------------------------------------------------------------------
# Stereographic chart (projection from the south pole)


def stereo_forward(u):
    """
    Stereographic coordinates v = 2 u_bar / (1 + z) of points u = (u_bar, z).

    Raises:
        SouthPoleSingularity: if some point has z <= -1 + 1e-9
    """
    u = np.asarray(u, dtype=float)
    z = u[..., -1]
    if np.any(z <= -1.0 + SOUTH_POLE_TOLERANCE):
        raise SouthPoleSingularity(
            f"State reaches the south pole (min last coordinate {np.min(z):.12f}).\n"
            f"Rotate the state with a frame that moves the target to the north pole."
        )
    return 2.0 * u[..., :-1] / (1.0 + z)[..., None]


def stereo_inverse(v):
    """Point (4v/(4+s), (4-s)/(4+s)) of S^k for v in R^k, s = |v|^2."""
    v = np.asarray(v, dtype=float)
    s = np.sum(v * v, axis=-1, keepdims=True)
    q = 4.0 + s
    return np.concatenate([4.0 * v / q, (4.0 - s) / q], axis=-1)


def stereo_push(v, g):
    """Differential of stereo_inverse at v applied to the chart vector g."""
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    q = 4.0 + np.sum(v * v, axis=-1, keepdims=True)
    vg = np.sum(v * g, axis=-1, keepdims=True)
    return np.concatenate([4.0 * g / q - 8.0 * vg * v / q ** 2, -16.0 * vg / q ** 2], axis=-1)


def stereo_forward_jet(u, ux, uxx):
    """Stereographic coordinates with first and second x-derivatives."""
    u, ux, uxx = (np.asarray(a, dtype=float) for a in (u, ux, uxx))
    stereo_forward(u)
    ub, ubx, ubxx = u[:, :-1], ux[:, :-1], uxx[:, :-1]
    w = (1.0 + u[:, -1])[:, None]
    zx, zxx = ux[:, -1:], uxx[:, -1:]
    c = 2.0 * ub / w
    cx = 2.0 * ubx / w - 2.0 * ub * zx / w ** 2
    cxx = (2.0 * ubxx / w - 4.0 * ubx * zx / w ** 2
           - 2.0 * ub * zxx / w ** 2 + 4.0 * ub * zx ** 2 / w ** 3)
    return c, cx, cxx


def stereo_inverse_jet(c, cx, cxx):
    """Inverse chart map with first and second x-derivatives."""
    c, cx, cxx = (np.asarray(a, dtype=float) for a in (c, cx, cxx))
    s = np.sum(c * c, axis=-1, keepdims=True)
    sx = 2.0 * np.sum(c * cx, axis=-1, keepdims=True)
    sxx = 2.0 * np.sum(cx * cx, axis=-1, keepdims=True) + 2.0 * np.sum(c * cxx, axis=-1, keepdims=True)
    q = 4.0 + s
    ub = 4.0 * c / q
    ubx = 4.0 * cx / q - 4.0 * c * sx / q ** 2
    ubxx = 4.0 * cxx / q - 8.0 * cx * sx / q ** 2 - 4.0 * c * sxx / q ** 2 + 8.0 * c * sx ** 2 / q ** 3
    z = (4.0 - s) / q
    zx = -8.0 * sx / q ** 2
    zxx = -8.0 * sxx / q ** 2 + 16.0 * sx ** 2 / q ** 3
    return (np.concatenate([ub, z], axis=-1),
            np.concatenate([ubx, zx], axis=-1),
            np.concatenate([ubxx, zxx], axis=-1))


# ---------------------------------------------------------------------------
# Degree


def winding_degree(theta):
    """
    Winding number of a sampled angle, counting the closing step x_{n-1} -> 2*pi.

    Raises:
        UnresolvableWinding: if an adjacent jump reaches half a turn
    """
    theta = np.asarray(theta, dtype=float)
    steps = np.diff(np.append(theta, theta[0]))
    wrapped = np.mod(steps + math.pi, TWO_PI) - math.pi
    if np.any(np.abs(wrapped) >= math.pi - 1e-12):
        worst = int(np.argmax(np.abs(wrapped)))
        raise UnresolvableWinding(
            f"Angle jumps by {wrapped[worst]:.4f} rad at node {worst}.\n"
            f"Refine the grid so that adjacent samples differ by less than pi."
        )
    return int(round(float(np.sum(wrapped)) / TWO_PI))


def field_angle(values, alpha, beta):
    """Polar angle atan2(<u,beta>, <u,alpha>) of a field in the plane span{alpha, beta}."""
    values = field_values(values)
    return np.arctan2(values @ beta, values @ alpha)


def field_degree(values, alpha, beta):
    """Winding of a field around the circle spanned by alpha, beta."""
    return winding_degree(field_angle(values, alpha, beta))


# ---------------------------------------------------------------------------
# Charts and rotations


def complete_basis(rows, dim):
    """Orthonormal dim x dim matrix whose leading rows are the given orthonormal rows."""
    basis = [np.asarray(r, dtype=float) for r in rows]
    for i in range(dim):
        if len(basis) == dim:
            break
        candidate = basis_vector(i, dim)
        for b in basis:
            candidate = candidate - (candidate @ b) * b
        norm = np.linalg.norm(candidate)
        if norm > 1e-8:
            basis.append(candidate / norm)
    return np.vstack(basis)


def chart_fit(field, grid=None):
    """
    Fit the nearest harmonic map through its dominant Fourier mode.

    Args:
        field: SphereField (or raw array together with grid)
        grid: PeriodicGrid when field is a raw array

    Returns:
        tuple: (GeodesicChart, H1 distance of the field to the fitted harmonic map)

    Raises:
        DegenerateMode: if the selected mode has amplitude below 1e-6
    """
    if isinstance(field, SphereField):
        grid = field.grid
    values = field_values(field)
    dim = values.shape[1]
    n = int(round(math.sqrt(energy(values, grid) / TWO_PI)))
    if n >= grid.nyquist:
        raise DegenerateMode(f"Energy level N={n} is not resolved on a {grid.size}-node grid.")

    coeffs = dft(values, grid)
    if n == 0:
        mean = np.real(coeffs[0])
        size = np.linalg.norm(mean)
        if size < MODE_FLOOR:
            raise DegenerateMode(f"Field mean has amplitude {size:.3e}; no constant to fit.")
        alpha = mean / size
        beta = complete_basis([alpha], dim)[1]
    else:
        mode = coeffs[n]
        if np.linalg.norm(mode) < MODE_FLOOR:
            raise DegenerateMode(
                f"Mode {n} has amplitude {np.linalg.norm(mode):.3e}; no dominant mode to fit."
            )
        pair = np.vstack([np.real(2.0 * mode), -np.imag(2.0 * mode)])
        left, _, right = scipy.linalg.svd(pair, full_matrices=False)
        polar = left @ right
        alpha, beta = polar[0], polar[1]
        beta = beta - (beta @ alpha) * alpha
        beta = beta / np.linalg.norm(beta)

    chart = GeodesicChart(n, alpha, beta, 0.0)
    residual = sobolev_norm(values - harmonic_map(chart, grid).values, grid, 1)
    return chart, residual


def align_rotation(chart):
    """Rotation A with A alpha = e1, A beta = e2, completed by Gram-Schmidt."""
    dim = chart.alpha.size
    return Rotation(complete_basis([chart.alpha, chart.beta], dim))


def pole_frame(point):
    """Rotation sending a point of S^k to the north pole e_{k+1}."""
    point = as_unit_vector(point, 1e-10)
    rows = complete_basis([point / np.linalg.norm(point)], point.size)
    return Rotation(np.roll(rows, -1, axis=0))


# ---------------------------------------------------------------------------
# Topological family


def _family_point(s, x):
    if len(s) == 1:
        sign = 1.0 if 0.0 <= np.mod(s[0], TWO_PI) <= math.pi else -1.0
        return np.stack([sign * math.sin(s[0]) * np.cos(x),
                         math.sin(s[0]) * np.sin(x),
                         np.full_like(x, math.cos(s[0]))], axis=-1)
    sign = 1.0 if 0.0 <= np.mod(s[0], TWO_PI) <= math.pi else -1.0
    inner = _family_point(s[1:], x)
    tail = np.full((x.size, 1), math.cos(s[0]))
    return np.concatenate([sign * math.sin(s[0]) * inner, tail], axis=-1)


def family_gamma(k, s, grid):
    """
    Curve x -> A_{k-1}(s_1, ..., s_{k-1}, x) of the degree-2^{k-1} family on S^k.

    Energy is 2*pi * prod sin(s_i)^2.
    """
    if k < 2:
        raise ValidationError(f"family_gamma needs k >= 2, got {k}.")
    s = [float(v) for v in np.atleast_1d(s)]
    if len(s) != k - 1:
        raise ValidationError(f"family_gamma(k={k}) takes {k - 1} parameters, got {len(s)}.")
    return SphereField(_family_point(s, grid.nodes), grid)

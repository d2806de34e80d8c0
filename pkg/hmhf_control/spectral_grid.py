"""
Spectral Grid
Periodic grid on T1 = R/2piZ, Fourier analysis, Sobolev norms, the low-frequency
projector P_lambda and the windowed spectral constant c(lambda, omega)
"""

import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import SizeMismatch, SingularGram, ValidationError


logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
GRAM_FLOOR = 1e-14


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid x_j = 2*pi*j/size on the circle."""

    size: int

    def __post_init__(self):
        size = self.size
        if not isinstance(size, (int, np.integer)) or size < 32 or size & (size - 1):
            raise ValidationError(
                f"Grid size must be a power of two >= 32, got {size}.\n"
                f"Use 64, 128, 256, ..."
            )

    @property
    def spacing(self):
        return TWO_PI / self.size

    @property
    def nodes(self):
        return np.arange(self.size) * self.spacing

    @property
    def wavenumbers(self):
        """Integer wavenumbers in FFT order (as floats)."""
        return scipy.fft.fftfreq(self.size, d=1.0 / self.size)

    @property
    def nyquist(self):
        return self.size // 2

    def check(self, values):
        """Raise SizeMismatch unless values has one row per node."""
        values = np.asarray(values)
        if values.ndim == 0 or values.shape[0] != self.size:
            raise SizeMismatch(
                f"Field has {values.shape[0] if values.ndim else 0} samples, grid has {self.size} nodes."
            )
        return values


@dataclass(frozen=True)
class Window:
    """
    Union of half-open arcs [a, b) of the circle, sampled as a 0/1 node mask.

    Arcs may wrap through 0 (b < a). An arc of length >= 2*pi covers the circle.
    """

    grid: PeriodicGrid
    arcs: tuple
    mask: np.ndarray = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        arcs = tuple((float(a), float(b)) for a, b in self.arcs)
        object.__setattr__(self, 'arcs', arcs)
        x = self.grid.nodes
        mask = np.zeros(self.grid.size)
        for start, end in arcs:
            length = end - start
            if length <= 0:
                length += TWO_PI
            if length >= TWO_PI:
                mask[:] = 1.0
                continue
            offset = np.mod(x - start, TWO_PI)
            mask[offset < length - 1e-12] = 1.0
        if not mask.any():
            raise ValidationError(
                f"Window {arcs} contains no grid node.\n"
                f"Widen the arcs or refine the grid."
            )
        mask.setflags(write=False)
        object.__setattr__(self, 'mask', mask)

    @classmethod
    def full(cls, grid):
        return cls(grid, ((0.0, TWO_PI),))

    @property
    def measure(self):
        """Node-count measure |omega| = (#nodes in window) * spacing."""
        return float(self.mask.sum()) * self.grid.spacing

    @property
    def is_full(self):
        return bool(self.mask.all())

    def restrict(self, values):
        """Multiply a scalar or vector field by the window indicator."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return values * self.mask
        return values * self.mask[:, None]


# ---------------------------------------------------------------------------
# Transforms


def dft(values, grid):
    """
    Fourier coefficients c_n with f(x_j) = sum_n c_n exp(i n x_j).

    With this normalization int |f|^2 dx = 2*pi * sum |c_n|^2.
    """
    values = grid.check(values)
    return scipy.fft.fft(values, axis=0) / grid.size


def idft(coeffs, grid):
    """Real field with the given Fourier coefficients (inverse of dft)."""
    coeffs = grid.check(coeffs)
    return np.real(scipy.fft.ifft(coeffs * grid.size, axis=0))


def _broadcast(weights, coeffs):
    if coeffs.ndim == 1:
        return weights
    return weights.reshape((-1,) + (1,) * (coeffs.ndim - 1))


def derivative(values, grid, order=1):
    """Spectral derivative of order 1 or 2; order 1 drops the Nyquist mode."""
    if order not in (1, 2):
        raise ValidationError(f"Derivative order must be 1 or 2, got {order}.")
    coeffs = dft(values, grid)
    n = grid.wavenumbers
    if order == 1:
        multiplier = 1j * n
        multiplier[grid.nyquist] = 0.0
    else:
        multiplier = -n ** 2
    return idft(coeffs * _broadcast(multiplier, coeffs), grid)


def _sobolev_weights(grid, s, homogeneous):
    n2 = grid.wavenumbers ** 2
    if homogeneous:
        return n2 ** s
    return (1.0 + n2) ** s


def sobolev_norm(values, grid, s=1, homogeneous=False):
    """
    L2 (s=0), H1, H2 or homogeneous norms of a scalar or vector field.

    Args:
        values: array of shape (size,) or (size, m)
        grid: PeriodicGrid
        s: 0, 1 or 2
        homogeneous: use |n|^(2s) instead of (1+n^2)^s

    Returns:
        float
    """
    if s not in (0, 1, 2):
        raise ValidationError(f"Sobolev index must be 0, 1 or 2, got {s}.")
    coeffs = dft(values, grid)
    weights = _sobolev_weights(grid, s, homogeneous)
    power = np.abs(coeffs) ** 2
    if power.ndim > 1:
        power = power.reshape(grid.size, -1).sum(axis=1)
    return math.sqrt(TWO_PI * float(np.dot(weights, power)))


def energy(values, grid):
    """Dirichlet energy int |d_x f|^2 dx."""
    return sobolev_norm(values, grid, 1, homogeneous=True) ** 2


def l2_inner(f, g, grid):
    """L2 inner product int <f, g> dx by the rectangle rule (exact for trig polynomials)."""
    return float(np.sum(np.asarray(f) * np.asarray(g)) * grid.spacing)


# ---------------------------------------------------------------------------
# Projectors


def low_mode_mask(grid, lam):
    """Boolean mask of wavenumbers with n^2 <= lam (boundary retained)."""
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}.")
    return grid.wavenumbers ** 2 <= lam * (1.0 + 1e-12)


def p_lambda(values, grid, lam):
    """Orthogonal projection onto Fourier modes |n| <= sqrt(lam)."""
    coeffs = dft(values, grid)
    keep = low_mode_mask(grid, lam).astype(float)
    return idft(coeffs * _broadcast(keep, coeffs), grid)


def p_lambda_perp(values, grid, lam):
    """Complementary projection I - P_lambda."""
    return np.asarray(values, dtype=float) - p_lambda(values, grid, lam)


def dealias_mask(grid, margin=1.0 / 3.0):
    """Boolean mask keeping |n| <= (1 - margin) * size/2."""
    cutoff = (1.0 - margin) * grid.nyquist
    return np.abs(grid.wavenumbers) <= cutoff + 1e-12


def fourier_operator(grid, multiplier):
    """Dense real matrix M with M f = idft(multiplier * dft(f)) for real f."""
    identity = np.eye(grid.size)
    coeffs = scipy.fft.fft(identity, axis=0)
    return np.real(scipy.fft.ifft(coeffs * np.asarray(multiplier)[:, None], axis=0))


# ---------------------------------------------------------------------------
# Spectral inequality constant


def max_mode(lam):
    """Largest retained wavenumber for threshold lam."""
    return int(math.floor(math.sqrt(lam) * (1.0 + 1e-12)))


@lru_cache(maxsize=256)
def _gram_min_eigenvalue(window, n_max):
    grid = window.grid
    if n_max >= grid.nyquist:
        raise ValidationError(
            f"Mode {n_max} is not resolved on a {grid.size}-node grid."
        )
    x = grid.nodes[window.mask > 0]
    modes = np.arange(-n_max, n_max + 1)
    synthesis = np.exp(1j * np.outer(x, modes)) * math.sqrt(grid.spacing / TWO_PI)
    gram = synthesis.conj().T @ synthesis
    return float(scipy.linalg.eigvalsh(gram, subset_by_index=[0, 0])[0])


def spectral_constant(lam, window):
    """
    Observability constant of the low modes from the window.

    c(lam, omega) = min ||P f||_{L2(omega)} / ||P f||_{L2} over f = P_lam f,
    computed as the square root of the smallest eigenvalue of the windowed Gram
    matrix of the retained exponentials.

    Raises:
        SingularGram: if that eigenvalue is below 1e-14
    """
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}.")
    smallest = _gram_min_eigenvalue(window, max_mode(lam))
    if smallest < GRAM_FLOOR:
        raise SingularGram(
            f"Windowed Gram matrix is singular for lambda={lam} "
            f"(smallest eigenvalue {smallest:.3e}).\n"
            f"Use a smaller lambda or a wider window."
        )
    return min(1.0, math.sqrt(smallest))


def fit_c0(window, lambdas):
    """
    Fitted constant C0 = max over lambdas of -log c(lambda, omega) / sqrt(lambda).

    Unresolvable lambdas are skipped with a warning.

    Raises:
        SingularGram: if none of the lambdas is resolvable
    """
    best = None
    for lam in lambdas:
        try:
            c = spectral_constant(lam, window)
        except SingularGram as e:
            logger.warning(f"[HMHF] ⚠ Skipping lambda={lam} in C0 fit: {e}")
            continue
        value = -math.log(c) / math.sqrt(lam)
        best = value if best is None else max(best, value)
    if best is None:
        raise SingularGram(f"No resolvable lambda among {list(lambdas)}.")
    return max(best, 0.0)


def resolvable_lambda_cap(window, limit):
    """Largest perfect square lam <= limit whose Gram matrix is not singular."""
    cap = None
    for n in range(1, max_mode(limit) + 1):
        if n >= window.grid.nyquist:
            break
        try:
            spectral_constant(n * n, window)
        except SingularGram:
            break
        cap = n * n
    if cap is None:
        raise SingularGram(f"Window {window.arcs} cannot resolve lambda=1.")
    return cap

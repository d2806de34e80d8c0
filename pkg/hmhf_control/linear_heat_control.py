"""
Linear Heat Control
Null control and constant targeting for w_t - w_xx - V w = 1_omega g on the circle,
solved as Tikhonov least squares over a window-node x time-piece basis
"""

import math
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import IllConditioned, ValidationError
from .flow_solver import ControlRecord
from .spectral_grid import TWO_PI, Window, dft, energy, idft


logger = logging.getLogger(__name__)

DEFAULT_PIECES = 24
DEFAULT_RHO = 1e12
CONDITION_LIMIT = 1e14
STEER_TOLERANCE = 1e-5


def _relaxed(rate, tau):
    """(1 - exp(-rate*tau)) / rate, elementwise, with the limit tau at rate = 0."""
    rate = np.asarray(rate, dtype=float)
    small = np.abs(rate * tau) < 1e-12
    safe = np.where(small, 1.0, rate)
    return np.where(small, tau, -np.expm1(-safe * tau) / safe)


def _growth(rate, tau):
    """(exp(rate*tau) - 1) / rate with the limit tau at rate = 0."""
    rate = np.asarray(rate, dtype=float)
    small = np.abs(rate * tau) < 1e-12
    safe = np.where(small, 1.0, rate)
    return np.where(small, tau, np.expm1(safe * tau) / safe)


@dataclass(frozen=True, eq=False)
class LinearControlProblem:
    """
    Steer w_t - w_xx - potential*w = 1_omega exp(modulation*t) g from initial to target at horizon.

    g is piecewise constant on `pieces` equal time intervals and supported on the window nodes.
    """

    initial: np.ndarray
    horizon: float
    window: Window
    potential: float = 0.0
    target: np.ndarray = None
    pieces: int = DEFAULT_PIECES
    rho: float = DEFAULT_RHO
    modulation: float = 0.0

    def __post_init__(self):
        grid = self.window.grid
        initial = np.asarray(grid.check(self.initial), dtype=float)
        if initial.ndim != 1:
            raise ValidationError("Linear control acts on scalar fields.")
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}.")
        if self.pieces < 1:
            raise ValidationError(f"pieces must be >= 1, got {self.pieces}.")
        if not self.rho > 0:
            raise ValidationError(f"rho must be positive, got {self.rho}.")
        target = np.zeros(grid.size) if self.target is None else np.asarray(grid.check(self.target), dtype=float)
        object.__setattr__(self, 'initial', initial)
        object.__setattr__(self, 'target', target)

    @property
    def grid(self):
        return self.window.grid

    @property
    def rates(self):
        """Per-mode growth rates a_n = potential - n^2."""
        return self.potential - self.grid.wavenumbers ** 2


@dataclass(frozen=True, eq=False)
class ControlBasis:
    """Window nodes times equal time pieces, optionally modulated by exp(modulation*t)."""

    window: Window
    horizon: float
    pieces: int = DEFAULT_PIECES
    modulation: float = 0.0
    nodes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.pieces < 1:
            raise ValidationError(f"pieces must be >= 1, got {self.pieces}.")
        object.__setattr__(self, 'nodes', np.flatnonzero(self.window.mask))

    @property
    def breakpoints(self):
        return np.linspace(0.0, self.horizon, self.pieces + 1)

    @property
    def tau(self):
        return self.horizon / self.pieces

    @property
    def size(self):
        return self.pieces * self.nodes.size

    def terminal_map(self, rates):
        """
        Matrix (grid size x basis size) sending coefficients to terminal field values.

        Column (p, j) is the terminal state produced by a unit control at node j on piece p.
        """
        grid = self.window.grid
        spikes = np.zeros((grid.size, self.nodes.size))
        spikes[self.nodes, np.arange(self.nodes.size)] = 1.0
        spike_hat = scipy.fft.fft(spikes, axis=0)
        blocks = []
        kappa = self.modulation
        for end in self.breakpoints[1:]:
            # exp(a (T - t_end) + kappa t_end) * int_0^tau exp(-(kappa - a) s) ds
            weight = np.exp(rates * (self.horizon - end) + kappa * end) * _relaxed(kappa - rates, self.tau)
            blocks.append(np.real(scipy.fft.ifft(spike_hat * weight[:, None], axis=0)))
        return np.hstack(blocks)

    def record(self, coefficients):
        """ControlRecord (m = 1) of the piecewise-constant g for the given coefficients."""
        grid = self.window.grid
        values = coefficients.reshape(self.pieces, self.nodes.size)
        forces = np.zeros((self.pieces + 1, grid.size, 1))
        forces[:-1, self.nodes, 0] = values
        forces[-1] = forces[-2]
        return ControlRecord(self.breakpoints, forces, self.window)


@dataclass(frozen=True, eq=False)
class LinearControlSolution:
    record: ControlRecord
    terminal: np.ndarray
    terminal_norm: float
    condition: float
    coefficients: np.ndarray


@dataclass(frozen=True, eq=False)
class HeatTrajectory:
    """Exact samples of a linear heat solution."""

    times: np.ndarray
    values: np.ndarray
    grid: object

    @property
    def final(self):
        return self.values[-1]


def solve_linear_control(problem):
    """
    Tikhonov least squares min (1/rho)||g||^2 + ||w(T) - target||^2 via SVD filter factors.

    Raises:
        IllConditioned: if 1 + rho * sigma_max^2 exceeds 1e14
    """
    grid = problem.grid
    basis = ControlBasis(problem.window, problem.horizon, problem.pieces, problem.modulation)
    rates = problem.rates
    free = idft(dft(problem.initial, grid) * np.exp(rates * problem.horizon), grid)
    defect = problem.target - free

    h = grid.spacing
    # Isometric coordinates: ||g||_{L2L2} = ||d||, ||w(T)||_{L2} = ||B d||.
    scale = math.sqrt(h * basis.tau)
    matrix = basis.terminal_map(rates) * (math.sqrt(h) / scale)
    rhs = math.sqrt(h) * defect

    left, sigma, right = scipy.linalg.svd(matrix, full_matrices=False)
    condition = 1.0 + problem.rho * float(sigma[0]) ** 2 if sigma.size else 1.0
    if condition > CONDITION_LIMIT:
        raise IllConditioned(
            f"Normal equations have condition {condition:.3e} > {CONDITION_LIMIT:.0e}.\n"
            f"Decrease rho (currently {problem.rho:.1e}) or use fewer pieces.",
            condition=condition,
        )
    filtered = sigma / (sigma ** 2 + 1.0 / problem.rho) * (left.T @ rhs)
    reduced = right.T @ filtered
    coefficients = reduced / scale

    terminal = free + basis.terminal_map(rates) @ coefficients
    terminal_norm = math.sqrt(h) * float(np.linalg.norm(terminal - problem.target))
    return LinearControlSolution(basis.record(coefficients), terminal, terminal_norm, condition, coefficients)


def hum_null_control(problem):
    """
    Regularized minimal-norm control steering the linear heat equation to its target.

    Args:
        problem: LinearControlProblem (target defaults to zero)

    Returns:
        tuple: (ControlRecord of g, achieved terminal L2 distance to the target)

    Raises:
        IllConditioned: if the normal equations are too ill-conditioned
    """
    solution = solve_linear_control(problem)
    logger.info(
        f"[HMHF] Linear control T={problem.horizon:g}: terminal {solution.terminal_norm:.3e}, "
        f"cost {solution.record.l_inf_l2():.3e}, condition {solution.condition:.2e}"
    )
    return solution.record, solution.terminal_norm


# ---------------------------------------------------------------------------
# Exact forward solves


def heat_forward(initial, record, potential=0.0, modulation=0.0, times=None):
    """
    Exact per-mode solution of w_t - w_xx - potential*w = 1_omega exp(modulation*t) g.

    Args:
        initial: field at record.start
        record: piecewise-constant scalar ControlRecord (m = 1)
        potential: coefficient V of the +V w term
        modulation: exponent kappa of the time weight on g
        times: sorted sample times in [record.start, record.end]; the breakpoints by default

    Returns:
        HeatTrajectory
    """
    if record.interpolation != 'piecewise_constant':
        raise ValidationError("heat_forward integrates piecewise-constant controls only.")
    grid = record.window.grid
    times = record.times if times is None else np.asarray(times, dtype=float)
    if np.any(times < record.start - 1e-12) or np.any(times > record.end + 1e-12):
        raise ValidationError("Sample times must lie inside the control interval.")
    rates = potential - grid.wavenumbers ** 2
    state = dft(np.asarray(initial, dtype=float), grid)
    forcing = dft(record.forces[:, :, 0].T, grid).T

    samples = np.empty((times.size, grid.size))
    piece = 0
    piece_start = record.start
    for i, t in enumerate(times):
        while piece < record.times.size - 2 and t >= record.times[piece + 1]:
            tau = record.times[piece + 1] - piece_start
            state = _evolve(state, forcing[piece], rates, modulation, piece_start, tau)
            piece += 1
            piece_start = record.times[piece]
        samples[i] = idft(_evolve(state, forcing[piece], rates, modulation, piece_start, t - piece_start), grid)
    return HeatTrajectory(times, samples, grid)


def _evolve(state_hat, force_hat, rates, modulation, start, tau):
    weight = math.exp(modulation * start) * np.exp(modulation * tau) * _relaxed(modulation - rates, tau)
    return np.exp(rates * tau) * state_hat + force_hat * weight


def heat_evaluate(initial, record, times, potential=0.0, modulation=0.0):
    """Field values of the controlled linear solution at the given times."""
    return heat_forward(initial, record, potential, modulation, times).values


# ---------------------------------------------------------------------------
# Constant targeting and the flux identity


def boundary_energy(w, potential, grid):
    """(1/2) int (w_x^2 - potential w^2) dx."""
    w = np.asarray(w, dtype=float)
    return 0.5 * (energy(w, grid) - potential * float(np.sum(w * w)) * grid.spacing)


def flux_functional(w_trajectory, g_record, potential=0.0):
    """
    int_0^T int w_t (-w_t + g) dx dt evaluated exactly piece by piece.

    Args:
        w_trajectory: HeatTrajectory sampled at the breakpoints of g_record
        g_record: piecewise-constant scalar ControlRecord
        potential: coefficient V of the equation the trajectory solves

    Returns:
        float
    """
    grid = g_record.window.grid
    if w_trajectory.times.shape != g_record.times.shape or np.any(
            np.abs(w_trajectory.times - g_record.times) > 1e-12):
        raise ValidationError("Trajectory and control must share their time sampling.")
    rates = potential - grid.wavenumbers ** 2
    total = 0.0
    for p in range(g_record.times.size - 1):
        tau = g_record.times[p + 1] - g_record.times[p]
        w_hat = dft(w_trajectory.values[p], grid)
        g_hat = dft(g_record.forces[p, :, 0], grid)
        speed = rates * w_hat + g_hat
        kinetic = np.abs(speed) ** 2 * _growth(2.0 * rates, tau)
        work = np.real(speed * np.conj(g_hat)) * _growth(rates, tau)
        total += TWO_PI * float(np.sum(work - kinetic))
    return total


def steer_zero_to_one(n_potential, horizon, window, pieces=DEFAULT_PIECES, rho=DEFAULT_RHO):
    """
    Control of w_t - w_xx - N^2 w = 1_omega g from w(0) = 0 to w(T) = 1.

    With y = w exp(-N^2 t) and z = y - exp(-N^2 T) the task becomes plain heat null
    control of z from the constant -exp(-N^2 T), with control exp(-N^2 t) g.

    Returns:
        tuple: (ControlRecord of g, flux functional of the steered solution)

    Raises:
        IllConditioned: if the least-squares solve is ill-conditioned or misses w(T) = 1
    """
    grid = window.grid
    n2 = float(n_potential) ** 2
    level = math.exp(-n2 * horizon)
    problem = LinearControlProblem(
        initial=np.full(grid.size, -level),
        horizon=horizon,
        window=window,
        potential=0.0,
        pieces=pieces,
        rho=rho,
        modulation=-n2,
    )
    solution = solve_linear_control(problem)
    record = solution.record

    z = heat_forward(problem.initial, record, 0.0, -n2)
    w_values = np.exp(n2 * z.times)[:, None] * (z.values + level)
    w = HeatTrajectory(z.times, w_values, grid)
    miss = math.sqrt(grid.spacing) * float(np.linalg.norm(w.final - 1.0))
    if miss > STEER_TOLERANCE:
        raise IllConditioned(
            f"Steering reached ||w(T) - 1|| = {miss:.3e} > {STEER_TOLERANCE:.0e}.\n"
            f"Increase rho or the number of pieces.",
            condition=solution.condition,
        )
    flux = flux_functional(w, record, n2)
    logger.info(f"[HMHF] ✓ Steered 0 -> 1 with N={n_potential}: flux {flux:.6f} (reference {-math.pi * n2:.6f})")
    return record, flux


def steered_solution(n_potential, record):
    """Direct exact solve of w_t - w_xx - N^2 w = 1_omega g from zero."""
    grid = record.window.grid
    return heat_forward(np.zeros(grid.size), record, float(n_potential) ** 2)

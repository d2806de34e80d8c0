"""
Energy Crossing
First-order power-series control that pushes the flow off a nontrivial harmonic map
and strictly below its energy level 2*pi*N^2
"""

import math
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.integrate

from .errors import CrossingFailed, DimensionTooSmall, ValidationError
from .flow_solver import ControlRecord, simulate
from .linear_heat_control import DEFAULT_PIECES, DEFAULT_RHO, heat_evaluate, steer_zero_to_one
from .spectral_grid import TWO_PI, sobolev_norm
from .sphere_geometry import GeodesicChart, Rotation, SphereField, align_rotation, field_values, harmonic_map


logger = logging.getLogger(__name__)

DEFAULT_NU1 = 0.05
PRINTED_COEFFICIENTS = (('-2*pi*N^2', -2.0), ('-pi*N^2', -1.0))


@lru_cache(maxsize=32)
def _steered(n, horizon, window, pieces, rho):
    return steer_zero_to_one(n, horizon, window, pieces, rho)


@dataclass(frozen=True, eq=False)
class CrossingPlan:
    """Open-loop crossing force epsilon * A^T e_3 g(t, x) designed at a harmonic map."""

    chart: GeodesicChart
    epsilon: float
    horizon: float
    window: object
    rotation: Rotation
    linear_control: ControlRecord
    flux: float
    force: ControlRecord

    @property
    def n(self):
        return self.chart.n

    @property
    def direction(self):
        """Unit direction A^T e_3 normal to the chart plane."""
        return self.rotation.matrix[2]


def build_crossing_control(chart, epsilon, horizon, window, pieces=DEFAULT_PIECES, rho=DEFAULT_RHO):
    """
    Design the crossing force for the harmonic map of chart.

    Args:
        chart: GeodesicChart with n >= 1
        epsilon: amplitude in (0, 0.1]
        horizon: duration of the crossing
        window: control Window

    Returns:
        CrossingPlan

    Raises:
        DimensionTooSmall: if the sphere has no direction normal to the chart plane
        IllConditioned: propagated from the linear steering problem
    """
    if chart.k < 2:
        raise DimensionTooSmall(
            "Energy crossing needs k >= 2: on S^1 the degree is conserved and no normal direction exists."
        )
    if chart.n < 1:
        raise ValidationError(f"Crossing starts from a nontrivial harmonic map, got N={chart.n}.")
    if not 0 < epsilon <= 0.1:
        raise ValidationError(f"epsilon must lie in (0, 0.1], got {epsilon}.")

    record, flux = _steered(abs(chart.n), float(horizon), window, pieces, rho)
    rotation = align_rotation(chart)
    direction = rotation.matrix[2]
    forces = epsilon * record.forces[:, :, :1] * direction[None, None, :]
    force = ControlRecord(record.times, forces, window)
    return CrossingPlan(chart, float(epsilon), float(horizon), window, rotation, record, flux, force)


def execute_crossing(u0, plan, config=None, grid=None, nu1=DEFAULT_NU1):
    """
    Run the controlled flow with the plan's force.

    Returns:
        tuple: (Trajectory, E(T) - E(0))

    Raises:
        ValidationError: if u0 is farther than nu1 (H1) from the plan's harmonic map
        CrossingFailed: if E(T) stays at or above 2*pi*N^2
    """
    if isinstance(u0, SphereField):
        grid = u0.grid
    values = field_values(u0)
    distance = sobolev_norm(values - harmonic_map(plan.chart, grid).values, grid, 1)
    if distance > nu1:
        raise ValidationError(
            f"Initial state is {distance:.3e} from the chart in H1, above nu1={nu1}.\n"
            f"Continue the free flow until the state is closer to a harmonic map."
        )
    trajectory = simulate(values, plan.horizon, plan.force, config, grid)
    delta_e = float(trajectory.energies[-1] - trajectory.energies[0])
    level = TWO_PI * plan.n ** 2
    trajectory.summary.update({'delta_e': delta_e, 'level': level, 'epsilon': plan.epsilon})
    if trajectory.energies[-1] >= level:
        raise CrossingFailed(
            f"Energy {trajectory.energies[-1]:.8f} did not drop below the level {level:.8f} "
            f"(delta_E={delta_e:.3e}).\nShrink epsilon or re-center on a fitted chart.",
            delta_e=delta_e,
        )
    logger.info(f"[HMHF] ✓ Crossed level N={plan.n}: delta_E={delta_e:.6e} with epsilon={plan.epsilon:g}")
    return trajectory, delta_e


def remainder_norm(trajectory, plan):
    """
    X_T norm (sup_t H1 plus L2-in-time H2) of u - gamma - epsilon A^T e_3 w.

    The zeroth-order solution is the stationary harmonic map of the plan's chart and w
    the linear response steered by the plan's scalar control.
    """
    grid = trajectory.grid
    base = harmonic_map(plan.chart, grid).values
    w = heat_evaluate(np.zeros(grid.size), plan.linear_control, trajectory.times - trajectory.times[0],
                      potential=float(plan.n) ** 2)
    h1, h2 = [], []
    for state, profile in zip(trajectory.states, w):
        remainder = state - base - plan.epsilon * np.outer(profile, plan.direction)
        h1.append(sobolev_norm(remainder, grid, 1))
        h2.append(sobolev_norm(remainder, grid, 2) ** 2)
    integral = float(scipy.integrate.trapezoid(h2, trajectory.times)) if len(h2) > 1 else 0.0
    return max(h1) + math.sqrt(integral)


def crossing_sweep(chart, epsilons, horizon, window, config=None, pieces=DEFAULT_PIECES, rho=DEFAULT_RHO):
    """
    Crossing from the exact harmonic map for several amplitudes.

    delta_E / epsilon^2 is extrapolated to epsilon = 0 with a linear fit in epsilon and
    compared with the linear-level oracle 2 * flux.

    Returns:
        dict: per-epsilon rows plus extrapolated coefficient, oracle, relative error,
        remainder ratios and the nearest printed constant
    """
    grid = window.grid
    u0 = harmonic_map(chart, grid)
    rows = []
    for epsilon in sorted(epsilons, reverse=True):
        plan = build_crossing_control(chart, epsilon, horizon, window, pieces, rho)
        trajectory, delta_e = execute_crossing(u0, plan, config, grid)
        rows.append({
            'epsilon': float(epsilon),
            'delta_e': delta_e,
            'ratio': delta_e / epsilon ** 2,
            'oracle': 2.0 * plan.flux,
            'remainder': remainder_norm(trajectory, plan),
        })
    eps = np.array([r['epsilon'] for r in rows])
    ratios = np.array([r['ratio'] for r in rows])
    if eps.size >= 2:
        _, extrapolated = np.polyfit(eps, ratios, 1)
    else:
        extrapolated = ratios[0]
    oracle = rows[0]['oracle']
    level = math.pi * chart.n ** 2
    nearest = min(
        PRINTED_COEFFICIENTS,
        key=lambda item: abs(extrapolated - item[1] * level),
    )
    remainders = [r['remainder'] for r in rows]
    result = {
        'n': chart.n,
        'rows': rows,
        'extrapolated': float(extrapolated),
        'oracle': float(oracle),
        'relative_error': abs(extrapolated - oracle) / abs(oracle),
        'ratio_spread': float((ratios.max() - ratios.min()) / abs(ratios.mean())),
        'remainder_ratios': [a / b for a, b in zip(remainders, remainders[1:]) if b > 0],
        'nearest_constant': nearest[0],
        'nearest_coefficient': nearest[1] * level,
    }
    logger.info(
        f"[HMHF] Crossing sweep N={chart.n}: extrapolated {extrapolated:.5f}, oracle {oracle:.5f}, "
        f"nearest printed constant: {nearest[0]} ({nearest[1] * level:.5f})"
    )
    return result

"""
Geodesic Control
Steering along a great circle through the polar angle, and the winding-number change
on S^k (k >= 2) by a stage of angle control followed by a windowed deformation
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import BlowupDetected, DegreeMismatch, DimensionTooSmall, PoleOnCurve, ValidationError
from .flow_solver import (
    ControlRecord,
    ControlSequence,
    SolverConfig,
    TrackingFeedback,
    check_tracking_gain,
    concatenate_trajectories,
    interpolate_samples,
    realize_feedback,
    simulate,
    whole_steps,
)
from .linear_heat_control import DEFAULT_PIECES, DEFAULT_RHO, LinearControlProblem, heat_evaluate, solve_linear_control
from .spectral_grid import TWO_PI, Window, derivative, sobolev_norm
from .sphere_geometry import (
    GeodesicChart,
    Rotation,
    SphereField,
    align_rotation,
    basis_vector,
    field_angle,
    field_values,
    harmonic_map,
    stereo_forward_jet,
    stereo_inverse_jet,
    stereo_push,
    winding_degree,
)


logger = logging.getLogger(__name__)

TRACKING_GAIN = 1000.0
POLE_CLEARANCE = 0.1
SUPPORT_TOLERANCE = 1e-10


def wrap_angle(angle):
    return np.mod(np.asarray(angle) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True, eq=False)
class PolarState:
    """Unwrapped polar angle of a field on the great circle spanned by chart.alpha, chart.beta."""

    theta: np.ndarray
    chart: GeodesicChart
    winding: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        measured = winding_degree(theta)
        if measured != self.winding:
            raise ValidationError(f"Angle winds {measured} times, declared winding is {self.winding}.")
        object.__setattr__(self, 'theta', theta)

    @classmethod
    def from_field(cls, field, chart):
        """Polar representation of a circle-valued field."""
        angle = np.unwrap(field_angle(field, chart.alpha, chart.beta))
        return cls(angle, chart, winding_degree(angle))

    @classmethod
    def from_angle(cls, theta, chart):
        return cls(theta, chart, winding_degree(theta))

    def lift(self):
        return self.chart.point(self.theta)


def off_circle_distance(values, chart):
    """max_x distance of the field from the plane span{alpha, beta}."""
    values = field_values(values)
    planar = np.outer(values @ chart.alpha, chart.alpha) + np.outer(values @ chart.beta, chart.beta)
    return float(np.max(np.linalg.norm(values - planar, axis=-1)))


def _tangent(theta, chart):
    return np.multiply.outer(-np.sin(theta), chart.alpha) + np.multiply.outer(np.cos(theta), chart.beta)


@dataclass(frozen=True, eq=False)
class PolarTracking:
    """
    Feedback h(t, x) J u + gain * (chart.point(theta_d(t)) - u) with J u = <u,alpha> beta - <u,beta> alpha.

    On the great circle J u is the unit tangent, so the angle of a circle-valued state
    obeys theta_t = theta_xx + h. The designed angle theta_d is sampled at times and
    interpolated; after the last sample it is replaced by hold when one is given.
    """

    chart: GeodesicChart
    drive: ControlRecord
    source: np.ndarray
    times: np.ndarray
    angles: np.ndarray
    window: Window
    gain: float
    hold: np.ndarray = None

    def force_at(self, t, values):
        if self.hold is not None and t > self.times[-1]:
            theta = self.hold
        else:
            theta = interpolate_samples(self.times, self.angles, t)
        h = self.drive.force_at(t)[:, 0] + self.source
        alpha, beta = self.chart.alpha, self.chart.beta
        turn = np.outer(values @ alpha, beta) - np.outer(values @ beta, alpha)
        return h[:, None] * turn + self.gain * (self.chart.point(theta) - values)


def _sample_times(duration, config):
    count = max(2, int(round(duration / (config.dt * config.store_every))))
    return np.linspace(0.0, duration, count + 1)


def _designed_angles(base, w0, drive, times):
    """base + w(t) for the driven linear heat solution w, bent linearly in time so it ends at base."""
    w = heat_evaluate(w0, drive, times)
    return base + w - np.outer(times / times[-1], w[-1]), w[-1]


def _periodic_offset(w0):
    """Shift by a multiple of 2*pi so the mean of w0 is as small as possible."""
    return w0 - TWO_PI * round(float(np.mean(w0)) / TWO_PI)


def _angle_error(values, chart, angle):
    return float(np.max(np.abs(wrap_angle(field_angle(values, chart.alpha, chart.beta) - angle))))


def steer_on_geodesic(theta0, target, horizon, window, config=None, pieces=DEFAULT_PIECES, rho=DEFAULT_RHO,
                      u0=None, gain=TRACKING_GAIN, settle=0.0):
    """
    Steer a circle-valued state to the harmonic map x -> chart.point(N x + r).

    The angle is null-controlled as a linear heat equation and the flow is driven by
    that control along the circle plus tracking of the designed angle, bent linearly in
    time onto the target so the tracking absorbs the linear residual. The run is the
    flow solver's; the returned record is the force it applied, so an open-loop replay
    with the same dt repeats it. Narrow windows and short horizons need drives whose
    first pieces are too stiff for a coarse dt.

    Args:
        theta0: PolarState of the initial state
        target: (N, r) winding and phase of the target
        horizon: duration of the steering
        window: control Window
        u0: field the run starts from (theta0 lifted when omitted)
        gain: tracking gain, gain * dt < 2
        settle: time the target is held after the horizon

    Returns:
        tuple: (ControlRecord, Trajectory) where the trajectory comes from the flow solver

    Raises:
        DegreeMismatch: if the initial winding differs from N
        BlowupDetected: with a suggested dt when the drive is too stiff for the solver
    """
    n, phase = int(target[0]), float(target[1])
    if theta0.winding != n:
        raise DegreeMismatch(
            f"Initial winding {theta0.winding} differs from target winding {n}.\n"
            f"The degree of a circle-valued state cannot change along the circle."
        )
    if settle < 0:
        raise ValidationError(f"settle must be non-negative, got {settle}.")
    config = config or SolverConfig()
    check_tracking_gain(gain, config)
    grid = window.grid
    chart = theta0.chart
    horizon = whole_steps(horizon, config.dt)
    base = n * grid.nodes + phase
    w0 = _periodic_offset(theta0.theta - base)
    problem = LinearControlProblem(w0, horizon, window, pieces=pieces, rho=rho)
    solution = solve_linear_control(problem)
    times = _sample_times(horizon, config)
    angles, _ = _designed_angles(base, w0, solution.record, times)
    tracker = PolarTracking(chart, solution.record, np.zeros(grid.size), times, angles, window, gain, hold=base)

    start = theta0.lift() if u0 is None else field_values(u0)
    duration = horizon + (whole_steps(settle, config.dt) if settle > 0 else 0.0)
    degree_chart = GeodesicChart(n, chart.alpha, chart.beta)
    try:
        record, trajectory = realize_feedback(start, duration, tracker, window, config, grid, degree_chart)
    except BlowupDetected as error:
        peak = float(np.max(np.abs(solution.record.forces)))
        raise BlowupDetected(
            f"{error}\nThe steering drive peaks at {peak:.3e} on a window of measure {window.measure:.3f}; "
            f"try dt below {0.1 / max(peak, 1.0):.1e}, a longer horizon or a wider window.",
            time=error.time,
        ) from error

    exact_error = float(np.max(np.abs(solution.terminal)))
    at_horizon = int(np.argmin(np.abs(trajectory.times - horizon)))
    simulated_error = _angle_error(trajectory.final, chart, base)
    off_circle = max(off_circle_distance(state, chart) for state in trajectory.states)
    trajectory.summary.update({
        'theta_error_exact': exact_error,
        'theta_error_simulated': simulated_error,
        'theta_error_horizon': _angle_error(trajectory.states[at_horizon], chart, base),
        'off_circle': off_circle,
        'terminal_l2': solution.terminal_norm,
        'settle': duration - horizon,
    })
    logger.info(
        f"[HMHF] Geodesic steering to N={n}, r={phase:.4f}: exact error {exact_error:.3e}, "
        f"simulated error {simulated_error:.3e}, off-circle {off_circle:.1e}"
    )
    return record, trajectory


# ---------------------------------------------------------------------------
# Winding change


@dataclass(frozen=True)
class WindingProfile:
    """
    theta_1(x) = n1 x + phase - 2 pi (n1 - n) H(x), H a step rising on the blend interval.

    The quintic step rises on [start, start + delta/2]; the erf step is centred at
    start + delta/4 with width delta/16.
    """

    n: int
    n1: int
    delta: float
    start: float
    blend: str = 'quintic'
    phase: float = 0.0

    def __post_init__(self):
        if not 0 < self.delta < math.pi:
            raise ValidationError(f"delta must lie in (0, pi), got {self.delta}.")
        if self.blend not in ('quintic', 'erf'):
            raise ValidationError(f"Unknown blend '{self.blend}'.")
        if self.start < 0 or self.start + self.delta / 2 > TWO_PI + 1e-12:
            raise ValidationError("Blend interval must lie inside [0, 2*pi].")

    def _step(self, x):
        x = np.asarray(x, dtype=float)
        if self.blend == 'quintic':
            width = self.delta / 2
            s = np.clip((x - self.start) / width, 0.0, 1.0)
            h = s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)
            h1 = 30.0 * s ** 2 * (1.0 - s) ** 2 / width
            h2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / width ** 2
            return h, h1, h2
        centre = self.start + self.delta / 4
        sigma = self.delta / 16
        z = (x - centre) / sigma
        h = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
        h1 = np.exp(-0.5 * z ** 2) / (sigma * math.sqrt(TWO_PI))
        h2 = -z / sigma * h1
        return h, h1, h2

    def jet(self, x):
        """theta_1 and its first two derivatives at x."""
        x = np.asarray(x, dtype=float)
        h, h1, h2 = self._step(x)
        jump = TWO_PI * (self.n1 - self.n)
        return self.n1 * x + self.phase - jump * h, self.n1 - jump * h1, -jump * h2

    def value(self, x):
        return self.jet(x)[0]


def build_theta1(grid, n, n1, delta, start=None, blend='quintic', phase=0.0):
    """
    Angle profile equal to n1 x outside the blend interval whose total winding is n.

    start defaults to 2*pi - delta.
    """
    start = TWO_PI - delta if start is None else start
    return WindingProfile(n, n1, delta, start, blend, phase).value(grid.nodes)


@dataclass(frozen=True, eq=False)
class DeformationPath:
    """States of a chart-plane interpolation between two curves with the force that drives it."""

    times: np.ndarray
    states: np.ndarray
    induced_force: np.ndarray
    window: Window

    @property
    def force_leak(self):
        """max |f| over the complement of the window."""
        outside = self.window.mask == 0
        if not outside.any():
            return 0.0
        return float(np.max(np.abs(self.induced_force[:, outside, :])))

    def record(self, start=0.0):
        forces = self.induced_force * self.window.mask[None, :, None]
        return ControlRecord(self.times + start, forces, self.window, 'linear')


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2), 30.0 * s ** 2 * (1.0 - s) ** 2


def _pole_frame(curves, dim):
    """Signed permutation sending the first admissible pole among -e_k+1, +e_k+1, -e_k, ... to the south pole."""
    for index in reversed(range(dim)):
        for sign in (-1.0, 1.0):
            pole = sign * basis_vector(index, dim)
            clearance = min(float(np.min(np.linalg.norm(c - pole, axis=1))) for c in curves)
            if clearance >= POLE_CLEARANCE:
                rows = [basis_vector(i, dim) for i in range(dim) if i != index]
                rows.append(-pole)
                return Rotation(np.vstack(rows))
    raise PoleOnCurve(
        f"Every coordinate pole lies within {POLE_CLEARANCE} of the curves.\n"
        f"Rotate the curves before deforming them."
    )


def deformation_homotopy(u1, u2, duration, window, samples=None, jets=None):
    """
    Path from u1 to u2 by interpolating stereographic images, with induced force.

    Args:
        u1, u2: SphereFields that agree outside the window
        duration: length of the path
        window: Window containing the region where they differ
        samples: number of time intervals (defaults to 200)
        jets: optional ((u1_x, u1_xx), (u2_x, u2_xx)); spectral derivatives otherwise

    Returns:
        DeformationPath with f = u_t - u_xx - |u_x|^2 u

    Raises:
        DimensionTooSmall: on S^1
        PoleOnCurve: if no coordinate pole keeps clear of both curves
    """
    grid = window.grid
    a, b = field_values(u1), field_values(u2)
    dim = a.shape[1]
    if dim < 3:
        raise DimensionTooSmall("Deformation off the circle needs k >= 2.")
    gap = float(np.max(np.linalg.norm((a - b) * (1.0 - window.mask)[:, None], axis=1)))
    if gap > SUPPORT_TOLERANCE:
        raise ValidationError(f"Curves differ by {gap:.3e} outside the window.")
    if jets is None:
        jets = ((derivative(a, grid, 1), derivative(a, grid, 2)),
                (derivative(b, grid, 1), derivative(b, grid, 2)))

    frame = _pole_frame([a, b], dim)
    c1, c1x, c1xx = stereo_forward_jet(frame.apply(a), frame.apply(jets[0][0]), frame.apply(jets[0][1]))
    c2, c2x, c2xx = stereo_forward_jet(frame.apply(b), frame.apply(jets[1][0]), frame.apply(jets[1][1]))
    if window.mask.any():
        outside = window.mask == 0
        c2[outside], c2x[outside], c2xx[outside] = c1[outside], c1x[outside], c1xx[outside]

    samples = samples or 200
    times = np.linspace(0.0, duration, samples + 1)
    states = np.empty((times.size, grid.size, dim))
    forces = np.empty_like(states)
    for i, t in enumerate(times):
        sigma, rate = _smoothstep(t / duration)
        rate /= duration
        c = (1.0 - sigma) * c1 + sigma * c2
        cx = (1.0 - sigma) * c1x + sigma * c2x
        cxx = (1.0 - sigma) * c1xx + sigma * c2xx
        u, ux, uxx = stereo_inverse_jet(c, cx, cxx)
        ut = stereo_push(c, rate * (c2 - c1))
        f = ut - uxx - np.sum(ux * ux, axis=1, keepdims=True) * u
        states[i] = frame.inverse.apply(u)
        forces[i] = frame.inverse.apply(f)
    return DeformationPath(times, states, forces, window)


def replay_deformation(path, config=None):
    """sup_t H1 distance between the path and the flow solver driven by its induced force."""
    config = config or SolverConfig()
    duration = float(path.times[-1] - path.times[0])
    run = simulate(path.states[0], duration, path.record(), config, path.window.grid)
    worst = 0.0
    for t, state in zip(run.times, run.states):
        index = int(np.argmin(np.abs(path.times - t)))
        if abs(path.times[index] - t) < 1e-9:
            worst = max(worst, sobolev_norm(state - path.states[index], path.window.grid, 1))
    return worst


def _single_arc(window):
    if len(window.arcs) != 1:
        raise ValidationError("Winding change needs a window made of a single arc.")
    a, b = window.arcs[0]
    if b - a >= TWO_PI:
        return 0.0, TWO_PI
    if not 0 <= a < b <= TWO_PI:
        raise ValidationError(f"Winding change needs an arc inside [0, 2*pi] that does not wrap, got {window.arcs[0]}.")
    return a, b


def change_winding(v0, chart, n1, horizon, window, phase=0.0, config=None, pieces=DEFAULT_PIECES, rho=DEFAULT_RHO,
                   gain=TRACKING_GAIN, settle=None):
    """
    Drive a circle-valued state of winding chart.n to the harmonic map of winding n1.

    Stage A (first half) steers the angle to the profile theta_1 with a stationary source;
    stage B (second half) deforms the lifted profile into chart.point(n1 x + phase)
    inside the window; the target is then held for settle (horizon / 4 by default).
    Every stage runs on the flow solver with tracking of its designed states, and the
    control is the force the solver applied. The hold contracts at about gain on the
    full circle but only at the slow rate of the uncontrolled arc on a partial window.

    Returns:
        tuple: (ControlSequence, Trajectory from the flow solver)

    Raises:
        DimensionTooSmall: if k = 1
        DegreeMismatch: if v0 does not wind chart.n times
    """
    if chart.k < 2:
        raise DimensionTooSmall("Changing the winding number needs k >= 2.")
    grid = window.grid
    values = field_values(v0)
    theta0 = PolarState.from_field(values, chart)
    if theta0.winding != chart.n:
        raise DegreeMismatch(f"State winds {theta0.winding} times, chart declares {chart.n}.")
    config = config or SolverConfig()
    check_tracking_gain(gain, config)
    settle = horizon / 4 if settle is None else float(settle)
    if settle < 0:
        raise ValidationError(f"settle must be non-negative, got {settle}.")

    a, b = _single_arc(window)
    delta = min((b - a) / 2, math.pi - 1e-6)
    profile = WindingProfile(chart.n, n1, delta, a + (b - a) / 4, 'erf', phase)
    theta1, theta1_x, theta1_xx = profile.jet(grid.nodes)
    half = whole_steps(horizon / 2, config.dt)
    sample_times = _sample_times(half, config)

    # Stage A: w = theta - theta_1 under plain heat with source -theta_1'' in the window
    w0 = _periodic_offset(theta0.theta - theta1)
    source = window.restrict(-theta1_xx)
    solution = solve_linear_control(LinearControlProblem(w0, half, window, pieces=pieces, rho=rho))
    designed_angles, residual = _designed_angles(theta1, w0, solution.record, sample_times)
    tracker_a = PolarTracking(chart, solution.record, source, sample_times, designed_angles, window, gain)
    record_a, run_a = realize_feedback(values, half, tracker_a, window, config, grid, chart)

    # Stage B: deformation inside the window, designed in the chart-aligned frame
    align = align_rotation(chart)
    planar = GeodesicChart(n1, basis_vector(0, chart.alpha.size), basis_vector(1, chart.alpha.size), phase)
    lifted = planar.point(theta1)
    lifted_x = theta1_x[:, None] * _tangent(theta1, planar)
    lifted_xx = theta1_xx[:, None] * _tangent(theta1, planar) - (theta1_x ** 2)[:, None] * lifted
    goal_angle = n1 * grid.nodes + phase
    goal = planar.point(goal_angle)
    goal_x = n1 * _tangent(goal_angle, planar)
    goal_xx = -(n1 ** 2) * goal
    path = deformation_homotopy(SphereField(lifted, grid), SphereField(goal, grid), half, window,
                                sample_times.size - 1, jets=((lifted_x, lifted_xx), (goal_x, goal_xx)))
    back = align.inverse
    path = DeformationPath(path.times, back.apply(path.states), back.apply(path.induced_force), window)
    start_b = float(run_a.times[-1])
    tracker_b = TrackingFeedback(path.times + start_b, path.states,
                                 path.induced_force * window.mask[None, :, None], window, gain)
    record_b, run_b = realize_feedback(run_a.final, half, tracker_b, window, config, grid, chart, start_b)

    target = harmonic_map(GeodesicChart(n1, chart.alpha, chart.beta, phase), grid).values
    records, runs = [record_a, record_b], [run_a, run_b]
    if settle > 0:
        start_c = float(run_b.times[-1])
        hold = whole_steps(settle, config.dt)
        tracker_c = TrackingFeedback.hold(target, window, gain, start_c, start_c + hold)
        record_c, run_c = realize_feedback(run_b.final, hold, tracker_c, window, config, grid, chart, start_c)
        records.append(record_c)
        runs.append(run_c)

    control = ControlSequence.chain(records)
    trajectory = concatenate_trajectories(runs)
    terminal = sobolev_norm(trajectory.final - target, grid, 1)
    designed = sobolev_norm(path.states[-1] - target, grid, 1)
    stage_b_tracking = max(
        sobolev_norm(state - interpolate_samples(tracker_b.times, path.states, t), grid, 1)
        for t, state in zip(run_b.times, run_b.states)
    )
    trajectory.summary.update({
        'terminal_h1': terminal,
        'designed_terminal_h1': designed,
        'force_leak': path.force_leak,
        'delta': delta,
        'settle': float(trajectory.times[-1] - run_b.times[-1]),
        'stage_a_exact_error': float(np.max(np.abs(residual))),
        'stage_a_tracking': _angle_error(run_a.final, chart, designed_angles[-1]),
        'stage_b_tracking': stage_b_tracking,
        'terminal_winding': trajectory.diagnostics['degree'][-1],
    })
    status = "✓" if terminal <= 1e-6 else "⚠"
    logger.info(
        f"[HMHF] {status} Winding {chart.n} -> {n1}: realized terminal H1 {terminal:.3e} "
        f"(designed {designed:.1e}), stage B tracking {stage_b_tracking:.1e}, "
        f"force outside window {path.force_leak:.1e}"
    )
    return control, trajectory

"""
Flow Solver
IMEX pseudospectral integration of the controlled harmonic map heat flow
u_t - u_xx = |u_x|^2 u + 1_omega (f - <f,u> u) with renormalization and diagnostics
"""

import math
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlowupDetected, DegenerateMode, Timeout, UnresolvableWinding, ValidationError
from .spectral_grid import (
    Window,
    dealias_mask,
    derivative,
    dft,
    energy,
    idft,
    sobolev_norm,
)
from .sphere_geometry import (
    SphereField,
    chart_fit,
    constraint_residual,
    field_degree,
    field_values,
    renormalize,
    tangent_project,
)


logger = logging.getLogger(__name__)

SCHEMES = ('imex_euler', 'imex_bdf2')
INTERPOLATIONS = ('piecewise_constant', 'linear')
DIAGNOSTIC_COLUMNS = ('energy', 'h1_norm', 'flux_cum', 'constraint_residual', 'control_l2', 'degree')


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping parameters shared by every simulation."""

    dt: float = 1e-4
    scheme: str = 'imex_euler'
    renorm_tolerance: float = 1e-10
    dealias_margin: float = 1.0 / 3.0
    h2_cap: float = 1e6
    store_every: int = 10
    drift_factor: float = 10.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}.")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"Unknown scheme '{self.scheme}'. Choose one of {', '.join(SCHEMES)}.")
        if not 0 < self.renorm_tolerance <= 1e-2:
            raise ValidationError(f"renorm_tolerance must lie in (0, 1e-2], got {self.renorm_tolerance}.")
        if not 0 <= self.dealias_margin < 1:
            raise ValidationError(f"dealias_margin must lie in [0, 1), got {self.dealias_margin}.")
        if self.store_every < 1:
            raise ValidationError(f"store_every must be >= 1, got {self.store_every}.")


# ---------------------------------------------------------------------------
# Controls


@dataclass(frozen=True, eq=False)
class ControlRecord:
    """
    Open-loop force sampled in time.

    forces has shape (len(times), size, m). For piecewise_constant interpolation
    entry i holds on [times[i], times[i+1]); the last entry only at times[-1].
    The force vanishes outside [times[0], times[-1]] and outside the window.
    """

    times: np.ndarray
    forces: np.ndarray
    window: Window
    interpolation: str = 'piecewise_constant'

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        forces = np.asarray(self.forces, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValidationError("Control times must be a strictly increasing array of length >= 2.")
        if forces.ndim != 3 or forces.shape[:2] != (times.size, self.window.grid.size):
            raise ValidationError(
                f"Control forces have shape {forces.shape}, expected ({times.size}, {self.window.grid.size}, m)."
            )
        if self.interpolation not in INTERPOLATIONS:
            raise ValidationError(f"Unknown interpolation '{self.interpolation}'.")
        outside = forces * (1.0 - self.window.mask)[None, :, None]
        leak = float(np.max(np.abs(outside))) if outside.size else 0.0
        if leak > 1e-9:
            raise ValidationError(f"Control force leaks outside the window (max {leak:.3e}).")
        forces = forces * self.window.mask[None, :, None]
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'forces', forces)

    @classmethod
    def zero(cls, window, dim, start, end):
        return cls(np.array([start, end]), np.zeros((2, window.grid.size, dim)), window)

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    @property
    def dim(self):
        return self.forces.shape[2]

    def force_at(self, t, values=None):
        """Force field at time t (the state argument is ignored for open-loop controls)."""
        if t < self.start or t > self.end:
            return np.zeros(self.forces.shape[1:])
        if self.interpolation == 'piecewise_constant':
            index = int(np.searchsorted(self.times, t, side='right')) - 1
            return self.forces[min(index, self.times.size - 1)]
        index = min(int(np.searchsorted(self.times, t, side='right')) - 1, self.times.size - 2)
        weight = (t - self.times[index]) / (self.times[index + 1] - self.times[index])
        return (1.0 - weight) * self.forces[index] + weight * self.forces[index + 1]

    def _piece_norms(self):
        h = self.window.grid.spacing
        return np.sqrt(np.sum(self.forces ** 2, axis=(1, 2)) * h)

    def l_inf_l2(self):
        """sup_t ||f(t)||_{L2}."""
        return float(np.max(self._piece_norms()))

    def l2_l2(self):
        """||f||_{L2(0,T;L2)}."""
        sq = self._piece_norms() ** 2
        widths = np.diff(self.times)
        if self.interpolation == 'piecewise_constant':
            return math.sqrt(float(np.sum(sq[:-1] * widths)))
        return math.sqrt(float(np.sum(0.5 * (sq[:-1] + sq[1:]) * widths)))

    def shifted(self, offset):
        return ControlRecord(self.times + offset, self.forces, self.window, self.interpolation)

    def rotated(self, rotation):
        return ControlRecord(self.times, rotation.apply(self.forces), self.window, self.interpolation)

    def scaled(self, factor):
        return ControlRecord(self.times, factor * self.forces, self.window, self.interpolation)


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """Time-ordered concatenation of open-loop controls on consecutive intervals."""

    records: tuple

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValidationError("A control sequence needs at least one record.")
        for before, after in zip(records, records[1:]):
            if after.start < before.end - 1e-12:
                raise ValidationError("Control sequence records overlap in time.")
        object.__setattr__(self, 'records', records)

    @classmethod
    def chain(cls, records):
        """Place records back to back, each shifted to start where the previous one ends."""
        placed = []
        clock = 0.0
        for record in records:
            placed.append(record.shifted(clock - record.start))
            clock = placed[-1].end
        return cls(tuple(placed))

    @property
    def start(self):
        return self.records[0].start

    @property
    def end(self):
        return self.records[-1].end

    @property
    def window(self):
        """Common window of the records; the full circle when they differ (records are pre-masked)."""
        first = self.records[0].window
        if all(record.window == first for record in self.records):
            return first
        return Window.full(first.grid)

    def force_at(self, t, values=None):
        for i, record in enumerate(self.records):
            last = i == len(self.records) - 1
            if record.start <= t < record.end or (last and t == record.end):
                return record.force_at(t, values)
        return np.zeros(self.records[0].forces.shape[1:])

    def l_inf_l2(self):
        return max(record.l_inf_l2() for record in self.records)

    def l2_l2(self):
        return math.sqrt(sum(record.l2_l2() ** 2 for record in self.records))


def interpolate_samples(times, samples, t):
    """Linear interpolation of sampled fields, held constant outside [times[0], times[-1]]."""
    index = int(np.clip(np.searchsorted(times, t, side='right') - 1, 0, times.size - 2))
    weight = float(np.clip((t - times[index]) / (times[index + 1] - times[index]), 0.0, 1.0))
    return (1.0 - weight) * samples[index] + weight * samples[index + 1]


@dataclass(frozen=True, eq=False)
class TrackingFeedback:
    """
    f = feedforward(t) + gain * (reference(t) - u).

    Both fields are sampled at times and interpolated linearly; after the last sample
    the reference is held and the feedforward switched off. The solver keeps the
    tangential part inside the window.
    """

    times: np.ndarray
    reference: np.ndarray
    feedforward: np.ndarray
    window: Window
    gain: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValidationError("Tracking times must be a strictly increasing array of length >= 2.")
        if self.reference.shape != self.feedforward.shape or self.reference.shape[0] != times.size:
            raise ValidationError("Reference and feedforward must hold one sample per tracking time.")
        if not self.gain >= 0:
            raise ValidationError(f"Tracking gain must be non-negative, got {self.gain}.")
        object.__setattr__(self, 'times', times)

    @classmethod
    def hold(cls, target, window, gain, start, end):
        """Restoring feedback towards a fixed state on [start, end]."""
        target = field_values(target)
        reference = np.stack([target, target])
        return cls(np.array([start, end]), reference, np.zeros_like(reference), window, gain)

    def force_at(self, t, values):
        reference = interpolate_samples(self.times, self.reference, t)
        force = self.gain * (reference - values)
        if t <= self.times[-1]:
            force = force + interpolate_samples(self.times, self.feedforward, t)
        return force


def check_tracking_gain(gain, config):
    """The explicit feedback is stable for gain * dt < 2."""
    if gain * config.dt >= 2.0:
        raise ValidationError(
            f"Tracking gain {gain:g} is too stiff for dt={config.dt:g} (gain * dt must stay below 2).\n"
            f"Reduce dt below {2.0 / gain:.1e} or lower the gain."
        )


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(eq=False)
class Trajectory:
    """Stored states of a run with per-stored-step diagnostics."""

    times: np.ndarray
    states: np.ndarray
    diagnostics: dict
    grid: object
    summary: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.states[-1]

    @property
    def energies(self):
        return self.diagnostics['energy']

    def state(self, index):
        return SphereField(self.states[index], self.grid)

    def sup_h1_distance(self, other):
        """sup over common stored times of the H1 distance to another trajectory."""
        if self.states.shape != other.states.shape:
            raise ValidationError("Trajectories have different sampling; cannot compare.")
        return max(sobolev_norm(a - b, self.grid, 1) for a, b in zip(self.states, other.states))

    def rows(self):
        """CSV-ready rows (t, energy, h1_norm, flux_cum, constraint_residual, control_l2, degree)."""
        columns = [self.times] + [self.diagnostics[name] for name in DIAGNOSTIC_COLUMNS]
        return list(zip(*columns))


def concatenate_trajectories(parts):
    """Join consecutive trajectories, dropping repeated junction states and offsetting the flux."""
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ValidationError("Nothing to concatenate.")
    times, states = [parts[0].times], [parts[0].states]
    diagnostics = {name: [np.asarray(parts[0].diagnostics[name])] for name in DIAGNOSTIC_COLUMNS}
    flux_offset = float(parts[0].diagnostics['flux_cum'][-1])
    for part in parts[1:]:
        skip = 1 if part.times[0] <= times[-1][-1] + 1e-12 else 0
        times.append(part.times[skip:])
        states.append(part.states[skip:])
        for name in DIAGNOSTIC_COLUMNS:
            column = np.asarray(part.diagnostics[name])[skip:]
            if name == 'flux_cum':
                column = column + flux_offset
            diagnostics[name].append(column)
        flux_offset += float(part.diagnostics['flux_cum'][-1])
    summary = {}
    for part in parts:
        summary.update(part.summary)
    return Trajectory(
        np.concatenate(times),
        np.concatenate(states),
        {name: np.concatenate(cols) for name, cols in diagnostics.items()},
        parts[0].grid,
        summary,
    )


def build_trajectory(grid, times, states, control_norms=None, flux_cum=None, degree_chart=None, summary=None):
    """Assemble a Trajectory from stored states, computing the state diagnostics."""
    states = np.asarray(states, dtype=float)
    count = len(times)
    diagnostics = {
        'energy': np.array([energy(s, grid) for s in states]),
        'h1_norm': np.array([sobolev_norm(s, grid, 1) for s in states]),
        'flux_cum': np.zeros(count) if flux_cum is None else np.asarray(flux_cum, dtype=float),
        'constraint_residual': np.array([constraint_residual(s) for s in states]),
        'control_l2': np.zeros(count) if control_norms is None else np.asarray(control_norms, dtype=float),
        'degree': np.array([_degree(s, degree_chart) for s in states]),
    }
    return Trajectory(np.asarray(times, dtype=float), states, diagnostics, grid, dict(summary or {}))


def _degree(values, degree_chart):
    if degree_chart is None:
        return math.nan
    try:
        return float(field_degree(values, degree_chart.alpha, degree_chart.beta))
    except UnresolvableWinding:
        return math.nan


# ---------------------------------------------------------------------------
# Stepping


class FlowStepper:
    """
    Advances one state of the controlled flow.

    Holds the previous nonlinear term for the two-step scheme; one stepper per run.
    """

    def __init__(self, grid, config, window=None):
        self.grid = grid
        self.config = config
        self.mask = (window.mask if window is not None else np.ones(grid.size))[:, None]
        n2 = grid.wavenumbers ** 2
        self.n2 = n2[:, None]
        self.keep = dealias_mask(grid, config.dealias_margin).astype(float)[:, None]
        self.previous = None
        self.max_drift = 0.0
        self.drift_warnings = 0

    def nonlinear(self, values, force):
        """Dealiased |u_x|^2 u plus the windowed tangential force, both in Fourier space."""
        ux = derivative(values, self.grid, 1)
        product = dft(np.sum(ux * ux, axis=1, keepdims=True) * values, self.grid) * self.keep
        if force is None:
            return product, np.zeros(self.grid.size)
        applied = self.mask * tangent_project(force, values)
        return product + dft(applied, self.grid), self.mask[:, 0] * np.linalg.norm(force, axis=1)

    def rhs(self, values, nonlinear_hat):
        """Discrete time derivative u_xx + NL used for the flux diagnostic."""
        return idft(-self.n2 * dft(values, self.grid) + nonlinear_hat, self.grid)

    def advance(self, values, dt, force, t):
        """
        One IMEX step followed by renormalization.

        Returns:
            tuple: (new values, rhs at the old state, windowed force magnitude per node)

        Raises:
            BlowupDetected: if the pre-renormalization norm drops below 0.5 or H2 exceeds the cap
        """
        nl_hat, force_size = self.nonlinear(values, force)
        u_hat = dft(values, self.grid)
        if self.config.scheme == 'imex_bdf2' and self.previous is not None:
            prev_hat, prev_nl = self.previous
            new_hat = (4.0 * u_hat - prev_hat + 2.0 * dt * (2.0 * nl_hat - prev_nl)) / (3.0 + 2.0 * dt * self.n2)
        else:
            new_hat = (u_hat + dt * nl_hat) / (1.0 + dt * self.n2)
        self.previous = (u_hat, nl_hat)

        raw = idft(new_hat, self.grid)
        norms = np.linalg.norm(raw, axis=1)
        if np.min(norms) < 0.5:
            raise BlowupDetected(
                f"Pointwise norm fell to {np.min(norms):.3e} before renormalization at t={t + dt:.6g}.\n"
                f"Reduce dt or refine the grid.",
                time=t + dt,
            )
        drift = float(np.max(np.abs(norms - 1.0)))
        self.max_drift = max(self.max_drift, drift)
        bound = self.config.drift_factor * dt * (1.0 + energy(values, self.grid))
        if drift > bound:
            self.drift_warnings += 1
            if self.drift_warnings == 1:
                logger.warning(f"[HMHF] ⚠ Constraint drift {drift:.3e} exceeds monitor bound {bound:.3e} at t={t:.6g}")

        new_values = renormalize(raw)
        h2 = sobolev_norm(new_values, self.grid, 2)
        if not math.isfinite(h2) or h2 > self.config.h2_cap:
            raise BlowupDetected(
                f"H2 norm {h2:.3e} exceeds cap {self.config.h2_cap:.1e} at t={t + dt:.6g}.",
                time=t + dt,
            )
        return new_values, self.rhs(values, nl_hat), force_size


def step(state, dt, force_at_t, config, grid=None, window=None):
    """
    Single IMEX-Euler step of the controlled flow.

    Args:
        state: SphereField or (size, k+1) array
        dt: step length
        force_at_t: (size, k+1) force sampled for this step, or None
        config: SolverConfig
        grid: PeriodicGrid when state is a raw array
        window: control window (full circle when omitted)

    Returns:
        numpy.ndarray: renormalized next state
    """
    if isinstance(state, SphereField):
        grid = state.grid
    stepper = FlowStepper(grid, replace(config, dt=dt, scheme='imex_euler'), window)
    new_values, _, _ = stepper.advance(field_values(state), dt, force_at_t, 0.0)
    return new_values


def _step_plan(horizon, dt):
    """Step count and step length; dt is kept bit for bit when the horizon is a whole number of steps."""
    nsteps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    if abs(nsteps * dt - horizon) <= 1e-9 * max(1.0, horizon):
        return nsteps, dt
    return nsteps, horizon / nsteps


def whole_steps(duration, dt):
    """duration rounded to a whole number (at least one) of steps of length dt."""
    return max(1, int(round(duration / dt))) * dt


def _control_window(control, grid):
    if control is None:
        return None
    window = getattr(control, 'window', None)
    return window if window is not None else Window.full(grid)


def simulate(u0, horizon, control=None, config=None, grid=None, degree_chart=None, start_time=0.0):
    """
    Integrate the controlled flow over [start_time, start_time + horizon].

    Args:
        u0: SphereField (or raw array together with grid)
        horizon: length of the run
        control: ControlRecord, ControlSequence, feedback policy with force_at(t, values), or None
        config: SolverConfig
        grid: PeriodicGrid when u0 is a raw array
        degree_chart: GeodesicChart whose circle the degree diagnostic winds around
        start_time: absolute time of u0 (controls are evaluated at absolute times)

    Returns:
        Trajectory

    Raises:
        BlowupDetected: with the failure time
    """
    config = config or SolverConfig()
    if isinstance(u0, SphereField):
        grid = u0.grid
    if not horizon > 0:
        raise ValidationError(f"horizon must be positive, got {horizon}.")
    values = field_values(u0).copy()
    grid.check(values)

    nsteps, dt = _step_plan(horizon, config.dt)
    window = _control_window(control, grid)
    stepper = FlowStepper(grid, config, window)
    h = grid.spacing

    times, states, flux_at, control_at = [start_time], [values.copy()], [0.0], [0.0]
    flux = 0.0
    t = start_time
    for i in range(nsteps):
        force = None if control is None else control.force_at(t + 0.5 * dt, values)
        values, rhs, force_size = stepper.advance(values, dt, force, t)
        flux += dt * float(np.sum(rhs * rhs) * h)
        t = start_time + (i + 1) * dt
        if (i + 1) % config.store_every == 0 or i + 1 == nsteps:
            times.append(t)
            states.append(values.copy())
            flux_at.append(flux)
            control_at.append(math.sqrt(float(np.sum(force_size ** 2) * h)))

    if stepper.drift_warnings:
        logger.warning(f"[HMHF] ⚠ {stepper.drift_warnings} steps exceeded the drift monitor (max {stepper.max_drift:.3e})")
    summary = {
        'steps': nsteps,
        'dt': dt,
        'scheme': config.scheme,
        'max_drift': stepper.max_drift,
        'drift_warnings': stepper.drift_warnings,
    }
    return build_trajectory(grid, times, states, control_at, flux_at, degree_chart, summary)


class _ForceRecorder:
    """Passes a feedback through and keeps the windowed force of every step."""

    def __init__(self, policy, window):
        self.policy = policy
        self.window = window
        self.forces = []

    def force_at(self, t, values):
        force = self.policy.force_at(t, values) * self.window.mask[:, None]
        self.forces.append(force)
        return force


def realize_feedback(u0, horizon, policy, window, config=None, grid=None, degree_chart=None, start_time=0.0):
    """
    Run a feedback policy on the flow and keep the force it applied as an open-loop record.

    The record has one piece per solver step. Replaying it with the same dt and the
    Euler scheme repeats the run bit for bit, which open-loop replays of unstable
    designs need.

    Returns:
        tuple: (ControlRecord starting at start_time, Trajectory)
    """
    recorder = _ForceRecorder(policy, window)
    trajectory = simulate(u0, horizon, recorder, config, grid, degree_chart, start_time)
    steps, dt = trajectory.summary['steps'], trajectory.summary['dt']
    times = start_time + dt * np.arange(steps + 1)
    forces = np.array(recorder.forces + recorder.forces[-1:])
    return ControlRecord(times, forces, window), trajectory


# ---------------------------------------------------------------------------
# Measurements


@dataclass(frozen=True, eq=False)
class ChartDetection:
    """First stored time at which the free flow is an epsilon-approximate harmonic map."""

    time: float
    chart: object
    residual: float


def free_flow_until_approximate_harmonic(u0, epsilon, max_time, config=None, grid=None, check_every=0.05):
    """
    Run the free flow until chart_fit reports an H1 residual <= epsilon.

    Returns:
        tuple: (Trajectory, ChartDetection) on success, (Trajectory, Timeout) when the
        budget runs out. The Timeout is returned, not raised.
    """
    if not 0 < epsilon < 1:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}.")
    config = config or SolverConfig()
    if isinstance(u0, SphereField):
        grid = u0.grid
    values = field_values(u0)
    parts = [build_trajectory(grid, [0.0], [values])]
    t = 0.0
    while True:
        try:
            chart, residual = chart_fit(values, grid)
        except DegenerateMode:
            chart, residual = None, math.inf
        if residual <= epsilon:
            logger.info(f"[HMHF] ✓ Approximate harmonic map N={chart.n} at t={t:.4g} (residual {residual:.3e})")
            return concatenate_trajectories(parts), ChartDetection(t, chart, residual)
        if t >= max_time - 1e-12:
            logger.warning(f"[HMHF] ⚠ No approximate harmonic map within t={max_time} (residual {residual:.3e})")
            return concatenate_trajectories(parts), Timeout(
                f"Free flow did not reach an {epsilon}-approximate harmonic map by t={max_time}.", time=t)
        segment = min(check_every, max_time - t)
        part = simulate(values, segment, None, config, grid, start_time=t)
        parts.append(part)
        values = part.final
        t = float(part.times[-1])


def continuous_dependence_check(u0_a, u0_b, f_a, f_b, horizon, config=None, grid=None):
    """sup_t ||u_a(t) - u_b(t)||_{H1} for two runs on identical time sampling."""
    run_a = simulate(u0_a, horizon, f_a, config, grid)
    run_b = simulate(u0_b, horizon, f_b, config, grid)
    return run_a.sup_h1_distance(run_b)


def replay_distance(trajectory, control, config=None):
    """
    sup H1 distance between stored states and an open-loop replay of control.

    The replay starts from the state stored at control.start and is compared on the
    stored times both runs share.
    """
    times = trajectory.times
    index = int(np.argmin(np.abs(times - control.start)))
    if abs(times[index] - control.start) > 1e-9:
        raise ValidationError(f"Trajectory stores no state at the control start t={control.start}.")
    replay = simulate(trajectory.states[index], control.end - control.start, control, config,
                      trajectory.grid, start_time=control.start)
    worst = 0.0
    for t, state in zip(replay.times, replay.states):
        match = int(np.argmin(np.abs(times - t)))
        if abs(times[match] - t) < 1e-9:
            worst = max(worst, sobolev_norm(state - trajectory.states[match], trajectory.grid, 1))
    return worst


def fit_decay_rate(times, values):
    """Least-squares exponential rate r of values ~ C exp(-r t)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    positive = values > 0
    if positive.sum() < 2:
        raise ValidationError("Need at least two positive samples to fit a decay rate.")
    slope, _ = np.polyfit(times[positive], np.log(values[positive]), 1)
    return float(-slope)


def semi_global_decay(u0, horizon, config=None, grid=None):
    """
    Free flow from data below the first harmonic level, with its fitted energy rate.

    Returns:
        tuple: (Trajectory, fitted exponential rate of E(t))
    """
    if isinstance(u0, SphereField):
        grid = u0.grid
    start = energy(field_values(u0), grid)
    if start >= 2.0 * math.pi:
        raise ValidationError(f"Initial energy {start:.4f} is not below the level 2*pi.")
    run = simulate(u0, horizon, None, config, grid)
    rate = fit_decay_rate(run.times, run.energies)
    logger.info(f"[HMHF] Free decay from E={start:.4f}: fitted energy rate {rate:.4f}")
    return run, rate

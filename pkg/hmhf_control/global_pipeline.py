"""
Global Pipeline
Steers a bounded-energy state to a prescribed harmonic map on S^k (k >= 2): free descent
through the harmonic levels with energy crossings, decay, local null control to a point,
transfer along a great circle and the winding lift
"""

import math
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .energy_crossing import build_crossing_control, execute_crossing
from .errors import CrossingFailed, DimensionTooSmall, HMHFError, StageFailure, Timeout, ValidationError
from .flow_solver import (
    ControlRecord,
    ControlSequence,
    SolverConfig,
    build_trajectory,
    check_tracking_gain,
    concatenate_trajectories,
    fit_decay_rate,
    free_flow_until_approximate_harmonic,
    realize_feedback,
    simulate,
    whole_steps,
)
from .geodesic_control import TRACKING_GAIN, PolarState, change_winding, steer_on_geodesic
from .linear_heat_control import DEFAULT_PIECES, DEFAULT_RHO
from .spectral_grid import TWO_PI, energy, sobolev_norm
from .sphere_geometry import GeodesicChart, chart_fit, complete_basis, field_values, harmonic_map
from .stabilization import small_time_null_control


logger = logging.getLogger(__name__)

PHASES = ('free_descent', 'crossing', 'decay', 'local_null', 'point_transfer', 'winding_lift')
TERMINAL_TOLERANCE = 1e-6
DECAY_LEVEL = 1.0 / TWO_PI
DECAY_RATE = 1.0 / (2.0 * math.pi ** 2)


@dataclass(frozen=True)
class PipelineConfig:
    """Budgets and tolerances of the global pipeline."""

    epsilon_detect: float = 0.05
    nu1: float = 0.1
    crossing_epsilon: float = 0.05
    crossing_horizon: float = 1.0
    crossing_retries: int = 3
    decay_target: float = 1e-3
    max_free_time: float = 20.0
    max_decay_time: float = 40.0
    null_horizon: float = 1.0
    transfer_horizon: float = 1.0
    winding_horizon: float = 2.0
    settle_horizon: float = 1.0
    tracking_gain: float = TRACKING_GAIN
    replay_check: bool = True
    check_every: float = 0.05
    pieces: int = DEFAULT_PIECES
    rho: float = DEFAULT_RHO
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        for name in ('epsilon_detect', 'nu1', 'crossing_epsilon', 'crossing_horizon', 'decay_target',
                     'max_free_time', 'max_decay_time', 'null_horizon', 'transfer_horizon',
                     'winding_horizon', 'settle_horizon', 'check_every'):
            if not getattr(self, name) > 0:
                raise ValidationError(f"PipelineConfig.{name} must be positive, got {getattr(self, name)}.")
        if self.epsilon_detect >= self.nu1:
            raise ValidationError(
                f"epsilon_detect ({self.epsilon_detect}) must be below the crossing admission nu1 ({self.nu1})."
            )
        if self.crossing_epsilon > 0.1:
            raise ValidationError(f"crossing_epsilon must not exceed 0.1, got {self.crossing_epsilon}.")
        if self.crossing_retries < 1:
            raise ValidationError("crossing_retries must be at least 1.")
        check_tracking_gain(self.tracking_gain, self.solver)


@dataclass(frozen=True)
class PhaseRecord:
    phase: str
    start: float
    end: float
    entry_energy: float
    exit_energy: float
    entry_level: int = None
    exit_level: int = None
    notes: dict = field(default_factory=dict, compare=False)

    def line(self):
        """One key=value record; None fields are written as blanks."""
        items = [
            ('phase', self.phase),
            ('start', f'{self.start:.17g}'),
            ('end', f'{self.end:.17g}'),
            ('entry_energy', f'{self.entry_energy:.17g}'),
            ('exit_energy', f'{self.exit_energy:.17g}'),
            ('entry_level', '' if self.entry_level is None else str(self.entry_level)),
            ('exit_level', '' if self.exit_level is None else str(self.exit_level)),
        ]
        items.extend((key, f'{value:.17g}' if isinstance(value, float) else str(value))
                     for key, value in sorted(self.notes.items()))
        return ' '.join(f'{key}={value}' for key, value in items)


@dataclass
class PhaseLog:
    """Ordered phase records of one pipeline run."""

    records: list = field(default_factory=list)

    def append(self, record):
        if record.phase not in PHASES:
            raise ValidationError(f"Unknown phase '{record.phase}'.")
        self.records.append(record)

    @property
    def levels(self):
        """Harmonic levels N entered by the crossing phases, in order."""
        return [r.entry_level for r in self.records if r.phase == 'crossing']

    def check(self):
        """
        Audit the crossing invariants.

        Returns:
            list of violated conditions (empty when the log is consistent)
        """
        problems = []
        for record in self.records:
            if record.phase == 'crossing' and record.exit_energy >= TWO_PI * record.entry_level ** 2:
                problems.append(f"crossing at N={record.entry_level} exited at E={record.exit_energy:.8f}")
        levels = self.levels
        if any(b >= a for a, b in zip(levels, levels[1:])):
            problems.append(f"crossed levels not strictly decreasing: {levels}")
        return problems

    def lines(self):
        return [record.line() for record in self.records]


@dataclass(eq=False)
class DescentRound:
    """Result of one descent_step: the phases run, their controls and the exit state."""

    phases: list
    controls: list
    trajectory: object
    state: np.ndarray
    level: int


def _shifted(trajectory, offset):
    return replace(trajectory, times=trajectory.times + offset)


def _zero_control(window, dim, duration):
    if duration <= 0:
        return []
    return [ControlRecord.zero(window, dim, 0.0, duration)]


def descent_step(state, config, window, clock=0.0, previous_level=None):
    """
    One free-flow-plus-crossing round.

    The free flow runs until an epsilon-approximate harmonic map is detected. A nonzero
    level is then crossed with the power-series control; a failed design is retried from
    the same state with half the amplitude on a re-fitted chart.

    Returns:
        DescentRound (level 0 and no crossing when the flow settles near a constant)

    Raises:
        Timeout: if no approximate harmonic map is found within max_free_time
        CrossingFailed: after the retry budget
        StageFailure: if the detected level does not lie below the previous one
    """
    grid = window.grid
    values = field_values(state)
    dim = values.shape[1]
    entry = energy(values, grid)
    if entry < DECAY_LEVEL:
        logger.info(f"[HMHF] Energy {entry:.4e} below 1/(2 pi); no crossing needed")
        return DescentRound([], [], None, values, 0)

    free, detection = free_flow_until_approximate_harmonic(values, config.epsilon_detect, config.max_free_time,
                                                           config.solver, grid, config.check_every)
    if isinstance(detection, Timeout):
        raise detection
    level = abs(detection.chart.n)
    values = free.final
    phases = [PhaseRecord('free_descent', clock, clock + detection.time, entry, float(free.energies[-1]),
                          exit_level=level, notes={'residual': detection.residual})]
    controls = _zero_control(window, dim, detection.time)
    parts = [_shifted(free, clock)]
    clock += detection.time

    if previous_level is not None and level >= previous_level:
        raise StageFailure(f"Detected level N={level} does not lie below the crossed level N={previous_level}.")
    if level == 0:
        return DescentRound(phases, controls, concatenate_trajectories(parts), values, 0)

    epsilon = config.crossing_epsilon
    chart = detection.chart
    failure = None
    for attempt in range(config.crossing_retries):
        horizon = whole_steps(config.crossing_horizon, config.solver.dt)
        plan = build_crossing_control(chart, epsilon, horizon, window, config.pieces, config.rho)
        try:
            crossing, delta_e = execute_crossing(values, plan, config.solver, grid, config.nu1)
        except CrossingFailed as error:
            failure = error
            logger.warning(f"[HMHF] ⚠ Crossing attempt {attempt + 1} at N={level} failed; halving epsilon")
            epsilon /= 2.0
            chart, _ = chart_fit(values, grid)
            continue
        phases.append(PhaseRecord(
            'crossing', clock, clock + plan.horizon, float(crossing.energies[0]), float(crossing.energies[-1]),
            entry_level=level, notes={'epsilon': epsilon, 'delta_e': delta_e, 'attempts': attempt + 1},
        ))
        controls.append(plan.force)
        parts.append(_shifted(crossing, clock))
        return DescentRound(phases, controls, concatenate_trajectories(parts), crossing.final, level)
    raise CrossingFailed(
        f"Crossing at N={level} failed {config.crossing_retries} times (last delta_E={failure.delta_e:.3e}).\n"
        f"Lower crossing_epsilon or detect the harmonic map more tightly.",
        delta_e=failure.delta_e,
    )


def free_decay(state, config, grid, clock=0.0):
    """
    Free flow until the H1 seminorm falls to decay_target.

    Returns:
        tuple: (Trajectory shifted to clock, fitted energy rate once E <= 1/(2 pi))
    """
    values = field_values(state)
    parts = [build_trajectory(grid, [0.0], [values])]
    t = 0.0
    while sobolev_norm(values, grid, 1, homogeneous=True) > config.decay_target:
        if t >= config.max_decay_time - 1e-12:
            raise Timeout(
                f"H1 seminorm still {sobolev_norm(values, grid, 1, homogeneous=True):.3e} after t={t:g}.\n"
                f"Raise max_decay_time or decay_target.",
                time=t,
            )
        part = simulate(values, min(config.check_every * 10, config.max_decay_time - t), None,
                        config.solver, grid, start_time=t)
        parts.append(part)
        values = part.final
        t = float(part.times[-1])
    trajectory = concatenate_trajectories(parts)
    low = trajectory.energies <= DECAY_LEVEL
    rate = math.nan
    if np.count_nonzero(low & (trajectory.energies > 0)) >= 2:
        rate = fit_decay_rate(trajectory.times[low], trajectory.energies[low])
        if rate < 0.8 * DECAY_RATE:
            logger.warning(f"[HMHF] ⚠ Decay rate {rate:.4f} below the local bound {DECAY_RATE:.4f}")
    return _shifted(trajectory, clock), rate


def transfer_chart(p, p_f):
    """
    Great circle through p and p_f, returned as (chart with alpha = p, angle of p_f).

    When p_f is (anti)podal to p the companion direction is the first basis vector
    orthogonal to p.
    """
    p = np.asarray(p, dtype=float)
    companion = p_f - (p_f @ p) * p
    size = np.linalg.norm(companion)
    if size < 1e-12:
        beta = complete_basis([p], p.size)[1]
    else:
        beta = companion / size
    return GeodesicChart(0, p, beta), math.atan2(float(p_f @ beta), float(p_f @ p))


def nearest_circle_point(p, target):
    """Point of the target harmonic map closest to p (the constant itself when N = 0)."""
    if target.n == 0:
        return math.cos(target.phase) * target.alpha + math.sin(target.phase) * target.beta
    plane = np.array([p @ target.alpha, p @ target.beta])
    if np.linalg.norm(plane) < 1e-12:
        return target.alpha.copy()
    plane /= np.linalg.norm(plane)
    return plane[0] * target.alpha + plane[1] * target.beta


def _flatten(controls):
    records = []
    for control in controls:
        records.extend(control.records if isinstance(control, ControlSequence) else [control])
    return records


def _abort(error, log, stage):
    message = str(error).splitlines()[0] if str(error) else type(error).__name__
    logger.error(f"[HMHF] ✗ Stage {stage} failed: {message}")
    return StageFailure(f"Stage {stage} failed: {message}", phase_log=log, cause=error)


def run_global(u0, target, window, config=None):
    """
    Steer u0 to harmonic_map(target).

    Args:
        u0: SphereField on S^k with k >= 2
        target: GeodesicChart of the target harmonic map
        window: control Window (a single arc for the winding lift)
        config: PipelineConfig

    Returns:
        tuple: (ControlSequence, Trajectory, PhaseLog)

    Raises:
        DimensionTooSmall: for k = 1
        StageFailure: wrapping the first stage error, with the phase log so far
    """
    config = config or PipelineConfig()
    grid = window.grid
    values = field_values(u0)
    dim = values.shape[1]
    if dim < 3:
        raise DimensionTooSmall(
            "Global control needs k >= 2; on S^1 the degree is conserved.\n"
            "Use steer_on_geodesic for circle-valued states of matching winding."
        )
    if target.alpha.size != dim:
        raise ValidationError(f"Target chart lives on S^{target.k}, state on S^{dim - 1}.")
    goal = harmonic_map(target, grid).values
    log = PhaseLog()

    if sobolev_norm(values - goal, grid, 1) <= TERMINAL_TOLERANCE:
        logger.info("[HMHF] ✓ State already at the target harmonic map; zero control")
        control = ControlSequence((ControlRecord.zero(window, dim, 0.0, config.check_every),))
        trajectory = build_trajectory(grid, [0.0, config.check_every], [values, values],
                                      summary={'terminal_h1': 0.0})
        return control, trajectory, log

    controls, parts = [], []
    clock = 0.0
    start_energy = energy(values, grid)
    max_levels = max(1, math.ceil(math.sqrt(start_energy / TWO_PI)))

    # Descent through the harmonic levels
    previous = None
    for round_index in range(max_levels + 1):
        try:
            result = descent_step(values, config, window, clock, previous)
        except HMHFError as error:
            raise _abort(error, log, 'descent') from error
        for phase in result.phases:
            log.append(phase)
        controls.extend(result.controls)
        if result.trajectory is not None:
            parts.append(result.trajectory)
            clock = float(result.trajectory.times[-1])
        values = result.state
        if result.level == 0:
            break
        previous = result.level
    else:
        raise _abort(StageFailure(f"More than {max_levels} descent levels from E={start_energy:.4f}."), log, 'descent')

    # Decay to a small neighbourhood of a point
    entry = energy(values, grid)
    try:
        decay, rate = free_decay(values, config, grid, clock)
    except HMHFError as error:
        raise _abort(error, log, 'decay') from error
    log.append(PhaseRecord('decay', clock, float(decay.times[-1]), entry, float(decay.energies[-1]),
                           notes={'rate': rate}))
    controls.extend(_zero_control(window, dim, float(decay.times[-1]) - clock))
    parts.append(decay)
    clock = float(decay.times[-1])
    values = decay.final

    # Local null control to the mean direction, realized on the flow solver
    mean = values.mean(axis=0)
    p = mean / np.linalg.norm(mean)
    entry = energy(values, grid)
    null_horizon = whole_steps(config.null_horizon, config.solver.dt)
    try:
        design, local = small_time_null_control(values, null_horizon, target=p, window=window,
                                                config=config.solver, grid=grid)
        record, realized = realize_feedback(values, null_horizon, design, window, config.solver, grid)
    except HMHFError as error:
        raise _abort(error, log, 'local_null') from error
    miss = sobolev_norm(realized.final - p, grid, 1)
    logger.info(
        f"[HMHF] Local null control: chart loop ends {local.summary['terminal_h1']:.3e} from p, "
        f"the flow solver {miss:.3e}"
    )
    log.append(PhaseRecord('local_null', clock, clock + float(realized.times[-1]), entry,
                           float(realized.energies[-1]),
                           notes={'terminal_h1': local.summary['terminal_h1'], 'realized_h1': miss}))
    controls.append(record)
    parts.append(_shifted(realized, clock))
    clock += float(realized.times[-1])
    values = realized.final

    # Transfer along the great circle through p and the target circle
    p_f = nearest_circle_point(p, target)
    chart, angle = transfer_chart(p, p_f)
    settle = config.settle_horizon if target.n == 0 else 0.0
    entry = energy(values, grid)
    try:
        record, transfer = steer_on_geodesic(PolarState.from_field(values, chart), (0, angle),
                                             config.transfer_horizon, window, config.solver,
                                             config.pieces, config.rho, u0=values,
                                             gain=config.tracking_gain, settle=settle)
    except HMHFError as error:
        raise _abort(error, log, 'point_transfer') from error
    defect = sobolev_norm(transfer.final - p_f, grid, 1)
    logger.info(f"[HMHF] Point transfer ends {defect:.3e} from the designed constant")
    log.append(PhaseRecord('point_transfer', clock, clock + float(transfer.times[-1]), entry,
                           float(transfer.energies[-1]), notes={'angle': angle, 'defect': defect}))
    controls.append(record)
    parts.append(_shifted(transfer, clock))
    clock += float(transfer.times[-1])
    values = transfer.final

    # Winding lift onto the target circle
    if target.n != 0:
        start_chart = GeodesicChart(0, target.alpha, target.beta)
        try:
            sequence, lift = change_winding(values, start_chart, target.n, config.winding_horizon, window,
                                            target.phase, config.solver, config.pieces, config.rho,
                                            gain=config.tracking_gain, settle=config.settle_horizon)
        except HMHFError as error:
            raise _abort(error, log, 'winding_lift') from error
        log.append(PhaseRecord('winding_lift', clock, clock + float(lift.times[-1]), float(lift.energies[0]),
                               float(lift.energies[-1]), exit_level=abs(target.n),
                               notes={'force_leak': lift.summary['force_leak'],
                                      'designed_h1': lift.summary['designed_terminal_h1']}))
        controls.append(sequence)
        parts.append(_shifted(lift, clock))
        clock += float(lift.times[-1])
        values = lift.final

    control = ControlSequence.chain(_flatten(controls))
    trajectory = concatenate_trajectories(parts)
    realized = sobolev_norm(values - goal, grid, 1)
    terminal = realized
    if config.replay_check:
        replay = simulate(u0, control.end - control.start, control, config.solver, grid)
        terminal = sobolev_norm(replay.final - goal, grid, 1)
    trajectory.summary.update({
        'terminal_h1': terminal,
        'realized_terminal_h1': realized,
        'levels': log.levels,
        'total_time': clock,
        'phases': len(log.records),
    })
    problems = log.check()
    if problems:
        raise StageFailure("Phase log is inconsistent: " + '; '.join(problems), phase_log=log)
    if terminal > TERMINAL_TOLERANCE:
        logger.error(f"[HMHF] ✗ Control ends {terminal:.3e} from the target in H1 (run {realized:.3e})")
        raise StageFailure(
            f"Replayed control ends {terminal:.3e} from the target, above {TERMINAL_TOLERANCE:.0e}.\n"
            f"Lengthen settle_horizon or widen the control window.",
            phase_log=log,
        )
    logger.info(f"[HMHF] ✓ Global control reached N={target.n} at T={clock:.4g}: terminal H1 {terminal:.3e}")
    return control, trajectory, log

"""
Stabilization
Frequency-Lyapunov rapid stabilization in stereographic coordinates, its pull-back to
the sphere, and the piecewise-feedback small-time null controller
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BlowupDetected, ScheduleExhausted, ValidationError
from .flow_solver import ControlRecord, SolverConfig, build_trajectory, fit_decay_rate
from .spectral_grid import (
    Window,
    dealias_mask,
    derivative,
    dft,
    fit_c0,
    fourier_operator,
    idft,
    low_mode_mask,
    max_mode,
    p_lambda,
    p_lambda_perp,
    resolvable_lambda_cap,
    sobolev_norm,
)
from .sphere_geometry import (
    Rotation,
    SphereField,
    field_values,
    pole_frame,
    stereo_forward,
    stereo_inverse,
    stereo_push,
)


logger = logging.getLogger(__name__)

DEFAULT_ADMISSION = 1e-2
DEFAULT_MAX_LAMBDA = 64.0
TERMINAL_TOLERANCE = 1e-6
V_NORM_CAP = 1e3


def policy_c0(lam, window):
    """
    Exponent of the squared spectral inequality, fitted over perfect squares up to lam.

    Returns 2 * max -log c(l, omega) / sqrt(l), so lam * exp(c0 sqrt(lam)) * c(lam)^2 >= lam.
    """
    squares = [float(n * n) for n in range(1, max_mode(lam) + 1)]
    return 2.0 * fit_c0(window, squares)


@dataclass(frozen=True, eq=False)
class RapidFeedbackPolicy:
    """Feedback g = -gamma 1_omega P_lambda v in the stereographic chart of frame * u."""

    lam: float
    c0: float
    window: Window
    frame: Rotation

    def __post_init__(self):
        if not self.lam > 1:
            raise ValidationError(f"lambda must exceed 1, got {self.lam}.")
        if self.c0 < 0:
            raise ValidationError(f"c0 must be non-negative, got {self.c0}.")

    @classmethod
    def build(cls, lam, window, frame=None, dim=3):
        """Policy with c0 fitted on the window; frame defaults to the identity."""
        frame = frame or Rotation.identity(dim)
        return cls(float(lam), policy_c0(lam, window), window, frame)

    @property
    def gamma(self):
        return self.lam * math.exp(self.c0 * math.sqrt(self.lam))

    @property
    def mu(self):
        return self.lam * math.exp(2.0 * self.c0 * math.sqrt(self.lam))

    @property
    def grid(self):
        return self.window.grid

    def force_at(self, t, values):
        return u_feedback(values, self)


def v_feedback(v, policy):
    """g = -gamma 1_omega P_lambda v."""
    low = p_lambda(v, policy.grid, policy.lam)
    return -policy.gamma * policy.window.restrict(low)


def lyapunov_value(v, policy):
    """V(v) = mu ||P_lambda v||^2 + ||d_x P_lambda^perp v||^2."""
    grid = policy.grid
    low = p_lambda(v, grid, policy.lam)
    high = p_lambda_perp(v, grid, policy.lam)
    return (policy.mu * sobolev_norm(low, grid, 0) ** 2
            + sobolev_norm(high, grid, 1, homogeneous=True) ** 2)


def u_feedback(u, policy):
    """
    Sphere force whose tangential action reproduces the v-chart closed loop.

    Raises:
        SouthPoleSingularity: if frame * u touches the south pole
    """
    values = field_values(u)
    v = stereo_forward(policy.frame.apply(values))
    g = v_feedback(v, policy)
    return policy.frame.inverse.apply(stereo_push(v, g))


def v_nonlinearity(v, grid, keep=None):
    """Chart drift -4 (v.v_x) v_x / (4+s) + 2 |v_x|^2 v / (4+s)."""
    vx = derivative(v, grid, 1)
    q = 4.0 + np.sum(v * v, axis=1, keepdims=True)
    vvx = np.sum(v * vx, axis=1, keepdims=True)
    vx2 = np.sum(vx * vx, axis=1, keepdims=True)
    term = (-4.0 * vvx * vx + 2.0 * vx2 * v) / q
    if keep is None:
        return term
    return idft(dft(term, grid) * keep[:, None], grid)


class ClosedLoop:
    """
    Linearly implicit stepper for v_t = v_xx + N(v) - gamma 1_omega P_lambda v.

    The diffusion and feedback are implicit (dense LU), the chart drift explicit.
    """

    def __init__(self, policy, dt, dealias_margin=1.0 / 3.0):
        grid = policy.grid
        self.policy = policy
        self.grid = grid
        self.dt = dt
        lap = fourier_operator(grid, -grid.wavenumbers ** 2)
        low = fourier_operator(grid, low_mode_mask(grid, policy.lam).astype(float))
        system = np.eye(grid.size) - dt * lap + dt * policy.gamma * (policy.window.mask[:, None] * low)
        self.factor = scipy.linalg.lu_factor(system)
        self.keep = dealias_mask(grid, dealias_margin).astype(float)

    def advance(self, v, t=0.0):
        """Returns (v_next, applied feedback g at v_next)."""
        new = scipy.linalg.lu_solve(self.factor, v + self.dt * v_nonlinearity(v, self.grid, self.keep))
        size = sobolev_norm(new, self.grid, 1)
        if not math.isfinite(size) or size > V_NORM_CAP:
            raise BlowupDetected(
                f"Closed-loop chart state reached H1 norm {size:.3e} at t={t + self.dt:.6g}.\n"
                f"The initial data is outside the stabilization basin for lambda={self.policy.lam}.",
                time=t + self.dt,
            )
        return new, v_feedback(new, self.policy)


def _run_loop(v0, policy, horizon, dt, start=0.0, store_every=1, record_forces=False):
    nsteps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    dt_eff = horizon / nsteps
    loop = ClosedLoop(policy, dt_eff)
    v = np.array(v0, dtype=float)
    times, states = [start], [v.copy()]
    forces = []
    for i in range(nsteps):
        v, g = loop.advance(v, start + i * dt_eff)
        if record_forces:
            forces.append(policy.frame.inverse.apply(stereo_push(v, g)))
        if (i + 1) % store_every == 0 or i + 1 == nsteps:
            times.append(start + (i + 1) * dt_eff)
            states.append(v.copy())
    return np.array(times), np.array(states), forces, dt_eff


def _sphere_states(v_states, frame):
    return np.array([frame.inverse.apply(stereo_inverse(v)) for v in v_states])


def _chart_state(u, frame):
    return stereo_forward(frame.apply(field_values(u)))


def rapid_stabilize(u0, lam, horizon, window=None, frame=None, config=None, grid=None):
    """
    Closed-loop run with the rapid feedback at gain lambda.

    The loop is integrated in the stereographic chart and lifted back to the sphere.
    The summary reports the fitted H1-seminorm decay rate of v and the Lyapunov values.

    Raises:
        BlowupDetected: if the data lies outside the basin
    """
    config = config or SolverConfig()
    if isinstance(u0, SphereField):
        grid = u0.grid
    values = field_values(u0)
    window = window or Window.full(grid)
    policy = RapidFeedbackPolicy.build(lam, window, frame, values.shape[1])
    v0 = _chart_state(values, policy.frame)

    times, v_states, _, dt = _run_loop(v0, policy, horizon, config.dt, store_every=config.store_every)
    seminorms = np.array([sobolev_norm(v, grid, 1, homogeneous=True) for v in v_states])
    lyapunov = np.array([lyapunov_value(v, policy) for v in v_states])
    rate = fit_decay_rate(times, seminorms) if np.count_nonzero(seminorms > 0) >= 2 else math.inf
    logger.info(f"[HMHF] Rapid stabilization lambda={lam:g}: fitted decay rate {rate:.4f} (target {lam / 4:g})")
    summary = {
        'lambda': float(lam),
        'c0': policy.c0,
        'gamma': policy.gamma,
        'decay_rate': rate,
        'v_seminorm': seminorms,
        'lyapunov': lyapunov,
        'dt': dt,
    }
    return build_trajectory(grid, times, _sphere_states(v_states, policy.frame), summary=summary)


# ---------------------------------------------------------------------------
# Piecewise null control


@dataclass(frozen=True, eq=False)
class NullControlSchedule:
    """Stages [t_k, t_{k+1}] with gains lambda_k and entry thresholds theta_k."""

    horizon: float
    switch_times: np.ndarray
    gains: np.ndarray
    thresholds: np.ndarray
    growth: float = 4.0

    def __post_init__(self):
        times = np.asarray(self.switch_times, dtype=float)
        gains = np.asarray(self.gains, dtype=float)
        if np.any(np.diff(times) <= 0) or abs(times[-1] - self.horizon) > 1e-12 or times[0] != 0.0:
            raise ValidationError("Switch times must increase strictly from 0 to the horizon.")
        if gains.size != times.size - 1 or np.any(np.diff(gains) <= 0):
            raise ValidationError("Gains must be strictly increasing, one per stage.")
        object.__setattr__(self, 'switch_times', times)
        object.__setattr__(self, 'gains', gains)
        object.__setattr__(self, 'thresholds', np.asarray(self.thresholds, dtype=float))

    @classmethod
    def build(cls, horizon, window, lam0=None, growth=4.0, max_lambda=DEFAULT_MAX_LAMBDA,
              admission=DEFAULT_ADMISSION):
        """
        t_k = T (1 - 2^-k), lambda_k = lam0 growth^k capped at max_lambda; the capped stage runs to T.

        lam0 defaults to 4 / T^2 (at least 4). max_lambda is lowered to the largest
        perfect square the window resolves.
        """
        if not horizon > 0:
            raise ValidationError(f"horizon must be positive, got {horizon}.")
        cap = float(resolvable_lambda_cap(window, max_lambda))
        lam = max(4.0 / horizon ** 2, 4.0) if lam0 is None else float(lam0)
        lam = min(lam, cap)
        times, gains = [0.0], []
        k = 0
        while True:
            gains.append(lam)
            if lam >= cap:
                times.append(horizon)
                break
            times.append(horizon * (1.0 - 2.0 ** -(k + 1)))
            lam = min(lam * growth, cap)
            k += 1
        thresholds = [admission]
        for i, gain in enumerate(gains[:-1]):
            thresholds.append(thresholds[-1] * math.exp(-gain * (times[i + 1] - times[i]) / 8.0))
        return cls(horizon, np.array(times), np.array(gains), np.array(thresholds), growth)

    @property
    def stages(self):
        return len(self.gains)


def small_time_null_control(u0, horizon, schedule=None, target=None, window=None, config=None, grid=None):
    """
    Steer u0 to the constant target point within the horizon by piecewise rapid feedback.

    The realized force is recorded step by step as an open-loop ControlRecord and the
    final state is snapped to the target once ||v(T)||_{H1} <= 1e-6. The stored states
    are the chart loop's; callers that hand the state on replay the record on the solver.

    Returns:
        tuple: (ControlRecord, Trajectory)

    Raises:
        ScheduleExhausted: if a stage is entered above its threshold or the terminal norm is missed
    """
    config = config or SolverConfig()
    if isinstance(u0, SphereField):
        grid = u0.grid
    values = field_values(u0)
    dim = values.shape[1]
    window = window or Window.full(grid)
    target = np.eye(dim)[-1] if target is None else np.asarray(target, dtype=float)
    frame = pole_frame(target)
    schedule = schedule or NullControlSchedule.build(horizon, window)
    v = _chart_state(values, frame)

    if sobolev_norm(v, grid, 1) == 0.0:
        logger.info("[HMHF] ✓ State already at the target point; zero control")
        record = ControlRecord.zero(window, dim, 0.0, horizon)
        trajectory = build_trajectory(grid, [0.0, horizon], [values, values],
                                      summary={'terminal_h1': 0.0, 'stages': 0})
        return record, trajectory

    all_times, all_states, all_forces, ratios = [np.array([0.0])], [v[None]], [], []
    for k in range(schedule.stages):
        start, end = schedule.switch_times[k], schedule.switch_times[k + 1]
        entry = sobolev_norm(v, grid, 1)
        if entry > schedule.thresholds[k]:
            raise ScheduleExhausted(
                f"Stage {k} entered with ||v||_H1 = {entry:.3e} above threshold {schedule.thresholds[k]:.3e}.\n"
                f"Start closer to the target or lower the admission radius.",
                stage=k,
            )
        policy = RapidFeedbackPolicy(schedule.gains[k], policy_c0(schedule.gains[k], window), window, frame)
        times, states, forces, dt = _run_loop(v, policy, end - start, config.dt, start, config.store_every, True)
        v = states[-1]
        exit_norm = sobolev_norm(v, grid, 1)
        ratios.append(exit_norm / entry)
        logger.info(
            f"[HMHF] Stage {k}: lambda={policy.lam:g} on [{start:.4g}, {end:.4g}], "
            f"||v|| {entry:.3e} -> {exit_norm:.3e}"
        )
        all_times.append(times[1:])
        all_states.append(states[1:])
        all_forces.append((start, dt, forces))

    terminal = sobolev_norm(v, grid, 1)
    if terminal > TERMINAL_TOLERANCE:
        raise ScheduleExhausted(
            f"Terminal ||v||_H1 = {terminal:.3e} exceeds {TERMINAL_TOLERANCE:.0e}.\n"
            f"Lengthen the horizon or raise max_lambda.",
            stage=schedule.stages,
        )

    step_times, step_forces = [], []
    for start, dt, forces in all_forces:
        step_times.extend(start + dt * np.arange(len(forces)))
        step_forces.extend(forces)
    step_times.append(horizon)
    step_forces.append(step_forces[-1])
    forces = np.array(step_forces) * window.mask[None, :, None]
    record = ControlRecord(np.array(step_times), forces, window)

    times = np.concatenate(all_times)
    states = _sphere_states(np.concatenate(all_states), frame)
    states[-1] = np.broadcast_to(target, states[-1].shape)
    norms = [math.sqrt(float(np.sum(record.force_at(t) ** 2)) * grid.spacing) for t in times]
    summary = {
        'terminal_h1': terminal,
        'stages': schedule.stages,
        'stage_ratios': ratios,
        'cost_linf_l2': record.l_inf_l2(),
    }
    logger.info(f"[HMHF] ✓ Null control reached the target: ||v(T)|| = {terminal:.3e}, cost {record.l_inf_l2():.3e}")
    return record, build_trajectory(grid, times, states, norms, summary=summary)


# ---------------------------------------------------------------------------
# Measurements


def measure_basin(lam, window, radii, horizon=2.0, dt=1e-3, dim=3, seed=0):
    """
    Largest tested H1 radius of chart data the closed loop at gain lambda brings down.

    Returns:
        tuple: (largest admissible radius or 0.0, {radius: admitted})
    """
    grid = window.grid
    rng = np.random.default_rng(seed)
    modes = min(4, grid.nyquist // 4)
    x = grid.nodes
    shape = np.zeros((grid.size, dim - 1))
    for n in range(1, modes + 1):
        shape += np.outer(np.cos(n * x), rng.standard_normal(dim - 1)) / n ** 2
        shape += np.outer(np.sin(n * x), rng.standard_normal(dim - 1)) / n ** 2
    shape /= sobolev_norm(shape, grid, 1)
    policy = RapidFeedbackPolicy.build(lam, window, None, dim)

    outcomes = {}
    for radius in sorted(radii):
        v0 = radius * shape
        try:
            _, states, _, _ = _run_loop(v0, policy, horizon, dt, store_every=max(1, int(0.1 / dt)))
            admitted = sobolev_norm(states[-1], grid, 1) < radius
        except BlowupDetected:
            admitted = False
        outcomes[float(radius)] = admitted
    admissible = [r for r, ok in outcomes.items() if ok]
    largest = max(admissible) if admissible else 0.0
    logger.info(f"[HMHF] Basin measurement lambda={lam:g}: largest admissible radius {largest:g}")
    return largest, outcomes


def null_control_cost_sweep(u0, horizons, window=None, config=None, grid=None):
    """
    Control cost ||f||_{L_inf L2} against the horizon, with a line fit of log cost on 1/T.

    Returns:
        dict: horizons, costs, slope, intercept, r_squared
    """
    costs = []
    for horizon in horizons:
        record, _ = small_time_null_control(u0, horizon, window=window, config=config, grid=grid)
        costs.append(record.l_inf_l2())
    inverse = 1.0 / np.asarray(horizons, dtype=float)
    logs = np.log(np.asarray(costs))
    slope, intercept = np.polyfit(inverse, logs, 1)
    fitted = slope * inverse + intercept
    spread = float(np.sum((logs - logs.mean()) ** 2))
    r_squared = 1.0 - float(np.sum((logs - fitted) ** 2)) / spread if spread > 0 else 1.0
    logger.info(f"[HMHF] Cost sweep: slope {slope:.4f}, R^2 {r_squared:.4f}")
    return {
        'horizons': list(map(float, horizons)),
        'costs': costs,
        'slope': float(slope),
        'intercept': float(intercept),
        'r_squared': r_squared,
    }

"""
Verification Suite
Property checks of the flow, the controllers and the pipeline, run concurrently from a
work queue and reported as one pass/fail record per property
"""

import os
import math
import time
import logging
import threading
from dataclasses import dataclass, field, replace
from queue import Empty, Queue

import numpy as np

from .energy_crossing import crossing_sweep
from .errors import HMHFError
from .flow_solver import free_flow_until_approximate_harmonic, replay_distance, semi_global_decay, simulate
from .geodesic_control import PolarState, change_winding, steer_on_geodesic
from .global_pipeline import PipelineConfig, run_global
from .linear_heat_control import steer_zero_to_one
from .scenario_runner import seed_state
from .spectral_grid import TWO_PI, Window, resolvable_lambda_cap, sobolev_norm, spectral_constant
from .sphere_geometry import GeodesicChart, SphereField, family_gamma, harmonic_map, stereo_inverse
from .stabilization import measure_basin, null_control_cost_sweep, rapid_stabilize, small_time_null_control


logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    status: str
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self):
        return self.status != 'fail'

    def line(self):
        """Machine-readable pass line."""
        parts = [f'CHECK name={self.name}', f'status={self.status}', f'seconds={self.seconds:.2f}']
        for key, value in sorted(self.detail.items()):
            if isinstance(value, float):
                value = f'{value:.6g}'
            parts.append(f'{key}={value}')
        return ' '.join(str(p).replace('\n', ' ') for p in parts)


def _chart_noise(grid, dim, size, seed):
    """Smooth R^k-valued chart data with H1 norm size."""
    rng = np.random.default_rng(seed)
    x = grid.nodes
    v = np.zeros((grid.size, dim - 1))
    for n in range(1, 4):
        v += np.outer(np.cos(n * x), rng.standard_normal(dim - 1)) / n ** 2
        v += np.outer(np.sin(n * x), rng.standard_normal(dim - 1)) / n ** 2
    return size * v / sobolev_norm(v, grid, 1)


def _random_state(config, energy_target, seed):
    return seed_state(replace(config, initial='random_fourier', energy_target=energy_target, seed=seed,
                              frame='identity'))


def check_harmonic_levels(config):
    grid = config.periodic_grid
    worst = 0.0
    for n in range(1, 9):
        level = TWO_PI * n * n
        worst = max(worst, abs(harmonic_map(GeodesicChart.standard(n, config.k), grid).energy - level) / level)
    return worst <= 1e-8, {'max_relative_error': worst}


def check_stationarity(config):
    grid = config.periodic_grid
    horizon = 1.0 if config.full else 0.2
    worst = 0.0
    for n in (1, 2, 3):
        u0 = harmonic_map(GeodesicChart.standard(n, config.k), grid)
        run = simulate(u0, horizon, None, config.solver)
        worst = max(worst, max(sobolev_norm(s - u0.values, grid, 1) for s in run.states))
    return worst <= 1e-8, {'max_h1_drift': worst, 'horizon': horizon}


def check_dissipation(config):
    u0 = _random_state(config, 4.0 * math.pi, 1)
    horizon = 0.5 if config.full else 0.1
    residuals = []
    for dt in (config.dt, config.dt / 2):
        run = simulate(u0, horizon, None, replace(config.solver, dt=dt))
        e = run.energies
        residuals.append(abs(e[0] - e[-1] - 2.0 * run.diagnostics['flux_cum'][-1]) / e[0])
    halves = residuals[0] < 1e-12 or residuals[1] <= 0.6 * residuals[0]
    return residuals[0] <= 1e-3 and halves, {'residual': residuals[0], 'residual_half_dt': residuals[1]}


def check_local_decay(config):
    u0 = _random_state(config, 0.1, 2)
    horizon = 5.0 if config.full else 1.0
    run = simulate(u0, horizon, None, config.solver)
    bound = run.energies[0] * np.exp(-run.times / (2.0 * math.pi ** 2)) * 1.05
    excess = float(np.max(run.energies - bound))
    return excess <= 0, {'max_excess': excess, 'energy_initial': float(run.energies[0])}


def check_convergence_detection(config):
    count = 20 if config.full else 3
    rng = np.random.default_rng(5)
    targets = rng.uniform(TWO_PI + 0.5, 8.0 * math.pi - 0.5, count)
    reached, levels = 0, []
    for i, target in enumerate(targets):
        u0 = _random_state(config, float(target), 100 + i)
        _, detection = free_flow_until_approximate_harmonic(u0, 0.05, 30.0 if config.full else 10.0, config.solver)
        if isinstance(detection, HMHFError):
            continue
        reached += 1
        levels.append(abs(detection.chart.n))
    return reached == count, {'reached': reached, 'count': count, 'levels': ','.join(map(str, levels))}


def check_spectral_constant(config):
    window = Window(config.periodic_grid, ((0.0, math.pi / 2),))
    cap = resolvable_lambda_cap(window, 1024)
    lambdas = [n * n for n in range(1, int(math.isqrt(int(cap))) + 1)]
    constants = [spectral_constant(lam, window) for lam in lambdas]
    in_range = all(0 < c <= 1 for c in constants)
    monotone = all(b <= a * (1 + 1e-12) for a, b in zip(constants, constants[1:]))
    ratio = max(-math.log(c) / math.sqrt(lam) for c, lam in zip(constants, lambdas))
    return in_range and monotone and math.isfinite(ratio), {'resolvable_cutoff': cap, 'max_c0_ratio': ratio}


def check_rapid_stabilization(config):
    grid = config.periodic_grid
    window = config.control_window
    detail, ok = {}, True
    for lam in (4.0, 16.0):
        u0 = SphereField(stereo_inverse(_chart_noise(grid, config.k + 1, 1e-3, 3)), grid)
        run = rapid_stabilize(u0, lam, 8.0 / lam, window, config=config.solver)
        rate = run.summary['decay_rate']
        detail[f'rate_lambda_{lam:g}'] = rate
        ok = ok and rate >= lam / 8.0
    return ok, detail


def check_null_control(config):
    grid = config.periodic_grid
    window = config.control_window
    u0 = SphereField(stereo_inverse(_chart_noise(grid, config.k + 1, 1e-4, 4)), grid)
    horizons = (1.0, 0.5, 0.25)
    terminals = []
    for horizon in horizons:
        _, run = small_time_null_control(u0, horizon, window=window, config=config.solver)
        terminals.append(run.summary['terminal_h1'])
    sweep = null_control_cost_sweep(u0, horizons, window, config.solver)
    ok = max(terminals) <= 1e-6 and sweep['slope'] > 0 and sweep['r_squared'] >= 0.9
    return ok, {'max_terminal_h1': max(terminals), 'slope': sweep['slope'], 'r_squared': sweep['r_squared']}


def check_flux_oracle(config):
    window = config.control_window
    detail, ok = {}, True
    for n in (1, 2):
        _, flux = steer_zero_to_one(n, 1.0, window)
        error = abs(flux + math.pi * n * n) / (math.pi * n * n)
        detail[f'relative_error_N{n}'] = error
        ok = ok and error <= 0.02
    return ok, detail


def check_energy_crossing(config):
    window = config.control_window
    k = max(config.k, 2)
    detail, ok = {}, True
    for n in (1, 2):
        sweep = crossing_sweep(GeodesicChart.standard(n, k), (0.02, 0.01, 0.005), 1.0, window, config.solver)
        ratios = sweep['remainder_ratios']
        detail[f'relative_error_N{n}'] = sweep['relative_error']
        detail[f'nearest_constant_N{n}'] = sweep['nearest_constant']
        ok = ok and sweep['relative_error'] <= 0.1 and all(3.0 <= r <= 5.0 for r in ratios)
    return ok, detail


def check_geodesic_steering(config):
    window = config.control_window
    grid = window.grid
    chart = GeodesicChart.standard(1, config.k)
    theta0 = PolarState.from_angle(grid.nodes + 0.4 * np.sin(2.0 * grid.nodes), chart)
    _, run = steer_on_geodesic(theta0, (1, 0.0), 1.0, window, config.solver)
    s = run.summary
    constant = bool(np.all(run.diagnostics['degree'] == 1))
    ok = s['theta_error_simulated'] <= 1e-4 and constant and s['off_circle'] <= 1e-8
    return ok, {'theta_error_exact': s['theta_error_exact'], 'theta_error_simulated': s['theta_error_simulated'],
                'off_circle': s['off_circle'], 'winding_constant': constant}


def _settle_time(window):
    """Hold time for the winding target; the uncontrolled arc of a partial window contracts slowly."""
    return 0.5 if window.is_full else 6.0


def check_winding_change(config):
    window = config.control_window
    k = max(config.k, 2)
    settle = _settle_time(window)
    detail, ok = {}, True
    for n, n1 in ((0, 1), (1, -1)):
        chart = GeodesicChart.standard(n, k)
        control, run = change_winding(harmonic_map(chart, window.grid), chart, n1, 2.0, window, 0.0, config.solver,
                                      settle=settle)
        replay = replay_distance(run, control, config.solver)
        label = f'{n}_to_{n1}'
        detail[f'terminal_{label}'] = run.summary['terminal_h1']
        detail[f'force_leak_{label}'] = run.summary['force_leak']
        detail[f'designed_{label}'] = run.summary['designed_terminal_h1']
        detail[f'replay_{label}'] = replay
        ok = (ok and run.summary['terminal_h1'] <= 1e-8 and run.summary['force_leak'] <= 1e-9
              and replay <= 10.0 * config.dt)
    return ok, detail


def check_topology(config):
    grid = config.periodic_grid
    worst, highest = 0.0, 0.0
    for s in np.linspace(0.0, TWO_PI, 32, endpoint=False):
        e = family_gamma(2, [s], grid).energy
        worst = max(worst, abs(e - TWO_PI * math.sin(s) ** 2))
        highest = max(highest, e)
    return worst <= 1e-8 and highest <= TWO_PI + 1e-8, {'max_error': worst, 'max_energy': highest}


def check_semi_global_decay(config):
    u0 = _random_state(config, math.pi, 6)
    _, rate = semi_global_decay(u0, 2.0, config.solver)
    return rate > 0, {'energy_rate': rate}


def check_basin(config):
    largest, _ = measure_basin(16.0, config.control_window, (1e-3, 1e-2, 1e-1, 0.5), dim=config.k + 1)
    return largest > 0, {'largest_radius': largest}


def check_global_pipeline(config):
    k = max(config.k, 2)
    u0 = seed_state(replace(config, k=k, initial='perturbed_harmonic', n=1, amplitude=0.2, seed=7,
                            frame='identity'))
    control, run, log = run_global(u0, GeodesicChart.standard(2, k), config.control_window,
                                   PipelineConfig(settle_horizon=_settle_time(config.control_window),
                                                  solver=config.solver))
    replay = replay_distance(run, control, config.solver)
    s = run.summary
    ok = s['terminal_h1'] <= 1e-6 and not log.check() and replay <= 1e-4
    return ok, {'terminal_h1': s['terminal_h1'], 'realized_terminal_h1': s['realized_terminal_h1'],
                'levels': log.levels, 'replay': replay}


CHECKS = {
    'harmonic_levels': check_harmonic_levels,
    'stationarity': check_stationarity,
    'dissipation': check_dissipation,
    'local_decay': check_local_decay,
    'convergence_detection': check_convergence_detection,
    'spectral_constant': check_spectral_constant,
    'rapid_stabilization': check_rapid_stabilization,
    'null_control': check_null_control,
    'flux_oracle': check_flux_oracle,
    'energy_crossing': check_energy_crossing,
    'geodesic_steering': check_geodesic_steering,
    'winding_change': check_winding_change,
    'topology': check_topology,
    'semi_global_decay': check_semi_global_decay,
    'basin': check_basin,
    'global_pipeline': check_global_pipeline,
}
FULL_ONLY = ('global_pipeline',)


def run_check(name, config):
    """Run one named check; typed failures count as a failed property."""
    started = time.monotonic()
    if name in FULL_ONLY and not config.full:
        return CheckResult(name, 'skip', {'reason': 'full run only'})
    try:
        ok, detail = CHECKS[name](config)
        status = 'pass' if ok else 'fail'
    except HMHFError as e:
        status, detail = 'fail', {'error': type(e).__name__, 'message': ' '.join(str(e).split())}
    result = CheckResult(name, status, detail, time.monotonic() - started)
    marker = {'pass': '✓', 'fail': '✗', 'skip': '⚠'}[status]
    logger.info(f"[HMHF] {marker} {result.line()}")
    return result


def run_verification(config, names=None, workers=None):
    """
    Run the checks from a queue on worker threads.

    Returns:
        dict: passed flag, failure count and one record per check in registry order
    """
    names = list(names or CHECKS)
    work = Queue()
    for name in names:
        work.put(name)
    results = {}
    lock = threading.Lock()

    def process_queue():
        while True:
            try:
                name = work.get_nowait()
            except Empty:
                return
            result = run_check(name, config)
            with lock:
                results[name] = result
            work.task_done()

    count = workers or min(len(names), os.cpu_count() or 1, 4)
    threads = [threading.Thread(target=process_queue, daemon=True) for _ in range(max(1, count))]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    ordered = [results[name] for name in names]
    failures = sum(1 for r in ordered if not r.passed)
    return {
        'passed': failures == 0,
        'failures': failures,
        'checks': [{'name': r.name, 'status': r.status, 'seconds': r.seconds, **r.detail} for r in ordered],
        'lines': [r.line() for r in ordered],
    }

"""
Scenario Runner
Builds a scenario from a key=value file plus overrides, seeds the initial state, runs the
requested experiment and writes its artifacts
"""

import math
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from dotenv import dotenv_values
from scipy.stats import special_ortho_group

from . import snapshot_io
from .energy_crossing import build_crossing_control, crossing_sweep, execute_crossing
from .errors import EnergyUnreachable, HMHFError, ValidationError
from .flow_solver import SCHEMES, SolverConfig, semi_global_decay, simulate
from .geodesic_control import PolarState, change_winding, steer_on_geodesic
from .global_pipeline import PipelineConfig, run_global
from .settings import (
    get_default_dt,
    get_default_grid,
    get_default_k,
    get_default_window,
    get_log_file,
    get_output_root,
    parse_angle,
    parse_arcs,
)
from .spectral_grid import TWO_PI, PeriodicGrid, Window, energy, sobolev_norm
from .sphere_geometry import (
    GeodesicChart,
    Rotation,
    SphereField,
    family_gamma,
    harmonic_map,
    renormalize,
    stereo_inverse,
    tangent_project,
)
from .stabilization import null_control_cost_sweep, rapid_stabilize, small_time_null_control

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(get_log_file()),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

KINDS = ('simulate', 'stabilize', 'null_control', 'cross_energy', 'geodesic_steer', 'change_winding',
         'global', 'verify')
INITIAL_STATES = ('harmonic', 'perturbed_harmonic', 'random_fourier', 'family_gamma')
ENERGY_TOLERANCE = 0.01


def _floats(text):
    """Comma-separated floats ('pi' suffixes allowed); empty text gives an empty tuple."""
    return tuple(parse_angle(item) for item in str(text).split(',') if item.strip())


@dataclass(frozen=True)
class ScenarioConfig:
    """Every knob of a scenario run; unset values fall back to the environment defaults."""

    kind: str = 'simulate'
    name: str = ''
    k: int = None
    grid: int = None
    dt: float = None
    scheme: str = 'imex_euler'
    store_every: int = 10
    horizon: float = 1.0
    window: str = None
    seed: int = 0
    initial: str = 'harmonic'
    n: int = 1
    phase: float = 0.0
    frame: str = 'identity'
    amplitude: float = 0.1
    energy_target: float = 4.0 * math.pi
    mode_cap: int = 8
    s: str = ''
    lam: float = 16.0
    epsilon: float = 0.01
    eps_sweep: str = ''
    horizons: str = ''
    n1: int = 1
    target_n: int = 2
    target_phase: float = 0.0
    snapshot_every: int = 0
    output: str = None
    full: bool = False

    def __post_init__(self):
        defaults = {'k': get_default_k(), 'grid': get_default_grid(), 'dt': get_default_dt(),
                    'window': get_default_window()}
        for key, value in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.kind not in KINDS:
            raise ValidationError(f"Unknown scenario kind '{self.kind}'.\nChoose one of: {', '.join(KINDS)}")
        if self.initial not in INITIAL_STATES:
            raise ValidationError(
                f"Unknown initial state '{self.initial}'.\nChoose one of: {', '.join(INITIAL_STATES)}"
            )
        if self.scheme not in SCHEMES:
            raise ValidationError(f"Unknown scheme '{self.scheme}'.")
        if self.k < 1:
            raise ValidationError(f"k must be at least 1, got {self.k}.")
        if not self.horizon > 0 or not self.dt > 0:
            raise ValidationError("horizon and dt must be positive.")
        parse_arcs(self.window)

    @classmethod
    def from_mapping(cls, mapping):
        """Coerce string values (scenario file or flags) to the field types; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            key = key.strip().lower().replace('-', '_')
            if key not in known:
                raise ValidationError(f"Unknown scenario key '{key}'.")
            if raw is None:
                continue
            values[key] = _coerce(key, raw, known[key].type)
        return cls(**values)

    @classmethod
    def from_file(cls, file_path, overrides=None):
        """Scenario file parsed with dotenv_values; overrides win over file values."""
        file_path = Path(file_path)
        if not file_path.exists():
            raise ValidationError(f"Scenario file not found: {file_path}")
        mapping = dict(dotenv_values(file_path))
        mapping.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(mapping)

    @property
    def periodic_grid(self):
        return PeriodicGrid(self.grid)

    @property
    def control_window(self):
        return Window(self.periodic_grid, parse_arcs(self.window))

    @property
    def solver(self):
        return SolverConfig(dt=self.dt, scheme=self.scheme, store_every=self.store_every)

    @property
    def output_dir(self):
        name = self.name or f'{self.kind}_seed{self.seed}'
        return Path(self.output) if self.output else get_output_root() / name


def _coerce(key, raw, kind):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            return text.lower() in ('1', 'true', 'yes', 'on')
        if kind is int:
            return int(text)
        if kind is float:
            return _floats(text)[0]
    except (ValueError, IndexError):
        raise ValidationError(f"Scenario key '{key}' expects {kind.__name__}, got '{raw}'.")
    return text


# ---------------------------------------------------------------------------
# Initial states


def _random_frame(dim, seed):
    return Rotation(special_ortho_group.rvs(dim, random_state=seed))


def _smooth_noise(grid, width, modes, rng):
    """Real Fourier series with Gaussian coefficients decaying like 1/n."""
    x = grid.nodes
    noise = np.zeros((grid.size, width))
    for n in range(1, modes + 1):
        noise += np.outer(np.cos(n * x), rng.standard_normal(width)) / n
        noise += np.outer(np.sin(n * x), rng.standard_normal(width)) / n
    return noise


def _energy_scale(shape, grid, target):
    """Scale a with E(stereo_inverse(a * shape)) within 1% of target: doubling, then bisection."""
    def measured(scale):
        return energy(stereo_inverse(scale * shape), grid)

    low, high = 0.0, 1.0
    for _ in range(40):
        if measured(high) >= target:
            break
        low, high = high, 2.0 * high
    else:
        raise EnergyUnreachable(
            f"Energy {target:.4f} not reached (max {measured(high):.4f}).\n"
            f"Raise mode_cap or lower energy_target."
        )
    scale = high
    for _ in range(200):
        scale = 0.5 * (low + high)
        value = measured(scale)
        if abs(value - target) <= ENERGY_TOLERANCE * target:
            return scale
        if value < target:
            low = scale
        else:
            high = scale
    raise EnergyUnreachable(f"Bisection for energy {target:.4f} did not settle (last {measured(scale):.4f}).")


def seed_state(config):
    """
    Deterministic initial SphereField for the configured initial state.

    harmonic: phi(N x + phase) in the standard or a seeded random frame
    perturbed_harmonic: harmonic map plus a tangent perturbation of H1 size amplitude
    random_fourier: stereographic lift of seeded Fourier noise rescaled to energy_target
    family_gamma: member of the degree family on S^k with parameters s

    Raises:
        EnergyUnreachable: if random_fourier cannot reach energy_target
    """
    grid = config.periodic_grid
    dim = config.k + 1
    rng = np.random.default_rng(config.seed)

    if config.initial == 'family_gamma':
        params = _floats(config.s) or (math.pi / 2,) * (config.k - 1)
        return family_gamma(config.k, params, grid)

    if config.initial == 'random_fourier':
        if config.mode_cap < 1 or config.mode_cap >= grid.nyquist // 2:
            raise EnergyUnreachable(
                f"mode_cap={config.mode_cap} does not fit a {grid.size}-node grid.\n"
                f"Use 1 <= mode_cap < {grid.nyquist // 2}."
            )
        shape = _smooth_noise(grid, dim - 1, config.mode_cap, rng)
        values = stereo_inverse(_energy_scale(shape, grid, config.energy_target) * shape)
        if config.frame == 'random':
            values = _random_frame(dim, config.seed).apply(values)
        return SphereField(renormalize(values), grid)

    chart = GeodesicChart.standard(config.n, config.k, config.phase)
    base = harmonic_map(chart, grid).values
    if config.frame == 'random':
        base = _random_frame(dim, config.seed).apply(base)
    if config.initial == 'harmonic':
        return SphereField(base, grid)

    bump = tangent_project(_smooth_noise(grid, dim, 4, rng), base)
    bump *= config.amplitude / sobolev_norm(bump, grid, 1)
    return SphereField(renormalize(base + bump), grid)


# ---------------------------------------------------------------------------
# Scenarios


def _run_simulate(config):
    u0 = seed_state(config)
    chart = None
    if config.initial == 'harmonic' and config.frame == 'identity':
        chart = GeodesicChart.standard(config.n, config.k)
    trajectory = simulate(u0, config.horizon, None, config.solver, degree_chart=chart)
    summary = {
        'energy_initial': float(trajectory.energies[0]),
        'energy_final': float(trajectory.energies[-1]),
        'h1_drift': sobolev_norm(trajectory.final - trajectory.states[0], u0.grid, 1),
        'max_constraint_residual': float(np.max(trajectory.diagnostics['constraint_residual'])),
        'max_drift': trajectory.summary['max_drift'],
    }
    if trajectory.energies[0] < TWO_PI:
        _, rate = semi_global_decay(u0, config.horizon, config.solver)
        summary['decay_rate'] = rate
    return trajectory, summary, {}


def _run_stabilize(config):
    u0 = seed_state(config)
    trajectory = rapid_stabilize(u0, config.lam, config.horizon, config.control_window, config=config.solver)
    s = trajectory.summary
    summary = {key: s[key] for key in ('lambda', 'c0', 'gamma', 'decay_rate')}
    summary['target_rate'] = config.lam / 4.0
    return trajectory, summary, {}


def _run_null_control(config):
    u0 = seed_state(config)
    window = config.control_window
    record, trajectory = small_time_null_control(u0, config.horizon, window=window, config=config.solver)
    summary = {key: trajectory.summary[key] for key in ('terminal_h1', 'stages', 'cost_linf_l2')}
    horizons = _floats(config.horizons)
    if horizons:
        summary['cost_sweep'] = null_control_cost_sweep(u0, horizons, window, config.solver)
    return trajectory, summary, {}


def _run_cross_energy(config):
    window = config.control_window
    chart = GeodesicChart.standard(config.n, config.k)
    epsilons = _floats(config.eps_sweep)
    if epsilons:
        sweep = crossing_sweep(chart, epsilons, config.horizon, window, config.solver)
        plan = build_crossing_control(chart, min(epsilons), config.horizon, window)
        trajectory, _ = execute_crossing(harmonic_map(chart, window.grid), plan, config.solver)
        return trajectory, sweep, {}
    plan = build_crossing_control(chart, config.epsilon, config.horizon, window)
    trajectory, delta_e = execute_crossing(harmonic_map(chart, window.grid), plan, config.solver)
    summary = {
        'delta_e': delta_e,
        'ratio': delta_e / config.epsilon ** 2,
        'oracle': 2.0 * plan.flux,
        'energy_final': float(trajectory.energies[-1]),
    }
    return trajectory, summary, {}


def _run_geodesic_steer(config):
    window = config.control_window
    grid = window.grid
    chart = GeodesicChart.standard(config.n, config.k)
    theta0 = PolarState.from_angle(config.n * grid.nodes + config.amplitude * np.sin(2.0 * grid.nodes), chart)
    _, trajectory = steer_on_geodesic(theta0, (config.n, config.target_phase), config.horizon, window,
                                      config.solver)
    summary = {key: trajectory.summary[key] for key in ('theta_error_exact', 'theta_error_simulated', 'off_circle')}
    degrees = trajectory.diagnostics['degree']
    summary['winding_constant'] = bool(np.all(degrees == config.n))
    return trajectory, summary, {}


def _run_change_winding(config):
    window = config.control_window
    chart = GeodesicChart.standard(config.n, config.k)
    v0 = harmonic_map(chart, window.grid)
    _, trajectory = change_winding(v0, chart, config.n1, config.horizon, window, config.target_phase,
                                   config.solver)
    summary = {key: trajectory.summary[key] for key in ('terminal_h1', 'designed_terminal_h1', 'force_leak', 'delta')}
    return trajectory, summary, {}


def _run_global(config):
    u0 = seed_state(config)
    target = GeodesicChart.standard(config.target_n, config.k, config.target_phase)
    pipeline = PipelineConfig(solver=config.solver)
    control, trajectory, log = run_global(u0, target, config.control_window, pipeline)
    summary = {key: trajectory.summary[key] for key in ('terminal_h1', 'realized_terminal_h1', 'levels', 'total_time')}
    summary['cost_linf_l2'] = control.l_inf_l2()
    return trajectory, summary, {'phase_log': log}


SCENARIOS = {
    'simulate': _run_simulate,
    'stabilize': _run_stabilize,
    'null_control': _run_null_control,
    'cross_energy': _run_cross_energy,
    'geodesic_steer': _run_geodesic_steer,
    'change_winding': _run_change_winding,
    'global': _run_global,
}


def write_artifacts(config, trajectory, summary, extras):
    """Trajectory CSV, snapshots, summary JSON and the phase log when present."""
    folder = config.output_dir
    results = [snapshot_io.write_trajectory_csv(folder / 'trajectory.csv', trajectory)]
    every = config.snapshot_every or max(1, len(trajectory.times) - 1)
    results.append(snapshot_io.write_snapshot_series(folder / 'snapshots', trajectory.times, trajectory.states,
                                                     every=every))
    if 'phase_log' in extras:
        results.append(snapshot_io.write_phase_log(folder / 'phases.log', extras['phase_log']))
    results.append(snapshot_io.write_summary(folder / 'summary.json', summary))
    failed = [r['error'] for r in results if not r['success']]
    return {'success': not failed, 'error': '; '.join(failed), 'output': str(folder)}


def run(config):
    """
    Run one scenario and write its artifacts.

    Returns:
        dict with success, exit_code, error, error_kind, output and summary
    """
    logger.info(f"[HMHF] Running scenario {config.kind} (k={config.k}, grid={config.grid}, dt={config.dt:g})")
    if config.kind == 'verify':
        from .verification import run_verification
        report = run_verification(config)
        snapshot_io.write_summary(config.output_dir / 'verify.json', report)
        return {
            'success': report['passed'],
            'exit_code': 0 if report['passed'] else 3,
            'error': '' if report['passed'] else f"{report['failures']} checks failed",
            'error_kind': '' if report['passed'] else 'PropertyFailure',
            'output': str(config.output_dir),
            'summary': report,
        }

    try:
        trajectory, summary, extras = SCENARIOS[config.kind](config)
    except HMHFError as e:
        logger.error(f"[HMHF] ✗ Scenario {config.kind} failed: {e}")
        result = {
            'success': False,
            'exit_code': e.exit_code,
            'error': ' '.join(str(e).split()),
            'error_kind': type(e).__name__,
            'output': str(config.output_dir),
        }
        log = getattr(e, 'phase_log', None)
        if log is not None:
            snapshot_io.write_phase_log(config.output_dir / 'phases.log', log)
        return result

    written = write_artifacts(config, trajectory, summary, extras)
    if not written['success']:
        logger.error(f"[HMHF] ✗ Could not write artifacts: {written['error']}")
        return {'success': False, 'exit_code': 2, 'error': written['error'], 'error_kind': 'OSError',
                'output': written['output']}
    logger.info(f"[HMHF] ✓ Scenario {config.kind} finished; artifacts in {written['output']}")
    return {'success': True, 'exit_code': 0, 'error': '', 'error_kind': '', 'output': written['output'],
            'summary': summary}


def run_file(file_path, overrides=None):
    """Scenario file entry used by the folder monitor; validation errors become result dicts."""
    try:
        config = ScenarioConfig.from_file(file_path, overrides)
    except HMHFError as e:
        return {'success': False, 'exit_code': e.exit_code, 'error': ' '.join(str(e).split()),
                'error_kind': type(e).__name__, 'output': ''}
    if not config.name:
        config = replace(config, name=Path(file_path).stem)
    return run(config)

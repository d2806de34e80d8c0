"""
HMHF Control
Controlled harmonic map heat flow from the circle into spheres
"""

from .errors import HMHFError, ValidationError
from .spectral_grid import PeriodicGrid, Window
from .sphere_geometry import GeodesicChart, Rotation, SphereField, chart_fit, harmonic_map
from .flow_solver import ControlRecord, ControlSequence, SolverConfig, Trajectory, simulate
from .linear_heat_control import LinearControlProblem, hum_null_control, steer_zero_to_one
from .stabilization import RapidFeedbackPolicy, rapid_stabilize, small_time_null_control
from .energy_crossing import build_crossing_control, execute_crossing
from .geodesic_control import PolarState, build_theta1, change_winding, deformation_homotopy, steer_on_geodesic
from .global_pipeline import PhaseLog, PipelineConfig, run_global

__all__ = [
    'HMHFError', 'ValidationError',
    'PeriodicGrid', 'Window',
    'GeodesicChart', 'Rotation', 'SphereField', 'chart_fit', 'harmonic_map',
    'ControlRecord', 'ControlSequence', 'SolverConfig', 'Trajectory', 'simulate',
    'LinearControlProblem', 'hum_null_control', 'steer_zero_to_one',
    'RapidFeedbackPolicy', 'rapid_stabilize', 'small_time_null_control',
    'build_crossing_control', 'execute_crossing',
    'PolarState', 'build_theta1', 'change_winding', 'deformation_homotopy', 'steer_on_geodesic',
    'PhaseLog', 'PipelineConfig', 'run_global',
]

# Load environment variables from .env file if present
from pathlib import Path
from dotenv import load_dotenv

env_path = Path(__file__).parent / '.env'
if env_path.exists():
    load_dotenv(env_path)
    print(f"[HMHF] Loaded environment from {env_path}")

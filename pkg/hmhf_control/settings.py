"""
HMHF Settings
Environment-driven defaults for output locations, logging and desk-scale numerics
"""

import os
import math
from pathlib import Path

from .errors import ValidationError


PACKAGE_DIR = Path(__file__).parent

DEFAULT_GRID = 256
DEFAULT_DT = 1e-4
DEFAULT_K = 2
DEFAULT_WINDOW = '0:1.5pi'


def get_output_root():
    """Get the directory scenario artifacts are written under."""
    return Path(
        os.environ.get('HMHF_OUTPUT_ROOT') or
        os.environ.get('HMHF_OUTPUT_DIR') or
        'hmhf_runs'
    )


def get_log_file():
    """Get the log file shared by the entry-point modules."""
    return os.environ.get('HMHF_LOG_FILE') or 'hmhf.log'


def get_default_grid():
    """Get the default number of grid nodes."""
    return int(os.environ.get('HMHF_GRID') or DEFAULT_GRID)


def get_default_dt():
    """Get the default time step."""
    return float(os.environ.get('HMHF_DT') or DEFAULT_DT)


def get_default_k():
    """Get the default target sphere dimension."""
    return int(os.environ.get('HMHF_K') or DEFAULT_K)


def get_default_window():
    """
    Get the default control window as an arc string.

    Checks HMHF_WINDOW first, then HMHF_CONTROL_WINDOW.

    Returns:
        str: arcs in the form 'a:b,c:d' (bounds may carry a 'pi' suffix)
    """
    return (
        os.environ.get('HMHF_WINDOW') or
        os.environ.get('HMHF_CONTROL_WINDOW') or
        DEFAULT_WINDOW
    )


def get_scenario_suffix():
    """Get the file suffix the scenario monitor picks up."""
    return os.environ.get('HMHF_SCENARIO_SUFFIX') or '.scenario'


def parse_angle(text):
    """Parse '1.5pi', 'pi' or a plain float into radians."""
    text = str(text).strip().lower()
    if text.endswith('pi'):
        factor = text[:-2].strip()
        return (float(factor) if factor else 1.0) * math.pi
    return float(text)


def parse_arcs(text):
    """
    Parse an arc string into a tuple of (start, end) pairs.

    Args:
        text: comma-separated 'a:b' pairs, e.g. '0:1.5pi' or '0:0.5pi,pi:1.25pi'

    Returns:
        tuple of (float, float)

    Raises:
        ValidationError: if a pair is malformed
    """
    arcs = []
    for chunk in str(text).split(','):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ':' not in chunk:
            raise ValidationError(
                f"Window arc '{chunk}' is not of the form a:b.\n"
                f"Example: HMHF_WINDOW=0:1.5pi"
            )
        start, end = chunk.split(':', 1)
        arcs.append((parse_angle(start), parse_angle(end)))
    if not arcs:
        raise ValidationError("Window string is empty.")
    return tuple(arcs)

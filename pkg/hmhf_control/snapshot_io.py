"""
Snapshot I/O
Binary field snapshots with write verification, trajectory CSV, phase logs and summaries
"""

import csv
import json
import struct
import hashlib
import logging
from pathlib import Path

import numpy as np

from .flow_solver import DIAGNOSTIC_COLUMNS


logger = logging.getLogger(__name__)

MAGIC = b'HMHF'
FORMAT_VERSION = 1
HEADER = struct.Struct('<4sIIId')
PAYLOAD_DTYPE = '<f8'
SNAPSHOT_SUFFIX = '.hmhf'


def snapshot_digest(source):
    """SHA256 hex digest of encoded snapshot bytes, or of the file they were written to."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    return hashlib.sha256(data).hexdigest()


def encode_snapshot(values, time):
    """Header plus row-major little-endian payload of a (size, k+1) field."""
    values = np.ascontiguousarray(values, dtype=PAYLOAD_DTYPE)
    if values.ndim != 2:
        raise ValueError(f"Snapshot field must be 2-D, got shape {values.shape}")
    size, dim = values.shape
    return HEADER.pack(MAGIC, FORMAT_VERSION, dim - 1, size, float(time)) + values.tobytes()


def write_snapshot(file_path, values, time):
    """
    Write one snapshot and verify it on disk.

    Args:
        file_path: destination path
        values: (size, k+1) array of unit vectors
        time: time stamp stored in the header

    Returns:
        dict with success, path, size, sha256 and verified
    """
    file_path = Path(file_path)
    try:
        data = encode_snapshot(values, time)
    except ValueError as e:
        return {'success': False, 'error': str(e)}
    expected_hash = snapshot_digest(data)

    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_bytes(data)
    except OSError as e:
        logger.error(f"[HMHF] ✗ Could not write snapshot {file_path}: {e}")
        return {'success': False, 'error': f'Write failed: {e}'}

    local_size = file_path.stat().st_size
    local_hash = snapshot_digest(file_path)
    verified = local_size == len(data) and local_hash == expected_hash
    if not verified:
        logger.warning(f"[HMHF] ⚠ Snapshot verification failed: {file_path.name} ({local_size} of {len(data)} bytes)")
        return {
            'success': True,
            'path': str(file_path),
            'size': local_size,
            'sha256': local_hash,
            'verified': False,
            'warning': 'Size or hash mismatch - file may be corrupted',
        }
    return {'success': True, 'path': str(file_path), 'size': local_size, 'sha256': local_hash, 'verified': True}


def read_snapshot(file_path):
    """
    Read a snapshot written by write_snapshot.

    Returns:
        dict with success, values (size, k+1), time, k, size and sha256; or success False and error
    """
    file_path = Path(file_path)
    if not file_path.exists():
        return {'success': False, 'error': f'File not found: {file_path}'}
    data = file_path.read_bytes()
    if len(data) < HEADER.size:
        return {'success': False, 'error': f'Truncated header ({len(data)} bytes)'}
    magic, version, k, size, time = HEADER.unpack_from(data)
    if magic != MAGIC:
        return {'success': False, 'error': f'Not a snapshot file (magic {magic!r})'}
    if version != FORMAT_VERSION:
        return {'success': False, 'error': f'Unsupported snapshot version {version}'}
    expected = HEADER.size + size * (k + 1) * 8
    if len(data) != expected:
        return {'success': False, 'error': f'Payload length mismatch: {len(data)} bytes, header implies {expected}'}
    values = np.frombuffer(data, dtype=PAYLOAD_DTYPE, offset=HEADER.size).reshape(size, k + 1).copy()
    return {'success': True, 'values': values, 'time': time, 'k': k, 'size': size, 'sha256': snapshot_digest(data)}


def write_snapshot_series(folder, times, states, prefix='state', every=1):
    """
    Write every n-th state as a numbered snapshot.

    Returns:
        dict with success, written paths and the count of unverified files
    """
    folder = Path(folder)
    paths, unverified = [], 0
    indices = list(range(0, len(times), max(1, every)))
    if indices[-1] != len(times) - 1:
        indices.append(len(times) - 1)
    for number, index in enumerate(indices):
        result = write_snapshot(folder / f'{prefix}_{number:05d}{SNAPSHOT_SUFFIX}', states[index], times[index])
        if not result['success']:
            return {'success': False, 'error': result['error'], 'paths': paths}
        unverified += 0 if result['verified'] else 1
        paths.append(result['path'])
    logger.info(f"[HMHF] Wrote {len(paths)} snapshots to {folder}")
    return {'success': True, 'paths': paths, 'unverified': unverified}


def export_deformation(folder, path, every=1):
    """Snapshot sequence of a DeformationPath (states only)."""
    return write_snapshot_series(folder, path.times, path.states, prefix='deformation', every=every)


def _cell(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ''
    return '%.17g' % value


def write_trajectory_csv(file_path, trajectory):
    """t plus the diagnostic columns, 17 significant digits; an undefined degree is left blank."""
    file_path = Path(file_path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(('t',) + DIAGNOSTIC_COLUMNS)
            for row in trajectory.rows():
                writer.writerow([_cell(float(value)) for value in row])
    except OSError as e:
        return {'success': False, 'error': f'Write failed: {e}'}
    return {'success': True, 'path': str(file_path), 'rows': len(trajectory.times)}


def read_trajectory_csv(file_path):
    """Columns of a trajectory CSV as float arrays (blanks become NaN)."""
    with open(file_path, newline='') as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    return {
        name: np.array([float(row[name]) if row[name] else np.nan for row in rows])
        for name in reader.fieldnames
    }


def write_phase_log(file_path, phase_log):
    """One key=value record per line."""
    file_path = Path(file_path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(''.join(line + '\n' for line in phase_log.lines()))
    except OSError as e:
        return {'success': False, 'error': f'Write failed: {e}'}
    return {'success': True, 'path': str(file_path), 'records': len(phase_log.records)}


def read_phase_log(file_path):
    """Records of a phase log as dicts of strings."""
    records = []
    for line in Path(file_path).read_text().splitlines():
        if line.strip():
            records.append(dict(item.split('=', 1) for item in line.split(' ')))
    return records


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def write_summary(file_path, summary):
    """Scenario headline numbers as JSON."""
    file_path = Path(file_path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    except (OSError, TypeError) as e:
        return {'success': False, 'error': f'Write failed: {e}'}
    return {'success': True, 'path': str(file_path)}

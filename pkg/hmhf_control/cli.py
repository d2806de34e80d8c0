"""
HMHF Command Line
One subcommand per scenario kind plus the folder watcher; flags mirror the scenario keys
"""

import sys
import time
import logging
import argparse
from dataclasses import fields

from .errors import HMHFError
from .scenario_runner import KINDS, ScenarioConfig, run
from .settings import get_scenario_suffix


logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_PROPERTY_FAILURE = 3
FLAG_ALIASES = {'n': ('--N',), 'n1': ('--N1',)}
FLAG_HELP = {
    'k': 'sphere dimension (S^k), HMHF_K by default',
    'grid': 'number of grid nodes (power of two >= 32), HMHF_GRID by default',
    'dt': 'time step, HMHF_DT by default',
    'window': "control arcs 'a:b,c:d' (bounds may end in 'pi'), HMHF_WINDOW by default",
    'initial': 'harmonic, perturbed_harmonic, random_fourier or family_gamma',
    'frame': "'identity' or 'random' (seeded rotation)",
    's': 'comma-separated family parameters for family_gamma',
    'eps_sweep': 'comma-separated crossing amplitudes',
    'horizons': 'comma-separated horizons for the null-control cost sweep',
    'snapshot_every': 'write every n-th stored state as a snapshot (0: first and last)',
    'output': 'output directory (HMHF_OUTPUT_ROOT/<name> by default)',
    'full': 'verify: full-length checks including the global pipeline',
}


def error_line(kind, message):
    """Single machine-parsable error line."""
    return f"HMHF-ERROR kind={kind} message={' '.join(str(message).split())}"


def _add_scenario_flags(parser):
    parser.add_argument('--config', help='key=value scenario file (flags override its values)')
    for f in fields(ScenarioConfig):
        if f.name == 'kind':
            continue
        flags = (f"--{f.name.replace('_', '-')}",) + FLAG_ALIASES.get(f.name, ())
        if f.type is bool:
            parser.add_argument(*flags, dest=f.name, action='store_const', const='true', default=None,
                                help=FLAG_HELP.get(f.name))
        else:
            parser.add_argument(*flags, dest=f.name, default=None, help=FLAG_HELP.get(f.name))


def build_parser():
    parser = argparse.ArgumentParser(
        prog='hmhf-control',
        description='Controlled harmonic map heat flow from the circle into S^k.',
    )
    commands = parser.add_subparsers(dest='command', required=True)
    for kind in KINDS:
        sub = commands.add_parser(kind, aliases=[kind.replace('_', '-')] if '_' in kind else [],
                                  help=f'run the {kind} scenario')
        sub.set_defaults(kind=kind)
        _add_scenario_flags(sub)

    watch = commands.add_parser('watch', help='run scenario files dropped into a folder')
    watch.set_defaults(kind='watch')
    watch.add_argument('folder')
    watch.add_argument('--recursive', action='store_true', help='also watch subfolders')
    watch.add_argument('--existing', action='store_true', help='first run the scenario files already present')
    watch.add_argument('--suffix', default=None, help=f'scenario file suffix (default {get_scenario_suffix()})')
    watch.add_argument('--duration', type=float, default=0.0, help='seconds to watch (0: until interrupted)')
    return parser


def _scenario_config(args):
    overrides = {f.name: getattr(args, f.name) for f in fields(ScenarioConfig) if f.name != 'kind'}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    overrides['kind'] = args.kind
    if args.config:
        return ScenarioConfig.from_file(args.config, overrides)
    return ScenarioConfig.from_mapping(overrides)


def _watch(args):
    from . import scenario_monitor

    if args.existing:
        results = scenario_monitor.run_existing(args.folder, args.recursive, args.suffix)
        for path, result in results.items():
            status = 'ok' if result.get('success') else error_line(result.get('error_kind'), result.get('error'))
            print(f"{path}: {status}")
    scenario_monitor.start_monitoring(args.folder, args.recursive, args.suffix)
    started = time.monotonic()
    try:
        while args.duration <= 0 or time.monotonic() - started < args.duration:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    scenario_monitor.stop_monitoring()
    return EXIT_PASS


def main(argv=None):
    """Entry point of the hmhf-control script; returns the exit code."""
    args = build_parser().parse_args(argv)
    if args.kind == 'watch':
        return _watch(args)

    try:
        config = _scenario_config(args)
    except HMHFError as e:
        print(error_line(type(e).__name__, e), file=sys.stderr)
        return e.exit_code

    result = run(config)
    if config.kind == 'verify':
        for line in result['summary']['lines']:
            print(line)
    if not result['success']:
        print(error_line(result['error_kind'], result['error']), file=sys.stderr)
        return result['exit_code']
    print(f"[HMHF] artifacts: {result['output']}")
    return EXIT_PASS


if __name__ == '__main__':
    sys.exit(main())

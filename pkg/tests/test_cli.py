import pytest

from hmhf_control.cli import build_parser, error_line, main


def test_error_line_is_single_line():
    assert error_line('Timeout', 'no map\n  found') == 'HMHF-ERROR kind=Timeout message=no map found'


def test_parser_maps_flags_to_scenario_keys():
    args = build_parser().parse_args(['null-control', '--N', '3', '--grid', '64', '--eps-sweep', '0.1,0.05', '--full'])
    assert args.kind == 'null_control'
    assert args.n == '3'
    assert args.grid == '64'
    assert args.eps_sweep == '0.1,0.05'
    assert args.full == 'true'


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_watch_arguments():
    args = build_parser().parse_args(['watch', 'incoming', '--recursive', '--duration', '2'])
    assert args.kind == 'watch'
    assert args.folder == 'incoming'
    assert args.recursive
    assert args.duration == 2.0


def test_invalid_configuration_exit_code(capsys):
    assert main(['simulate', '--initial', 'spiral']) == 1
    assert 'HMHF-ERROR kind=ValidationError' in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(['simulate', '--config', str(tmp_path / 'none.scenario')]) == 1
    assert 'Scenario file not found' in capsys.readouterr().err


def test_simulate_command(tmp_path, capsys):
    code = main(['simulate', '--grid', '64', '--dt', '1e-3', '--horizon', '0.01', '--N', '2',
                 '--output', str(tmp_path)])
    assert code == 0
    assert str(tmp_path) in capsys.readouterr().out
    assert (tmp_path / 'summary.json').exists()


def test_failing_scenario_exit_code(tmp_path, capsys):
    code = main(['cross-energy', '--k', '1', '--grid', '64', '--output', str(tmp_path)])
    assert code == 1
    assert 'kind=DimensionTooSmall' in capsys.readouterr().err

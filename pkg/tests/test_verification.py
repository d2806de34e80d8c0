from hmhf_control.scenario_runner import ScenarioConfig
from hmhf_control.verification import CHECKS, CheckResult, run_check, run_verification


def make_config(**kwargs):
    params = {'kind': 'verify', 'grid': '64', 'dt': '1e-3', 'k': '2'}
    params.update(kwargs)
    return ScenarioConfig.from_mapping(params)


def test_check_result_line():
    result = CheckResult('flux_oracle', 'pass', {'relative_error': 1.23456789e-4, 'n': 2}, 0.5)
    assert result.passed
    assert result.line() == 'CHECK name=flux_oracle status=pass seconds=0.50 n=2 relative_error=0.000123457'
    assert CheckResult('x', 'skip').passed
    assert not CheckResult('x', 'fail').passed


def test_full_only_checks_are_skipped():
    result = run_check('global_pipeline', make_config())
    assert result.status == 'skip'


def test_run_verification_keeps_registry_order():
    report = run_verification(make_config(), names=['harmonic_levels', 'global_pipeline'], workers=2)
    assert report['passed']
    assert report['failures'] == 0
    assert [c['name'] for c in report['checks']] == ['harmonic_levels', 'global_pipeline']
    assert report['lines'][0].startswith('CHECK name=harmonic_levels status=pass')
    assert 'global_pipeline' in CHECKS

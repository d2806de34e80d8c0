from types import SimpleNamespace

import pytest

from hmhf_control import scenario_monitor


@pytest.fixture(autouse=True)
def stop_processors():
    yield
    scenario_monitor.stop_queue_processor()
    scenario_monitor.reset_queue_processor()


def test_scenario_suffix_matching(monkeypatch):
    monkeypatch.delenv('HMHF_SCENARIO_SUFFIX', raising=False)
    assert scenario_monitor.is_scenario_file('/runs/a.scenario')
    assert scenario_monitor.is_scenario_file('/runs/A.SCENARIO')
    assert not scenario_monitor.is_scenario_file('/runs/a.txt')
    assert scenario_monitor.is_scenario_file('/runs/a.run', '.run')


def test_handler_queues_only_scenario_files():
    handler = scenario_monitor.ScenarioFileHandler(runner=lambda path, overrides: {'success': True})
    handler.on_created(SimpleNamespace(is_directory=False, src_path='/tmp/notes.txt'))
    handler.on_created(SimpleNamespace(is_directory=True, src_path='/tmp/dir.scenario'))
    assert handler.file_queue.qsize() == 0


def test_handler_process_stores_results():
    calls = []

    def runner(path, overrides):
        calls.append((path, overrides))
        return {'success': False, 'error': 'boom'}

    handler = scenario_monitor.ScenarioFileHandler(overrides={'grid': '64'}, runner=runner)
    result = handler.process('/tmp/x.scenario')
    assert result == {'success': False, 'error': 'boom'}
    assert handler.results['/tmp/x.scenario'] == result
    assert calls == [('/tmp/x.scenario', {'grid': '64'})]


def test_run_existing_processes_files_in_order(tmp_path):
    (tmp_path / 'b.scenario').write_text('colour=red\n')
    (tmp_path / 'a.scenario').write_text('kind=dance\n')
    (tmp_path / 'ignored.txt').write_text('kind=simulate\n')
    results = scenario_monitor.run_existing(tmp_path)
    assert list(results) == [str(tmp_path / 'a.scenario'), str(tmp_path / 'b.scenario')]
    assert all(r['error_kind'] == 'ValidationError' for r in results.values())


def test_wait_for_complete_write(tmp_path):
    path = tmp_path / 'done.scenario'
    path.write_text('kind=simulate\n')
    assert scenario_monitor.wait_for_complete_write(path, timeout=3)

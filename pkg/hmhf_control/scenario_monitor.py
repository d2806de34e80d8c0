"""
Scenario Monitor
Watches a folder for new scenario files and runs each one through the scenario runner
"""

import os
import time
import threading
import logging
from pathlib import Path
from queue import Queue

from watchdog.observers import Observer
from watchdog.events import FileSystemEventHandler

from .scenario_runner import run_file
from .settings import get_log_file, get_scenario_suffix

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(get_log_file()),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

watcher_observer = None
watcher_handler = None
_stop_queue_processor = False  # Stop signal for queue processor


def wait_for_complete_write(file_path, timeout=10):
    """Wait for a file to be completely written before processing."""
    last_size = -1
    stable_count = 0
    checks = 0

    while checks < timeout * 2:
        try:
            current_size = os.path.getsize(file_path)
            if current_size == last_size:
                stable_count += 1
                if stable_count >= 2:
                    return True
            else:
                stable_count = 0
                last_size = current_size
        except FileNotFoundError:
            pass
        time.sleep(0.5)
        checks += 1

    logger.warning(f"[HMHF] Timeout: Scenario file may still be writing: {file_path}")
    return False


def stop_queue_processor():
    """Signal the queue processor to stop."""
    global _stop_queue_processor
    _stop_queue_processor = True
    logger.info("[HMHF] Signaled scenario queue processor to stop")


def reset_queue_processor():
    """Reset the stop signal for queue processor."""
    global _stop_queue_processor
    _stop_queue_processor = False


def is_scenario_file(file_path, suffix=None):
    return str(file_path).lower().endswith((suffix or get_scenario_suffix()).lower())


class ScenarioFileHandler(FileSystemEventHandler):
    """
    Queues new scenario files and runs them one at a time on a daemon thread.
    Results are kept per file; failed scenarios are not requeued.
    """

    def __init__(self, suffix=None, overrides=None, runner=run_file):
        super().__init__()
        self.suffix = suffix or get_scenario_suffix()
        self.overrides = overrides or {}
        self.runner = runner
        self.file_queue = Queue()
        self.results = {}
        self.start_queue_processor()

    def on_created(self, event):
        if event.is_directory:
            return
        file_path = event.src_path
        if not is_scenario_file(file_path, self.suffix):
            logger.debug(f"[HMHF] Skipping non-scenario file: {file_path}")
            return
        logger.info(f"[HMHF] Detected new scenario: {file_path}")
        self.file_queue.put(file_path)

    def process(self, file_path):
        result = self.runner(file_path, self.overrides)
        self.results[str(file_path)] = result
        if result.get('success'):
            logger.info(f"[HMHF] ✓ Finished: {os.path.basename(file_path)} -> {result.get('output')}")
        else:
            logger.error(f"[HMHF] ✗ Scenario failed: {os.path.basename(file_path)}: {result.get('error')}")
        return result

    def start_queue_processor(self):
        def process_queue():
            while not _stop_queue_processor:
                if not self.file_queue.empty():
                    file_path = self.file_queue.get()
                    if wait_for_complete_write(file_path):
                        try:
                            self.process(file_path)
                        except Exception as e:
                            logger.error(f"[HMHF] Scenario crashed: {file_path}: {e}")
                            self.results[str(file_path)] = {'success': False, 'error': str(e)}
                    self.file_queue.task_done()
                time.sleep(0.1)  # Small delay to avoid CPU overload
            logger.info("[HMHF] Scenario queue processor stopped")

        threading.Thread(target=process_queue, daemon=True).start()


def run_existing(watch_folder, recursive=False, suffix=None, overrides=None):
    """
    Run the scenario files already present in a folder, in name order.

    Returns:
        dict mapping file path to its result dict
    """
    folder = Path(watch_folder)
    pattern = f'*{suffix or get_scenario_suffix()}'
    files = sorted(folder.rglob(pattern) if recursive else folder.glob(pattern))
    results = {}
    for file_path in files:
        results[str(file_path)] = run_file(file_path, overrides)
    logger.info(f"[HMHF] Processed {len(files)} existing scenario files in {folder}")
    return results


def start_monitoring(watch_folder, recursive=True, suffix=None, overrides=None):
    """
    Start monitoring a folder for new scenario files.

    Args:
        watch_folder: Directory to monitor
        recursive: Monitor subfolders
        suffix: scenario file suffix (HMHF_SCENARIO_SUFFIX by default)
        overrides: key=value overrides applied to every scenario

    Returns:
        ScenarioFileHandler collecting the results
    """
    global watcher_observer, watcher_handler, _stop_queue_processor

    _stop_queue_processor = False  # Reset stop signal when starting

    if watcher_observer and watcher_observer.is_alive():
        logger.info("[HMHF] Restarting monitor to update settings.")
        watcher_observer.stop()
        watcher_observer.join()

    watcher_handler = ScenarioFileHandler(suffix, overrides)
    watcher_observer = Observer()
    watcher_observer.schedule(watcher_handler, str(watch_folder), recursive=recursive)
    watcher_observer.start()

    logger.info(f"[HMHF] Now watching: {watch_folder} (recursive: {'Yes' if recursive else 'No'}, "
                f"suffix: {watcher_handler.suffix})")
    return watcher_handler


def stop_monitoring():
    """Stop the scenario monitor."""
    global watcher_observer

    stop_queue_processor()

    if watcher_observer and watcher_observer.is_alive():
        watcher_observer.stop()
        watcher_observer.join()
        logger.info("[HMHF] Scenario monitor stopped")


def is_monitoring():
    return bool(watcher_observer and watcher_observer.is_alive())

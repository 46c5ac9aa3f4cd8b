import subprocess
import sys

import pytest

from simfuse.model import generate_synthetic_cohort, split_cohort, write_cohort

_acceptance: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(60, variates=3, series_len=30, signal_strength=2.0, seed=3)


@pytest.fixture(scope="session")
def small_split(small_cohort):
    return split_cohort(small_cohort, 0.2, seed=3)


@pytest.fixture(scope="session")
def small_cohort_dir(small_cohort, tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    write_cohort(small_cohort, root)
    return root


@pytest.fixture
def run_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SIMFUSE_RUN_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


class WorkerProcs:
    """Listening ``simfuse worker`` subprocesses; endpoints are read from their stdout."""

    def __init__(self):
        self.procs: list[subprocess.Popen] = []

    def start(self, cohort_dir, n: int) -> list[str]:
        new = [subprocess.Popen([sys.executable, "-m", "simfuse", "worker", "--cohort", str(cohort_dir),
                                 "--listen", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True)
               for _ in range(n)]
        self.procs.extend(new)
        return [p.stdout.readline().strip() for p in new]

    def stop(self):
        for p in self.procs:
            p.kill()
            p.wait()
            p.stdout.close()


@pytest.fixture
def worker_procs():
    w = WorkerProcs()
    yield w
    w.stop()


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(number, (title, "PASS"))[1]
        outcome = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        if report.skipped:
            outcome = "SKIP"
        _acceptance[number] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("acceptance")
    if m is not None:
        outcome.get_result().acceptance = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:>2} {outcome}  {title}")

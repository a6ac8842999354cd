import os
from pathlib import Path

import hypothesis
import pytest

hypothesis.settings.register_profile("ci", deadline=None, max_examples=200)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=20)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def exemplar_raw():
    from casetimelines.prompting import exemplar_output_block
    return exemplar_output_block()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Yields a recorder; the test's outcome becomes one PASS/FAIL line."""
    notes: list[str] = []
    yield notes.append
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    label = request.node.get_closest_marker("criterion").args[0]
    detail = "; ".join(notes)
    ACCEPTANCE_LINES.append(f"{status} criterion {label}" + (f": {detail}" if detail else ""))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
    marker = item.get_closest_marker("criterion")
    if marker is not None and rep.when == "setup" and rep.skipped:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else ""
        ACCEPTANCE_LINES.append(f"SKIP criterion {marker.args[0]}: {reason.removeprefix('Skipped: ')}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

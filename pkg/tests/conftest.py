from __future__ import annotations

import pytest

from kwspot.synth import generate_corpus

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A few clips per word plus background noise; enough for plumbing tests."""
    return generate_corpus(tmp_path_factory.mktemp("corpus"), clips_per_word=6, unknown_per_word=2,
                           speakers=6, noise_seconds=3.0, seed=3)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "call":
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)
    elif report.when == "setup" and not report.passed:
        _CRITERIA[number] = (title, "FAIL" if report.failed else "SKIP", "setup did not complete")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))

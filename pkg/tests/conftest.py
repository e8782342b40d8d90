from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from gramlineup.corpus import load_corpus, parse_m2

GOLDEN = Path(__file__).parent / "golden"
FIXTURE_CORPUS = Path(str(resources.files("gramlineup") / "data" / "fixture_corpus.jsonl"))


@pytest.fixture(scope="session")
def fixture_essays():
    return load_corpus(FIXTURE_CORPUS)


@pytest.fixture
def mike():
    """The short A1 essay with three annotated errors."""
    return parse_m2((GOLDEN / "m2" / "snippet.m2").read_text(encoding="utf-8"))[0]


# -- acceptance summary ----------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, float, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and short title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    detail = "" if rep.passed else str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    _CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL", rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, secs, detail = _CRITERIA[n]
        line = f"criterion {n}: {status} {title} ({secs:.2f}s)"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))

import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
STREAMS = FIXTURES / "streams"
STREAM_NAMES = sorted(p.stem for p in STREAMS.glob("*.h264"))

_results: dict[int, tuple[str, str]] = {}
_notes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    failed = rep.failed
    if rep.when == "call" or failed:
        prev = _results.get(n)
        verdict = "FAIL" if failed or (prev and prev[0] == "FAIL") else "PASS"
        _results[n] = (verdict, title)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        verdict, title = _results[n]
        extra = f"  ({'; '.join(_notes[n])})" if _notes.get(n) else ""
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}{extra}")


@pytest.fixture
def note():
    """``note(n, text)`` attaches a measurement to criterion ``n``'s summary line."""
    return lambda n, text: _notes.setdefault(n, []).append(text)


def stream_path(name: str) -> Path:
    return STREAMS / f"{name}.h264"


def reference_dump(name: str) -> list[dict]:
    text = (STREAMS / f"{name}.ref.mvdump.jsonl").read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def reference_meta(name: str) -> dict:
    return json.loads((STREAMS / f"{name}.ref.json").read_text())


@pytest.fixture(scope="session")
def decoded():
    """Native decode of every fixture stream, shared across tests."""
    from mvforensics.bitparse import decode_stream

    return {name: decode_stream(stream_path(name).read_bytes()) for name in STREAM_NAMES}

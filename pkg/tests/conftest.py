"""Per-criterion bookkeeping for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(n)`` feed a registry; a criterion
passes only if every tagged test passed (an expected failure counts as a
failure). Notes added through the ``note`` fixture are printed next to the
verdict in the terminal summary.
"""
from collections import defaultdict

import pytest

_outcomes: dict[int, list[tuple[str, str]]] = defaultdict(list)
_notes: dict[int, list[str]] = defaultdict(list)

TITLES = {
    1: "convergence tables",
    2: "theoretical penalty bounds",
    3: "empirical soundness",
    4: "von Neumann dt_max tables",
    5: "solver vs von Neumann dt_max",
    6: "kappa independence",
    7: "structural properties",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test belongs to")


def _criterion(item) -> int | None:
    m = item.get_closest_marker("criterion")
    return int(m.args[0]) if m else None


@pytest.fixture
def note(request):
    n = _criterion(request.node)

    def add(msg: str) -> None:
        _notes[n].append(f"{request.node.name}: {msg}")
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = _criterion(item)
    if n is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if hasattr(rep, "wasxfail"):
            status = "xpass" if rep.passed else "xfail"
        else:
            status = rep.outcome
        _outcomes[n].append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        res = _outcomes[n]
        bad = [name for name, s in res if s not in ("passed", "xpass")]
        skipped = all(s == "skipped" for _, s in res)
        verdict = "SKIP" if skipped else ("FAIL" if bad else "PASS")
        tr.write_line(f"CRITERION {n}: {verdict}  {TITLES.get(n, '')} ({len(res) - len(bad)}/{len(res)} checks)")
        for name in bad:
            tr.write_line(f"    failed: {name}")
        for msg in _notes.get(n, []):
            tr.write_line(f"    {msg}")

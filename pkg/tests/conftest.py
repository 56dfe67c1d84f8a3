from pathlib import Path

import pytest

from sizeflags.simulate import SimConfig, generate

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance = []


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def small_sim():
    """300 articles, 6 weekly snapshots; shared by several test modules."""
    return generate(SimConfig(seed=1, article_count=300, weeks=6, weekly_order_rate=40.0))


@pytest.fixture
def record_detail(request):
    """Attach a one-line measurement to an acceptance test's summary line."""

    def record(text):
        request.node._acceptance_detail = text
        print(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _acceptance.append(
            (marker.args[0], rep.passed, getattr(item, "_acceptance_detail", ""))
        )


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for title, ok, detail in _acceptance:
        line = f"{'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(title): one acceptance criterion")

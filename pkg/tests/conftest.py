import contextlib
import time

import pytest

from _support import make_dataset

ACCEPTANCE_LINES = []


class _Outcome:
    detail = ""


@pytest.fixture(scope="session")
def criterion():
    """``with criterion("name") as c:`` records one PASS/FAIL line for the summary.

    Any exception inside the block (including a failed assert) is a FAIL;
    ``c.detail`` is appended to the line.
    """

    @contextlib.contextmanager
    def run(name):
        out = _Outcome()
        t0 = time.perf_counter()
        try:
            yield out
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            ACCEPTANCE_LINES.append(f"FAIL  {name}  ({msg})")
            raise
        took = time.perf_counter() - t0
        ACCEPTANCE_LINES.append(f"PASS  {name}  {out.detail} [{took:.1f}s]".replace("  [", " ["))

    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stage1_data(tmp_path_factory):
    """Eight 64x64 clips of 43 frames, enough for f=8."""
    return make_dataset(tmp_path_factory.mktemp("stage1"), count=8, length=43)


@pytest.fixture(scope="session")
def long_data(tmp_path_factory):
    """Two 64x64 clips of 103 frames, enough for f=18."""
    return make_dataset(tmp_path_factory.mktemp("long"), count=2, length=103, seed=1)

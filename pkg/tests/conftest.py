import contextlib

import numpy as np
import pytest

from ethcast.gridio import SEQUENCE_LEN

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
    config.stash[_CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n} {status}: {title}" + (f" ({detail})" if detail else ""))


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as info:`` records PASS, or FAIL on any exception.

    Put a short result summary in ``info["detail"]``.
    """
    results = request.config.stash[_CRITERIA]

    @contextlib.contextmanager
    def run(n, title):
        info = {}
        try:
            yield info
        except BaseException as e:
            msg = str(e).strip().splitlines()[0] if str(e).strip() else ""
            results[n] = ("FAIL", title, f"{type(e).__name__}: {msg}"[:200])
            print(f"criterion {n} FAIL: {title}")
            raise
        results[n] = ("PASS", title, info.get("detail", ""))
        print(f"criterion {n} PASS: {title}")

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fake_paths(tag, n=SEQUENCE_LEN):
    return [f"frames/{tag}_{k:02d}.rfgd" for k in range(n)]

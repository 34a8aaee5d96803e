import importlib
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from slicesort._kernels import _fallback  # noqa: E402

_BACKENDS = {"python": _fallback}
try:
    _BACKENDS["compiled"] = importlib.import_module("slicesort._kernels._core")
except ImportError:  # pragma: no cover - exercised only without a build
    pass


@pytest.fixture(params=sorted(_BACKENDS))
def backend(request):
    """Each kernel implementation in turn."""
    return _BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])

import os
import sys
from pathlib import Path

import numpy as np
import pytest

U = np.finfo(np.float64).eps / 2
DATA = Path(__file__).parent / "data"


def with_kappa(rng, m, n, kappa):
    """Random ``m x n`` matrix with geometric singular values from 1 to ``1/kappa``."""
    U_, _ = np.linalg.qr(rng.standard_normal((m, n)))
    V_, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (U_ * np.geomspace(1.0, 1.0 / kappa, n)) @ V_.T


def fs760_path():
    """User-supplied ``fs_760_1.mtx``: ``$FS_760_1`` or ``tests/data/fs_760_1.mtx``."""
    env = os.environ.get("FS_760_1")
    for cand in (env, DATA / "fs_760_1.mtx"):
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

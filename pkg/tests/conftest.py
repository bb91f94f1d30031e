import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import random_psd  # noqa: E402
from twohop.model import CorrelationSet, SystemParams  # noqa: E402


def random_config(rng, max_dim=64, z_range=(0.1, 10.0), s_range=(0.0, 4.0)):
    """Random dims, correlations and noise within the given ranges."""
    N, L, M = (int(v) for v in rng.integers(2, max_dim + 1, size=3))
    mats = {}
    for name, n in (("R1", N), ("T1", L), ("R2", L), ("T2", M)):
        kind = rng.integers(3)
        if kind == 0:
            mats[name] = np.eye(n)
        elif kind == 1:
            mats[name] = np.diag(rng.uniform(0.2, 2.0, n))
        else:
            mats[name] = random_psd(rng, n, rank=int(rng.integers(1, n + 1)) if n > 2 else n)
            mats[name] += 0.05 * np.eye(n)
    corr = CorrelationSet(**mats)
    z = float(np.exp(rng.uniform(np.log(z_range[0]), np.log(z_range[1]))))
    p = SystemParams(N, L, M, float(rng.uniform(*s_range)), float(rng.uniform(*s_range)), z)
    return corr, p


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

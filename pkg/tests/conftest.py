import numpy as np
import pytest
import scipy.sparse as sp

from xmrec.io import IdMap, InteractionStore
from xmrec.synth import SynthConfig, generate_synthetic


def random_store(n_users, n_items, density=0.2, seed=0, binary=False):
    """Store with every user and item holding at least one rating."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    mask[np.arange(n_users), rng.integers(0, n_items, n_users)] = True
    mask[rng.integers(0, n_users, n_items), np.arange(n_items)] = True
    vals = np.ones(mask.sum()) if binary else rng.integers(1, 6, mask.sum()).astype(float)
    rows, cols = np.nonzero(mask)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n_users, n_items))
    m.sort_indices()
    return InteractionStore(m, IdMap(f"u{u}" for u in range(n_users)),
                            IdMap(f"i{i}" for i in range(n_items)))


@pytest.fixture
def store_factory():
    return random_store


@pytest.fixture(scope="session")
def small_world():
    cfg = SynthConfig(users_per_market=120, n_items=400, dim=8, seed=3)
    return cfg, generate_synthetic(cfg)


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``; printed live and in the summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._criteria.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    if getattr(config, "_criteria", None):
        terminalreporter.section("acceptance criteria")
        for line in sorted(config._criteria):
            terminalreporter.write_line(line)

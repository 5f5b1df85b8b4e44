"""Shared fixtures: small datasets, grids and workspaces reused across the
unit-test modules.  Everything is deterministic (fixed seeds)."""

import numpy as np
import pytest

from gsmgp.kernel import Dataset, build_grid, build_workspace


@pytest.fixture(scope="session")
def tiny_1d():
    """12 scattered 1-D points with a two-tone target, plus a Q=4 grid and
    an exact-rank workspace.  Small enough for dense oracles everywhere."""
    rng = np.random.default_rng(7)
    X = np.sort(rng.uniform(0.0, 3.0, size=12))[:, None]
    y = np.sin(2.0 * np.pi * 1.3 * X[:, 0]) + 0.5 * rng.standard_normal(12)
    data = Dataset(X=X, y=y)
    grid = build_grid(data, Q=4, sampling="random", v_const=1e-2, seed=3)
    ws = build_workspace(data, grid, noise_var=0.1, rank=data.n)
    return data, grid, ws


@pytest.fixture(scope="session")
def tiny_2d():
    """10 scattered 2-D points with a Q=3 grid, both kernel families."""
    rng = np.random.default_rng(11)
    X = rng.uniform(-1.0, 1.0, size=(10, 2))
    y = rng.standard_normal(10)
    data = Dataset(X=X, y=y)
    grid = build_grid(data, Q=3, sampling="random", v_const=5e-3, seed=5)
    ws_prod = build_workspace(data, grid, noise_var=0.2, rank=data.n)
    ws_add = build_workspace(data, grid, noise_var=0.2, rank=data.n,
                             product_form=False)
    return data, grid, ws_prod, ws_add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance verdicts where they are easy to find."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        label, ok, elapsed = RESULTS[num]
        terminalreporter.write_line(
            f"criterion {num:02d} [{label}]: "
            f"{'PASS' if ok else 'FAIL'} ({elapsed:.1f}s)"
        )

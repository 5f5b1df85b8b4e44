"""Majorize-minimize weight learning: surrogate properties, monotone
descent, block partitioning, and agreement between the single-block and
multi-block drivers.
"""

import numpy as np
import pytest

from oracles import dense_objective

from gsmgp import gp
from gsmgp.kernel import build_grid, build_workspace
from gsmgp.sca import (
    BlockPartition,
    ScaTrace,
    dsca,
    surrogate_value,
    vanilla_sca,
)
from gsmgp.synth import sparse_1d


class TestBlockPartition:
    def test_remainder_goes_to_last_block(self):
        part = BlockPartition.make(10, 3)
        sizes = [b.shape[0] for b in part.blocks]
        assert sizes == [3, 3, 4]
        np.testing.assert_array_equal(np.concatenate(part.blocks), np.arange(10))
        assert part.Q == 10

    def test_single_block_and_singletons(self):
        whole = BlockPartition.make(7, 1)
        assert len(whole.blocks) == 1
        np.testing.assert_array_equal(whole.blocks[0], np.arange(7))
        singles = BlockPartition.make(7, 7)
        assert all(b.shape[0] == 1 for b in singles.blocks)

    def test_invalid_split_rejected(self):
        with pytest.raises(ValueError):
            BlockPartition.make(5, 0)
        with pytest.raises(ValueError):
            BlockPartition.make(5, 6)


class TestSurrogate:
    def test_touches_objective_at_expansion_point(self, tiny_1d):
        data, grid, ws = tiny_1d
        rng = np.random.default_rng(0)
        for _ in range(5):
            theta_t = rng.uniform(0.0, 1.0, size=grid.Q)
            surr = surrogate_value(theta_t, theta_t, ws, data.y)
            assert surr == pytest.approx(gp.nll(theta_t, ws, data.y), rel=1e-10)

    def test_majorizes_objective(self, tiny_1d):
        data, grid, ws = tiny_1d
        rng = np.random.default_rng(1)
        theta_t = rng.uniform(0.1, 0.8, size=grid.Q)
        for _ in range(50):
            theta = np.maximum(
                theta_t + rng.normal(scale=0.3, size=grid.Q), 0.0
            )
            surr = surrogate_value(theta, theta_t, ws, data.y)
            assert surr >= gp.nll(theta, ws, data.y) - 1e-9

    def test_gradients_agree_at_expansion_point(self, tiny_1d):
        """Tangency: central differences of the surrogate and of the
        objective coincide at the expansion point."""
        data, grid, ws = tiny_1d
        theta_t = np.full(grid.Q, 0.4)
        eps = 1e-6
        for q in range(grid.Q):
            e = np.zeros(grid.Q)
            e[q] = eps
            d_surr = (
                surrogate_value(theta_t + e, theta_t, ws, data.y)
                - surrogate_value(theta_t - e, theta_t, ws, data.y)
            ) / (2 * eps)
            d_nll = (
                gp.nll(theta_t + e, ws, data.y)
                - gp.nll(theta_t - e, ws, data.y)
            ) / (2 * eps)
            assert d_surr == pytest.approx(d_nll, rel=1e-4, abs=1e-6)


class TestVanilla:
    def test_monotone_descent_and_trace_shapes(self, tiny_1d):
        data, grid, ws = tiny_1d
        theta, trace = vanilla_sca(np.zeros(grid.Q), ws, data.y, max_iter=40)
        nll = np.asarray(trace.nll)
        assert np.all(np.diff(nll) <= 1e-9)
        # the trace keeps the initial point plus one entry per sweep
        assert len(trace.thetas) == len(trace.nll)
        assert len(trace.step_norm) == len(trace.nll) - 1
        assert len(trace.unit_time) == len(trace.nll) - 1
        np.testing.assert_array_equal(trace.thetas[0], np.zeros(grid.Q))
        np.testing.assert_array_equal(trace.thetas[-1], theta)
        assert np.all(theta >= 0.0)
        assert all(t > 0.0 for t in trace.unit_time)
        if trace.converged:
            assert trace.step_norm[-1] <= 1e-5

    def test_matches_dense_objective(self, tiny_1d):
        data, grid, ws = tiny_1d
        theta, trace = vanilla_sca(np.zeros(grid.Q), ws, data.y, max_iter=40)
        assert trace.nll[-1] == pytest.approx(
            dense_objective(theta, ws.grams, ws.noise_var, data.y), rel=1e-8
        )

    def test_polish_never_hurts(self, tiny_1d):
        data, grid, ws = tiny_1d
        _, polished = vanilla_sca(
            np.zeros(grid.Q), ws, data.y, max_iter=15, polish=True
        )
        _, plain = vanilla_sca(
            np.zeros(grid.Q), ws, data.y, max_iter=15, polish=False
        )
        assert np.all(np.diff(np.asarray(plain.nll)) <= 1e-9)
        assert polished.nll[-1] <= plain.nll[-1] + 1e-9


class TestDistributed:
    def test_single_block_matches_vanilla_bitwise(self, tiny_1d):
        data, grid, ws = tiny_1d
        part = BlockPartition.make(grid.Q, 1)
        theta_v, trace_v = vanilla_sca(np.zeros(grid.Q), ws, data.y, max_iter=30)
        theta_d, trace_d = dsca(
            np.zeros(grid.Q), ws, data.y, part, max_iter=30
        )
        np.testing.assert_array_equal(theta_v, theta_d)
        np.testing.assert_array_equal(
            np.asarray(trace_v.nll), np.asarray(trace_d.nll)
        )

    @pytest.mark.parametrize("s", [2, 4])
    def test_monotone_for_any_split(self, tiny_1d, s):
        data, grid, ws = tiny_1d
        part = BlockPartition.make(grid.Q, s)
        theta, trace = dsca(np.zeros(grid.Q), ws, data.y, part, max_iter=40)
        assert np.all(np.diff(np.asarray(trace.nll)) <= 1e-9)
        assert np.all(theta >= 0.0)

    def test_splits_agree_on_final_objective(self, tiny_1d):
        data, grid, ws = tiny_1d
        finals = []
        for s in (1, 2, 4):
            part = BlockPartition.make(grid.Q, s)
            _, trace = dsca(np.zeros(grid.Q), ws, data.y, part, max_iter=60)
            finals.append(trace.nll[-1])
        ref = finals[0]
        for val in finals[1:]:
            assert val == pytest.approx(ref, rel=1e-2)


class TestTraceCsv:
    def test_round_trip(self, tiny_1d, tmp_path):
        data, grid, ws = tiny_1d
        _, trace = vanilla_sca(np.zeros(grid.Q), ws, data.y, max_iter=5)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header == ["iteration", "nll", "step_norm", "unit_time"]
        assert len(lines) == len(trace.nll) + 1
        first = lines[1].split(",")
        assert float(first[1]) == pytest.approx(trace.nll[0])


class TestRecovery:
    def test_sparse_spectrum_is_identified(self):
        """A two-component line spectrum is recovered on a matching
        candidate grid: nearly all weight lands on the active candidates."""
        train, _, meta = sparse_1d(60, seed=2, Q=10, active=(3, 7))
        grid = build_grid(
            train, Q=10, sampling="uniform", v_const=meta["grid_variance"]
        )
        ws = build_workspace(train, grid, noise_var=meta["noise_var"])
        theta, trace = vanilla_sca(np.zeros(10), ws, train.y, max_iter=50)
        assert trace.converged
        mu = np.asarray(grid.mu).ravel()
        idx = [int(np.argmin(np.abs(mu - f))) for f in meta["frequencies"]]
        mass = theta[idx].sum() / theta.sum()
        assert mass >= 0.9

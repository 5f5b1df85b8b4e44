"""Interior-point solver tests: cone algebra, closed-form programs,
infeasibility certificates and determinism.

The reference solutions are all analytic (linear programs with obvious
minimizers, Euclidean projection onto a second-order cone), so any drift
in the solver shows up directly.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmgp.errors import SolverError
from gsmgp.socp import ConeDims, cone_identity, max_step, min_eig, solve_conelp


def _project_soc(p):
    """Closed-form Euclidean projection of ``p`` onto ``{(t, u): |u| <= t}``."""
    p0, pv = p[0], p[1:]
    nv = np.linalg.norm(pv)
    if nv <= p0:
        return p.copy()
    if nv <= -p0:
        return np.zeros_like(p)
    coef = (p0 + nv) / 2.0
    out = np.empty_like(p)
    out[0] = coef
    out[1:] = coef * pv / nv
    return out


class TestConeDims:
    def test_totals_and_degree(self):
        dims = ConeDims(l=3, q=(2, 4))
        assert dims.total == 9
        assert dims.degree == 5  # one per orthant entry, one per cone

    def test_validation(self):
        with pytest.raises(ValueError):
            ConeDims(l=-1)
        with pytest.raises(ValueError):
            ConeDims(l=0, q=(1,))


class TestConeAlgebra:
    def test_identity_element(self):
        e = cone_identity(ConeDims(l=2, q=(3,)))
        np.testing.assert_array_equal(e, [1.0, 1.0, 1.0, 0.0, 0.0])

    def test_min_eig_blocks(self):
        dims = ConeDims(l=2, q=(3,))
        u = np.array([0.5, 2.0, 2.0, 1.0, 1.0])
        # orthant min is 0.5; cone eigenvalue is 2 - sqrt(2)
        assert min_eig(u, dims) == pytest.approx(0.5)
        u[0] = 3.0
        assert min_eig(u, dims) == pytest.approx(2.0 - np.sqrt(2.0))

    def test_max_step_orthant(self):
        dims = ConeDims(l=2)
        u = np.array([1.0, 2.0])
        assert max_step(u, np.array([-2.0, -1.0]), dims) == pytest.approx(0.5)
        assert max_step(u, np.array([1.0, 1.0]), dims) == np.inf

    def test_max_step_second_order(self):
        dims = ConeDims(l=0, q=(2,))
        u = np.array([1.0, 0.0])
        assert max_step(u, np.array([0.0, 1.0]), dims) == pytest.approx(1.0)
        assert max_step(u, np.array([0.0, -1.0]), dims) == pytest.approx(1.0)
        assert max_step(u, np.array([1.0, 0.0]), dims) == np.inf

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_max_step_is_exact_boundary(self, data):
        """Stepping just short of the reported maximum stays inside the
        cone; stepping just past it leaves (when the maximum is finite)."""
        d = data.draw(st.integers(2, 5))
        dims = ConeDims(l=0, q=(d,))
        raw = data.draw(
            st.lists(st.floats(-2.0, 2.0), min_size=d - 1, max_size=d - 1)
        )
        u = np.empty(d)
        u[1:] = raw
        u[0] = np.linalg.norm(u[1:]) + data.draw(st.floats(0.1, 2.0))
        du = np.array(
            data.draw(st.lists(st.floats(-2.0, 2.0), min_size=d, max_size=d))
        )
        alpha = max_step(u, du, dims)
        if np.isfinite(alpha):
            assert min_eig(u + 0.999 * alpha * du, dims) >= -1e-9
            assert min_eig(u + 1.001 * alpha * du + 1e-12 * du, dims) <= 1e-9
        else:
            for t in (1.0, 10.0, 100.0):
                assert min_eig(u + t * du, dims) > 0.0


class TestLinearPrograms:
    def test_bound_constraint(self):
        # minimize x subject to x >= 1
        res = solve_conelp([1.0], [[-1.0]], [-1.0], ConeDims(l=1))
        assert res.status == "optimal"
        assert res.x[0] == pytest.approx(1.0, abs=1e-7)

    def test_equality_picks_cheap_vertex(self):
        # minimize 2x + y subject to x + y = 1, x, y >= 0
        res = solve_conelp(
            [2.0, 1.0],
            -np.eye(2),
            np.zeros(2),
            ConeDims(l=2),
            A=[[1.0, 1.0]],
            b=[1.0],
        )
        assert res.status == "optimal"
        np.testing.assert_allclose(res.x, [0.0, 1.0], atol=1e-6)

    def test_cone_vertex(self):
        # minimize x subject to |0| <= x (a second-order cone pinned at 0)
        G = np.array([[-1.0], [0.0]])
        res = solve_conelp([1.0], G, [0.0, 0.0], ConeDims(l=0, q=(2,)))
        assert res.status == "optimal"
        assert res.x[0] == pytest.approx(0.0, abs=1e-6)


class TestProjectionOracle:
    @pytest.mark.parametrize("d", [2, 3, 5])
    def test_matches_closed_form(self, d):
        """min t s.t. |x - p| <= t, x in K equals the analytic projection.

        The distance converges like the complementarity gap; the argmin is
        only determined to the square root of the gap (the objective is
        flat to first order around the projection), hence the two
        tolerances.
        """
        rng = np.random.default_rng(d)
        for _ in range(6):
            p = rng.uniform(-2.0, 2.0, size=d)
            c = np.zeros(d + 1)
            c[0] = 1.0
            G = np.zeros((2 * d + 1, d + 1))
            h = np.zeros(2 * d + 1)
            G[0, 0] = -1.0
            G[1 : d + 1, 1:] = -np.eye(d)
            h[1 : d + 1] = -p
            G[d + 1 :, 1:] = -np.eye(d)
            dims = ConeDims(l=0, q=(d + 1, d))
            res = solve_conelp(c, G, h, dims, tol=1e-12)
            assert res.status == "optimal"
            np.testing.assert_allclose(res.x[1:], _project_soc(p), atol=1e-6)
            assert res.x[0] == pytest.approx(
                np.linalg.norm(_project_soc(p) - p), abs=1e-10
            )


class TestInfeasibility:
    def test_primal_infeasible_certificate(self):
        # x >= 1 and x <= 0 cannot hold together
        res = solve_conelp(
            [0.0], [[-1.0], [1.0]], [-1.0, 0.0], ConeDims(l=2)
        )
        assert res.status == "primal_infeasible"

    def test_dual_infeasible_certificate(self):
        # minimize -x over x >= 0 is unbounded below
        res = solve_conelp([-1.0], [[-1.0]], [0.0], ConeDims(l=1))
        assert res.status == "dual_infeasible"


class TestSolverBehaviour:
    def _small_program(self):
        rng = np.random.default_rng(42)
        p = rng.uniform(-1.0, 1.0, size=3)
        c = np.zeros(4)
        c[0] = 1.0
        G = np.zeros((7, 4))
        h = np.zeros(7)
        G[0, 0] = -1.0
        G[1:4, 1:] = -np.eye(3)
        h[1:4] = -p
        G[4:, 1:] = -np.eye(3)
        return c, G, h, ConeDims(l=0, q=(4, 3))

    def test_deterministic_reruns(self):
        c, G, h, dims = self._small_program()
        r1 = solve_conelp(c, G, h, dims, record_iterates=True)
        r2 = solve_conelp(c, G, h, dims, record_iterates=True)
        np.testing.assert_array_equal(r1.x, r2.x)
        np.testing.assert_array_equal(r1.z, r2.z)
        assert len(r1.iterates) == len(r2.iterates)
        for a, b in zip(r1.iterates, r2.iterates):
            np.testing.assert_array_equal(a, b)

    def test_iteration_cap_reports_best_iterate(self):
        c, G, h, dims = self._small_program()
        res = solve_conelp(c, G, h, dims, max_iter=2)
        assert res.status == "max_iter"
        assert np.all(np.isfinite(res.x))
        assert np.isfinite(res.primal_res) and np.isfinite(res.gap)

    def test_kkt_residuals_reported_small(self):
        c, G, h, dims = self._small_program()
        res = solve_conelp(c, G, h, dims, tol=1e-9)
        assert res.status == "optimal"
        assert res.primal_res <= 1e-7
        assert res.dual_res <= 1e-7
        assert res.gap <= 1e-7 or res.rel_gap <= 1e-9

    def test_dimension_validation(self):
        with pytest.raises(SolverError):
            solve_conelp([1.0, 2.0], [[-1.0]], [0.0], ConeDims(l=1))
        with pytest.raises(SolverError):
            solve_conelp([1.0], [[-1.0]], [0.0, 1.0], ConeDims(l=1))
        with pytest.raises(SolverError):
            solve_conelp(
                [1.0], [[-1.0]], [0.0], ConeDims(l=1), A=[[1.0, 1.0]], b=[1.0]
            )

    def test_empty_cone_rejected(self):
        with pytest.raises(SolverError):
            solve_conelp([1.0], np.zeros((0, 1)), [], ConeDims(l=0))

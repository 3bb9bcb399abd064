import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stafem.edits import EditBatch, make_rng
from stafem.elasticity import (apply_edits_elastic, make_elasticity_state, materialize,
                               precompute_element_stiffness)
from stafem.mesh import generate_block_mesh
from stafem.proxy import make_proxy_state
from stafem.solver import (CgConfig, DynamicsState, NumericalError, PreconditionerError,
                           euler_system, implicit_euler_step, pcg_solve, pinned_vertices,
                           static_frame_solve)


def spd(n, seed):
    rng = make_rng(seed, 0)
    q = rng.standard_normal((n, n))
    return sp.csr_matrix(q @ q.T + n * np.eye(n))


class TestPcg:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_solve(self, seed):
        a = spd(30, seed)
        b = make_rng(seed, 1).standard_normal(30)
        res = pcg_solve(a, b, CgConfig(tolerance=1e-12))
        assert res.converged
        np.testing.assert_allclose(res.x, np.linalg.solve(a.toarray(), b), rtol=1e-9)

    def test_zero_rhs(self):
        res = pcg_solve(spd(5, 0), np.zeros(5))
        assert res.iterations == 0 and not res.x.any()

    def test_iteration_cap_reported(self):
        res = pcg_solve(spd(40, 1), np.ones(40), CgConfig(tolerance=1e-14, max_iterations=2))
        assert res.iterations == 2 and not res.converged

    def test_trace_is_monotone_in_length(self):
        res = pcg_solve(spd(20, 2), np.ones(20), record_trace=True)
        assert len(res.trace) == res.iterations + 1 and res.trace[-1] <= 1e-8

    def test_warm_start_at_solution(self):
        a = spd(10, 3)
        x = np.arange(10.0)
        res = pcg_solve(a, a @ x, x0=x)
        assert res.iterations == 0

    def test_bad_diagonal(self):
        with pytest.raises(PreconditionerError):
            pcg_solve(sp.csr_matrix(np.diag([1.0, 0.0])), np.ones(2))

    def test_non_finite_rhs(self):
        with pytest.raises(NumericalError):
            pcg_solve(spd(3, 0), np.array([1.0, np.nan, 0.0]))

    def test_indefinite_breakdown(self):
        a = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(NumericalError):
            pcg_solve(a, np.array([1.0, -1.0]))

    @pytest.mark.parametrize("kwargs", [{"tolerance": 0}, {"max_iterations": 0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            CgConfig(**kwargs)


def test_static_solves(block3):
    state = make_proxy_state(block3, np.ones(block3.n_tets, bool))
    b = make_rng(0, 1).standard_normal(block3.n_vertices)
    res = static_frame_solve(state, b)
    assert res.converged and res.residual <= 1e-8
    cache = precompute_element_stiffness(block3)
    es = make_elasticity_state(cache, np.ones(block3.n_tets, bool))
    res = static_frame_solve(es, make_rng(0, 2).standard_normal(3 * block3.n_vertices))
    assert res.converged and res.residual <= 1e-8


@pytest.fixture(scope="module")
def small_elastic():
    mesh = generate_block_mesh(2, 2, 1)         # 18 vertices, 54 DOFs
    cache = precompute_element_stiffness(mesh, 10.0, 0.3)
    mask = np.ones(mesh.n_tets, bool)
    mask[[0, 5]] = False
    return mesh, cache, mask


class TestDynamics:
    def test_zero_state_fixed_point_without_load(self, small_elastic):
        mesh, cache, mask = small_elastic
        state = make_elasticity_state(cache, mask)
        dyn = DynamicsState.at_rest(mesh.n_vertices, f=np.zeros(3 * mesh.n_vertices))
        implicit_euler_step(dyn, state, CgConfig(tolerance=1e-12))
        assert np.abs(dyn.u).max() <= 1e-10 and np.abs(dyn.v).max() <= 1e-10

    def test_rigid_translation_fixed_point(self, small_elastic):
        mesh, cache, mask = small_elastic
        state = make_elasticity_state(cache, mask)
        shift = np.tile([0.3, -0.2, 0.1], mesh.n_vertices)
        dyn = DynamicsState(shift.copy(), np.zeros_like(shift), f=np.zeros_like(shift))
        implicit_euler_step(dyn, state, CgConfig(tolerance=1e-13), epsilon=0.0)
        assert np.abs(dyn.u - shift).max() <= 1e-10
        assert np.abs(dyn.v).max() <= 1e-10 / dyn.h

    def test_single_step_matches_dense_oracle(self, small_elastic):
        mesh, cache, mask = small_elastic
        state = make_elasticity_state(cache, mask)
        rng = make_rng(1, 0)
        n = 3 * mesh.n_vertices
        u, v = 1e-2 * rng.standard_normal(n), 1e-2 * rng.standard_normal(n)
        dyn = DynamicsState(u.copy(), v.copy())
        # dense oracle built from the raw element matrices
        k = np.zeros((n, n))
        m = np.zeros(n)
        for t in np.flatnonzero(mask):
            dofs = (3 * mesh.tets[t][:, None] + np.arange(3)).ravel()
            k[np.ix_(dofs, dofs)] += cache.stiffness[t]
            m[dofs] += cache.volumes[t] / 4
        pinned = np.repeat(pinned_vertices(state), 3)
        f = np.tile([0, -9.8, 0], mesh.n_vertices) * m
        h = dyn.h
        a = np.diag(m) + h * h * k
        rhs = m * (u + h * v) + h * h * f
        a[pinned] = 0
        a[pinned, pinned] = 1
        rhs[pinned] = u[pinned]
        want = np.linalg.solve(a, rhs)
        implicit_euler_step(dyn, state, CgConfig(tolerance=1e-14))
        assert np.abs(dyn.u - want).max() <= 1e-8 * np.abs(want).max()
        np.testing.assert_allclose(dyn.v, (want - u) / h, atol=1e-6 * np.abs(want).max() / h)

    def test_pinned_vertices_keep_position(self, small_elastic):
        mesh, cache, _ = small_elastic
        mask = np.zeros(mesh.n_tets, bool)
        mask[:3] = True
        state = make_elasticity_state(cache, mask)
        u0 = make_rng(2, 0).standard_normal(3 * mesh.n_vertices)
        dyn = DynamicsState(u0.copy(), np.zeros_like(u0))
        implicit_euler_step(dyn, state)
        pinned = np.repeat(pinned_vertices(state), 3)
        assert pinned.any()
        assert np.array_equal(dyn.u[pinned], u0[pinned])

    def test_euler_system_symmetric(self, small_elastic):
        mesh, cache, mask = small_elastic
        state = make_elasticity_state(cache, mask)
        a, _, _ = euler_system(state, DynamicsState.at_rest(mesh.n_vertices))
        assert abs(a - a.T).max() <= 1e-12

    def test_edits_mid_dynamics(self, small_elastic):
        mesh, cache, _ = small_elastic
        state = make_elasticity_state(cache, np.ones(mesh.n_tets, bool))
        dyn = DynamicsState.at_rest(mesh.n_vertices)
        for b in (EditBatch(deleted=[1, 2]), EditBatch(deleted=[3]), EditBatch(added=[1])):
            apply_edits_elastic(state, b)
            stats = implicit_euler_step(dyn, state)
            assert stats.converged and np.isfinite(dyn.u).all()

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            DynamicsState(np.zeros(6), np.zeros(3))
        with pytest.raises(ValueError):
            DynamicsState(np.zeros(4), np.zeros(4))


@given(st.integers(0, 1000), st.floats(1e-4, 1e-1))
@settings(max_examples=15, deadline=None)
def test_euler_residual_property(seed, h):
    mesh = generate_block_mesh(1, 1, 2)
    cache = precompute_element_stiffness(mesh)
    state = make_elasticity_state(cache, np.ones(mesh.n_tets, bool))
    rng = make_rng(seed, 0)
    n = 3 * mesh.n_vertices
    dyn = DynamicsState(rng.standard_normal(n), rng.standard_normal(n), h=h)
    a, rhs, _ = euler_system(state, dyn)
    implicit_euler_step(dyn, state, CgConfig(tolerance=1e-12))
    assert np.linalg.norm(a @ dyn.u - rhs) <= 1e-10 * np.linalg.norm(rhs)

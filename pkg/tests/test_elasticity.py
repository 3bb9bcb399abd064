import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from stafem.edits import EditBatch, make_rng
from stafem.elasticity import (ElasticityConfigError, Material, apply_edits_elastic,
                               assemble_vectorized, element_stiffness, elasticity_matrix,
                               make_elasticity_state, materialize, precompute_element_stiffness,
                               rebuild_elasticity)
from stafem.mesh import from_arrays, generate_block_mesh, tet_volumes
from stafem.proxy import POLICIES, InvariantError
from stafem.sparse import compare_csr

REF_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


def compliance_d(young, poisson):
    """D as the inverse of the isotropic compliance matrix (independent of the Lame form)."""
    s = np.zeros((6, 6))
    s[:3, :3] = -poisson / young
    s[[0, 1, 2], [0, 1, 2]] = 1.0 / young
    s[[3, 4, 5], [3, 4, 5]] = 2 * (1 + poisson) / young
    return np.linalg.inv(s)


def symbolic_stiffness(points, young, poisson):
    """vol * B^T D B with B from symbolically solved linear shape functions."""
    x, y, z = sympy.symbols("x y z")
    pts = [[sympy.Rational(str(c)) if float(c).is_integer() else sympy.Float(c, 30)
            for c in p] for p in points]
    coef = sympy.Matrix([[1, *p] for p in pts])
    inv = coef.inv()
    grads = []
    for i in range(4):
        n_i = inv[0, i] + inv[1, i] * x + inv[2, i] * y + inv[3, i] * z
        grads.append([sympy.diff(n_i, s) for s in (x, y, z)])
    b = sympy.zeros(6, 12)
    for i, (gx, gy, gz) in enumerate(grads):
        c = 3 * i
        b[0, c], b[1, c + 1], b[2, c + 2] = gx, gy, gz
        b[3, c], b[3, c + 1] = gy, gx
        b[4, c + 1], b[4, c + 2] = gz, gy
        b[5, c], b[5, c + 2] = gz, gx
    vol = abs(coef.det()) / 6
    bn = np.array(b.evalf(30).tolist(), dtype=float)
    return float(vol) * bn.T @ compliance_d(young, poisson) @ bn


def rigid_modes(points):
    modes = []
    for axis in range(3):
        r = np.zeros((4, 3))
        r[:, axis] = 1
        modes.append(r.ravel())
    for w in np.eye(3):
        modes.append(np.cross(w, points).ravel())
    return modes


def random_tets(n, seed):
    rng = make_rng(seed, 5)
    out = []
    while len(out) < n:
        p = rng.uniform(-1, 1, (4, 3))
        if abs(np.linalg.det(p[1:] - p[0])) / 6 > 1e-3:
            out.append(p)
    return out


class TestElement:
    def test_lame_d_matches_compliance_inverse(self):
        for e, nu in [(1.0, 0.0), (3.0, 0.3), (1e5, 0.45)]:
            np.testing.assert_allclose(elasticity_matrix(e, nu), compliance_d(e, nu),
                                       rtol=1e-12, atol=1e-12 * e)

    def test_reference_translation(self):
        k = element_stiffness(REF_TET, 7.0, 0.25)
        assert np.abs(k @ np.tile([1.0, 0, 0], 4)).max() < 1e-12

    @pytest.mark.parametrize("young,poisson", [(1.0, 0.0), (2.5, 0.3)])
    def test_reference_matches_symbolic(self, young, poisson):
        k = element_stiffness(REF_TET, young, poisson)
        assert np.abs(k - symbolic_stiffness(REF_TET, young, poisson)).max() <= 1e-12

    @pytest.mark.parametrize("points", random_tets(5, 1))
    def test_random_matches_symbolic(self, points):
        k = element_stiffness(points, 1.0, 0.3)
        assert np.abs(k - symbolic_stiffness(points, 1.0, 0.3)).max() <= 1e-12

    @pytest.mark.parametrize("points", random_tets(10, 2))
    def test_spectral_properties(self, points):
        k = element_stiffness(points, 1.0, 0.3)
        norm = np.abs(k).max()
        assert np.abs(k - k.T).max() <= 1e-12
        ev = np.linalg.eigvalsh(k)
        assert ev.min() >= -1e-9 * norm
        assert np.linalg.matrix_rank(k, tol=1e-9 * norm) == 6
        for r in rigid_modes(points):
            assert np.abs(k @ r).max() <= 1e-9 * norm


class TestPrecompute:
    def test_rejects_bad_poisson(self, single_tet):
        for nu in (0.5, -1.0, 0.7):
            with pytest.raises(ElasticityConfigError):
                precompute_element_stiffness(single_tet, 1.0, nu)

    def test_rejects_degenerate(self):
        flat = from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]],
                           [[0, 1, 2, 3], [0, 1, 2, 4]])
        with pytest.raises(ElasticityConfigError, match=r"\[0\]"):
            precompute_element_stiffness(flat)

    def test_blocks_tile_element_matrix(self, block2):
        cache = precompute_element_stiffness(block2)
        n = block2.n_vertices
        for t in (0, 17, 47):
            tet = block2.tets[t].tolist()
            k = cache.stiffness[t]
            for slot, pid in enumerate(cache.pair_ids[t].tolist()):
                u, v = cache.pair_vertices(pid)
                a, b = tet.index(u), tet.index(v)
                np.testing.assert_array_equal(cache.blocks[t, slot],
                                              k[3 * a:3 * a + 3, 3 * b:3 * b + 3])
                assert (pid < n) == (u == v)

    def test_material_json(self):
        assert Material(2.0, 0.1, 3.0).to_json() == '{"density": 3.0, "poisson": 0.1, "young": 2.0}'


def dense_assembly(mesh, cache, mask):
    n = mesh.n_vertices
    k = np.zeros((3 * n, 3 * n))
    for t in np.flatnonzero(mask):
        dofs = (3 * mesh.tets[t][:, None] + np.arange(3)).ravel()
        k[np.ix_(dofs, dofs)] += cache.stiffness[t]
    return k


class TestAssembly:
    def test_empty_is_eps_identity(self, block2):
        cache = precompute_element_stiffness(block2)
        state = rebuild_elasticity(cache, np.zeros(block2.n_tets, bool), 1e-3)
        assert np.array_equal(materialize(state).toarray(), 1e-3 * np.eye(3 * block2.n_vertices))

    def test_single_tet(self, single_tet):
        cache = precompute_element_stiffness(single_tet)
        a = materialize(rebuild_elasticity(cache, [True], 0.0)).toarray()
        assert np.abs(a - cache.stiffness[0]).max() <= 1e-12

    def test_two_tets_dense_oracle(self, two_tets):
        cache = precompute_element_stiffness(two_tets, 2.0, 0.2)
        a = materialize(rebuild_elasticity(cache, [True, True], 0.0)).toarray()
        assert a.shape == (15, 15)
        assert np.abs(a - dense_assembly(two_tets, cache, [True, True])).max() <= 1e-12

    def test_block_mesh_oracle_and_symmetry(self, block3):
        cache = precompute_element_stiffness(block3)
        mask = make_rng(3, 0).random(block3.n_tets) < 0.7
        a = materialize(rebuild_elasticity(cache, mask, 0.0)).toarray()
        assert np.abs(a - dense_assembly(block3, cache, mask)).max() <= 1e-12
        assert np.abs(a - a.T).max() <= 1e-12

    def test_global_rigid_translation(self, block3):
        cache = precompute_element_stiffness(block3)
        mask = make_rng(4, 0).random(block3.n_tets) < 0.5
        a = materialize(rebuild_elasticity(cache, mask, 0.0))
        for axis in range(3):
            r = np.zeros((block3.n_vertices, 3))
            r[:, axis] = 1
            assert np.abs(a @ r.ravel()).max() <= 1e-9 * np.abs(a).max()

    def test_mass(self, block3):
        cache = precompute_element_stiffness(block3, density=2.0)
        mask = make_rng(5, 0).random(block3.n_tets) < 0.5
        state = rebuild_elasticity(cache, mask)
        assert state.total_mass() == pytest.approx(2.0 * tet_volumes(block3)[mask].sum(),
                                                   rel=1e-9)
        m = state.mass_vector().reshape(-1, 3)
        assert (m == m[:, :1]).all()


def random_stream(mesh, seed, frames):
    rng = make_rng(seed, 42)
    mask = rng.random(mesh.n_tets) < 0.7
    init = mask.copy()
    out = []
    for _ in range(frames):
        live, dead = np.flatnonzero(mask), np.flatnonzero(~mask)
        d = rng.choice(live, size=min(len(live), int(rng.integers(0, 8))), replace=False)
        a = rng.choice(dead, size=min(len(dead), int(rng.integers(0, 8))), replace=False)
        b = EditBatch(d.tolist(), a.tolist())
        mask[list(b.deleted)] = False
        mask[list(b.added)] = True
        out.append(b)
    return init, out


class TestPolicies:
    @pytest.mark.parametrize("policy", POLICIES)
    def test_stream_matches_shadow(self, block3, policy):
        cache = precompute_element_stiffness(block3)
        init, batches = random_stream(block3, 11, 10)
        state = make_elasticity_state(cache, init, policy)
        for b in batches:
            apply_edits_elastic(state, b)
            blocks, counts, mass = assemble_vectorized(cache, state.mask)
            assert state.blocks.keys() == blocks.keys()
            shadow = rebuild_elasticity(cache, state.mask, 0.0)
            shadow.blocks, shadow.mass = blocks, mass
            bad, worst = compare_csr(materialize(state, 0.0), materialize(shadow, 0.0), 1e-12)
            assert bad == 0 and worst <= 1e-12
            assert np.abs(state.vertex_mass() - np.asarray(mass)).max() <= 1e-12
            if policy == "streaming_update":
                assert state.counts == counts

    def test_policies_bit_identical(self, block3):
        cache = precompute_element_stiffness(block3)
        init, batches = random_stream(block3, 12, 10)
        states = [make_elasticity_state(cache, init, p) for p in POLICIES]
        for b in batches:
            mats = []
            for s in states:
                apply_edits_elastic(s, b)
                mats.append(materialize(s))
            for m in mats[1:]:
                assert compare_csr(m, mats[0], 0.0) == (0, 0.0)

    def test_delete_readd_restores_exactly(self, block2):
        cache = precompute_element_stiffness(block2)
        state = make_elasticity_state(cache, np.ones(block2.n_tets, bool), "S")
        before = materialize(state).toarray()
        mass = list(state.mass)
        for _ in range(5):
            apply_edits_elastic(state, EditBatch(deleted=[1, 2, 30]))
            apply_edits_elastic(state, EditBatch(added=[1, 2, 30]))
        assert np.array_equal(materialize(state).toarray(), before)
        assert state.mass == mass

    @pytest.mark.parametrize("policy", ["L", "S"])
    def test_delete_single_tet_removes_all_blocks(self, single_tet, policy):
        cache = precompute_element_stiffness(single_tet)
        state = make_elasticity_state(cache, [True], policy)
        assert len(state.blocks) == 10
        apply_edits_elastic(state, EditBatch(deleted=[0]))
        assert state.blocks == {} and state.total_mass() == 0

    def test_underflow(self, block2):
        cache = precompute_element_stiffness(block2)
        state = make_elasticity_state(cache, np.ones(block2.n_tets, bool), "S")
        state.counts.clear()
        with pytest.raises(InvariantError):
            apply_edits_elastic(state, EditBatch(deleted=[0]))

    def test_counters(self, block3):
        cache = precompute_element_stiffness(block3)
        full = np.ones(block3.n_tets, bool)
        s = make_elasticity_state(cache, full, "S")
        l = make_elasticity_state(cache, full, "L")
        batch = EditBatch(deleted=list(range(0, 40, 3)))
        for st_ in (s, l):
            apply_edits_elastic(st_, batch)
        assert s.counters.edges_visited == 6 * len(batch)
        assert s.counters.tets_scanned == len(batch)
        assert l.counters.tets_scanned >= len(batch)

    def test_local_scans_constant_across_cycles(self):
        mesh = generate_block_mesh(4, 4, 4)
        cache = precompute_element_stiffness(mesh)
        state = make_elasticity_state(cache, np.ones(mesh.n_tets, bool), "L")
        slab = list(range(50, 80))
        scans = []
        for _ in range(3):
            apply_edits_elastic(state, EditBatch(deleted=slab))
            scans.append(state.counters.tets_scanned)
            apply_edits_elastic(state, EditBatch(added=slab))
        assert len(set(scans)) == 1


@given(young=st.floats(0.1, 100), poisson=st.floats(-0.9, 0.49), seed=st.integers(0, 999))
@settings(max_examples=20, deadline=None)
def test_streaming_parity_property(young, poisson, seed):
    mesh = generate_block_mesh(2, 2, 2)
    cache = precompute_element_stiffness(mesh, young, poisson)
    init, batches = random_stream(mesh, seed, 6)
    state = make_elasticity_state(cache, init, "S")
    for b in batches:
        apply_edits_elastic(state, b)
    ref = dense_assembly(mesh, cache, state.mask)
    got = materialize(state, 0.0).toarray()
    assert np.abs(got - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stafem.connectivity import (ConnectivityQueryError, bfs_components, make_connectivity,
                                 neighbour_lists, precompute_face_adjacency,
                                 query_same_component, spot_check, update_connectivity)
from stafem.edits import EditBatch, make_rng, make_schedule
from stafem.mesh import build_refinement, generate_block_mesh


def quadratic_adjacency(mesh):
    sets = [set(t) for t in mesh.tets.tolist()]
    return sorted((a, b) for a, b in itertools.combinations(range(len(sets)), 2)
                  if len(sets[a] & sets[b]) == 3)


def label_count(labels):
    return len(set(labels[labels >= 0].tolist()))


def test_adjacency_matches_quadratic_oracle(block2):
    assert precompute_face_adjacency(block2).tolist() == [list(p) for p in
                                                          quadratic_adjacency(block2)]


def test_refined_superset_adjacency_is_accepted():
    fine = build_refinement(generate_block_mesh(1, 1, 1), range(6))
    adj = precompute_face_adjacency(fine)
    assert len(adj) > 0


def test_bfs_two_blocks(two_tets):
    nbr = neighbour_lists(2, precompute_face_adjacency(two_tets))
    assert bfs_components(nbr, [True, True]).tolist() == [0, 0]
    assert bfs_components(nbr, [True, False]).tolist() == [0, -1]


def test_query_inactive_raises(block2):
    mask = np.ones(block2.n_tets, bool)
    mask[3] = False
    state = make_connectivity(block2, mask)
    with pytest.raises(ConnectivityQueryError):
        query_same_component(state, 0, 3)
    with pytest.raises(ConnectivityQueryError):
        query_same_component(state, 0, 10_000)


def test_slab_removal_splits_and_merge_rejoins():
    mesh = generate_block_mesh(6, 2, 2)
    sched = make_schedule("merge", mesh, 0, 4, target_fraction=0.2)
    state = make_connectivity(mesh, sched.initial_mask)
    counts = [state.component_count()]
    mask = sched.initial_mask.copy()
    for b in sched.frames:
        mask[list(b.added)] = True
        update_connectivity(state, b, mask)
        counts.append(state.component_count())
    assert counts[0] >= 2
    assert all(a >= b for a, b in zip(counts, counts[1:])) and counts[-1] == 1


@pytest.mark.parametrize("period", [1, 2, 5])
def test_staleness_is_merge_only(block3, period):
    """Between rebuilds the structure may over-connect, never under-connect."""
    rng = make_rng(0, 3)
    mask = np.ones(block3.n_tets, bool)
    state = make_connectivity(block3, mask, rebuild_period=period)
    for _ in range(12):
        live, dead = np.flatnonzero(mask), np.flatnonzero(~mask)
        b = EditBatch(rng.choice(live, 8, replace=False).tolist(),
                      rng.choice(dead, min(4, len(dead)), replace=False).tolist())
        mask[list(b.deleted)] = False
        mask[list(b.added)] = True
        update_connectivity(state, b, mask)
        labels = bfs_components(state.neighbours, mask)
        live = np.flatnonzero(mask)
        for x, y in itertools.combinations(live[:40].tolist(), 2):
            if labels[x] == labels[y]:
                assert query_same_component(state, x, y)
        if period == 1:
            assert state.component_count() == label_count(labels)
            assert spot_check(state, mask, 64, seed=1) == 0.0


@given(seed=st.integers(0, 5000), p=st.floats(0.2, 0.9))
@settings(max_examples=30, deadline=None)
def test_union_find_counts_match_bfs(seed, p):
    mesh = generate_block_mesh(3, 2, 2)
    mask = make_rng(seed, 0).random(mesh.n_tets) < p
    state = make_connectivity(mesh, mask)
    labels = bfs_components(state.neighbours, mask)
    assert state.component_count() == label_count(labels)
    live = np.flatnonzero(mask).tolist()
    for x, y in itertools.islice(itertools.combinations(live, 2), 200):
        assert query_same_component(state, x, y) == (labels[x] == labels[y])


def test_rebuild_period_validation(block2):
    with pytest.raises(ValueError):
        make_connectivity(block2, np.ones(block2.n_tets, bool), rebuild_period=0)

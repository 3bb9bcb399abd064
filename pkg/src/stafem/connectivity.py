"""Tet connectivity via union-find rebuilt periodically from the active mask.

Adjacency is face sharing.  Between rebuilds added tets are unioned
eagerly, while deletions only take effect at the next rebuild, so a stale
structure can report two tets as connected when they are not, never the
reverse.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .edits import EditBatch, make_rng
from .mesh import TET_FACES, MeshError, SupersetMesh


class ConnectivityQueryError(ValueError):
    pass


def precompute_face_adjacency(mesh: SupersetMesh) -> np.ndarray:
    """Sorted (k, 2) array of tet pairs sharing a face.

    A face shared by more than two tets is a non-manifold pool and raises,
    unless the extra sharers are parent/child overlaps of the refinement table.
    """
    owner: dict[tuple[int, int, int], list[int]] = {}
    for t, tet in enumerate(mesh.tets.tolist()):
        for f in TET_FACES:
            key = tuple(sorted((tet[f[0]], tet[f[1]], tet[f[2]])))
            owner.setdefault(key, []).append(t)
    family: dict[int, int] = {}
    for parent, kids in mesh.refinement.items():
        for c in kids:
            family[c] = parent
    pairs = []
    for key, ts in owner.items():
        if len(ts) == 2:
            pairs.append((ts[0], ts[1]))
        elif len(ts) > 2:
            # drop parents whose children also own this face
            rest = [t for t in ts if not any(family.get(o) == t for o in ts)]
            if len(rest) > 2:
                raise MeshError(f"face {key} shared by tets {ts}")
            if len(rest) == 2:
                pairs.append((rest[0], rest[1]))
    pairs.sort()
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def neighbour_lists(n_tets: int, adjacency: np.ndarray) -> list[list[int]]:
    nbr: list[list[int]] = [[] for _ in range(n_tets)]
    for a, b in adjacency.tolist():
        nbr[a].append(b)
        nbr[b].append(a)
    return nbr


def bfs_components(neighbours: list[list[int]], mask) -> np.ndarray:
    """Component label per tet (-1 for inactive), labels in discovery order."""
    live = np.asarray(mask, dtype=bool)
    label = np.full(len(live), -1, dtype=np.int64)
    flags = live.tolist()
    lab = label.tolist()
    comp = 0
    for s in range(len(flags)):
        if not flags[s] or lab[s] >= 0:
            continue
        lab[s] = comp
        queue = deque([s])
        while queue:
            t = queue.popleft()
            for o in neighbours[t]:
                if flags[o] and lab[o] < 0:
                    lab[o] = comp
                    queue.append(o)
        comp += 1
    return np.array(lab, dtype=np.int64)


@dataclass
class ConnectivityState:
    mesh: SupersetMesh
    adjacency: np.ndarray
    neighbours: list[list[int]]
    rebuild_period: int = 1
    parent: list[int] = field(default_factory=list)
    rank: list[int] = field(default_factory=list)
    active: list[bool] = field(default_factory=list)
    frames_since_rebuild: int = 0
    rebuilds: int = 0

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        rank = self.rank
        if rank[ra] < rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if rank[ra] == rank[rb]:
            rank[ra] += 1

    def component_count(self) -> int:
        return len({self.find(t) for t, on in enumerate(self.active) if on})


def make_connectivity(mesh: SupersetMesh, mask, rebuild_period: int = 1,
                      adjacency: np.ndarray | None = None) -> ConnectivityState:
    if rebuild_period < 1:
        raise ValueError("rebuild_period must be >= 1")
    if adjacency is None:
        adjacency = precompute_face_adjacency(mesh)
    state = ConnectivityState(mesh, adjacency, neighbour_lists(mesh.n_tets, adjacency),
                              rebuild_period)
    return rebuild_connectivity(state, mask)


def rebuild_connectivity(state: ConnectivityState, mask) -> ConnectivityState:
    """Fresh union-find over face-adjacent pairs of active tets.

    The forest is rebuilt flat: every tet points straight at the smallest id
    of its component (components labelled by scipy's csgraph).
    """
    n = state.mesh.n_tets
    live = np.asarray(mask, dtype=bool)
    adj = state.adjacency
    pairs = adj[live[adj[:, 0]] & live[adj[:, 1]]]
    graph = sp.csr_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
                          shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    first = np.full(labels.max(initial=-1) + 1, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    parent = first[labels]
    rank = np.zeros(n, dtype=np.int64)
    sizes = np.bincount(labels)
    rank[first[sizes > 1]] = 1
    state.parent = parent.tolist()
    state.rank = rank.tolist()
    state.active = live.tolist()
    state.frames_since_rebuild = 0
    state.rebuilds += 1
    return state


def update_connectivity(state: ConnectivityState, batch: EditBatch, mask) -> bool:
    """Advance one frame; returns True when a rebuild ran."""
    state.frames_since_rebuild += 1
    if state.frames_since_rebuild >= state.rebuild_period:
        rebuild_connectivity(state, mask)
        return True
    act = state.active
    for t in batch.deleted:
        act[t] = False
    # a re-added tet keeps its old tree position: resetting it could split
    # trees that still route through it
    for t in batch.added:
        act[t] = True
    for t in batch.added:
        for o in state.neighbours[t]:
            if act[o]:
                state.union(t, o)
    return False


def query_same_component(state: ConnectivityState, a: int, b: int) -> bool:
    for t in (a, b):
        if not 0 <= t < len(state.active) or not state.active[t]:
            raise ConnectivityQueryError(f"tet {t} is not active")
    return state.find(a) == state.find(b)


def spot_check(state: ConnectivityState, mask, sample_size: int, seed: int,
               stream: int = 7) -> float:
    """Fraction of random active tet pairs where the union-find answer
    disagrees with a BFS labelling of the current mask."""
    if sample_size <= 0:
        return 0.0
    live = np.flatnonzero(mask)
    if len(live) == 0:
        return 0.0
    labels = bfs_components(state.neighbours, mask)
    rng = make_rng(seed, stream)
    a = rng.choice(live, size=sample_size)
    b = rng.choice(live, size=sample_size)
    bad = 0
    for x, y in zip(a.tolist(), b.tolist()):
        truth = labels[x] == labels[y]
        if not state.active[x] or not state.active[y]:
            bad += 1
            continue
        if query_same_component(state, x, y) != truth:
            bad += 1
    return bad / sample_size

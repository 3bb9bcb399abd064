"""Stabilized graph-Laplacian proxy A = L + eps*I under tet edit streams.

Three exact maintenance policies share one state type:

* ``full_rebuild``: recount every active tet's edges each frame.
* ``local_recompute``: for each edge of an edited tet, rescan all candidate
  tets incident to that edge; nothing but the matrix survives between frames.
* ``streaming_update``: keep the per-edge multiplicity and react only to
  0 <-> positive transitions of the edges of edited tets.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .edits import EditBatch, apply_batch
from .mesh import SupersetMesh
from .sparse import DynamicSparseMatrix, coo_to_csr
from .topology import fast_view, new_mask, topology

FULL_REBUILD = "full_rebuild"
LOCAL_RECOMPUTE = "local_recompute"
STREAMING_UPDATE = "streaming_update"
POLICIES = (FULL_REBUILD, LOCAL_RECOMPUTE, STREAMING_UPDATE)
POLICY_ALIASES = {"R": FULL_REBUILD, "L": LOCAL_RECOMPUTE, "S": STREAMING_UPDATE,
                  "rebuild": FULL_REBUILD, "local": LOCAL_RECOMPUTE, "streaming": STREAMING_UPDATE}

DEFAULT_EPSILON = 1e-6


class InvariantError(RuntimeError):
    """Maintained state drifted from what the edit stream allows."""


def resolve_policy(name: str) -> str:
    name = POLICY_ALIASES.get(name, name)
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}")
    return name


@dataclass
class WorkCounters:
    edges_visited: int = 0
    entries_mutated: int = 0
    tets_scanned: int = 0

    def reset(self) -> None:
        self.edges_visited = self.entries_mutated = self.tets_scanned = 0

    def as_dict(self) -> dict:
        return {"edges_visited": self.edges_visited, "entries_mutated": self.entries_mutated,
                "tets_scanned": self.tets_scanned}


@dataclass
class ProxyState:
    mesh: SupersetMesh
    mask: np.ndarray
    matrix: DynamicSparseMatrix
    epsilon: float = DEFAULT_EPSILON
    policy: str = FULL_REBUILD
    counts: dict[int, int] | None = None
    counters: WorkCounters = field(default_factory=WorkCounters)

    def active_edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u, row in enumerate(self.matrix.rows) for v in row if u < v)


def _assemble(mesh: SupersetMesh, mask: np.ndarray):
    topo = topology(mesh)
    te = topo.tet_edges
    active = np.flatnonzero(mask).tolist()
    counts: Counter = Counter()
    for t in active:
        counts.update(te[t])
    matrix = DynamicSparseMatrix(mesh.n_vertices)
    rows = matrix.rows
    eu, ev = topo.edge_u, topo.edge_v
    for e in counts:
        u = eu[e]
        v = ev[e]
        rows[u][v] = -1.0
        rows[v][u] = -1.0
    matrix.diag = [float(len(r)) for r in rows]
    return matrix, dict(counts), len(active)


def rebuild_proxy(mesh: SupersetMesh, mask, epsilon: float = DEFAULT_EPSILON) -> ProxyState:
    """Assemble the proxy from scratch on the active tets of ``mask``."""
    mask = new_mask(mask)
    matrix, counts, scanned = _assemble(mesh, mask)
    state = ProxyState(mesh, mask, matrix, epsilon, FULL_REBUILD, counts)
    state.counters.tets_scanned = scanned
    state.counters.edges_visited = 6 * scanned
    state.counters.entries_mutated = 2 * len(counts) + mesh.n_vertices
    return state


def make_proxy_state(mesh: SupersetMesh, mask, policy: str = STREAMING_UPDATE,
                     epsilon: float = DEFAULT_EPSILON) -> ProxyState:
    state = rebuild_proxy(mesh, mask, epsilon)
    state.policy = resolve_policy(policy)
    if state.policy == LOCAL_RECOMPUTE:
        state.counts = None
        topology(mesh).edge_tets  # build the rescan table outside the timed loop
    state.counters.reset()
    return state


def apply_edits_full_rebuild(state: ProxyState, batch: EditBatch) -> ProxyState:
    state.counters.reset()
    apply_batch(state.mask, batch)
    matrix, counts, scanned = _assemble(state.mesh, state.mask)
    state.matrix = matrix
    state.counts = counts
    c = state.counters
    c.tets_scanned = scanned
    c.edges_visited = 6 * scanned
    c.entries_mutated = 2 * len(counts) + state.mesh.n_vertices
    return state


def apply_edits_streaming(state: ProxyState, batch: EditBatch) -> ProxyState:
    """Adjust edge multiplicities of the edited tets; touch the matrix only on
    0 <-> positive transitions."""
    if state.counts is None:
        raise InvariantError("streaming update needs a multiplicity map")
    state.counters.reset()
    apply_batch(state.mask, batch)
    topo = topology(state.mesh)
    te, eu, ev = topo.tet_edges, topo.edge_u, topo.edge_v
    counts = state.counts
    rows = state.matrix.rows
    diag = state.matrix.diag
    mutated = 0
    for t in batch.deleted:
        for e in te[t]:
            k = counts.get(e, 0)
            if k > 1:
                counts[e] = k - 1
            elif k == 1:
                del counts[e]
                u = eu[e]
                v = ev[e]
                del rows[u][v]
                del rows[v][u]
                diag[u] -= 1.0
                diag[v] -= 1.0
                mutated += 4
            else:
                raise InvariantError(f"edge {e} multiplicity would drop below zero")
    for t in batch.added:
        for e in te[t]:
            k = counts.get(e, 0)
            counts[e] = k + 1
            if k == 0:
                u = eu[e]
                v = ev[e]
                rows[u][v] = -1.0
                rows[v][u] = -1.0
                diag[u] += 1.0
                diag[v] += 1.0
                mutated += 4
    c = state.counters
    c.edges_visited = 6 * len(batch)
    c.tets_scanned = len(batch)
    c.entries_mutated = mutated
    return state


def apply_edits_local_recompute(state: ProxyState, batch: EditBatch) -> ProxyState:
    """Recompute the activity of every edge of every edited tet by rescanning
    all candidate tets incident to it.  No multiplicity state is used."""
    state.counters.reset()
    apply_batch(state.mask, batch)
    topo = topology(state.mesh)
    te, eu, ev, etets = topo.tet_edges, topo.edge_u, topo.edge_v, topo.edge_tets
    live = fast_view(state.mask)
    rows = state.matrix.rows
    diag = state.matrix.diag
    touched: set[int] = set()
    for t in batch.deleted:
        touched.update(te[t])
    for t in batch.added:
        touched.update(te[t])
    scanned = 0
    mutated = 0
    for e in touched:
        inc = etets[e]
        scanned += len(inc)
        k = 0
        for t in inc:
            k += live[t]
        u = eu[e]
        v = ev[e]
        present = v in rows[u]
        if k and not present:
            rows[u][v] = -1.0
            rows[v][u] = -1.0
            diag[u] += 1.0
            diag[v] += 1.0
            mutated += 4
        elif not k and present:
            del rows[u][v]
            del rows[v][u]
            diag[u] -= 1.0
            diag[v] -= 1.0
            mutated += 4
    c = state.counters
    c.edges_visited = len(touched)
    c.tets_scanned = scanned
    c.entries_mutated = mutated
    return state


_DISPATCH = {
    FULL_REBUILD: apply_edits_full_rebuild,
    LOCAL_RECOMPUTE: apply_edits_local_recompute,
    STREAMING_UPDATE: apply_edits_streaming,
}


def apply_edits(state: ProxyState, batch: EditBatch) -> ProxyState:
    return _DISPATCH[state.policy](state, batch)


def finalize(state: ProxyState, epsilon: float | None = None) -> sp.csr_matrix:
    """Materialize A = L + eps*I as canonical CSR (sorted columns)."""
    eps = state.epsilon if epsilon is None else epsilon
    return state.matrix.to_csr(shift=eps)


def laplacian(state: ProxyState) -> sp.csr_matrix:
    """The eps-free integer operator used for bit-exact parity checks."""
    return state.matrix.to_csr(shift=0.0)


def assemble_vectorized(mesh: SupersetMesh, mask) -> sp.csr_matrix:
    """Independent numpy build of the eps-free Laplacian L (parity shadow)."""
    active = np.flatnonzero(np.asarray(mask, dtype=bool))
    n = mesh.n_vertices
    eids = np.unique(mesh.tet_edges[active].ravel())
    u, v = mesh.edges[eids, 0], mesh.edges[eids, 1]
    deg = np.bincount(np.concatenate([u, v]), minlength=n).astype(np.float64)
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.concatenate([-np.ones(2 * len(eids)), deg])
    return coo_to_csr(rows, cols, vals, n)

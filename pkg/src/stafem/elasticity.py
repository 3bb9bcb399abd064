"""Linear-tetrahedron elasticity operator K + eps*I and lumped mass under edits.

The operator is kept as 3x3 blocks keyed by vertex pair.  Pair ids are
``v`` for the diagonal block of vertex ``v`` and ``n_vertices + e`` for the
off-diagonal block of edge ``e = (u, v)``, ``u < v`` (rows of ``u``, columns
of ``v``).  Every tet owns 10 pair blocks: 4 diagonal and 6 edge blocks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .edits import EditBatch, apply_batch
from .mesh import TET_EDGE_PAIRS, SupersetMesh, degenerate_tets, tet_volumes
from .proxy import (FULL_REBUILD, LOCAL_RECOMPUTE, STREAMING_UPDATE, InvariantError,
                    WorkCounters, resolve_policy)
from .sparse import coo_to_csr
from .topology import fast_view, new_mask, topology


class ElasticityConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    young: float = 1.0
    poisson: float = 0.3
    density: float = 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def elasticity_matrix(young: float, poisson: float) -> np.ndarray:
    """6x6 isotropic D in Voigt order (xx, yy, zz, xy, yz, zx), engineering shear."""
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = young / (2 * (1 + poisson))
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[[0, 1, 2], [0, 1, 2]] = lam + 2 * mu
    d[[3, 4, 5], [3, 4, 5]] = mu
    return d


def strain_displacement(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constant 6x12 strain-displacement matrices and volumes for (T, 4, 3) corners."""
    edges = points[:, 1:] - points[:, :1]
    vol = np.abs(np.linalg.det(edges)) / 6.0
    inv = np.linalg.inv(edges)
    grads = np.empty((len(points), 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    b = np.zeros((len(points), 6, 12))
    for i in range(4):
        gx, gy, gz = grads[:, i, 0], grads[:, i, 1], grads[:, i, 2]
        c = 3 * i
        b[:, 0, c] = gx
        b[:, 1, c + 1] = gy
        b[:, 2, c + 2] = gz
        b[:, 3, c] = gy
        b[:, 3, c + 1] = gx
        b[:, 4, c + 1] = gz
        b[:, 4, c + 2] = gy
        b[:, 5, c] = gz
        b[:, 5, c + 2] = gx
    return b, vol


def element_stiffness(points: np.ndarray, young: float, poisson: float) -> np.ndarray:
    """12x12 stiffness ``volume * B^T D B`` of one tet given its 4 corners."""
    b, vol = strain_displacement(np.asarray(points, dtype=np.float64)[None])
    d = elasticity_matrix(young, poisson)
    return vol[0] * b[0].T @ d @ b[0]


@dataclass(eq=False)
class ElementStiffnessCache:
    """Per-candidate-tet element matrices and their 10 vertex-pair blocks."""

    mesh: SupersetMesh
    material: Material
    stiffness: np.ndarray          # (T, 12, 12)
    volumes: np.ndarray            # (T,)
    pair_ids: np.ndarray           # (T, 10)
    blocks: np.ndarray             # (T, 10, 3, 3)
    _pair_tets: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.tet_pairs: list[tuple[int, ...]] = [tuple(r) for r in self.pair_ids.tolist()]
        # Blocks and masses are accumulated as int64 fixed point so that any
        # summation order (rebuild, rescan, +/- streaming) gives identical bits.
        sharers = int(np.bincount(self.pair_ids.ravel()).max()) if self.pair_ids.size else 1
        self.block_scale = _fixed_point_scale(float(np.abs(self.blocks).max(initial=0.0)), sharers)
        fixed = np.rint(self.blocks / self.block_scale).astype(np.int64)
        self.tet_blocks: list[list[np.ndarray]] = [list(b) for b in fixed]
        quarter = self.material.density * self.volumes / 4.0
        self.mass_scale = _fixed_point_scale(float(quarter.max(initial=0.0)), 64)
        self.vertex_share: list[int] = np.rint(quarter / self.mass_scale).astype(np.int64).tolist()

    @property
    def n_pairs(self) -> int:
        return self.mesh.n_vertices + self.mesh.n_edges

    def pair_vertices(self, pid: int) -> tuple[int, int]:
        n = self.mesh.n_vertices
        if pid < n:
            return pid, pid
        u, v = self.mesh.edges[pid - n]
        return int(u), int(v)

    @property
    def pair_tets(self) -> list[tuple[tuple[int, int], ...]]:
        """For every pair id, the (tet, slot) entries of all candidate tets
        containing both of its vertices."""
        if self._pair_tets is None:
            out: list[list[tuple[int, int]]] = [[] for _ in range(self.n_pairs)]
            for t, pids in enumerate(self.tet_pairs):
                for k, p in enumerate(pids):
                    out[p].append((t, k))
            self._pair_tets = [tuple(x) for x in out]
        return self._pair_tets


def max_pair_rescan(cache: ElementStiffnessCache) -> int:
    """Largest number of (tet, slot) visits one edited tet can cause when its
    10 pair blocks are re-summed from their candidate lists."""
    if cache.mesh.n_tets == 0:
        return 0
    val = np.bincount(cache.pair_ids.ravel(), minlength=cache.n_pairs)
    return int(val[cache.pair_ids].sum(axis=1).max())


def _fixed_point_scale(max_abs: float, terms: int) -> float:
    """Power-of-two unit such that ``terms`` values of size ``max_abs`` sum
    below 2**62 in int64."""
    if max_abs <= 0.0:
        return 1.0
    exp = int(np.floor(62 - np.log2(max_abs * max(terms, 1)))) - 1
    return float(2.0 ** -exp)


def precompute_element_stiffness(mesh: SupersetMesh, young: float = 1.0,
                                 poisson: float = 0.3,
                                 density: float = 1.0) -> ElementStiffnessCache:
    if not -1.0 < poisson < 0.5:
        raise ElasticityConfigError(f"Poisson ratio {poisson} outside (-1, 0.5)")
    if young <= 0 or density <= 0:
        raise ElasticityConfigError("Young's modulus and density must be positive")
    bad = degenerate_tets(mesh)
    if bad:
        raise ElasticityConfigError(f"degenerate tets: {bad[:20]}"
                                    + (" ..." if len(bad) > 20 else ""))
    pts = mesh.vertices[mesh.tets]
    b, vol = strain_displacement(pts)
    d = elasticity_matrix(young, poisson)
    k = vol[:, None, None] * np.einsum("tki,kl,tlj->tij", b, d, b)

    n = mesh.n_vertices
    tets = mesh.tets
    pair_ids = np.empty((len(tets), 10), dtype=np.int64)
    blocks = np.empty((len(tets), 10, 3, 3))
    for i in range(4):
        pair_ids[:, i] = tets[:, i]
        blocks[:, i] = k[:, 3 * i:3 * i + 3, 3 * i:3 * i + 3]
    for s, (a, c) in enumerate(TET_EDGE_PAIRS):
        slot = 4 + s
        pair_ids[:, slot] = n + mesh.tet_edges[:, s]
        lo_first = tets[:, a] < tets[:, c]
        ab = k[:, 3 * a:3 * a + 3, 3 * c:3 * c + 3]
        ba = k[:, 3 * c:3 * c + 3, 3 * a:3 * a + 3]
        blocks[:, slot] = np.where(lo_first[:, None, None], ab, ba)
    return ElementStiffnessCache(mesh, Material(young, poisson, density), k,
                                 tet_volumes(mesh), pair_ids, blocks)


@dataclass
class ElasticityState:
    cache: ElementStiffnessCache
    mask: np.ndarray
    blocks: dict[int, np.ndarray]
    mass: list            # int fixed point (see cache.mass_scale) or float
    epsilon: float = 1e-6
    policy: str = FULL_REBUILD
    counts: dict[int, int] | None = None
    counters: WorkCounters = field(default_factory=WorkCounters)
    frames_since_reaccumulate: int = 0
    reaccumulate_every: int = 0

    @property
    def mesh(self) -> SupersetMesh:
        return self.cache.mesh

    def vertex_mass(self) -> np.ndarray:
        """Per-vertex lumped mass as floats."""
        m = np.asarray(self.mass)
        if m.dtype.kind in "iu":
            return m.astype(np.float64) * self.cache.mass_scale
        return m.astype(np.float64)

    def mass_vector(self) -> np.ndarray:
        """Per-DOF lumped mass."""
        return np.repeat(self.vertex_mass(), 3)

    def total_mass(self) -> float:
        return float(np.sum(self.vertex_mass()))


def assemble_vectorized(cache: ElementStiffnessCache, mask: np.ndarray):
    """Independent numpy scatter-add of all active elements.

    Used as the parity shadow; sums each pair in increasing tet order.
    Returns (blocks, counts, mass) with the same layout as a state.
    """
    active = np.flatnonzero(mask)
    pids = cache.pair_ids[active].ravel()
    uniq, inv = np.unique(pids, return_inverse=True)
    acc = np.zeros((len(uniq), 3, 3))
    np.add.at(acc, inv, cache.blocks[active].reshape(-1, 3, 3))
    cnt = np.bincount(inv, minlength=len(uniq))
    keys = uniq.tolist()
    n = cache.mesh.n_vertices
    w = cache.material.density * cache.volumes[active] / 4.0
    mass = np.bincount(cache.mesh.tets[active].ravel(), weights=np.repeat(w, 4),
                       minlength=n)
    return dict(zip(keys, acc)), dict(zip(keys, cnt.tolist())), mass.tolist()


def _assemble(cache: ElementStiffnessCache, mask: np.ndarray):
    """Scatter-add every active element block, one pair at a time."""
    tp, tb, share = cache.tet_pairs, cache.tet_blocks, cache.vertex_share
    tets = topology(cache.mesh).tets
    blocks: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    mass = [0] * cache.mesh.n_vertices
    active = np.flatnonzero(mask).tolist()
    for t in active:
        blk = tb[t]
        for k, p in enumerate(tp[t]):
            c = counts.get(p, 0)
            counts[p] = c + 1
            if c:
                blocks[p] += blk[k]
            else:
                blocks[p] = blk[k].copy()
        w = share[t]
        for v in tets[t]:
            mass[v] += w
    return blocks, counts, mass, len(active)


def rebuild_elasticity(cache: ElementStiffnessCache, mask,
                       epsilon: float = 1e-6) -> ElasticityState:
    mask = new_mask(mask)
    blocks, counts, mass, scanned = _assemble(cache, mask)
    state = ElasticityState(cache, mask, blocks, mass, epsilon, FULL_REBUILD, counts)
    state.counters.tets_scanned = scanned
    return state


def make_elasticity_state(cache: ElementStiffnessCache, mask, policy: str = STREAMING_UPDATE,
                          epsilon: float = 1e-6, reaccumulate_every: int = 0) -> ElasticityState:
    state = rebuild_elasticity(cache, mask, epsilon)
    state.policy = resolve_policy(policy)
    state.reaccumulate_every = reaccumulate_every
    if state.policy == LOCAL_RECOMPUTE:
        state.counts = None
        cache.pair_tets
        topology(cache.mesh).vertex_tets
    state.counters.reset()
    return state


def apply_edits_full_rebuild_elastic(state: ElasticityState, batch: EditBatch) -> ElasticityState:
    state.counters.reset()
    apply_batch(state.mask, batch)
    state.blocks, state.counts, state.mass, scanned = _assemble(state.cache, state.mask)
    c = state.counters
    c.tets_scanned = scanned
    c.edges_visited = 6 * scanned
    c.entries_mutated = len(state.blocks)
    return state


def apply_edits_streaming_elastic(state: ElasticityState, batch: EditBatch) -> ElasticityState:
    """Subtract deleted and add inserted element blocks; a pair whose
    contributing-tet count reaches zero is dropped from the structure."""
    if state.counts is None:
        raise InvariantError("streaming update needs contributing-tet counts")
    state.counters.reset()
    apply_batch(state.mask, batch)
    cache = state.cache
    tp, tb, share = cache.tet_pairs, cache.tet_blocks, cache.vertex_share
    tets = topology(cache.mesh).tets
    store = state.blocks
    counts = state.counts
    mass = state.mass
    removed = 0
    for t in batch.deleted:
        blk = tb[t]
        for k, p in enumerate(tp[t]):
            c = counts.get(p, 0)
            if c > 1:
                counts[p] = c - 1
                store[p] -= blk[k]
            elif c == 1:
                del counts[p]
                del store[p]
                removed += 1
            else:
                raise InvariantError(f"pair {p} contributing count would drop below zero")
        w = share[t]
        for v in tets[t]:
            mass[v] -= w
    for t in batch.added:
        blk = tb[t]
        for k, p in enumerate(tp[t]):
            c = counts.get(p, 0)
            counts[p] = c + 1
            if c:
                store[p] += blk[k]
            else:
                store[p] = blk[k].copy()
        w = share[t]
        for v in tets[t]:
            mass[v] += w
    c = state.counters
    c.tets_scanned = len(batch)
    c.edges_visited = 6 * len(batch)
    c.entries_mutated = 10 * len(batch)
    if state.reaccumulate_every:
        state.frames_since_reaccumulate += 1
        if state.frames_since_reaccumulate >= state.reaccumulate_every:
            _reaccumulate(state, batch)
            state.frames_since_reaccumulate = 0
    return state


def _reaccumulate(state: ElasticityState, batch: EditBatch) -> None:
    """Re-derive the blocks touched this frame exactly (drift guard)."""
    cache = state.cache
    live = fast_view(state.mask)
    tb = cache.tet_blocks
    touched = {p for t in batch.touched() for p in cache.tet_pairs[t]}
    for p in touched:
        if p not in state.blocks:
            continue
        acc = None
        for t, k in cache.pair_tets[p]:
            if live[t]:
                acc = tb[t][k].copy() if acc is None else acc + tb[t][k]
        state.blocks[p] = acc


def apply_edits_local_recompute_elastic(state: ElasticityState,
                                        batch: EditBatch) -> ElasticityState:
    """Re-sum every pair block touched by an edited tet from all active
    candidate tets containing that pair; lumped masses of touched vertices
    are re-summed the same way."""
    state.counters.reset()
    apply_batch(state.mask, batch)
    cache = state.cache
    live = fast_view(state.mask)
    tp, tb, share = cache.tet_pairs, cache.tet_blocks, cache.vertex_share
    pair_tets = cache.pair_tets
    topo = topology(cache.mesh)
    store = state.blocks
    touched: set[int] = set()
    verts: set[int] = set()
    for t in batch.touched():
        touched.update(tp[t])
        verts.update(topo.tets[t])
    scanned = 0
    for p in touched:
        inc = pair_tets[p]
        scanned += len(inc)
        acc = None
        for t, k in inc:
            if live[t]:
                if acc is None:
                    acc = tb[t][k].copy()
                else:
                    acc += tb[t][k]
        if acc is None:
            store.pop(p, None)
        else:
            store[p] = acc
    vt = topo.vertex_tets
    mass = state.mass
    for v in verts:
        m = 0
        for t in vt[v]:
            if live[t]:
                m += share[t]
        mass[v] = m
    c = state.counters
    c.tets_scanned = scanned
    c.edges_visited = len(touched)
    c.entries_mutated = len(touched)
    return state


_DISPATCH = {
    FULL_REBUILD: apply_edits_full_rebuild_elastic,
    LOCAL_RECOMPUTE: apply_edits_local_recompute_elastic,
    STREAMING_UPDATE: apply_edits_streaming_elastic,
}


def apply_edits_elastic(state: ElasticityState, batch: EditBatch) -> ElasticityState:
    return _DISPATCH[state.policy](state, batch)


def block_index_arrays(cache: ElementStiffnessCache, pids: np.ndarray):
    """Row and column vertex of each pair id (upper-triangle orientation)."""
    n = cache.mesh.n_vertices
    pids = np.asarray(pids, dtype=np.int64)
    u = np.where(pids < n, pids, 0)
    v = u.copy()
    off = pids >= n
    if off.any():
        ev = cache.mesh.edges[pids[off] - n]
        u[off] = ev[:, 0]
        v[off] = ev[:, 1]
    return u, v


def materialize(state: ElasticityState, epsilon: float | None = None,
                extra_diagonal: np.ndarray | None = None, scale: float = 1.0) -> sp.csr_matrix:
    """Scalar-expanded 3n x 3n CSR of ``scale * K + eps*I (+ extra_diagonal)``.

    Every stored pair contributes its full 3x3 block (and the mirrored block
    for off-diagonal pairs); all 3n diagonal positions are always present.
    """
    eps = state.epsilon if epsilon is None else epsilon
    n = state.mesh.n_vertices
    ndof = 3 * n
    if state.blocks:
        pids = np.fromiter(state.blocks.keys(), dtype=np.int64, count=len(state.blocks))
        vals = np.stack(list(state.blocks.values()))
        if vals.dtype.kind in "iu":
            vals = vals.astype(np.float64) * state.cache.block_scale
        vals = vals * scale
        u, v = block_index_arrays(state.cache, pids)
        ii, jj = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
        r = (3 * u)[:, None, None] + ii
        c = (3 * v)[:, None, None] + jj
        diag_pair = u == v
        off = ~diag_pair
        rows = [r[diag_pair].ravel(), r[off].ravel(), c[off].transpose(0, 2, 1).ravel()]
        cols = [c[diag_pair].ravel(), c[off].ravel(), r[off].transpose(0, 2, 1).ravel()]
        data = [vals[diag_pair].ravel(), vals[off].ravel(),
                vals[off].transpose(0, 2, 1).ravel()]
    else:
        rows, cols, data = [], [], []
        diag_pair = np.zeros(0, dtype=bool)
        u = np.zeros(0, dtype=np.int64)
    # diagonal positions of vertices without any stored block
    covered = np.zeros(n, dtype=bool)
    covered[u[diag_pair]] = True
    bare = np.flatnonzero(~covered)
    bare_dofs = (3 * bare[:, None] + np.arange(3)).ravel()
    rows.append(bare_dofs)
    cols.append(bare_dofs)
    data.append(np.zeros(len(bare_dofs)))
    rows = np.concatenate(rows).astype(np.int64)
    cols = np.concatenate(cols).astype(np.int64)
    data = np.concatenate(data)
    on_diag = rows == cols
    shift = np.full(ndof, eps)
    if extra_diagonal is not None:
        shift = shift + extra_diagonal
    data = data.copy()
    data[on_diag] += shift[rows[on_diag]]
    return coo_to_csr(rows, cols, data, ndof)


def stiffness_matrix(state: ElasticityState, epsilon: float | None = None) -> sp.csr_matrix:
    return materialize(state, epsilon)

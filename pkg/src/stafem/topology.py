"""Per-mesh lookup tables shared by the assembly policies.

Hot loops index plain Python lists (much cheaper than numpy scalar access),
so each mesh gets one lazily built bundle of list-typed incidence data.
"""

from __future__ import annotations

import weakref

import numpy as np

from .mesh import SupersetMesh

_CACHE: "weakref.WeakKeyDictionary[SupersetMesh, Topology]" = weakref.WeakKeyDictionary()


class Topology:
    def __init__(self, mesh: SupersetMesh):
        self.mesh = mesh
        self.tets: list[tuple[int, int, int, int]] = [tuple(t) for t in mesh.tets.tolist()]
        self.tet_edges: list[tuple[int, ...]] = [tuple(r) for r in mesh.tet_edges.tolist()]
        self.edge_u: list[int] = mesh.edges[:, 0].tolist()
        self.edge_v: list[int] = mesh.edges[:, 1].tolist()
        self._edge_tets = None
        self._vertex_tets = None

    @property
    def edge_tets(self) -> list[tuple[int, ...]]:
        """Candidate tets incident to each edge (local-recompute rescans these)."""
        if self._edge_tets is None:
            out: list[list[int]] = [[] for _ in range(self.mesh.n_edges)]
            for t, row in enumerate(self.tet_edges):
                for e in row:
                    out[e].append(t)
            self._edge_tets = [tuple(x) for x in out]
        return self._edge_tets

    @property
    def vertex_tets(self) -> list[tuple[int, ...]]:
        if self._vertex_tets is None:
            out: list[list[int]] = [[] for _ in range(self.mesh.n_vertices)]
            for t, tet in enumerate(self.tets):
                for v in tet:
                    out[v].append(t)
            self._vertex_tets = [tuple(x) for x in out]
        return self._vertex_tets


def topology(mesh: SupersetMesh) -> Topology:
    topo = _CACHE.get(mesh)
    if topo is None:
        topo = _CACHE[mesh] = Topology(mesh)
    return topo


def new_mask(values) -> np.ndarray:
    """Boolean numpy array backed by a bytearray.

    ``mask.base`` is the bytearray, so policies can index it at Python speed
    while callers keep ordinary numpy semantics.
    """
    arr = np.asarray(values, dtype=bool)
    return np.frombuffer(bytearray(arr.tobytes()), dtype=bool)


def fast_view(mask: np.ndarray):
    base = mask.base
    if isinstance(base, bytearray) and len(base) == len(mask):
        return base
    return mask.tolist()

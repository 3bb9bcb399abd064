"""Superset tetrahedral meshes: loading, block generation, 1->8 refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

# local vertex pairs of a tet, in the order used by tet_edges
TET_EDGE_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


class MeshError(ValueError):
    """Invalid mesh input or argument."""


class MeshParseError(MeshError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True, eq=False)
class SupersetMesh:
    """Fixed vertex positions and the full pool of candidate tetrahedra.

    ``tet_edges[t]`` holds the dense ids of the six edges of tet ``t``;
    ``edges[k]`` is the canonical ``(u, v)`` pair (``u < v``) of edge ``k``.
    ``refinement`` maps a parent tet id to its 8 child tet ids.
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray
    tet_edges: np.ndarray
    edge_index: dict[tuple[int, int], int]
    refinement: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def children(self) -> frozenset[int]:
        return frozenset(c for kids in self.refinement.values() for c in kids)

    def canonical_tet_edges(self, t: int) -> list[tuple[int, int]]:
        return [tuple(int(x) for x in self.edges[e]) for e in self.tet_edges[t]]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def initial_mask(self) -> np.ndarray:
        """All tets active except refinement children."""
        mask = np.ones(self.n_tets, dtype=bool)
        for kids in self.refinement.values():
            mask[list(kids)] = False
        return mask

    def same_as(self, other: "SupersetMesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.tets, other.tets)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.tet_edges, other.tet_edges)
            and self.refinement == other.refinement
        )


def _build(vertices: np.ndarray, tets: np.ndarray,
           refinement: dict[int, tuple[int, ...]] | None = None) -> SupersetMesh:
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
    n = len(vertices)
    if tets.size:
        if tets.min() < 0 or tets.max() >= n:
            raise MeshError("tet vertex index out of range")
        srt = np.sort(tets, axis=1)
        bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
        if bad.size:
            raise MeshError(f"tets with repeated vertices: {bad.tolist()}")

    edge_index: dict[tuple[int, int], int] = {}
    tet_edges = np.empty((len(tets), 6), dtype=np.int64)
    for t, tet in enumerate(tets.tolist()):
        for k, (a, b) in enumerate(TET_EDGE_PAIRS):
            u, v = tet[a], tet[b]
            key = (u, v) if u < v else (v, u)
            eid = edge_index.get(key)
            if eid is None:
                eid = edge_index[key] = len(edge_index)
            tet_edges[t, k] = eid
    edges = np.array(list(edge_index), dtype=np.int64).reshape(-1, 2)
    vertices.setflags(write=False)
    tets.setflags(write=False)
    edges.setflags(write=False)
    tet_edges.setflags(write=False)
    return SupersetMesh(vertices, tets, edges, tet_edges, edge_index,
                        dict(refinement or {}))


def from_arrays(vertices, tets) -> SupersetMesh:
    return _build(np.asarray(vertices, dtype=np.float64), np.asarray(tets))


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d) / 6.0


def tet_volume(mesh: SupersetMesh, t: int) -> float:
    p = mesh.vertices[mesh.tets[t]]
    return abs(float(np.linalg.det(p[1:] - p[0]))) / 6.0


def tet_volumes(mesh: SupersetMesh) -> np.ndarray:
    return np.abs(signed_volumes(mesh.vertices, mesh.tets))


# --- TetGen-style .node / .ele ---------------------------------------------

def _data_lines(path: Path):
    with open(path) as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield no, line.split()


def _read_node(path: Path) -> tuple[np.ndarray, int]:
    lines = _data_lines(path)
    try:
        no, head = next(lines)
    except StopIteration:
        raise MeshParseError(path, 1, "empty node file") from None
    try:
        count = int(head[0])
        dim = int(head[1]) if len(head) > 1 else 3
    except ValueError:
        raise MeshParseError(path, no, "malformed header") from None
    if count < 0 or dim != 3:
        raise MeshParseError(path, no, "malformed header: expected '<count> 3 ...'")
    pts = np.empty((count, 3))
    base = None
    for k in range(count):
        try:
            no, tok = next(lines)
        except StopIteration:
            raise MeshParseError(path, no + 1, f"expected {count} vertices, got {k}") from None
        if len(tok) < 4:
            raise MeshParseError(path, no, "expected '<index> x y z'")
        try:
            idx = int(tok[0])
            xyz = [float(x) for x in tok[1:4]]
        except ValueError:
            raise MeshParseError(path, no, "malformed vertex line") from None
        if base is None:
            base = idx
        if idx - base != k:
            raise MeshParseError(path, no, f"vertex index {idx} out of sequence")
        if not all(math.isfinite(x) for x in xyz):
            raise MeshParseError(path, no, "non-finite coordinate")
        pts[k] = xyz
    return pts, (0 if base is None else base)


def _read_ele(path: Path, n_vertices: int, base: int) -> np.ndarray:
    lines = _data_lines(path)
    try:
        no, head = next(lines)
        count = int(head[0])
        per = int(head[1]) if len(head) > 1 else 4
    except StopIteration:
        raise MeshParseError(path, 1, "empty ele file") from None
    except ValueError:
        raise MeshParseError(path, no, "malformed header") from None
    if count < 0 or per != 4:
        raise MeshParseError(path, no, "malformed header: expected '<count> 4 ...'")
    tets = np.empty((count, 4), dtype=np.int64)
    for k in range(count):
        try:
            no, tok = next(lines)
        except StopIteration:
            raise MeshParseError(path, no + 1, f"expected {count} tets, got {k}") from None
        if len(tok) < 5:
            raise MeshParseError(path, no, "expected '<index> a b c d'")
        try:
            ids = [int(x) - base for x in tok[1:5]]
        except ValueError:
            raise MeshParseError(path, no, "malformed tet line") from None
        for i in ids:
            if not 0 <= i < n_vertices:
                raise MeshParseError(path, no, f"vertex index {i + base} out of range")
        if len(set(ids)) != 4:
            raise MeshParseError(path, no, "repeated vertex in tet")
        tets[k] = ids
    return tets


def load_mesh(node_path, ele_path) -> SupersetMesh:
    """Read a .node/.ele pair; the index base is taken from the first node index."""
    node_path, ele_path = Path(node_path), Path(ele_path)
    pts, base = _read_node(node_path)
    tets = _read_ele(ele_path, len(pts), base)
    return _build(pts, tets)


def write_mesh(mesh: SupersetMesh, prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    node = prefix.with_name(prefix.name + ".node")
    ele = prefix.with_name(prefix.name + ".ele")
    with open(node, "w") as fh:
        fh.write(f"{mesh.n_vertices} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.vertices.tolist()):
            fh.write(f"{i} {x!r} {y!r} {z!r}\n")
    with open(ele, "w") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for i, tet in enumerate(mesh.tets.tolist()):
            fh.write(f"{i} {tet[0]} {tet[1]} {tet[2]} {tet[3]}\n")
    return node, ele


# --- generators -------------------------------------------------------------

# Kuhn split: each tet walks 000 -> 111 along one permutation of the axes.
_KUHN_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def generate_block_mesh(nx: int, ny: int, nz: int) -> SupersetMesh:
    """Unit-spaced box of nx*ny*nz cubes, six positively oriented tets per cube."""
    for name, val in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(val) != val or val < 1:
            raise MeshError(f"{name} must be a positive integer, got {val!r}")
    nx, ny, nz = int(nx), int(ny), int(nz)
    gx, gy, gz = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1),
                             indexing="ij")
    # vertex id = i + (nx+1) * (j + (ny+1) * k)
    verts = np.stack([gx.transpose(2, 1, 0).ravel(), gy.transpose(2, 1, 0).ravel(),
                      gz.transpose(2, 1, 0).ravel()], axis=1).astype(np.float64)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    tets = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for perm in _KUHN_PERMS:
                    cur = [i, j, k]
                    path = [vid(*cur)]
                    for ax in perm:
                        cur[ax] += 1
                        path.append(vid(*cur))
                    tets.append(path)
    tets = np.array(tets, dtype=np.int64)
    neg = signed_volumes(verts, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return _build(verts, tets)


def _subdivide(v: list[int], m: dict[tuple[int, int], int]) -> list[list[int]]:
    a, b, c, d = v
    m01, m02, m03 = m[0, 1], m[0, 2], m[0, 3]
    m12, m13, m23 = m[1, 2], m[1, 3], m[2, 3]
    return [
        [a, m01, m02, m03],
        [m01, b, m12, m13],
        [m02, m12, c, m23],
        [m03, m13, m23, d],
        # inner octahedron cut along the m02-m13 diagonal
        [m01, m02, m03, m13],
        [m01, m02, m12, m13],
        [m02, m03, m13, m23],
        [m02, m12, m13, m23],
    ]


def build_refinement(mesh: SupersetMesh, refinable: Iterable[int]) -> SupersetMesh:
    """Append 8 midpoint-subdivision children for every tet in ``refinable``.

    Midpoints are shared between parents through the canonical edge map, so
    neighbouring refined parents produce conforming children.
    """
    ids = sorted({int(t) for t in refinable})
    for t in ids:
        if not 0 <= t < mesh.n_tets:
            raise MeshError(f"tet id {t} out of range")
        if t in mesh.refinement:
            raise MeshError(f"tet {t} is already refined")
    verts = [mesh.vertices]
    midpoint: dict[tuple[int, int], int] = {}
    n = mesh.n_vertices
    new_pts = []
    new_tets = []
    table = dict(mesh.refinement)
    next_tet = mesh.n_tets
    for t in ids:
        tet = mesh.tets[t].tolist()
        local = {}
        for a, b in TET_EDGE_PAIRS:
            u, v = tet[a], tet[b]
            key = (u, v) if u < v else (v, u)
            mid = midpoint.get(key)
            if mid is None:
                mid = midpoint[key] = n + len(new_pts)
                new_pts.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
            local[a, b] = mid
        kids = _subdivide(tet, local)
        new_tets.extend(kids)
        table[t] = tuple(range(next_tet, next_tet + 8))
        next_tet += 8
    if new_pts:
        verts.append(np.array(new_pts))
    all_verts = np.concatenate(verts)
    all_tets = np.concatenate([mesh.tets, np.array(new_tets, dtype=np.int64).reshape(-1, 4)])
    start = mesh.n_tets
    if len(new_tets):
        block = all_tets[start:].copy()
        neg = signed_volumes(all_verts, block) < 0
        block[neg, 2], block[neg, 3] = block[neg, 3].copy(), block[neg, 2].copy()
        all_tets[start:] = block
    return _build(all_verts, all_tets, table)


# --- incidence queries ------------------------------------------------------

def edge_tets(mesh: SupersetMesh) -> list[list[int]]:
    """Candidate tets incident to each edge, in increasing tet id order."""
    out: list[list[int]] = [[] for _ in range(mesh.n_edges)]
    for t, row in enumerate(mesh.tet_edges.tolist()):
        for e in row:
            out[e].append(t)
    return out


def edge_valence(mesh: SupersetMesh) -> np.ndarray:
    return np.bincount(mesh.tet_edges.ravel(), minlength=mesh.n_edges)


def max_edge_valence(mesh: SupersetMesh) -> int:
    return int(edge_valence(mesh).max(initial=0))


def max_edge_rescan(mesh: SupersetMesh) -> int:
    """Largest number of incident-tet visits one edited tet can cause when its
    six edges are recomputed by rescanning (sum of its edges' valences)."""
    if mesh.n_tets == 0:
        return 0
    val = edge_valence(mesh)
    return int(val[mesh.tet_edges].sum(axis=1).max())


def bounding_box(mesh: SupersetMesh) -> tuple[np.ndarray, np.ndarray]:
    return mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)


def degenerate_tets(mesh: SupersetMesh, rel_tol: float = 1e-14) -> list[int]:
    lo, hi = bounding_box(mesh)
    scale = float(np.max(hi - lo)) ** 3 if mesh.n_vertices else 0.0
    vols = tet_volumes(mesh)
    return np.flatnonzero(vols <= rel_tol * scale).tolist()

"""Symmetric dynamic sparse store and helpers on materialized CSR matrices."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DynamicSparseMatrix:
    """Symmetric n x n matrix with a mutable off-diagonal pattern.

    Off-diagonals live in one dict per row so a pair can be inserted,
    removed or accumulated in O(1); both (u, v) and (v, u) are always kept.
    The diagonal is a plain list of floats.
    """

    def __init__(self, n: int):
        self.n = n
        self.rows: list[dict[int, float]] = [{} for _ in range(n)]
        self.diag: list[float] = [0.0] * n

    def has(self, u: int, v: int) -> bool:
        return v in self.rows[u]

    def get(self, u: int, v: int) -> float:
        if u == v:
            return self.diag[u]
        return self.rows[u].get(v, 0.0)

    def insert(self, u: int, v: int, value: float) -> None:
        self.rows[u][v] = value
        self.rows[v][u] = value

    def remove(self, u: int, v: int) -> None:
        del self.rows[u][v]
        del self.rows[v][u]

    def accumulate(self, u: int, v: int, value: float) -> None:
        row = self.rows[u]
        row[v] = row.get(v, 0.0) + value
        self.rows[v][u] = row[v]

    def degree(self, u: int) -> int:
        return len(self.rows[u])

    @property
    def n_offdiag(self) -> int:
        return sum(len(r) for r in self.rows)

    def to_csr(self, shift: float = 0.0) -> sp.csr_matrix:
        """Materialize with sorted column indices; every diagonal is stored."""
        n = self.n
        rows = list(range(n))
        cols = list(range(n))
        vals = [d + shift for d in self.diag]
        for u, row in enumerate(self.rows):
            if row:
                rows.extend([u] * len(row))
                cols.extend(row.keys())
                vals.extend(row.values())
        return coo_to_csr(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                          np.array(vals, dtype=np.float64), n)

    def to_dense(self, shift: float = 0.0) -> np.ndarray:
        return self.to_csr(shift).toarray()


def coo_to_csr(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n: int) -> sp.csr_matrix:
    """Canonical CSR (sorted columns) from unique (row, col) triplets."""
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sort_indices()
    return m


def compare_csr(a: sp.csr_matrix, b: sp.csr_matrix, tol: float = 0.0) -> tuple[int, float]:
    """(mismatch count, max abs difference) between two canonical CSR matrices.

    A mismatch is an entry stored in only one of the two, or a shared entry
    whose values differ by more than ``tol``.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices):
        if a.nnz == 0:
            return 0, 0.0
        diff = np.abs(a.data - b.data)
        return int(np.count_nonzero(diff > tol)), float(diff.max())
    ka = a.tocoo()
    kb = b.tocoo()
    da = dict(zip(zip(ka.row.tolist(), ka.col.tolist()), ka.data.tolist()))
    db = dict(zip(zip(kb.row.tolist(), kb.col.tolist()), kb.data.tolist()))
    mism = len(da.keys() ^ db.keys())
    worst = 0.0
    for key in da.keys() & db.keys():
        d = abs(da[key] - db[key])
        worst = max(worst, d)
        if d > tol:
            mism += 1
    return mism, worst


def write_matrix_market(matrix: sp.spmatrix, path) -> None:
    """Coordinate real general format, entries sorted by (row, col), 1-based."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(Path(path), "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order].tolist(), coo.col[order].tolist(),
                           coo.data[order].tolist()):
            fh.write(f"{r + 1} {c + 1} {v!r}\n")

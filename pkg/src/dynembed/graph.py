"""Attributed-network snapshots, deltas, attribute similarity and Laplacians.

All matrices are ``scipy.sparse`` CSR.  Snapshots and Laplacian pairs are
frozen: their sparse buffers are marked read-only after construction, so a
value can be shared freely between threads and pipeline steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

SYMMETRY_TOL = 1e-12
# Cancellation residue below this magnitude is treated as an exact zero
# when a delta removes an edge or an attribute value.
ZERO_TOL = 1e-12


def _canonical(m, shape=None, copy: bool = True) -> sp.csr_matrix:
    """CSR float64 with sorted, unique indices and no stored zeros.

    ``copy=False`` is only for freshly computed matrices nobody else holds.
    """
    m = sp.csr_matrix(m, shape=shape, dtype=np.float64, copy=copy)
    if not m.has_canonical_format:
        m.sum_duplicates()
    if m.nnz and not np.all(m.data):
        m.eliminate_zeros()
    return m


def _freeze(m: sp.csr_matrix) -> sp.csr_matrix:
    for arr in (m.data, m.indices, m.indptr):
        arr.flags.writeable = False
    return m


def _asymmetry(m: sp.csr_matrix) -> float:
    diff = m - m.T
    return float(abs(diff).max()) if diff.nnz else 0.0


def _check_finite(m: sp.csr_matrix, what: str) -> None:
    if not np.all(np.isfinite(m.data)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Attributed network at one time step.

    ``adjacency`` is n x n, symmetric, non-negative with an empty diagonal;
    ``attributes`` is n x d and non-negative (row i describes node i).
    """

    adjacency: sp.csr_matrix
    attributes: sp.csr_matrix

    def __post_init__(self) -> None:
        a = _canonical(self.adjacency)
        x = _canonical(self.attributes)
        n = a.shape[0]
        if n < 1 or a.shape != (n, n):
            raise ValueError(f"adjacency must be square with n >= 1, got {a.shape}")
        if x.shape[0] != n:
            raise ValueError(f"attributes have {x.shape[0]} rows, expected {n}")
        _check_finite(a, "adjacency")
        _check_finite(x, "attributes")
        if a.nnz and a.data.min() < 0:
            raise ValueError("adjacency weights must be non-negative")
        if x.nnz and x.data.min() < 0:
            raise ValueError("attribute values must be non-negative")
        if np.any(a.diagonal() != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if _asymmetry(a) != 0.0:
            raise ValueError("adjacency must be exactly symmetric")
        object.__setattr__(self, "adjacency", _freeze(a))
        object.__setattr__(self, "attributes", _freeze(x))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.attributes.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return _same_csr(self.adjacency, other.adjacency) and _same_csr(
            self.attributes, other.attributes
        )

    __hash__ = None


def _same_csr(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    return (
        a.shape == b.shape
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


@dataclass(frozen=True, eq=False)
class Delta:
    """Change between two consecutive snapshots.

    ``dA`` is symmetric with a zero diagonal; both parts may hold negative
    values (removals).
    """

    dA: sp.csr_matrix
    dX: sp.csr_matrix

    def __post_init__(self) -> None:
        da = _canonical(self.dA)
        dx = _canonical(self.dX)
        if da.shape[0] != da.shape[1]:
            raise ValueError(f"dA must be square, got {da.shape}")
        if dx.shape[0] != da.shape[0]:
            raise ValueError("dA and dX disagree on node count")
        _check_finite(da, "dA")
        _check_finite(dx, "dX")
        if np.any(da.diagonal() != 0):
            raise ValueError("dA must have a zero diagonal")
        if _asymmetry(da) > SYMMETRY_TOL:
            raise ValueError("dA must be symmetric")
        object.__setattr__(self, "dA", _freeze(da))
        object.__setattr__(self, "dX", _freeze(dx))

    @classmethod
    def zeros(cls, n: int, d: int) -> "Delta":
        return cls(sp.csr_matrix((n, n)), sp.csr_matrix((n, d)))

    @property
    def is_empty(self) -> bool:
        return self.dA.nnz == 0 and self.dX.nnz == 0

    def touched_rows(self) -> np.ndarray:
        """Nodes whose attribute vector changes."""
        return np.flatnonzero(np.diff(self.dX.indptr))


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Cosine-similarity graph over node attribute rows."""

    w: sp.csr_matrix

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", _freeze(_canonical(self.w)))

    @classmethod
    def _wrap(cls, w: sp.csr_matrix) -> "SimilarityGraph":
        # internal: w is fresh and canonical already
        obj = object.__new__(cls)
        object.__setattr__(obj, "w", _freeze(w))
        return obj


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    """Degree matrix and Laplacian ``lap = deg - base`` of a weighted graph."""

    deg: sp.csr_matrix
    lap: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.lap.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.deg.diagonal()

    @property
    def base(self) -> sp.csr_matrix:
        """The weight matrix the pair was assembled from."""
        return _canonical(self.deg - self.lap)


def assemble_laplacian(base: sp.csr_matrix, degrees: np.ndarray) -> LaplacianPair:
    """Build a pair from a base matrix and an explicitly supplied degree vector.

    Used when the degree vector was maintained incrementally (and must be
    reproduced bit-for-bit, e.g. when restoring a checkpoint).
    """
    n = base.shape[0]
    deg = _canonical(sp.diags(np.asarray(degrees, dtype=np.float64)), shape=(n, n))
    lap = _canonical(deg - base)
    return LaplacianPair(_freeze(deg), _freeze(lap))


def build_laplacian(base) -> LaplacianPair:
    base = _canonical(base)
    n = base.shape[0]
    if base.shape != (n, n):
        raise ValueError(f"base matrix must be square, got {base.shape}")
    asym = _asymmetry(base)
    if asym > SYMMETRY_TOL:
        raise ValueError(f"base matrix is not symmetric (max |B - B'| = {asym:.3g})")
    degrees = np.asarray(base.sum(axis=1)).ravel()
    return assemble_laplacian(base, degrees)


def delta_laplacian(old: LaplacianPair, new: LaplacianPair):
    """Return ``(dDeg, dLap)`` holding only the entries that changed."""
    if old.lap.shape != new.lap.shape:
        raise ValueError(f"shape mismatch: {old.lap.shape} vs {new.lap.shape}")
    return _canonical(new.deg - old.deg), _canonical(new.lap - old.lap)


def laplacian_increment(d_base) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(dDeg, dLap)`` implied by a symmetric change of the base matrix.

    Equivalent to ``delta_laplacian`` on the old and new pairs, but costs
    O(nnz(d_base)) instead of touching the whole Laplacian.
    """
    d_base = _canonical(d_base, copy=False) if sp.issparse(d_base) else _canonical(d_base)
    n = d_base.shape[0]
    d_deg = _canonical(sp.diags(np.asarray(d_base.sum(axis=1)).ravel()), shape=(n, n), copy=False)
    return d_deg, _canonical(d_deg - d_base, copy=False)


def advance_laplacian(old: LaplacianPair, d_base) -> tuple[LaplacianPair, sp.csr_matrix, sp.csr_matrix]:
    """Apply a base-matrix change to a pair; returns ``(new, dDeg, dLap)``."""
    d_deg, d_lap = laplacian_increment(d_base)
    deg = _freeze(_canonical(old.deg + d_deg, copy=False))
    lap = _freeze(_canonical(old.lap + d_lap, copy=False))
    return LaplacianPair(deg, lap), d_deg, d_lap


class InvalidDeltaError(ValueError):
    """A delta does not fit its snapshot (shape, or a weight would go negative)."""


def apply_delta(snapshot: Snapshot, delta: Delta) -> Snapshot:
    if delta.dA.shape != snapshot.adjacency.shape:
        raise InvalidDeltaError(
            f"dA has shape {delta.dA.shape}, snapshot adjacency is {snapshot.adjacency.shape}"
        )
    if delta.dX.shape != snapshot.attributes.shape:
        raise InvalidDeltaError(
            f"dX has shape {delta.dX.shape}, snapshot attributes are {snapshot.attributes.shape}"
        )
    if delta.is_empty:
        return snapshot
    a = _settle(snapshot.adjacency + delta.dA, "adjacency")
    x = _settle(snapshot.attributes + delta.dX, "attribute")
    return Snapshot(a, x)


def _settle(m, what: str) -> sp.csr_matrix:
    m = _canonical(m, copy=False)
    if m.nnz and m.data.min() < 0:
        neg = m.data < -ZERO_TOL
        if np.any(neg):
            pos = int(np.flatnonzero(neg)[0])
            row = int(np.searchsorted(m.indptr, pos, side="right") - 1)
            col = int(m.indices[pos])
            raise InvalidDeltaError(
                f"delta makes {what} entry ({row}, {col}) negative: {m.data[pos]:.6g}"
            )
        m.data[m.data < 0] = 0.0
        m.eliminate_zeros()
    return m


# -- attribute similarity ----------------------------------------------------

def _row_normalized(x: sp.csr_matrix) -> sp.csr_matrix:
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    inv = np.zeros_like(norms)
    np.divide(1.0, norms, out=inv, where=norms > 0)
    return sp.csr_matrix(sp.diags(inv) @ x)


def _dense_cosine(xn: sp.csr_matrix, rows=None) -> np.ndarray:
    left = xn if rows is None else xn[rows]
    if xn.nnz > 0.1 * xn.shape[0] * max(xn.shape[1], 1):
        g = left.toarray() @ xn.toarray().T
    else:
        g = (left @ xn.T).toarray()
    return np.clip(g, 0.0, 1.0)


def _top_s(w: np.ndarray, s: int) -> sp.csr_matrix:
    n = w.shape[0]
    if s >= n - 1:
        return sp.csr_matrix(w)
    keep = np.argpartition(-w, s - 1, axis=1)[:, :s]
    rows = np.repeat(np.arange(n), s)
    vals = w[rows, keep.ravel()]
    m = sp.csr_matrix((vals, (rows, keep.ravel())), shape=(n, n))
    return m.maximum(m.T)


def build_similarity(snapshot: Snapshot, sparsify_top: int | None = None) -> SimilarityGraph:
    """Cosine similarity of attribute rows; zero rows are similar to nothing.

    With ``sparsify_top = s`` each row keeps its s largest entries and the
    result is symmetrized by elementwise max.
    """
    x = snapshot.attributes
    if x.shape[1] == 0:
        raise ValueError("no attributes: cannot build a similarity graph with d = 0")
    if sparsify_top is not None and sparsify_top < 1:
        raise ValueError("sparsify_top must be a positive integer")
    w = np.triu(_dense_cosine(_row_normalized(x)), 1)
    w = w + w.T
    if sparsify_top is not None:
        return SimilarityGraph._wrap(_canonical(_top_s(w, sparsify_top), copy=False))
    return SimilarityGraph._wrap(_canonical(sp.csr_matrix(w), copy=False))


def similarity_delta(
    old: SimilarityGraph, new_snapshot: Snapshot, rows, sparsify_top: int | None = None
) -> tuple[SimilarityGraph, sp.csr_matrix]:
    """Recompute similarities for the nodes in ``rows``; return ``(W', dW)``.

    Only the rows and columns of touched nodes can change, so dW has at most
    ``2 * len(rows) * n`` entries.  Top-s sparsification couples every row to
    every other, so in that mode the graph is rebuilt and differenced.
    """
    rows = np.unique(np.asarray(rows, dtype=np.int64))
    n = new_snapshot.n
    if rows.size == 0:
        return old, sp.csr_matrix((n, n))
    if sparsify_top is not None:
        new = build_similarity(new_snapshot, sparsify_top)
        return new, _canonical(new.w - old.w)

    fresh = _dense_cosine(_row_normalized(new_snapshot.attributes), rows)
    fresh[np.arange(rows.size), rows] = 0.0
    stale = old.w[rows].toarray()
    change = fresh - stale

    r_idx, c_idx = np.nonzero(change)
    r_nodes = rows[r_idx]
    # pairs with both ends touched are taken once, from the lower node id,
    # and mirrored, so dW is exactly symmetric
    keep = ~np.isin(c_idx, rows) | (r_nodes < c_idx)
    r_nodes, c_idx = r_nodes[keep], c_idx[keep]
    vals = change[r_idx[keep], c_idx]
    i = np.concatenate([r_nodes, c_idx])
    j = np.concatenate([c_idx, r_nodes])
    dw = _canonical(sp.coo_matrix((np.concatenate([vals, vals]), (i, j)), shape=(n, n)))
    return SimilarityGraph._wrap(_canonical(old.w + dw, copy=False)), dw

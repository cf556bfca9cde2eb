"""Smallest nontrivial eigen-pairs of ``L a = lambda D a``.

The generalized problem is reduced to the symmetric one
``D^-1/2 L D^-1/2 v = lambda v`` with ``a = D^-1/2 v``.  Its known null
vector ``D^1/2 1`` is deflated before the iterative solve, so the returned
pairs start at lambda_2.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from .graph import LaplacianPair

log = logging.getLogger(__name__)

DEGREE_FLOOR = 1e-8
RITZ_TOL = 1e-10
# Eigenvalue of the deflated direction after the Hotelling shift; the
# normalized Laplacian spectrum lies in [0, 2].
_DEFLATION_SHIFT = 3.0
_SHIFT_INVERT_SIGMA = -1e-2


class DegenerateBasisError(ValueError):
    pass


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Top-k nontrivial generalized eigen-pairs of one branch.

    ``vectors[:, j]`` pairs with ``values[j]``; values ascend.  ``degrees``
    is the diagonal of D actually used (floored when isolated nodes exist),
    and the vectors are orthonormal in the inner product it defines.
    """

    values: np.ndarray
    vectors: np.ndarray
    lap_pair: LaplacianPair
    degrees: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        # one memory layout, so BLAS rounding is the same for fresh and restored states
        for name in ("values", "vectors", "degrees"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def pairs(self) -> list[EigenPair]:
        return [EigenPair(float(v), self.vectors[:, j]) for j, v in enumerate(self.values)]


def effective_degrees(lap_pair: LaplacianPair, floor: bool = False) -> np.ndarray:
    """Diagonal of D, optionally floored at ``DEGREE_FLOOR``."""
    deg = np.asarray(lap_pair.degrees, dtype=np.float64)
    low = deg <= 0
    if np.any(low):
        if not floor:
            raise ValueError(
                f"{int(low.sum())} node(s) have zero degree (first: {int(np.flatnonzero(low)[0])}); "
                "D is singular; call with floor_degrees=True to apply degree flooring"
            )
        deg = np.where(low, DEGREE_FLOOR, deg)
    return deg


def canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the entry of largest magnitude is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def residuals(lap: sp.spmatrix, degrees: np.ndarray, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Column norms of ``L a - lambda D a``."""
    r = lap @ vectors - degrees[:, None] * vectors * values[None, :]
    return np.linalg.norm(r, axis=0)


def _normalized(lap_pair: LaplacianPair, deg: np.ndarray) -> sp.csr_matrix:
    s = sp.diags(1.0 / np.sqrt(deg))
    m = sp.csr_matrix(s @ lap_pair.lap @ s)
    # exact symmetry; the products can differ in the last bit
    return sp.csr_matrix((m + m.T) * 0.5)


def _lanczos(norm_lap, v0, k, rng, tol, maxiter):
    n = norm_lap.shape[0]

    def matvec(x):
        x = np.asarray(x).ravel()
        return norm_lap @ x + _DEFLATION_SHIFT * v0 * (v0 @ x)

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    ncv = min(n, max(2 * k + 1, 20))
    start = rng.standard_normal(n)
    return eigsh(op, k=k, which="SA", tol=tol, v0=start, ncv=ncv, maxiter=maxiter)


def _shift_invert(norm_lap, v0, k, rng, tol, maxiter):
    n = norm_lap.shape[0]
    sigma = _SHIFT_INVERT_SIGMA
    factor = sla.cho_factor(norm_lap.toarray() - sigma * np.eye(n))

    def matvec(x):
        x = np.asarray(x).ravel()
        x = x - v0 * (v0 @ x)
        y = sla.cho_solve(factor, x)
        return y - v0 * (v0 @ y)

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    ncv = min(n, max(2 * k + 1, 20))
    theta, v = eigsh(op, k=k, which="LA", tol=tol, v0=rng.standard_normal(n), ncv=ncv, maxiter=maxiter)
    return sigma + 1.0 / theta, v


def _dense(norm_lap, v0, k):
    m = norm_lap.toarray() + _DEFLATION_SHIFT * np.outer(v0, v0)
    return sla.eigh(m, subset_by_index=[0, k - 1])


def solve_topk(
    lap_pair: LaplacianPair,
    k: int,
    seed: int = 0,
    *,
    floor_degrees: bool = False,
    method: str = "auto",
    tol: float = RITZ_TOL,
) -> SpectralState:
    """Compute the k smallest nontrivial pairs, D-orthonormal, signs canonical.

    ``method`` is ``"lanczos"`` (implicitly restarted Lanczos on the deflated
    normalized operator), ``"shift-invert"`` (Lanczos on its dense Cholesky
    shift-inverse), ``"dense"``, or ``"auto"``, which uses Lanczos unless the
    problem is too small for an ARPACK subspace.
    """
    n = lap_pair.n
    if k < 1:
        raise ValueError("k must be positive")
    if k + 1 > n:
        raise ValueError(f"k + 1 = {k + 1} exceeds the number of nodes n = {n}")
    deg = effective_degrees(lap_pair, floor_degrees)
    if floor_degrees and np.any(lap_pair.degrees <= 0):
        warnings.warn(
            f"flooring {int(np.sum(lap_pair.degrees <= 0))} zero degree(s) at {DEGREE_FLOOR:g}",
            RuntimeWarning,
            stacklevel=2,
        )

    norm_lap = _normalized(lap_pair, deg)
    v0 = np.sqrt(deg)
    v0 /= np.linalg.norm(v0)
    rng = np.random.default_rng(seed)
    maxiter = 50 * k

    if method == "auto":
        method = "lanczos" if k < n - 2 else "dense"
    if method == "lanczos":
        values, v = _lanczos(norm_lap, v0, k, rng, tol, maxiter)
    elif method == "shift-invert":
        values, v = _shift_invert(norm_lap, v0, k, rng, tol, maxiter)
    elif method == "dense":
        values, v = _dense(norm_lap, v0, k)
    else:
        raise ValueError(f"unknown method {method!r}")

    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = v[:, order] / np.sqrt(deg)[:, None]
    vectors = _gram_schmidt(vectors, deg, deflate_constant=True)
    vectors = canonical_signs(vectors)

    res = residuals(lap_pair.lap, deg, values, vectors)
    scale = max(float(np.max(np.abs(values))), 1.0)
    diagnostics = {
        "method": method,
        "near_zero_eigenvalues": int(np.sum(values < 1e-9 * scale)),
        "max_residual": float(res.max()),
    }
    if diagnostics["near_zero_eigenvalues"]:
        log.info("graph has %d extra (near-)zero eigenvalue(s): disconnected components",
                 diagnostics["near_zero_eigenvalues"])
    return SpectralState(values, vectors, lap_pair, deg, diagnostics)


def embedding_matrix(state: SpectralState) -> np.ndarray:
    return np.array(state.vectors, copy=True)


def _gram_schmidt(x: np.ndarray, deg: np.ndarray, deflate_constant: bool) -> np.ndarray:
    # classical Gram-Schmidt, two passes per column ("twice is enough")
    n, k = x.shape
    off = 1 if deflate_constant else 0
    q = np.empty((n, k + off))
    if deflate_constant:
        q[:, 0] = 1.0 / np.sqrt(deg.sum())
    for j in range(k):
        v = x[:, j].copy()
        basis = q[:, : j + off]
        for _ in range(2):
            v -= basis @ (basis.T @ (deg * v))
        norm = np.sqrt(v @ (deg * v))
        if not norm >= 1e-12:
            raise DegenerateBasisError(f"degenerate basis: column {j} has D-norm {norm:.3g} after projection")
        q[:, j + off] = v / norm
    return q[:, off:]


def reorthonormalize(state: SpectralState, degrees: np.ndarray | None = None) -> SpectralState:
    """Gram-Schmidt the vectors in the D-inner product, keeping their order.

    The constant vector (the trivial eigenvector) is projected out first.
    ``degrees`` overrides the D of ``state``.
    """
    deg = state.degrees if degrees is None else np.asarray(degrees, dtype=np.float64)
    vectors = _gram_schmidt(state.vectors, deg, deflate_constant=True)
    return SpectralState(state.values.copy(), vectors, state.lap_pair, deg, dict(state.diagnostics))

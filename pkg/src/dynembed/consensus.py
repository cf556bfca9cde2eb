"""Correlation-maximizing fusion of the structure and attribute embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .spectral import canonical_signs

RIDGE_REL = 1e-8


@dataclass(frozen=True, eq=False)
class ConsensusProjection:
    """Stacked projection ``[p_A; p_X]`` (columns by descending gamma)."""

    p: np.ndarray
    gammas: np.ndarray
    ridge: float

    @property
    def l(self) -> int:
        return self.p.shape[1]


def fusion_matrices(ya: np.ndarray, yx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left matrix ``Z'Z`` for ``Z = [ya, yx]`` and the block-diagonal right matrix."""
    z = np.hstack([ya, yx])
    left = z.T @ z
    left = (left + left.T) * 0.5
    ka = ya.shape[1]
    right = np.zeros_like(left)
    right[:ka, :ka] = left[:ka, :ka]
    right[ka:, ka:] = left[ka:, ka:]
    return left, right


def default_ridge(right: np.ndarray) -> float:
    return RIDGE_REL * float(np.trace(right)) / right.shape[0]


def fuse(ya: np.ndarray, yx: np.ndarray, l: int, ridge: float | None = None):
    """Return ``(projection, embedding)`` with ``embedding = [ya, yx] @ projection.p``.

    The projection columns are the generalized eigenvectors of
    ``(left, right + ridge I)`` with the l largest eigenvalues, normalized so
    that ``p' (right + ridge I) p = I``.
    """
    ya = np.asarray(ya, dtype=np.float64)
    yx = np.asarray(yx, dtype=np.float64)
    if ya.ndim != 2 or yx.ndim != 2 or ya.shape[0] != yx.shape[0]:
        raise ValueError(f"embeddings must be n x k with equal n, got {ya.shape} and {yx.shape}")
    total = ya.shape[1] + yx.shape[1]
    if not 1 <= l <= total:
        raise ValueError(f"l = {l} must lie in [1, {total}] (twice the intermediate dimension)")
    left, right = fusion_matrices(ya, yx)
    if ridge is None:
        ridge = default_ridge(right)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    b = right + ridge * np.eye(total)
    ev = np.linalg.eigvalsh(b)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise ValueError(
            f"right-hand fusion matrix is numerically singular (min eigenvalue {ev[0]:.3g}); use ridge > 0"
        )
    try:
        gammas, vecs = sla.eigh(left, b, subset_by_index=[total - l, total - 1])
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "right-hand fusion matrix is numerically singular; use ridge > 0"
        ) from exc
    gammas, vecs = gammas[::-1], vecs[:, ::-1]
    p = canonical_signs(vecs)
    proj = ConsensusProjection(p, gammas, float(ridge))
    return proj, np.hstack([ya, yx]) @ p


def project(ya: np.ndarray, yx: np.ndarray, proj: ConsensusProjection) -> np.ndarray:
    return np.hstack([ya, yx]) @ proj.p


def objective(ya: np.ndarray, yx: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per column: the correlation objective (sum of the four quadratic forms)."""
    left, _ = fusion_matrices(ya, yx)
    return np.einsum("ij,ik,kj->j", p, left, p)


def constraint(ya: np.ndarray, yx: np.ndarray, p: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    _, right = fusion_matrices(ya, yx)
    b = right + ridge * np.eye(right.shape[0])
    return np.einsum("ij,ik,kj->j", p, b, p)

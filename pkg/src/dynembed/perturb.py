"""First-order perturbation update of generalized eigen-pairs.

Given a D-orthonormal top-k state of ``L a = lambda D a`` and sparse
changes ``(dL, dD)``, each pair moves by

    dlambda_i = a_i' dL a_i - lambda_i a_i' dD a_i
    da_i      = sum_p alpha_ip a_p

with ``alpha_ip = (a_p' dL a_i - lambda_i a_p' dD a_i) / (lambda_i - lambda_p)``
for p != i and ``alpha_ii = -1/2 a_i' dD a_i``.  The correction is confined
to the span of the k stored vectors; second-order terms are dropped.

All quadratic forms come from the two k x k matrices ``V' dL V`` and
``V' dD V``, which cost O(k nnz(dL) + k nnz(dD) + n k^2) to form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import LaplacianPair
from .spectral import DegenerateBasisError, SpectralState, _gram_schmidt, effective_degrees, residuals

GAP_TOL_REL = 1e-6


class RefreshRequired(RuntimeError):
    """The online update cannot be trusted; re-solve the branch offline."""


@dataclass(frozen=True)
class Weights:
    """``alpha[i, p]``: contribution of old eigenvector p to the change of vector i."""

    alpha: np.ndarray
    flagged: np.ndarray  # bool k x k, terms zeroed by the small-gap guard


@dataclass
class PerturbReport:
    delta_values: np.ndarray
    step_norms: np.ndarray
    residuals: np.ndarray
    gap_margins: np.ndarray
    flags: list[int] = field(default_factory=list)

    @classmethod
    def empty(cls, state: SpectralState) -> "PerturbReport":
        k = state.k
        return cls(np.zeros(k), np.zeros(k), residuals(state.lap_pair.lap, state.degrees,
                   state.values, state.vectors), _gap_margins(state.values))

    def to_dict(self) -> dict:
        return {
            "delta_values": self.delta_values.tolist(),
            "step_norms": self.step_norms.tolist(),
            "residuals": self.residuals.tolist(),
            "gap_margins": self.gap_margins.tolist(),
            "flags": list(self.flags),
        }


def _gap_margins(values: np.ndarray) -> np.ndarray:
    if values.size < 2:
        return np.full(values.size, np.inf)
    gaps = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(gaps, np.inf)
    return gaps.min(axis=1)


def _diag_vector(d_deg, n: int) -> np.ndarray:
    if sp.issparse(d_deg):
        if d_deg.shape != (n, n):
            raise ValueError(f"dDeg has shape {d_deg.shape}, expected {(n, n)}")
        return d_deg.diagonal()
    d_deg = np.asarray(d_deg, dtype=np.float64)
    if d_deg.shape != (n,):
        raise ValueError(f"dDeg has shape {d_deg.shape}, expected {(n,)}")
    return d_deg


def _check_lap(d_lap, n: int) -> None:
    if d_lap.shape != (n, n):
        raise ValueError(f"dLap has shape {d_lap.shape}, expected {(n, n)}")


def delta_eigenvalue(value: float, vector: np.ndarray, d_lap, d_deg, degrees: np.ndarray | None = None) -> float:
    """Eigenvalue change of one pair.

    Without ``degrees`` the pair is assumed D-normalized (denominator 1).
    With the old degree vector the general Rayleigh denominator ``a' D a``
    is used, which also covers unnormalized vectors.
    """
    vector = np.asarray(vector, dtype=np.float64)
    n = vector.shape[0]
    _check_lap(d_lap, n)
    dd = _diag_vector(d_deg, n)
    num = vector @ (d_lap @ vector) - value * (vector @ (dd * vector))
    if degrees is None:
        return float(num)
    return float(num / (vector @ (np.asarray(degrees) * vector)))


def _projections(state: SpectralState, d_lap, dd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = state.vectors
    pl = v.T @ (d_lap @ v)
    pd = v.T @ (dd[:, None] * v)
    return (pl + pl.T) * 0.5, (pd + pd.T) * 0.5


def default_gap_tol(values: np.ndarray) -> float:
    return GAP_TOL_REL * max(1.0, float(np.max(values)))


def eigen_weights(state: SpectralState, d_lap, d_deg, gap_tol: float | None = None) -> Weights:
    """The full k x k weight matrix for all pairs at once."""
    _check_lap(d_lap, state.n)
    dd = _diag_vector(d_deg, state.n)
    pl, pd = _projections(state, d_lap, dd)
    return _weights(state.values, pl, pd, default_gap_tol(state.values) if gap_tol is None else gap_tol)


def _weights(lam: np.ndarray, pl: np.ndarray, pd: np.ndarray, gap_tol: float) -> Weights:
    # row i, column p: a_p' dL a_i - lambda_i a_p' dD a_i
    num = pl.T - lam[:, None] * pd.T
    gap = lam[:, None] - lam[None, :]
    off = ~np.eye(lam.size, dtype=bool)
    small = off & (np.abs(gap) < gap_tol)
    # a zero coupling needs no division; only nonzero ones are approximations
    scale = np.abs(pl).max(initial=0.0) + np.abs(lam).max(initial=0.0) * np.abs(pd).max(initial=0.0)
    flagged = small & (np.abs(num) > 1e-12 * max(scale, 1e-300))
    safe = np.where(small | ~off, 1.0, gap)
    alpha = np.where(small | ~off, 0.0, num / safe)
    alpha[np.diag_indices_from(alpha)] = -0.5 * np.diag(pd)
    return Weights(alpha, flagged)


def delta_eigenvector(state: SpectralState, i: int, d_lap, d_deg, gap_tol: float | None = None):
    """Return ``(da_i, alpha_row)`` for pair index ``i`` (0-based)."""
    if not 0 <= i < state.k:
        raise IndexError(f"pair index {i} out of range for k = {state.k}")
    w = eigen_weights(state, d_lap, d_deg, gap_tol)
    row = w.alpha[i]
    return state.vectors @ row, row


def update_state(
    state: SpectralState,
    d_lap,
    d_deg,
    new_pair: LaplacianPair,
    gap_tol: float | None = None,
    *,
    floor_degrees: bool = False,
) -> tuple[SpectralState, PerturbReport]:
    """Advance every pair by one first-order step.

    The moved vectors are re-orthonormalized in the inner product of the new
    D and re-sorted by the moved eigenvalues.  Raises ``RefreshRequired`` if
    the basis degenerates or more than k/2 pairs hit the small-gap guard.
    """
    n, k = state.n, state.k
    _check_lap(d_lap, n)
    dd = _diag_vector(d_deg, n)
    if new_pair.n != n:
        raise ValueError("new Laplacian pair has a different node count")

    if getattr(d_lap, "nnz", 1) == 0 and not np.any(dd):
        same = SpectralState(state.values, state.vectors, new_pair, state.degrees, dict(state.diagnostics))
        return same, PerturbReport.empty(same)

    lam = state.values
    tol = default_gap_tol(lam) if gap_tol is None else gap_tol
    pl, pd = _projections(state, d_lap, dd)
    w = _weights(lam, pl, pd, tol)
    flags = [int(i) for i in np.flatnonzero(w.flagged.any(axis=1))]
    if len(flags) > k / 2:
        raise RefreshRequired(f"refresh required: {len(flags)} of {k} pairs hit the small-gap guard")

    d_values = np.diag(pl) - lam * np.diag(pd)
    step = state.vectors @ w.alpha.T
    values = lam + d_values
    moved = state.vectors + step

    new_deg = effective_degrees(new_pair, floor_degrees)
    try:
        vectors = _gram_schmidt(moved, new_deg, deflate_constant=True)
    except DegenerateBasisError as exc:
        raise RefreshRequired(f"refresh required: {exc}") from exc

    order = np.argsort(values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    res = residuals(new_pair.lap, new_deg, values, vectors)
    report = PerturbReport(
        delta_values=d_values[order],
        step_norms=np.linalg.norm(step, axis=0)[order],
        residuals=res,
        gap_margins=_gap_margins(lam)[order],
        flags=sorted(int(np.flatnonzero(order == f)[0]) for f in flags),
    )
    diagnostics = dict(state.diagnostics)
    diagnostics["max_residual"] = float(res.max())
    return SpectralState(values, vectors, new_pair, new_deg, diagnostics), report

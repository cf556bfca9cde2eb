"""Offline initialization, online stepping and refresh policy.

An :class:`EmbeddingRun` binds the current snapshot to both spectral
branches (structure and attributes) and the consensus projection.  Runs
are values: ``step_online`` returns a new run and never mutates its input.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from .consensus import ConsensusProjection, fuse
from .graph import (
    Delta,
    LaplacianPair,
    SimilarityGraph,
    Snapshot,
    advance_laplacian,
    apply_delta,
    assemble_laplacian,
    build_laplacian,
    build_similarity,
    similarity_delta,
)
from .perturb import PerturbReport, RefreshRequired, update_state
from .spectral import SpectralState, solve_topk

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_REFRESH_RESIDUAL = 1e-3


class StaleCheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Pipeline parameters.

    ``refresh_residual`` is relative: a branch is re-solved when its largest
    post-update residual exceeds ``refresh_residual * ||L||_F``.
    ``gap_tol`` and ``ridge`` default (``None``) to values derived from the
    data.
    """

    k: int = 10
    l: int = 10
    gap_tol: float | None = None
    ridge: float | None = None
    refresh_every: int | None = None
    refresh_residual: float = DEFAULT_REFRESH_RESIDUAL
    seed: int = 0
    sparsify_top: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 1 <= self.l <= 2 * self.k:
            raise ValueError(f"l must satisfy 1 <= l <= 2k = {2 * self.k}, got {self.l}")
        if self.refresh_every is not None and self.refresh_every < 1:
            raise ValueError("refresh_every must be a positive integer or None")
        if self.refresh_residual < 0:
            raise ValueError("refresh_residual must be non-negative")


@dataclass(frozen=True)
class DriftStats:
    """Per-step history, one entry per online step (refresh steps included)."""

    net_residual: tuple[float, ...] = ()
    attr_residual: tuple[float, ...] = ()
    net_flags: tuple[int, ...] = ()
    attr_flags: tuple[int, ...] = ()
    refreshes: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True, eq=False)
class EmbeddingRun:
    snapshot: Snapshot
    similarity: SimilarityGraph
    net: SpectralState
    attr: SpectralState
    projection: ConsensusProjection
    embedding: np.ndarray
    config: RunConfig
    step: int = 0
    since_refresh: int = 0
    stats: DriftStats = field(default_factory=DriftStats)
    reports: dict = field(default_factory=dict)  # last PerturbReport per branch

    @property
    def refreshed(self) -> bool:
        """Whether the most recent step was a full re-solve."""
        return bool(self.stats.refreshes) and self.stats.refreshes[-1][0] == self.step


def _solve_branch(pair: LaplacianPair, config: RunConfig) -> SpectralState:
    return solve_topk(pair, config.k, config.seed, floor_degrees=True)


def _fuse(net: SpectralState, attr: SpectralState, config: RunConfig):
    return fuse(net.vectors, attr.vectors, config.l, config.ridge)


def _offline(snapshot: Snapshot, config: RunConfig, similarity: SimilarityGraph | None = None,
             pairs: tuple[LaplacianPair, LaplacianPair] | None = None):
    if snapshot.d < 1:
        raise ValueError("no attributes: the attribute branch needs d >= 1")
    if config.k + 1 > snapshot.n:
        raise ValueError(f"k + 1 = {config.k + 1} exceeds the number of nodes n = {snapshot.n}")
    if similarity is None:
        similarity = build_similarity(snapshot, config.sparsify_top)
    if pairs is None:
        pairs = build_laplacian(snapshot.adjacency), build_laplacian(similarity.w)
    net = _solve_branch(pairs[0], config)
    attr = _solve_branch(pairs[1], config)
    projection, embedding = _fuse(net, attr, config)
    return similarity, net, attr, projection, embedding


def init_offline(snapshot: Snapshot, config: RunConfig) -> EmbeddingRun:
    similarity, net, attr, projection, embedding = _offline(snapshot, config)
    return EmbeddingRun(snapshot, similarity, net, attr, projection, embedding, config)


def _refresh_threshold(state: SpectralState, config: RunConfig) -> float:
    return config.refresh_residual * float(sparse_norm(state.lap_pair.lap))


def step_online(run: EmbeddingRun, delta: Delta, *, threads: int = 1) -> EmbeddingRun:
    """Advance the run by one delta with perturbation updates.

    Falls back to a full offline solve of the new snapshot (a refresh) when
    ``refresh_every`` steps have passed since the last one, when a branch
    residual exceeds the threshold, or when the update itself gives up.
    """
    config = run.config
    snapshot = apply_delta(run.snapshot, delta)
    step = run.step + 1
    reason = None
    if config.refresh_every is not None and run.since_refresh + 1 >= config.refresh_every:
        reason = "refresh_every"

    net_pair, d_deg_a, d_lap_a = advance_laplacian(run.net.lap_pair, delta.dA)
    similarity, d_w = similarity_delta(run.similarity, snapshot, delta.touched_rows(), config.sparsify_top)
    attr_pair, d_deg_x, d_lap_x = advance_laplacian(run.attr.lap_pair, d_w)

    reports: dict[str, PerturbReport] = {}
    net = attr = None
    if reason is None:
        jobs = [
            (run.net, d_lap_a, d_deg_a, net_pair),
            (run.attr, d_lap_x, d_deg_x, attr_pair),
        ]

        def work(job):
            state, d_lap, d_deg, pair = job
            return update_state(state, d_lap, d_deg, pair, config.gap_tol, floor_degrees=True)

        try:
            if threads > 1:
                with ThreadPoolExecutor(max_workers=2) as pool:
                    results = list(pool.map(work, jobs))
            else:
                results = [work(job) for job in jobs]
        except RefreshRequired as exc:
            reason = str(exc)
        else:
            (net, reports["net"]), (attr, reports["attr"]) = results
            for name, state in (("net", net), ("attr", attr)):
                limit = _refresh_threshold(state, config)
                worst = float(reports[name].residuals.max())
                if worst > limit:
                    reason = f"{name} residual {worst:.3g} exceeds {limit:.3g}"
                    break

    stats = run.stats
    if reason is not None:
        log.info("step %d: refresh (%s)", step, reason)
        _, net, attr, projection, embedding = _offline(
            snapshot, config, similarity, (net_pair, attr_pair)
        )
        reports = {"net": PerturbReport.empty(net), "attr": PerturbReport.empty(attr)}
        since = 0
        stats = replace(stats, refreshes=stats.refreshes + ((step, reason),))
    else:
        projection, embedding = _fuse(net, attr, config)
        since = run.since_refresh + 1

    stats = replace(
        stats,
        net_residual=stats.net_residual + (float(reports["net"].residuals.max()),),
        attr_residual=stats.attr_residual + (float(reports["attr"].residuals.max()),),
        net_flags=stats.net_flags + (len(reports["net"].flags),),
        attr_flags=stats.attr_flags + (len(reports["attr"].flags),),
    )
    return EmbeddingRun(snapshot, similarity, net, attr, projection, embedding, config,
                        step, since, stats, reports)


def refit(run: EmbeddingRun, l: int) -> tuple[ConsensusProjection, np.ndarray]:
    """Re-fuse the stored branch states at a different consensus dimension."""
    return fuse(run.net.vectors, run.attr.vectors, l, run.config.ridge)


# -- checkpoints -------------------------------------------------------------
#
# A checkpoint is a zip of .npy members plus ``meta.json``.  Member
# timestamps are fixed so identical runs produce identical bytes.

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _csr_arrays(prefix: str, m: sp.csr_matrix) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_data": np.asarray(m.data),
        f"{prefix}_indices": np.asarray(m.indices),
        f"{prefix}_indptr": np.asarray(m.indptr),
        f"{prefix}_shape": np.asarray(m.shape, dtype=np.int64),
    }


def _csr_from(arrays: dict, prefix: str) -> sp.csr_matrix:
    shape = tuple(int(s) for s in arrays[f"{prefix}_shape"])
    return sp.csr_matrix(
        (arrays[f"{prefix}_data"], arrays[f"{prefix}_indices"], arrays[f"{prefix}_indptr"]),
        shape=shape,
    )


def _state_arrays(prefix: str, s: SpectralState) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_values": s.values,
        f"{prefix}_vectors": s.vectors,
        f"{prefix}_pair_degrees": s.lap_pair.degrees,
        f"{prefix}_degrees": s.degrees,
    }


def save_checkpoint(run: EmbeddingRun, path) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    arrays.update(_csr_arrays("adjacency", run.snapshot.adjacency))
    arrays.update(_csr_arrays("attributes", run.snapshot.attributes))
    arrays.update(_csr_arrays("similarity", run.similarity.w))
    arrays.update(_state_arrays("net", run.net))
    arrays.update(_state_arrays("attr", run.attr))
    arrays["projection"] = run.projection.p
    arrays["gammas"] = run.projection.gammas
    arrays["embedding"] = run.embedding
    meta = {
        "format": "dynembed-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(run.config),
        "step": run.step,
        "since_refresh": run.since_refresh,
        "ridge": run.projection.ridge,
        "stats": asdict(run.stats),
        "diagnostics": {"net": run.net.diagnostics, "attr": run.attr.diagnostics},
        "digests": {
            "adjacency": _digest(run.snapshot.adjacency.data, run.snapshot.adjacency.indices,
                                 run.snapshot.adjacency.indptr),
            "attributes": _digest(run.snapshot.attributes.data, run.snapshot.attributes.indices,
                                  run.snapshot.attributes.indptr),
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", _EPOCH), json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _EPOCH), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> EmbeddingRun:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ValueError(f"{path}: not a checkpoint file") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError as exc:
            raise ValueError(f"{path}: checkpoint has no metadata") from exc
        if meta.get("format") != "dynembed-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise StaleCheckpointError(
                f"{path}: checkpoint version {meta.get('version')} is not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        arrays = {
            name[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
            for name in zf.namelist()
            if name.endswith(".npy")
        }

    snapshot = Snapshot(_csr_from(arrays, "adjacency"), _csr_from(arrays, "attributes"))
    digests = meta["digests"]
    for name, m in (("adjacency", snapshot.adjacency), ("attributes", snapshot.attributes)):
        if _digest(m.data, m.indices, m.indptr) != digests[name]:
            raise ValueError(f"{path}: {name} digest mismatch; checkpoint is corrupt")
    similarity = SimilarityGraph(_csr_from(arrays, "similarity"))
    config = RunConfig(**meta["config"])

    def state(prefix: str, base) -> SpectralState:
        pair = assemble_laplacian(base, arrays[f"{prefix}_pair_degrees"])
        return SpectralState(arrays[f"{prefix}_values"], arrays[f"{prefix}_vectors"], pair,
                             arrays[f"{prefix}_degrees"], meta["diagnostics"][prefix])

    net = state("net", snapshot.adjacency)
    attr = state("attr", similarity.w)
    projection = ConsensusProjection(arrays["projection"], arrays["gammas"], meta["ridge"])
    raw = meta["stats"]
    stats = DriftStats(
        tuple(raw["net_residual"]), tuple(raw["attr_residual"]),
        tuple(raw["net_flags"]), tuple(raw["attr_flags"]),
        tuple((int(s), str(r)) for s, r in raw["refreshes"]),
    )
    return EmbeddingRun(snapshot, similarity, net, attr, projection, arrays["embedding"], config,
                        meta["step"], meta["since_refresh"], stats)

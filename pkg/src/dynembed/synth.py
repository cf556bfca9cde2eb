"""Synthetic dynamic attributed networks from a stochastic block model.

Nodes are split into ``blocks`` nearly equal communities.  Edges follow the
SBM; attributes are Gaussian noise around a block-specific mean, clamped at
zero.  Each time step flips a ``drift_rate`` fraction of edge slots
(a uniformly drawn node pair is added if absent, removed if present) and
re-draws the same fraction of attribute entries.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Delta, Snapshot, apply_delta
from . import io as fileio


@dataclass(frozen=True)
class SbmSpec:
    n: int = 200
    blocks: int = 3
    p_in: float = 0.2
    p_out: float = 0.02
    attr_dim: int = 30
    attr_signal: float = 1.0
    attr_noise: float = 1.0
    drift_rate: float = 0.001
    steps: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 1 <= self.blocks <= self.n:
            raise ValueError("blocks must lie in [1, n]")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if not 0.0 <= self.drift_rate <= 1.0:
            raise ValueError("drift_rate must lie in [0, 1]")
        if self.attr_dim < 1:
            raise ValueError("attr_dim must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.p_in == 0.0:
            raise ValueError("p_in = p_out = 0 implies an empty graph")

    @classmethod
    def from_dict(cls, raw: dict) -> "SbmSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown SBM spec field(s): {sorted(unknown)}")
        return cls(**raw)


def block_labels(n: int, blocks: int) -> np.ndarray:
    return np.repeat(np.arange(blocks), np.diff(np.linspace(0, n, blocks + 1).round().astype(int)))


def _sbm_adjacency(spec: SbmSpec, labels: np.ndarray, rng: np.random.Generator) -> sp.csr_matrix:
    n = spec.n
    rows, cols = [], []
    chunk = max(1, 2_000_000 // n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        same = labels[start:stop, None] == labels[None, :]
        prob = np.where(same, spec.p_in, spec.p_out)
        hit = rng.random((stop - start, n)) < prob
        r, c = np.nonzero(hit)
        r += start
        upper = c > r
        rows.append(r[upper])
        cols.append(c[upper])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    a = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    a = sp.csr_matrix(a + a.T)
    if a.nnz == 0:
        raise ValueError("generated graph has no edges; raise p_in or p_out")
    return a


def _attribute_means(spec: SbmSpec, labels: np.ndarray) -> np.ndarray:
    hot = (np.arange(spec.attr_dim)[None, :] % spec.blocks) == labels[:, None]
    return spec.attr_signal * hot


def _draw_attributes(spec: SbmSpec, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.maximum(means + spec.attr_noise * rng.standard_normal(means.shape), 0.0)


def _edge_flips(a: sp.csr_matrix, count: int, rng: np.random.Generator) -> sp.csr_matrix:
    n = a.shape[0]
    pairs: set[tuple[int, int]] = set()
    while len(pairs) < count:
        i, j = rng.integers(n, size=2)
        if i != j:
            pairs.add((int(min(i, j)), int(max(i, j))))
    ordered = sorted(pairs)
    i = np.array([p[0] for p in ordered], dtype=np.int64)
    j = np.array([p[1] for p in ordered], dtype=np.int64)
    present = np.asarray(a[i, j]).ravel()
    # remove present edges (their full weight), add absent ones with weight 1
    v = np.where(present != 0, -present, 1.0)
    d = sp.coo_matrix((np.concatenate([v, v]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
    return sp.csr_matrix(d)


def generate(spec: SbmSpec) -> tuple[Snapshot, list[Delta], np.ndarray]:
    """Return ``(initial snapshot, deltas, labels)``; ``len(deltas) == spec.steps``."""
    rng = np.random.default_rng(spec.seed)
    labels = block_labels(spec.n, spec.blocks)
    a = _sbm_adjacency(spec, labels, rng)
    means = _attribute_means(spec, labels)
    x = _draw_attributes(spec, means, rng)
    snapshot = Snapshot(a, sp.csr_matrix(x))

    deltas: list[Delta] = []
    current = snapshot
    n, d = spec.n, spec.attr_dim
    for _ in range(spec.steps):
        if spec.drift_rate == 0.0:
            delta = Delta.zeros(n, d)
        else:
            max_pairs = n * (n - 1) // 2
            n_pairs = min(max_pairs, max(1, round(spec.drift_rate * current.adjacency.nnz / 2)))
            d_a = _edge_flips(current.adjacency, n_pairs, rng)

            n_cells = min(n * d, max(1, round(spec.drift_rate * current.attributes.nnz)))
            cells = rng.choice(n * d, size=n_cells, replace=False)
            ri, ci = np.divmod(np.sort(cells), d)
            fresh = np.maximum(means[ri, ci] + spec.attr_noise * rng.standard_normal(n_cells), 0.0)
            old = np.asarray(current.attributes[ri, ci]).ravel()
            d_x = sp.csr_matrix((fresh - old, (ri, ci)), shape=(n, d))
            delta = Delta(d_a, d_x)
        deltas.append(delta)
        current = apply_delta(current, delta)
    return snapshot, deltas, labels


def write_dataset(out_dir, spec: SbmSpec) -> Path:
    """Generate and write a dataset directory with a manifest.

    Layout: ``graph.tsv``, ``attributes.tsv``, ``labels.tsv``,
    ``delta_0001.tsv`` ... and ``manifest.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot, deltas, labels = generate(spec)
    fileio.write_edges(out / "graph.tsv", snapshot.adjacency)
    fileio.write_attributes(out / "attributes.tsv", snapshot.attributes)
    fileio.write_labels(out / "labels.tsv", labels)
    names = []
    for t, delta in enumerate(deltas, start=1):
        name = f"delta_{t:04d}.tsv"
        fileio.write_delta(out / name, delta)
        names.append(name)
    manifest = {
        "spec": asdict(spec),
        "n": snapshot.n,
        "d": snapshot.d,
        "graph": "graph.tsv",
        "attributes": "attributes.tsv",
        "labels": "labels.tsv",
        "deltas": names,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out

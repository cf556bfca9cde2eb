"""Tab-separated file formats.

* edge list: ``src<TAB>dst<TAB>weight``, 0-based ids, each undirected edge once
* attributes: ``node<TAB>attr<TAB>value``
* delta: first line ``#delta``, then an optional ``#edges`` section (edge
  triplets of weight changes) and an optional ``#attributes`` section
  (attribute triplets of value changes).  Lines before any section marker
  are edges.
* labels: ``node<TAB>class``
* embedding: ``node<TAB>v1<TAB>...<TAB>vl``

Blank lines and other lines starting with ``#`` are ignored.  Floats are
written with ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Delta, Snapshot


class FormatError(ValueError):
    """A file does not parse; the message names the path and line."""


def _lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield lineno, line


def _triplets(path, rows):
    ii, jj, vv = [], [], []
    for lineno, line in rows:
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if i < 0 or j < 0:
            raise FormatError(f"{path}:{lineno}: ids must be non-negative")
        if not np.isfinite(v):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        ii.append(i)
        jj.append(j)
        vv.append(v)
    return np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64), np.array(vv, dtype=np.float64)


def _data_rows(path):
    return [(no, line) for no, line in _lines(path) if not line.startswith("#")]


def _edge_matrix(path, i, j, v, n: int) -> sp.csr_matrix:
    if i.size and max(i.max(), j.max()) >= n:
        raise FormatError(f"{path}: node id {max(i.max(), j.max())} out of range for n = {n}")
    if np.any(i == j):
        raise FormatError(f"{path}: self-loop on node {int(i[i == j][0])}")
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    keys = lo * n + hi
    if np.unique(keys).size != keys.size:
        raise FormatError(f"{path}: an undirected edge is listed more than once")
    m = sp.coo_matrix((np.concatenate([v, v]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
                      shape=(n, n))
    return sp.csr_matrix(m)


def _attr_matrix(path, i, j, v, n: int, d: int) -> sp.csr_matrix:
    if i.size and i.max() >= n:
        raise FormatError(f"{path}: node id {i.max()} out of range for n = {n}")
    if j.size and j.max() >= d:
        raise FormatError(f"{path}: attribute id {j.max()} out of range for d = {d}")
    keys = i * d + j
    if np.unique(keys).size != keys.size:
        raise FormatError(f"{path}: an attribute entry is listed more than once")
    return sp.csr_matrix((v, (i, j)), shape=(n, d))


def read_snapshot(graph_path, attr_path, n: int | None = None, d: int | None = None) -> Snapshot:
    """Read an edge list and an attribute file.

    ``n`` and ``d`` default to one past the largest id seen.
    """
    ei, ej, ev = _triplets(graph_path, _data_rows(graph_path))
    ai, aj, av = _triplets(attr_path, _data_rows(attr_path))
    if n is None:
        n = int(max(ei.max(initial=-1), ej.max(initial=-1), ai.max(initial=-1))) + 1
    if d is None:
        d = int(aj.max(initial=-1)) + 1
    if n < 1:
        raise FormatError(f"{graph_path}: no nodes")
    if np.any(ev < 0):
        raise FormatError(f"{graph_path}: negative edge weight")
    if np.any(av < 0):
        raise FormatError(f"{attr_path}: negative attribute value")
    try:
        return Snapshot(_edge_matrix(graph_path, ei, ej, ev, n), _attr_matrix(attr_path, ai, aj, av, n, d))
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{graph_path}: {exc}") from exc


def read_delta(path, n: int, d: int) -> Delta:
    lines = list(_lines(path))
    if not lines or lines[0][1] != "#delta":
        raise FormatError(f"{path}:1: delta files must start with a '#delta' line")
    edges, attrs = [], []
    target = edges
    for lineno, line in lines[1:]:
        if line == "#edges":
            target = edges
        elif line == "#attributes":
            target = attrs
        elif line.startswith("#"):
            continue
        else:
            target.append((lineno, line))
    ei, ej, ev = _triplets(path, edges)
    ai, aj, av = _triplets(path, attrs)
    try:
        return Delta(_edge_matrix(path, ei, ej, ev, n), _attr_matrix(path, ai, aj, av, n, d))
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _fmt(v: float) -> str:
    return repr(float(v))


def write_edges(path, adjacency: sp.spmatrix) -> None:
    upper = sp.triu(adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in order:
            fh.write(f"{upper.row[t]}\t{upper.col[t]}\t{_fmt(upper.data[t])}\n")


def write_attributes(path, attributes: sp.spmatrix) -> None:
    x = sp.csr_matrix(attributes)
    x.sort_indices()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(x.shape[0]):
            for p in range(x.indptr[i], x.indptr[i + 1]):
                fh.write(f"{i}\t{x.indices[p]}\t{_fmt(x.data[p])}\n")


def write_delta(path, delta: Delta) -> None:
    upper = sp.triu(delta.dA, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    x = delta.dX
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#delta\n#edges\n")
        for t in order:
            fh.write(f"{upper.row[t]}\t{upper.col[t]}\t{_fmt(upper.data[t])}\n")
        fh.write("#attributes\n")
        for i in range(x.shape[0]):
            for p in range(x.indptr[i], x.indptr[i + 1]):
                fh.write(f"{i}\t{x.indices[p]}\t{_fmt(x.data[p])}\n")


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, c in enumerate(np.asarray(labels)):
            fh.write(f"{i}\t{int(c)}\n")


def read_labels(path, n: int | None = None) -> np.ndarray:
    pairs = {}
    for lineno, line in _data_rows(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
        try:
            node, cls = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if node < 0 or cls < 0:
            raise FormatError(f"{path}:{lineno}: ids must be non-negative")
        pairs[node] = cls
    size = n if n is not None else (max(pairs) + 1 if pairs else 0)
    if sorted(pairs) != list(range(size)):
        raise FormatError(f"{path}: labels must cover nodes 0..{size - 1} exactly once")
    return np.array([pairs[i] for i in range(size)], dtype=np.int64)


def write_embedding(path, y: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(np.asarray(y)):
            fh.write(str(i) + "\t" + "\t".join(_fmt(v) for v in row) + "\n")


def read_embedding(path) -> np.ndarray:
    rows = {}
    width = None
    for lineno, line in _data_rows(path):
        parts = line.split("\t")
        try:
            node = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if width is None:
            width = len(vals)
        if len(vals) != width or width == 0:
            raise FormatError(f"{path}:{lineno}: inconsistent row width")
        rows[node] = vals
    if sorted(rows) != list(range(len(rows))):
        raise FormatError(f"{path}: node ids must be 0..n-1")
    return np.array([rows[i] for i in range(len(rows))], dtype=np.float64)

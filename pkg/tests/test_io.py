import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dynembed import io as fileio
from dynembed.graph import Delta, Snapshot
from oracles import random_attributes, random_graph


def test_snapshot_round_trip(tmp_path):
    s = Snapshot(random_graph(25, 0.2, 1), random_attributes(25, 7, 1))
    fileio.write_edges(tmp_path / "g.tsv", s.adjacency)
    fileio.write_attributes(tmp_path / "x.tsv", s.attributes)
    back = fileio.read_snapshot(tmp_path / "g.tsv", tmp_path / "x.tsv", n=25, d=7)
    assert back == s


def test_delta_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    da = np.zeros((6, 6))
    da[0, 3] = da[3, 0] = -1.0
    da[2, 5] = da[5, 2] = 0.1 + 1e-17
    dx = sp.csr_matrix(rng.standard_normal((6, 2)) * (rng.random((6, 2)) < 0.5))
    delta = Delta(sp.csr_matrix(da), dx)
    fileio.write_delta(tmp_path / "d.tsv", delta)
    assert (tmp_path / "d.tsv").read_text().startswith("#delta\n#edges\n")
    back = fileio.read_delta(tmp_path / "d.tsv", 6, 2)
    assert np.array_equal(back.dA.toarray(), delta.dA.toarray())
    assert np.array_equal(back.dX.toarray(), delta.dX.toarray())


def test_comments_and_blank_lines(tmp_path):
    (tmp_path / "g.tsv").write_text("# header\n0\t1\t1.0\n\n1\t2\t2.5\n")
    (tmp_path / "x.tsv").write_text("0\t0\t1\n2\t1\t3\n")
    s = fileio.read_snapshot(tmp_path / "g.tsv", tmp_path / "x.tsv")
    assert s.n == 3 and s.d == 2 and s.adjacency[2, 1] == 2.5


@pytest.mark.parametrize(
    "text, message",
    [
        ("0\t1\n", "g.tsv:1: expected 3"),
        ("0\t1\t1\n1\t0\t2\n", "more than once"),
        ("0\t0\t1\n", "self-loop"),
        ("0\tx\t1\n", "g.tsv:1"),
        ("0\t1\tnan\n", "non-finite"),
        ("0\t1\t-1\n", "negative"),
        ("-1\t1\t1\n", "non-negative"),
    ],
)
def test_edge_format_errors(tmp_path, text, message):
    (tmp_path / "g.tsv").write_text(text)
    (tmp_path / "x.tsv").write_text("0\t0\t1\n")
    with pytest.raises(fileio.FormatError, match=message):
        fileio.read_snapshot(tmp_path / "g.tsv", tmp_path / "x.tsv")


def test_delta_format_errors(tmp_path):
    p = tmp_path / "d.tsv"
    p.write_text("0\t1\t1\n")
    with pytest.raises(fileio.FormatError, match="#delta"):
        fileio.read_delta(p, 3, 1)
    p.write_text("#delta\n0\t9\t1\n")
    with pytest.raises(fileio.FormatError, match="out of range"):
        fileio.read_delta(p, 3, 1)
    p.write_text("#delta\n#attributes\n0\t4\t1\n")
    with pytest.raises(fileio.FormatError, match="attribute id"):
        fileio.read_delta(p, 3, 1)
    p.write_bytes(b"#delta\n\xff\xfe\n")
    with pytest.raises(fileio.FormatError, match="UTF-8"):
        fileio.read_delta(p, 3, 1)


def test_labels_round_trip_and_coverage(tmp_path):
    fileio.write_labels(tmp_path / "l.tsv", [2, 0, 1])
    assert fileio.read_labels(tmp_path / "l.tsv").tolist() == [2, 0, 1]
    (tmp_path / "bad.tsv").write_text("0\t1\n2\t1\n")
    with pytest.raises(fileio.FormatError, match="exactly once"):
        fileio.read_labels(tmp_path / "bad.tsv")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 1000))
def test_embedding_round_trip_is_exact(tmp_path_factory, n, l, seed):
    y = np.random.default_rng(seed).standard_normal((n, l)) * 10.0 ** np.random.default_rng(seed).integers(-8, 8)
    path = tmp_path_factory.mktemp("emb") / "y.tsv"
    fileio.write_embedding(path, y)
    assert np.array_equal(fileio.read_embedding(path), y)


def test_embedding_width_error(tmp_path):
    (tmp_path / "y.tsv").write_text("0\t1.0\t2.0\n1\t3.0\n")
    with pytest.raises(fileio.FormatError, match="y.tsv:2"):
        fileio.read_embedding(tmp_path / "y.tsv")

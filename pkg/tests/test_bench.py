import csv

import pytest

from dynembed.bench import CSV_FIELDS, Comparison, compare, run_benchmark, write_csv
from dynembed.pipeline import RunConfig
from dynembed.synth import SbmSpec, generate

SPEC = SbmSpec(n=300, p_in=0.1, p_out=0.01, steps=4, seed=2)


@pytest.fixture(scope="module")
def comparison():
    return compare(SPEC, RunConfig(k=6, l=6))


def test_rows_cover_every_step(comparison):
    for mode, result in (("online", comparison.online), ("offline", comparison.offline)):
        assert [r["step"] for r in result.rows] == [1, 2, 3, 4]
        assert all(r["mode"] == mode and r["n"] == 300 and r["k"] == 6 for r in result.rows)
        assert result.cumulative_seconds == pytest.approx(result.init_seconds + result.step_seconds)
        assert len(result.embeddings) == SPEC.steps + 1


def test_online_and_offline_agree_downstream(comparison):
    _, _, labels = generate(SPEC)
    assert max(comparison.nmi_gaps(labels)) <= 0.05


def test_single_step_initial_solves_are_comparable():
    spec = SbmSpec(n=400, p_in=0.1, p_out=0.01, steps=1, seed=3)
    data = generate(spec)
    config = RunConfig(k=6, l=6)
    best = {}
    for mode in ("online", "offline"):
        best[mode] = min(run_benchmark(spec, config, mode, data).init_seconds for _ in range(3))
    ratio = best["online"] / best["offline"]
    assert 0.5 <= ratio <= 2.0


def test_speedup_definitions(comparison):
    c = Comparison(comparison.online, comparison.offline)
    assert c.speedup == pytest.approx(c.offline.cumulative_seconds / c.online.cumulative_seconds)
    assert c.step_speedup > 0


def test_invalid_mode():
    with pytest.raises(ValueError, match="mode"):
        run_benchmark(SPEC, RunConfig(k=2, l=2), "sideways")


def test_csv_is_append_only_with_one_header(tmp_path, comparison):
    path = tmp_path / "bench.csv"
    write_csv(path, comparison.online.rows)
    write_csv(path, comparison.offline.rows, append=True)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_FIELDS)
    assert len(rows) == 1 + 2 * SPEC.steps
    assert sum(1 for r in rows if r == list(CSV_FIELDS)) == 1

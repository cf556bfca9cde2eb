"""Wall-clock comparison of online updates against offline re-solves.

Both modes start from the same offline initialization (the warm-up step,
timed separately and excluded from the per-step rows).  Offline mode then
re-runs the full offline model on every new snapshot; online mode calls
``step_online``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluate import evaluate_clustering
from .graph import Delta, Snapshot, apply_delta
from .pipeline import EmbeddingRun, RunConfig, init_offline, step_online
from .synth import SbmSpec, generate

CSV_FIELDS = ("step", "mode", "k", "l", "n", "seconds")


@dataclass
class BenchResult:
    mode: str
    init_seconds: float
    rows: list[dict] = field(default_factory=list)
    embeddings: list[np.ndarray] = field(default_factory=list)
    refreshes: int = 0

    @property
    def step_seconds(self) -> float:
        return float(sum(r["seconds"] for r in self.rows))

    @property
    def cumulative_seconds(self) -> float:
        """Total including the initial solve."""
        return self.init_seconds + self.step_seconds


def _time(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def run_benchmark(
    spec: SbmSpec,
    config: RunConfig,
    mode: str,
    data: tuple[Snapshot, list[Delta], np.ndarray] | None = None,
    threads: int = 1,
) -> BenchResult:
    if mode not in ("online", "offline"):
        raise ValueError(f"mode must be 'online' or 'offline', got {mode!r}")
    snapshot, deltas, _ = data if data is not None else generate(spec)
    run, seconds = _time(init_offline, snapshot, config)
    result = BenchResult(mode, seconds)
    result.embeddings.append(run.embedding)
    current = snapshot
    for t, delta in enumerate(deltas, start=1):
        if mode == "online":
            run, seconds = _time(step_online, run, delta, threads=threads)
        else:
            start = time.perf_counter()
            current = apply_delta(current, delta)
            run = init_offline(current, config)
            seconds = time.perf_counter() - start
        result.rows.append(
            {"step": t, "mode": mode, "k": config.k, "l": config.l, "n": snapshot.n, "seconds": seconds}
        )
        result.embeddings.append(run.embedding)
    if mode == "online":
        result.refreshes = len(run.stats.refreshes)
    return result


@dataclass
class Comparison:
    online: BenchResult
    offline: BenchResult

    @property
    def speedup(self) -> float:
        """Offline over online cumulative time, initial solve included."""
        return self.offline.cumulative_seconds / self.online.cumulative_seconds

    @property
    def step_speedup(self) -> float:
        return self.offline.step_seconds / max(self.online.step_seconds, 1e-12)

    def nmi_gaps(self, labels, restarts: int = 10, seed: int = 0) -> list[float]:
        gaps = []
        for yo, yf in zip(self.online.embeddings, self.offline.embeddings):
            a = evaluate_clustering(yo, labels, restarts, seed).nmi
            b = evaluate_clustering(yf, labels, restarts, seed).nmi
            gaps.append(abs(a - b))
        return gaps


def compare(spec: SbmSpec, config: RunConfig, repeats: int = 1) -> Comparison:
    """Run both modes on the same data; keep the fastest of ``repeats`` runs."""
    data = generate(spec)
    best: dict[str, BenchResult] = {}
    for _ in range(repeats):
        for mode in ("offline", "online"):
            r = run_benchmark(spec, config, mode, data)
            if mode not in best or r.cumulative_seconds < best[mode].cumulative_seconds:
                best[mode] = r
    return Comparison(best["online"], best["offline"])


def speedup_curve(spec: SbmSpec, ks, l_ratio: float = 1.0, seed: int = 0, repeats: int = 1) -> dict[int, float]:
    """Speedup per intermediate dimension k (with ``l = round(l_ratio * k)``)."""
    out = {}
    for k in ks:
        config = RunConfig(k=k, l=max(1, round(l_ratio * k)), seed=seed)
        out[k] = compare(spec, config, repeats).speedup
    return out


def write_csv(path, rows, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        if not append or fh.tell() == 0:
            writer.writeheader()
        for r in rows:
            writer.writerow({key: r[key] for key in CSV_FIELDS})

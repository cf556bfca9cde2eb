"""Command-line front end.

Subcommands: ``embed``, ``update``, ``eval``, ``synth`` and ``bench``.

Exit codes: 0 success, 1 bad input (parse error, missing file, invalid
configuration), 2 numerical failure (the message names the stage),
3 stale checkpoint version.

Run parameters resolve as flags > ``--config`` JSON file > defaults.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io as fileio
from .bench import run_benchmark, write_csv
from .graph import InvalidDeltaError
from .evaluate import DEFAULT_RESTARTS, evaluate_clustering, train_eval_classifier
from .pipeline import (
    EmbeddingRun,
    RunConfig,
    StaleCheckpointError,
    init_offline,
    load_checkpoint,
    refit,
    save_checkpoint,
    step_online,
)
from .synth import SbmSpec, generate, write_dataset

log = logging.getLogger("dynembed")

SWEEP_DIMS = tuple(range(10, 101, 10))
METRIC_FIELDS = ("task", "metric", "value", "dim", "step")
RUN_FLAGS = ("k", "l", "seed", "ridge", "gap_tol", "refresh_every", "refresh_residual", "sparsify_top")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


@contextlib.contextmanager
def stage(name: str):
    """Report any failure inside the block as a numerical failure of ``name``."""
    try:
        yield
    except CliError:
        raise
    except Exception as exc:  # noqa: BLE001 - converted to exit code 2
        raise CliError(f"numerical failure in stage '{name}': {type(exc).__name__}: {exc}", 2) from exc


def _read_json(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CliError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise CliError(f"{path}: expected a JSON object")
    return raw


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    values = asdict(base if base is not None else RunConfig())
    if getattr(args, "config", None):
        raw = _read_json(args.config)
        unknown = set(raw) - set(values)
        if unknown:
            raise CliError(f"{args.config}: unknown config field(s): {sorted(unknown)}")
        values.update(raw)
    for name in RUN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc


def _check_exists(*paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise CliError(f"{p}: file not found")


def _load(path) -> EmbeddingRun:
    _check_exists(path)
    try:
        return load_checkpoint(path)
    except StaleCheckpointError as exc:
        raise CliError(str(exc), 3) from exc
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"{path}: cannot load checkpoint: {exc}") from exc


def _state_summary(state) -> dict:
    return {**state.diagnostics, "eigenvalues": state.values.tolist()}


def _write_outputs(run: EmbeddingRun, out: Path, diagnostics: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_embedding(out / "embedding.tsv", run.embedding)
    _write_json(out / "embedding.json", {
        "n": int(run.embedding.shape[0]),
        "l": int(run.embedding.shape[1]),
        "step": run.step,
        "gammas": run.projection.gammas.tolist(),
        "ridge": run.projection.ridge,
        "config": asdict(run.config),
    })
    save_checkpoint(run, out / "checkpoint.zip")
    _write_json(out / "diagnostics.json", diagnostics)


# -- subcommands ---------------------------------------------------------------

def cmd_embed(args) -> int:
    config = resolve_config(args)
    if args.show_config:
        print(json.dumps(asdict(config), indent=2, sort_keys=True))
        return 0
    _check_exists(args.graph, args.attributes)
    try:
        snapshot = fileio.read_snapshot(args.graph, args.attributes, args.nodes, args.dims)
    except fileio.FormatError as exc:
        raise CliError(str(exc)) from exc
    if config.k + 1 > snapshot.n:
        raise CliError(f"k + 1 = {config.k + 1} exceeds the number of nodes n = {snapshot.n}")
    if snapshot.d < 1:
        raise CliError(f"{args.attributes}: no attributes")
    with stage("offline solve"):
        run = init_offline(snapshot, config)
    diagnostics = {"step": 0, "net": _state_summary(run.net), "attr": _state_summary(run.attr),
                   "gammas": run.projection.gammas.tolist()}
    out = Path(args.out)
    _write_outputs(run, out, diagnostics)
    print(f"wrote {out / 'embedding.tsv'} ({run.embedding.shape[0]} x {run.embedding.shape[1]})")
    return 0


def _delta_paths(paths: list[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.suffix == ".json":
            manifest = _read_json(p)
            if "deltas" not in manifest:
                raise CliError(f"{p}: manifest has no 'deltas' list")
            out.extend(p.parent / name for name in manifest["deltas"])
        else:
            out.append(p)
    return out


def cmd_update(args) -> int:
    run = _load(args.checkpoint)
    overrides = {name: getattr(args, name) for name in ("gap_tol", "refresh_every", "refresh_residual")
                 if getattr(args, name) is not None}
    if overrides:
        try:
            run = replace(run, config=replace(run.config, **overrides))
        except ValueError as exc:
            raise CliError(f"invalid configuration: {exc}") from exc
    paths = _delta_paths(args.deltas)
    _check_exists(*paths)
    n, d = run.snapshot.n, run.snapshot.d
    try:
        deltas = [fileio.read_delta(p, n, d) for p in paths]
    except fileio.FormatError as exc:
        raise CliError(str(exc)) from exc

    steps = []
    for path, delta in zip(paths, deltas):
        try:
            with stage(f"online update ({path.name})"):
                run = step_online(run, delta, threads=args.threads)
        except CliError as exc:
            # a delta that does not fit the snapshot is bad input, not a numerical failure
            if isinstance(exc.__cause__, InvalidDeltaError):
                raise CliError(f"{path}: {exc.__cause__}") from exc
            raise
        refreshed = run.refreshed
        reason = run.stats.refreshes[-1][1] if refreshed else None
        print(f"step {run.step}: {'refresh (' + reason + ')' if refreshed else 'online update'}")
        entry = {
            "step": run.step,
            "delta": path.name,
            "refresh": refreshed,
            "reason": reason,
            "net_residual": run.stats.net_residual[-1],
            "attr_residual": run.stats.attr_residual[-1],
            "net_flags": run.stats.net_flags[-1],
            "attr_flags": run.stats.attr_flags[-1],
        }
        if args.diagnostics:
            entry["reports"] = {name: rep.to_dict() for name, rep in run.reports.items()}
        steps.append(entry)

    diagnostics = {"step": run.step, "steps": steps, "net": _state_summary(run.net),
                   "attr": _state_summary(run.attr), "gammas": run.projection.gammas.tolist()}
    out = Path(args.out)
    _write_outputs(run, out, diagnostics)
    print(f"wrote {out / 'embedding.tsv'} at step {run.step}")
    return 0


def _metric_rows(task: str, y: np.ndarray, labels: np.ndarray, dim: int, step, args) -> list[dict]:
    if task == "cluster":
        r = evaluate_clustering(y, labels, args.restarts, args.seed)
        pairs = (("acc", r.acc), ("nmi", r.nmi))
    else:
        r = train_eval_classifier(y, labels, args.folds, args.seed)
        pairs = (("accuracy", r.accuracy), ("micro_f1", r.micro_f1), ("macro_f1", r.macro_f1))
    return [{"task": task, "metric": m, "value": float(v), "dim": dim, "step": step} for m, v in pairs]


def cmd_eval(args) -> int:
    if (args.embedding is None) == (args.checkpoint is None):
        raise CliError("give exactly one of --embedding or --checkpoint")
    if args.sweep and args.checkpoint is None:
        raise CliError("--sweep re-fuses from a checkpoint; pass --checkpoint")
    _check_exists(args.labels)
    if args.embedding is not None:
        _check_exists(args.embedding)
        try:
            y = fileio.read_embedding(args.embedding)
        except fileio.FormatError as exc:
            raise CliError(str(exc)) from exc
        run, step = None, None
    else:
        run = _load(args.checkpoint)
        y, step = run.embedding, run.step
    try:
        labels = fileio.read_labels(args.labels, y.shape[0])
    except fileio.FormatError as exc:
        raise CliError(str(exc)) from exc

    rows: list[dict] = []
    try:
        if args.sweep:
            dims = [l for l in SWEEP_DIMS if l <= 2 * run.config.k]
            if not dims:
                raise CliError(f"sweep needs 2k >= 10; checkpoint has k = {run.config.k}")
            for l in dims:
                with stage(f"consensus fuse (l = {l})"):
                    _, yl = refit(run, l)
                rows.extend(_metric_rows(args.task, yl, labels, l, step, args))
        else:
            rows = _metric_rows(args.task, y, labels, y.shape[1], step, args)
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    best = {}
    for r in rows:
        if r["metric"] not in best or r["value"] > best[r["metric"]]["value"]:
            best[r["metric"]] = r
    result = {"rows": rows, "best": best}
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return 0


def _spec(args) -> SbmSpec:
    raw = _read_json(args.spec) if args.spec else {}
    raw = raw.get("spec", raw)
    if getattr(args, "seed", None) is not None:
        raw = {**raw, "seed": args.seed}
    try:
        return SbmSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid SBM spec: {exc}") from exc


def cmd_synth(args) -> int:
    spec = _spec(args)
    with stage("synthesis"):
        out = write_dataset(args.out, spec)
    print(f"wrote dataset with {spec.steps} delta file(s) to {out}")
    return 0


def cmd_bench(args) -> int:
    spec = _spec(args)
    config = resolve_config(args)
    if args.show_config:
        print(json.dumps({"spec": asdict(spec), "run": asdict(config)}, indent=2, sort_keys=True))
        return 0
    if config.k + 1 > spec.n:
        raise CliError(f"k + 1 = {config.k + 1} exceeds the number of nodes n = {spec.n}")
    with stage("synthesis"):
        data = generate(spec)
    rows = []
    for mode in ("offline", "online"):
        with stage(f"{mode} benchmark"):
            result = run_benchmark(spec, config, mode, data, threads=args.threads)
        rows.extend(result.rows)
        print(f"{mode}: init {result.init_seconds:.3f}s, steps {result.step_seconds:.3f}s")
    write_csv(args.out, rows, append=args.append)
    return 0


# -- argument parsing ----------------------------------------------------------

def _run_flags(p: argparse.ArgumentParser, stream_only: bool = False) -> None:
    g = p.add_argument_group("run parameters")
    if not stream_only:
        g.add_argument("--k", type=int, help="intermediate dimension per branch (default 10)")
        g.add_argument("--l", type=int, help="consensus dimension, 1 <= l <= 2k (default 10)")
        g.add_argument("--seed", type=int, help="solver seed (default 0)")
        g.add_argument("--ridge", type=float, help="consensus ridge (default: scaled to the data)")
        g.add_argument("--sparsify-top", dest="sparsify_top", type=int,
                       help="keep the s largest similarities per row")
        g.add_argument("--config", help="JSON file with run parameters")
        g.add_argument("--show-config", action="store_true", help="print the resolved parameters and exit")
    g.add_argument("--gap-tol", dest="gap_tol", type=float, help="eigen-gap guard (default: relative 1e-6)")
    g.add_argument("--refresh-every", dest="refresh_every", type=int, help="full re-solve every r steps")
    g.add_argument("--refresh-residual", dest="refresh_residual", type=float,
                   help="re-solve when a residual exceeds this times ||L||_F (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="offline embedding of one snapshot")
    p.add_argument("graph", help="edge list TSV")
    p.add_argument("attributes", help="attribute triplet TSV")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--nodes", type=int, help="node count (default: largest id + 1)")
    p.add_argument("--dims", type=int, help="attribute count (default: largest id + 1)")
    p.add_argument("--diagnostics", action="store_true", help="accepted for symmetry with update")
    p.add_argument("--threads", type=int, default=1)
    _run_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("update", help="apply delta files to a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("deltas", nargs="+", help="delta files, or a manifest JSON listing them")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--diagnostics", action="store_true", help="include per-pair perturbation reports")
    p.add_argument("--threads", type=int, default=1, help="2 updates both branches concurrently")
    _run_flags(p, stream_only=True)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("eval", help="clustering or classification metrics")
    p.add_argument("--embedding", help="embedding TSV")
    p.add_argument("--checkpoint", help="checkpoint (required for --sweep)")
    p.add_argument("--labels", required=True, help="labels TSV")
    p.add_argument("--task", choices=("cluster", "classify"), default="cluster")
    p.add_argument("--sweep", action="store_true", help="re-fuse at l = 10, 20, ..., 100 (l <= 2k)")
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="metrics JSON (default: stdout)")
    p.add_argument("--csv", help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dynamic dataset")
    p.add_argument("spec", nargs="?", help="JSON file with SBM parameters")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time online updates against offline re-solves")
    p.add_argument("spec", nargs="?", help="JSON file with SBM parameters")
    p.add_argument("--out", default="bench.csv", help="timing CSV")
    p.add_argument("--append", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    _run_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"dynembed: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``ddl synth | train | compare``.

Exit codes: 0 ok, 2 config or usage error, 3 IO error, 4 numerical
divergence. ``DDL_THREADS`` caps the per-node worker pool (0 = one per core).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ddl.config import ConfigError, ExperimentConfig, load_config
from ddl.datagen import synthesize
from ddl.diffusion import IterationTrace, TraceRow, threads_from_env
from ddl.exceptions import DivergenceError, StepSizeError
from ddl.experiment import MODES, dataset_from_matrix, train
from ddl.formats import read_ddly, write_ddly, write_mosaic
from ddl.linalg import normalize_columns
from ddl.metrics import dictionary_distance, match_atoms

log = logging.getLogger("ddl")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

DATASET_FILE = "dataset.ddly"
TRUTH_FILE = "true_dictionary.ddly"
TRACE_FILE = "trace.csv"
RUN_FILE = "run.json"


class UsageError(Exception):
    """Bad command-line input that is not a config problem (exit 2)."""


def _write_synth(cfg: ExperimentConfig, dataset, out: Path) -> None:
    from ddl import plotting

    out.mkdir(parents=True, exist_ok=True)
    write_ddly(out / DATASET_FILE, dataset.Y_all, cfg.synthesis.K)
    write_ddly(out / TRUTH_FILE, dataset.D_true, cfg.synthesis.K)
    write_mosaic(out / "true_dictionary.pgm", dataset.D_true)
    (out / "config.json").write_text(cfg.to_json())
    plotting.plot_dictionaries(
        {"example patches": dataset.Y_all[:, : cfg.synthesis.K], "true dictionary": dataset.D_true},
        out / "synth.png",
    )


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    dataset = synthesize(cfg.synthesis)
    out = Path(cfg.output_dir)
    _write_synth(cfg, dataset, out)
    print(f"wrote {out / DATASET_FILE} ({dataset.Y_all.shape[0]}x{dataset.Y_all.shape[1]}) and {out / TRUTH_FILE}")
    return EXIT_OK


def _load_dataset(cfg: ExperimentConfig, out: Path):
    path = out / DATASET_FILE
    if not path.exists():
        dataset = synthesize(cfg.synthesis)
        _write_synth(cfg, dataset, out)
        return dataset
    try:
        Y_all, K = read_ddly(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if K != cfg.synthesis.K or Y_all.shape[0] != cfg.synthesis.p:
        raise ConfigError(
            f"{path}: stored dataset has p={Y_all.shape[0]}, K={K}; "
            f"config expects p={cfg.synthesis.p}, K={cfg.synthesis.K}"
        )
    if Y_all.shape[1] != sum(cfg.synthesis.q_per_node):
        raise ConfigError(
            f"{path}: {Y_all.shape[1]} observations but q_per_node sums to {sum(cfg.synthesis.q_per_node)}"
        )
    D_true = read_ddly(out / TRUTH_FILE)[0] if (out / TRUTH_FILE).exists() else None
    return dataset_from_matrix(cfg, Y_all, D_true)


def cmd_train(args) -> int:
    from ddl import plotting

    cfg = load_config(args.config)
    out = Path(cfg.output_dir)
    dataset = _load_dataset(cfg, out)
    run_dir = out / args.mode
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    try:
        threads = threads_from_env()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    last = cfg.learner.outer_iters

    def dump(tag: str, dicts) -> None:
        for n, D in enumerate(dicts):
            write_ddly(snap_dir / f"dict_n{n}_{tag}.ddly", D, cfg.synthesis.K)
            write_mosaic(snap_dir / f"dict_n{n}_{tag}.pgm", D)

    with open(run_dir / TRACE_FILE, "w", newline="\n") as sink:
        sink.write(",".join(TraceRow.FIELDS) + "\n")

        def on_record(it, nodes, rows):
            sink.write("".join(r.csv_line() + "\n" for r in rows))
            if it == 0 or it == last or (cfg.snapshot_every and it % cfg.snapshot_every == 0):
                dump(f"it{it:05d}", [nd.D for nd in nodes])

        result = train(cfg, dataset, mode=args.mode, threads=threads, on_record=on_record)

    final = run_dir / "final"
    final.mkdir(exist_ok=True)
    for n, D in enumerate(result.dictionaries):
        write_ddly(final / f"dict_n{n}.ddly", D, cfg.synthesis.K)
        write_mosaic(final / f"dict_n{n}.pgm", D)
    if dataset.D_true is not None:
        write_ddly(run_dir / TRUTH_FILE, dataset.D_true, cfg.synthesis.K)
    meta = {
        "mode": args.mode,
        "p": cfg.synthesis.p,
        "K": cfg.synthesis.K,
        "n_nodes": len(result.dictionaries),
        "iterations": result.trace.iterations()[-1],
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    (run_dir / RUN_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    plotting.plot_trace(result.trace, run_dir / "trace.png", title=f"{args.mode} run")
    panels = {f"node {n}": D for n, D in enumerate(result.dictionaries[:2])}
    if len(result.dictionaries) > 1:
        panels["node average"] = normalize_columns(result.node_average)[0]
    if dataset.D_true is not None:
        panels = {k: _aligned(dataset.D_true, D) for k, D in panels.items()}
        panels["true"] = dataset.D_true
    plotting.plot_dictionaries(panels, run_dir / "dictionaries.png")

    rows = result.final_rows()
    print(
        f"{args.mode}: {meta['iterations']} iterations, "
        f"mean recon_mse {np.mean([r.recon_mse for r in rows]):.4g}, "
        f"consensus {rows[0].consensus:.4g}, trace in {run_dir / TRACE_FILE}"
    )
    return EXIT_OK


def _aligned(D_true, D):
    """`D` with atoms reordered and re-signed to line up with `D_true`."""
    return match_atoms(D_true, D).apply(D)


def _load_run(path: Path) -> dict:
    trace_path = path / TRACE_FILE
    meta_path = path / RUN_FILE
    for f in (trace_path, meta_path):
        if not f.exists():
            raise UsageError(f"{path}: missing {f.name}; is this a completed run directory?")
    try:
        meta = json.loads(meta_path.read_text())
        trace = IterationTrace.read_csv(trace_path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: unreadable run files ({exc})") from None
    if not trace.rows:
        raise UsageError(f"{trace_path}: trace is empty")
    dicts = []
    for n in range(meta["n_nodes"]):
        f = path / "final" / f"dict_n{n}.ddly"
        if not f.exists():
            raise UsageError(f"{path}: missing final dictionary {f.name}")
        dicts.append(read_ddly(f)[0])
    truth = read_ddly(path / TRUTH_FILE)[0] if (path / TRUTH_FILE).exists() else None
    final = trace.at(trace.iterations()[-1])
    return {"path": path, "meta": meta, "trace": trace, "dicts": dicts, "truth": truth, "final": final}


REPORT_FIELDS = ("run", "mode", "node", "dict_dist_true", "recon_mse", "consensus", "recon_mse_ratio", "dist_delta")


def cmd_compare(args) -> int:
    from ddl import plotting

    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    runs = [_load_run(Path(p)) for p in args.runs]
    shapes = {(r["meta"]["p"], r["meta"]["K"]) for r in runs}
    if len(shapes) != 1:
        raise UsageError(f"runs have incompatible (p, K): {sorted(shapes)}")

    table = []
    for r in runs:
        truth = r["truth"]
        dists = [
            dictionary_distance(truth, D) if truth is not None else row.dict_dist_true
            for D, row in zip(r["dicts"], r["final"])
        ]
        r["dists"] = dists
        r["mse"] = float(np.mean([row.recon_mse for row in r["final"]]))
        r["average"] = normalize_columns(np.mean(r["dicts"], axis=0))[0]
        r["avg_dist"] = dictionary_distance(truth, r["average"]) if truth is not None else float("nan")

    ref = runs[0]
    ref_mean = float(np.mean(ref["dists"]))
    for r in runs:
        label = str(r["path"])
        mode = r["meta"]["mode"]
        ratio = r["mse"] / ref["mse"] if ref["mse"] > 0 else float("nan")
        same_nodes = len(r["dists"]) == len(ref["dists"])
        for n, (row, d) in enumerate(zip(r["final"], r["dists"])):
            # node-by-node delta when the node sets match, else against the reference's node mean
            base = ref["dists"][n] if same_nodes else ref_mean
            table.append([label, mode, row.node, d, row.recon_mse, row.consensus, ratio, d - base])
        table.append([label, mode, "avg", r["avg_dist"], r["mse"], r["final"][0].consensus, ratio,
                      r["avg_dist"] - ref["avg_dist"]])

    out = Path(args.out) if args.out else Path(args.runs[0]).parent / "compare"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerows([_cell(v) for v in row] for row in table)
    for i, r in enumerate(runs):
        write_mosaic(out / f"node_average_{i}_{r['path'].name}.pgm", r["average"])
    labels = [f"{i}:{r['path'].name}" for i, r in enumerate(runs)]
    plotting.plot_comparison(labels, [r["dists"] for r in runs], [r["mse"] for r in runs], out / "compare.png")
    panels = {f"{i}:{r['path'].name} avg": r["average"] for i, r in enumerate(runs)}
    if ref["truth"] is not None:
        panels = {k: _aligned(ref["truth"], D) for k, D in panels.items()}
        panels["true"] = ref["truth"]
    plotting.plot_dictionaries(panels, out / "node_averages.png")

    print((out / "report.csv").read_text(), end="")
    return EXIT_OK


def _cell(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6g}"
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddl", description="Distributed dictionary learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesise a dataset and its true dictionary")
    p.add_argument("-c", "--config", required=True, help="experiment JSON config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run distributed or centralized learning")
    p.add_argument("-c", "--config", required=True, help="experiment JSON config")
    p.add_argument("--mode", choices=MODES, default="distributed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="compare completed runs")
    p.add_argument("runs", nargs="+", help="run directories (the first is the reference)")
    p.add_argument("-o", "--out", help="report directory (default: <first run>/../compare)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, StepSizeError) as exc:
        print(f"ddl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"ddl: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"ddl: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

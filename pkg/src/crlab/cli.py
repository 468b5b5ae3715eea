"""Command-line front end: benchmark generation, runs, tuning, sweeps, reports.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 sweep
finished with some failed cells.  The environment variable ``LAB_SEED``
overrides the seed of single-seed commands (gen, run, tune).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .cld import SpurCorrConfig, make_spurcorr_family
from .metrics import head_weight_histogram
from .serialize import (
    content_hash,
    guarded_write_text,
    json_text,
    load_benchmark,
    params_from_dict,
    params_to_dict,
    save_benchmark,
)
from .training import (
    DEFAULT_LAMBDA_GRID,
    TrainConfig,
    train_with_tuning,
    tune_lambda,
)
from .validation import ConfigError

log = logging.getLogger("crlab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return raw


def _resolve_seed(config_seed, cli_seed) -> int:
    env = os.environ.get("LAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"LAB_SEED must be an integer, got {env!r}") from exc
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is None:
        raise ConfigError("no seed given (config 'seed' field, --seed, or LAB_SEED)")
    return int(config_seed)


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def cmd_gen(args) -> int:
    raw = _load_json(args.config)
    seed = _resolve_seed(raw.pop("seed", None), args.seed)
    known = {f.name for f in dataclasses.fields(SpurCorrConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown benchmark config keys: {sorted(unknown)}")
    if "rho" not in raw:
        raise ConfigError("benchmark config requires a 'rho' field")
    try:
        config = SpurCorrConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    benchmark = make_spurcorr_family(config, rng)
    manifest = save_benchmark(
        benchmark,
        args.out,
        seed,
        generator_config={**dataclasses.asdict(config), "seed": seed},
        force=args.force,
    )
    log.info("benchmark %s written to %s", manifest["benchmark_id"][:8], args.out)
    return EXIT_OK


def _load_train_config(path, cli_seed) -> tuple[TrainConfig, list | None]:
    raw = _load_json(path)
    grid = raw.pop("grid", None)
    raw["seed"] = _resolve_seed(raw.get("seed"), cli_seed)
    config = TrainConfig.from_dict(raw)
    if not config.is_cr and config.lam > 0:
        log.warning("method %r does not use a penalty; lam=%s is ignored", config.method, config.lam)
    return config, grid


def _run_stem(prefix: str, bench_id: str, config: TrainConfig) -> str:
    return f"{prefix}_{bench_id[:8]}_{content_hash(config.to_dict())[:8]}_s{config.seed}"


def _write_run_files(out_dir: Path, stem: str, record, force: bool) -> None:
    guarded_write_text(out_dir / f"{stem}.csv", record.to_csv_text(), force)
    guarded_write_text(out_dir / f"{stem}.json", json_text(record.echo_dict()), force)
    guarded_write_text(
        out_dir / f"{stem}.params.json", json_text(params_to_dict(record.final_params)), force
    )


def cmd_run(args) -> int:
    benchmark, manifest = load_benchmark(args.bench)
    config, grid = _load_train_config(args.config, args.seed)
    cell = train_with_tuning(benchmark, config, grid)
    out = Path(args.out)
    stem = _run_stem("run", manifest["benchmark_id"], config)
    _write_run_files(out, stem, cell.record, args.force)
    if cell.tuning:
        tune_payload = {"best_lam": cell.lam, "results": cell.tuning}
        guarded_write_text(out / f"{stem}.tune.json", json_text(tune_payload), args.force)
    log.info(
        "run %s finished: ood_acc=%.4f ood_ce=%.4f (files under %s)",
        stem,
        cell.record.summary["ood_acc"],
        cell.record.summary["ood_ce"],
        out,
    )
    return EXIT_OK


def cmd_tune(args) -> int:
    benchmark, manifest = load_benchmark(args.bench)
    config, grid = _load_train_config(args.config, args.seed)
    if grid is None:
        grid = list(DEFAULT_LAMBDA_GRID)
    result = tune_lambda(benchmark.family, benchmark.source, benchmark.validation, config, grid)
    out = Path(args.out)
    stem = _run_stem("tune", manifest["benchmark_id"], config)
    payload = {"best_lam": result.best_lam, "results": result.results, "config": config.to_dict()}
    guarded_write_text(out / f"{stem}.json", json_text(payload), args.force)
    log.info("tuning selected lam=%s (grid %s)", result.best_lam, grid)
    return EXIT_OK


def _resolve_cells(spec: dict) -> list[dict]:
    cells = spec.get("cells")
    if not cells:
        raise ConfigError("sweep spec requires a non-empty 'cells' list")
    seeds = spec.get("seeds")
    if not seeds:
        raise ConfigError("sweep spec requires a non-empty 'seeds' list")
    base = dict(spec.get("base", {}))
    resolved = []
    for index, cell in enumerate(cells):
        if "method" not in cell:
            raise ConfigError(f"sweep cell {index} is missing 'method'")
        fields = dict(base)
        for key in ("fidelity", "pair_fraction", "lam"):
            if key in cell:
                fields[key] = cell[key]
        fields["method"] = cell["method"]
        grid = cell.get("lambda_grid")
        if "lam" in cell:
            grid = None  # fixed weight wins over any grid
        elif grid is None and str(cell["method"]).startswith("cr:"):
            grid = list(DEFAULT_LAMBDA_GRID)
        resolved.append(
            {
                "index": index,
                "fields": fields,
                "grid": grid,
                "seeds": [int(s) for s in cell.get("seeds", seeds)],
            }
        )
    return resolved


def _sweep_task(payload):
    """One (cell, seed) run; executed possibly in a worker process."""
    benchmark, bench_id, fields, grid, seed = payload
    config = TrainConfig.from_dict({**fields, "seed": seed})
    cell = train_with_tuning(benchmark, config, grid)
    stem = _run_stem("run", bench_id, dataclasses.replace(config, lam=cell.lam))
    return {
        "seed": seed,
        "lam": cell.lam,
        "stem": stem,
        "csv": cell.record.to_csv_text(),
        "echo": cell.record.echo_dict(),
        "params": params_to_dict(cell.record.final_params),
        "ood_acc": cell.record.summary["ood_acc"],
        "ood_ce": cell.record.summary["ood_ce"],
        "ood_macro_f1": cell.record.summary["ood_macro_f1"],
    }


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    return mean, std


SUMMARY_COLUMNS = (
    "cell",
    "method",
    "fidelity",
    "pair_fraction",
    "seeds",
    "lambdas",
    "mean_ood_acc",
    "std_ood_acc",
    "mean_ood_ce",
    "std_ood_ce",
    "mean_ood_macro_f1",
    "std_ood_macro_f1",
    "arrow",
    "status",
)


def cmd_sweep(args) -> int:
    spec = _load_json(args.config)
    bench_dir = spec.get("benchmark")
    if bench_dir is None:
        raise ConfigError("sweep spec requires a 'benchmark' directory")
    bench_path = Path(bench_dir)
    if not bench_path.is_absolute():
        bench_path = Path(args.config).parent / bench_path
    benchmark, manifest = load_benchmark(bench_path)
    out = Path(args.out if args.out is not None else spec.get("out", "sweep_out"))
    runs_dir = out / "runs"
    cells = _resolve_cells(spec)

    tasks = []
    for cell in cells:
        for seed in cell["seeds"]:
            tasks.append(
                (
                    cell["index"],
                    (benchmark, manifest["benchmark_id"], cell["fields"], cell["grid"], seed),
                )
            )

    outcomes: dict[int, list] = {cell["index"]: [] for cell in cells}
    failures: dict[int, str] = {}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(idx, pool.submit(_sweep_task, payload)) for idx, payload in tasks]
            results = []
            for idx, fut in futures:
                try:
                    results.append((idx, fut.result()))
                except Exception as exc:  # noqa: BLE001 - cell failures are recorded, sweep continues
                    failures[idx] = f"{type(exc).__name__}: {exc}"
    else:
        results = []
        for idx, payload in tasks:
            try:
                results.append((idx, _sweep_task(payload)))
            except Exception as exc:  # noqa: BLE001
                failures[idx] = f"{type(exc).__name__}: {exc}"

    for idx, result in results:
        outcomes[idx].append(result)
        _write_run_files_from_payload(runs_dir, result, args.force)

    summary_rows = []
    for cell in cells:
        idx = cell["index"]
        fields = cell["fields"]
        row = {
            "cell": idx,
            "method": fields["method"],
            "fidelity": fields.get("fidelity", 1.0),
            "pair_fraction": fields.get("pair_fraction", 1.0),
        }
        if idx in failures and not outcomes[idx]:
            row.update(
                seeds="",
                lambdas="",
                mean_ood_acc=float("nan"),
                std_ood_acc=float("nan"),
                mean_ood_ce=float("nan"),
                std_ood_ce=float("nan"),
                mean_ood_macro_f1=float("nan"),
                std_ood_macro_f1=float("nan"),
                status=f"failed: {failures[idx]}",
            )
        else:
            runs = sorted(outcomes[idx], key=lambda r: r["seed"])
            acc_mean, acc_std = _mean_std([r["ood_acc"] for r in runs])
            ce_mean, ce_std = _mean_std([r["ood_ce"] for r in runs])
            f1_mean, f1_std = _mean_std([r["ood_macro_f1"] for r in runs])
            status = "ok" if idx not in failures else f"partial: {failures[idx]}"
            row.update(
                seeds=";".join(str(r["seed"]) for r in runs),
                lambdas=";".join(_fmt(r["lam"]) for r in runs),
                mean_ood_acc=acc_mean,
                std_ood_acc=acc_std,
                mean_ood_ce=ce_mean,
                std_ood_ce=ce_std,
                mean_ood_macro_f1=f1_mean,
                std_ood_macro_f1=f1_std,
                status=status,
            )
        summary_rows.append(row)

    reference = next(
        (r for r in summary_rows if r["method"] == "erm_da" and r["status"] == "ok"), None
    )
    for row in summary_rows:
        if row["status"].startswith("failed") or reference is None:
            row["arrow"] = ""
        elif row is reference:
            row["arrow"] = "--"
        elif row["mean_ood_acc"] > reference["mean_ood_acc"]:
            row["arrow"] = "up"
        elif row["mean_ood_acc"] < reference["mean_ood_acc"]:
            row["arrow"] = "down"
        else:
            row["arrow"] = "--"

    lines = [",".join(SUMMARY_COLUMNS)]
    for row in summary_rows:
        rendered = []
        for col in SUMMARY_COLUMNS:
            value = row[col]
            rendered.append(_fmt(value) if isinstance(value, float) else str(value))
        lines.append(",".join(rendered))
    guarded_write_text(out / "summary.csv", "\n".join(lines) + "\n", args.force)

    md = [
        "| method | fidelity | pair_fraction | ood_acc (mean+/-std) | vs erm_da |",
        "|---|---|---|---|---|",
    ]
    for row in summary_rows:
        if row["status"].startswith("failed"):
            acc = "failed"
        else:
            acc = f"{row['mean_ood_acc']:.4f} +/- {row['std_ood_acc']:.4f}"
        md.append(
            f"| {row['method']} | {row['fidelity']} | {row['pair_fraction']} | {acc} | {row['arrow']} |"
        )
    guarded_write_text(out / "summary.md", "\n".join(md) + "\n", args.force)

    failed = sum(1 for row in summary_rows if row["status"] != "ok")
    log.info("sweep complete: %d cells, %d failed (summary at %s)", len(cells), failed, out)
    return EXIT_PARTIAL if failed else EXIT_OK


def _write_run_files_from_payload(runs_dir: Path, payload: dict, force: bool) -> None:
    stem = payload["stem"]
    guarded_write_text(runs_dir / f"{stem}.csv", payload["csv"], force)
    guarded_write_text(runs_dir / f"{stem}.json", json_text(payload["echo"]), force)
    guarded_write_text(runs_dir / f"{stem}.params.json", json_text(payload["params"]), force)


def _read_csv_rows(path: Path) -> list[dict]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def _series_rows(rows: list[dict], knob: str) -> list[tuple[float, float, float]]:
    by_value: dict[float, list[tuple[float, float]]] = {}
    for row in rows:
        value = float(row[knob])
        by_value.setdefault(value, []).append(
            (float(row["mean_ood_acc"]), float(row["std_ood_acc"]))
        )
    series = []
    for value in sorted(by_value):
        means = [m for m, _ in by_value[value]]
        stds = [s for _, s in by_value[value]]
        series.append((value, float(np.mean(means)), float(np.mean(stds))))
    return series


def cmd_report(args) -> int:
    root = Path(args.dir)
    if not root.exists():
        raise ConfigError(f"report input {root} does not exist")
    out = Path(args.out) if args.out is not None else root / "report"
    run_csvs = sorted(root.rglob("run_*.csv"))
    param_files = sorted(root.rglob("run_*.params.json"))
    summaries = sorted(root.rglob("summary.csv"))
    if not run_csvs and not summaries:
        raise ConfigError(f"{root} holds no run records or sweep summaries")

    for csv_path in run_csvs:
        guarded_write_text(out / f"curve_{csv_path.stem}.csv", csv_path.read_text(), args.force)

    for params_path in param_files:
        params = params_from_dict(json.loads(params_path.read_text()))
        hist = head_weight_histogram(params)
        lines = ["bin_left,bin_right,count"]
        for left, right, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            lines.append(f"{_fmt(left)},{_fmt(right)},{int(count)}")
        stem = params_path.name.replace(".params.json", "")
        guarded_write_text(out / f"head_hist_{stem}.csv", "\n".join(lines) + "\n", args.force)

    for summary_path in summaries:
        rows = [r for r in _read_csv_rows(summary_path) if r.get("status") == "ok"]
        methods = sorted({row["method"] for row in rows})
        for method in methods:
            method_rows = [r for r in rows if r["method"] == method]
            safe = method.replace(":", "_")
            for knob, filename in (("fidelity", "fidelity_vs_ood"), ("pair_fraction", "fraction_vs_ood")):
                series = _series_rows(method_rows, knob)
                lines = [f"{knob},mean_ood_acc,std_ood_acc"]
                for value, mean, std in series:
                    lines.append(f"{_fmt(value)},{_fmt(mean)},{_fmt(std)}")
                guarded_write_text(out / f"{filename}_{safe}.csv", "\n".join(lines) + "\n", args.force)

    log.info("report written to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a benchmark (family + domains)")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="train one configuration on a benchmark")
    run.add_argument("--bench", required=True)
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--force", action="store_true")
    run.set_defaults(func=cmd_run)

    tune = sub.add_parser("tune", help="grid-tune the penalty weight on the validation domain")
    tune.add_argument("--bench", required=True)
    tune.add_argument("--config", required=True)
    tune.add_argument("--out", required=True)
    tune.add_argument("--seed", type=int, default=None)
    tune.add_argument("--force", action="store_true")
    tune.set_defaults(func=cmd_tune)

    sweep = sub.add_parser("sweep", help="run a method/ablation matrix")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--force", action="store_true")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="emit plot-ready CSV series from run records")
    report.add_argument("--dir", required=True)
    report.add_argument("--out", default=None)
    report.add_argument("--force", action="store_true")
    report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""``moodbench`` command line: synth, extract, evaluate, stats, report.

Exit codes: 0 ok, 1 I/O failure, 2 invalid input or config, 3 infeasible cell.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .core import MoodbenchError, SelfReport, SensorBundle, load_participant, load_reports
from .dataset import Task, read_features_csv, write_dataset_csv, write_summary
from .evaluation import (
    DEFAULT_ITERATIONS, EvalResult, InfeasibleCell, ModelType, check_feasible,
    expand_approaches, run_cells, write_results_json,
)
from .features import (
    DEFAULT_WIDTH_S, WINDOW_CHOICES_S, extract_rows, window_overlap_report,
    write_features_csv, write_registry,
)
from .forest import ForestParams
from .stats import descriptive_report, feature_screen, stat_to_json, write_stats_csv
from .synth import DEFAULT_UTC_OFFSETS, InvalidConfig, SynthConfig, generate, generate_raw_logs

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("moodbench")


class UsageError(MoodbenchError, ValueError):
    pass


def _sha256(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _manifest(out: Path, command: str, config: dict, seed, extra: dict | None = None) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_sha256": _sha256(config),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        **(extra or {}),
    })


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    try:
        return max(1, int(os.environ.get("MOODBENCH_JOBS", "1")))
    except ValueError:
        raise UsageError("MOODBENCH_JOBS must be an integer") from None


def fmt_cell(mean: float, std: float) -> str:
    """``0.98, 0.012 -> ".98 (.01)"``."""
    if mean is None or std is None or math.isnan(mean) or math.isnan(std):
        return "n/a"

    def short(v):
        s = f"{v:.2f}"
        return s[1:] if s.startswith("0.") else s

    return f"{short(mean)} ({short(std)})"


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_json(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if args.raw:
        width = _window(args.window)
        logs = generate_raw_logs(cfg, out, width)
        write_dataset_csv(logs.targets, out / "targets.csv")
        files += ["raw/", "reports.csv", "targets.csv"]
    else:
        sd = generate(cfg)
        write_dataset_csv(sd.dataset, out / "features.csv")
        _write_json(out / "ground_truth.json", sd.ground_truth)
        write_summary(sd.dataset, out / "dataset_summary.json")
        files += ["features.csv", "ground_truth.json", "dataset_summary.json"]
    _manifest(out, "synth", cfg.to_json(), cfg.seed, {"outputs": files, "raw": bool(args.raw)})
    print(f"wrote {', '.join(files)} to {out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# extract


def _window(w) -> int:
    w = DEFAULT_WIDTH_S if w is None else int(w)
    if w not in WINDOW_CHOICES_S:
        raise UsageError(f"window must be one of {WINDOW_CHOICES_S} seconds, got {w}")
    return w


def _extract_user(raw_dir: str, user: str, reports: list[SelfReport], width: int):
    d = Path(raw_dir) / user
    bundle = load_participant(d) if d.is_dir() else SensorBundle(user)
    return extract_rows(bundle, reports, width)


def cmd_extract(args) -> int:
    width = _window(args.window)
    raw_dir = Path(args.raw)
    if not raw_dir.is_dir():
        raise FileNotFoundError(f"raw directory {raw_dir} not found")
    reports = load_reports(args.reports)
    by_user: dict[str, list[SelfReport]] = {}
    for r in reports:
        by_user.setdefault(r.user_id, []).append(r)
    users = sorted(by_user)
    jobs = _jobs(args)
    if jobs > 1 and len(users) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(_extract_user, [str(raw_dir)] * len(users), users,
                                [by_user[u] for u in users], [width] * len(users)))
    else:
        parts = [_extract_user(str(raw_dir), u, by_user[u], width) for u in users]
    by_id = {row.report_id: row for part in parts for row in part}
    rows = [by_id[r.report_id] for r in reports]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features_csv(rows, out / "features.csv")
    write_registry(out / "registry.json")
    overlap = window_overlap_report(reports, width)
    _write_json(out / "overlap.json", {"window_s": width, "overlapping_pairs": overlap,
                                       "total": sum(overlap.values())})
    cfg = {"raw": str(raw_dir), "reports": str(args.reports), "window_s": width}
    _manifest(out, "extract", cfg, None, {"n_rows": len(rows)})
    print(f"extracted {len(rows)} rows ({len(users)} users, window {width}s)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


@dataclass
class RunConfig:
    window_s: int = DEFAULT_WIDTH_S
    task: str = "two"
    approaches: list[str] = field(default_factory=lambda: ["country"])
    model_types: list[str] = field(default_factory=lambda: ["plm", "hm"])
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    knn_k: int = 5
    forest: dict = field(default_factory=dict)
    balanced: bool = False
    features: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.iterations < 1:
            raise UsageError("iterations must be >= 1")
        if self.window_s not in WINDOW_CHOICES_S:
            raise UsageError(f"window_s must be one of {WINDOW_CHOICES_S}")
        if self.knn_k < 1:
            raise UsageError("knn_k must be >= 1")
        Task.parse(self.task)
        for m in self.model_types:
            ModelType.parse(m)

    @classmethod
    def from_json(cls, d: dict) -> RunConfig:
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise UsageError(f"run config: {exc}") from None
        return cfg


def _run_job(ds, approach, task, params, seed, iterations, model_types, knn_k):
    return run_cells(ds, approach, task, params, seed, iterations, model_types, knn_k)


def results_table(results: list[dict]) -> tuple[list[str], list[list[str]]]:
    """Rows = scope, columns = model type x task, cells "mean (std)"."""
    cols = []
    for r in results:
        c = f"{r['model_type']} {r['task']}"
        if c not in cols:
            cols.append(c)
    cols.sort(key=lambda c: (c.split()[1] != "two", c.split()[0] != "PLM"))
    rows: dict[str, dict[str, str]] = {}
    for r in results:
        rows.setdefault(r["scope"], {})[f"{r['model_type']} {r['task']}"] = fmt_cell(r["mean"], r["std"])
    header = ["scope", *cols]
    body = [[scope, *(cells.get(c, "") for c in cols)] for scope, cells in rows.items()]
    return header, body


def _write_table(path_base: Path, header, body) -> None:
    with open(path_base.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(body)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(n) for x, n in zip(row, widths)).rstrip()
             for row in [header, *body]]
    path_base.with_suffix(".txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_evaluate(args) -> int:
    cfg = RunConfig.from_json(_read_json(args.config)) if args.config else RunConfig()
    if args.features:
        cfg.features = args.features
    if args.task:
        cfg.task = args.task
    if args.approach:
        cfg.approaches = args.approach
    explicit_models = bool(args.model)
    if args.model:
        cfg.model_types = args.model
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.balanced:
        cfg.balanced = True
    cfg.validate()
    if not cfg.features:
        raise UsageError("--features is required")
    ds = read_features_csv(cfg.features)
    if len(ds) == 0:
        raise UsageError("features table is empty")
    task = Task.parse(cfg.task)
    params = ForestParams(**{**cfg.forest, "seed": 0})
    model_types = tuple(ModelType.parse(m) for m in cfg.model_types)

    jobs_spec = []
    for spec in cfg.approaches:
        try:
            approaches = expand_approaches(spec, ds.countries(), cfg.balanced)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for a in approaches:
            mts = []
            for mt in model_types:
                try:
                    check_feasible(ds, a, mt)
                    mts.append(mt)
                except InfeasibleCell as exc:
                    # agnostic II HM is only skipped when the model list was defaulted
                    if a.kind == "agnostic2" and mt is ModelType.HM and not explicit_models:
                        print(f"skip {a.key} HM: {exc}", file=sys.stderr)
                        continue
                    raise InfeasibleCell(f"{a.key} {mt.value.upper()}: {exc}") from None
            if mts:
                jobs_spec.append((a, tuple(mts)))

    n = _jobs(args)
    call = [(ds, a, task, params, cfg.seed, cfg.iterations, mts, cfg.knn_k) for a, mts in jobs_spec]
    results: list[EvalResult] = []
    if n > 1 and len(call) > 1:
        with ProcessPoolExecutor(n) as ex:
            futs = [ex.submit(_run_job, *c) for c in call]
            for (a, mts), f in zip(jobs_spec, futs):
                res = f.result()
                results.extend(res[mt] for mt in mts)
                print(f"done {a.key}", file=sys.stderr)
    else:
        for (a, mts), c in zip(jobs_spec, call):
            res = _run_job(*c)
            results.extend(res[mt] for mt in mts)
            print(f"done {a.key}: " + ", ".join(
                f"{mt.value.upper()} {fmt_cell(res[mt].mean, res[mt].std)}" for mt in mts),
                file=sys.stderr)

    out = Path(args.out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_results_json(results, out / "results.json")
    header, body = results_table([r.to_json() for r in results])
    _write_table(out / "results", header, body)
    conf = asdict(cfg)
    conf["forest"] = {k: v for k, v in asdict(params).items() if k != "seed"}
    _manifest(out, "evaluate", conf, cfg.seed, {"n_cells": len(results)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args) -> int:
    ds = read_features_csv(args.features)
    if len(ds) == 0:
        raise UsageError("features table is empty")
    conf = _read_json(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    task = Task.parse(args.task or conf.get("task", "three"))
    k = int(conf.get("top_k", args.top))
    n_boot = int(conf.get("n_boot", 1000))
    offsets = {**DEFAULT_UTC_OFFSETS, **conf.get("utc_offsets", {})}
    home_code = int(conf.get("home_code", 1))
    alone_code = int(conf.get("alone_code", 1))

    screens = [feature_screen(ds, c, task, k=k, n_boot=n_boot, seed=seed) for c in ds.countries()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(screens, out / "stats.csv")
    write_stats_csv(screens, out / "top_features.csv", top_only=True)
    _write_json(out / "skipped.json", {c: [list(x) for x in s.skipped]
                                       for c, s in zip(ds.countries(), screens)})

    if args.reports:
        reports = load_reports(args.reports)
    else:
        reports = [SelfReport(str(ds.report_id[i]), str(ds.user_id[i]), str(ds.country[i]),
                              int(ds.ts[i]), int(ds.mood_raw[i])) for i in range(len(ds))]
    desc = descriptive_report(reports, offsets, home_code, alone_code)
    _write_json(out / "descriptive.json", desc)
    top = {c: {cls: [stat_to_json(x) for x in rows] for cls, rows in s.top.items()}
           for c, s in zip(ds.countries(), screens)}
    _write_json(out / "top_features.json", top)
    cfg = {"features": str(args.features), "task": task.value, "top_k": k, "n_boot": n_boot,
           "utc_offsets": offsets, "home_code": home_code, "alone_code": alone_code}
    _manifest(out, "stats", cfg, seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    results = _read_json(args.results)
    if not isinstance(results, list) or not results:
        raise UsageError("results file holds no cells")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header, body = results_table(results)
    _write_table(out / "table", header, body)

    # importances: one column per cell
    cells = [r for r in results if r.get("importances")]
    if cells:
        names = list(cells[0]["importances"])
        with open(out / "importances.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", *(f"{r['approach']}|{r['model_type']}|{r['task']}" for r in cells)])
            for n in names:
                w.writerow([n, *(format(r["importances"].get(n, 0.0), ".9g") for r in cells)])

    if args.stats:
        desc = _read_json(Path(args.stats) / "descriptive.json")
        with open(out / "hourly.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["country", "hour", "overall", "positive", "negative"])
            for c, d in desc.items():
                h = d["hourly"]
                for hour in range(24):
                    w.writerow([c, hour, h["overall"][hour], h["positive"][hour], h["negative"][hour]])
        with open(out / "class_distribution.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["country", "scheme", "class", "count", "percent"])
            for c, d in desc.items():
                for k, v in d["five_class"].items():
                    w.writerow([c, "five", k, v, f"{d['five_class_pct'][k]:.4f}"])
                for k, v in d["two_class"].items():
                    w.writerow([c, "two", k, v, f"{d['two_class_pct'][k]:.4f}"])
        with open(out / "context.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["country", "context", "positive_pct", "negative_pct"])
            for c, d in desc.items():
                for ctx, sh in d["context"].items():
                    w.writerow([c, ctx, *(("" if v is None or math.isnan(v) else f"{v:.4f}")
                                          for v in (sh["positive"], sh["negative"]))])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moodbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"moodbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="synth JSON config (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--raw", action="store_true", help="emit raw sensor logs instead of features")
    s.add_argument("--window", type=int, help="window width in seconds for --raw")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("extract", help="window raw logs into features.csv")
    e.add_argument("--raw", required=True, help="directory with one sub-directory per user")
    e.add_argument("--reports", required=True)
    e.add_argument("--window", type=int, default=DEFAULT_WIDTH_S)
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int)
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("evaluate", help="run PLM/HM cells")
    v.add_argument("--features")
    v.add_argument("--config", help="run JSON config")
    v.add_argument("--out")
    v.add_argument("--seed", type=int)
    v.add_argument("--task", choices=["two", "three"])
    v.add_argument("--approach", action="append",
                   help="country[:CC] | continent[:Europe|Asia] | agnostic1[:TR>TE] | "
                        "agnostic2[:TE] | multi, optionally suffixed :balanced; repeatable")
    v.add_argument("--model", action="append", choices=["plm", "hm"])
    v.add_argument("--balanced", action="store_true")
    v.add_argument("--iterations", type=int)
    v.add_argument("--jobs", type=int)
    v.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("stats", help="per-feature tests and descriptive distributions")
    t.add_argument("--features", required=True)
    t.add_argument("--reports", help="reports.csv with context codes (optional)")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--task", choices=["two", "three"])
    t.add_argument("--top", type=int, default=5)
    t.set_defaults(func=cmd_stats)

    r = sub.add_parser("report", help="render result tables and plot-ready CSVs")
    r.add_argument("--results", required=True)
    r.add_argument("--stats", help="output directory of the stats command")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleCell as exc:
        print(f"moodbench: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"moodbench: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidConfig, UsageError, MoodbenchError, ValueError, KeyError) as exc:
        print(f"moodbench: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"moodbench: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``wfriction {run,gridsearch,convergence,report}``.

Exit codes:
    0  success
    1  unexpected internal error
    2  usage error (bad flags, empty report directory)
    3  configuration error
    4  data error (missing or malformed dataset files)
    5  numeric error (NaN/inf training loss); partial run log is kept
    6  step size violates the convergence hypothesis (alpha > 1/L) without
       --force-hypothesis-violation
    7  convergence checks failed
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import convergence as conv
from .config import ConfigError, ExperimentConfig, apply_overrides, parse_config, serialize
from .continual import (
    REFERENCE_COST_RATIOS,
    RunResult,
    gridsearch_mu,
    resource_report,
    run_continual,
)
from .core import PRNG_ALGORITHM, NumericError
from .data import DataError, IdxFormatError
from .experiments import build_run_config, build_sequence
from .nn import save_checkpoint
from .optim import WEIGHT_FRICTION
from .report import EmptyReport, build_report

log = logging.getLogger("wfriction")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_HYPOTHESIS = 6
EXIT_CHECK_FAILED = 7

MATRIX_FILE = "accuracy_matrix.csv"
SEED_MATRIX_FILE = "accuracy_matrix_seeds.csv"
RESOURCE_FILE = "resource_report.csv"
GRID_FILE = "gridsearch.csv"
RUN_LOG = "run_log.jsonl"
SNAPSHOT = "config.snapshot"
SUMMARY = "summary.json"
CHECKPOINT = "checkpoint.npz"
CONVERGENCE_FILE = "convergence_summary.csv"


class UsageError(ValueError):
    pass


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file")
    common.add_argument("--preset", metavar="NAME", help="named preset (instead of --config)")
    common.add_argument("--seed-list", type=_seed_list, metavar="S1,S2,...", help="override seeds")
    common.add_argument("--mu", type=float, help="fix mu (skips the mu gridsearch; for convergence, the only mu run)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--jobs", type=int, metavar="N", help="worker processes for independent seeds")
    common.add_argument(
        "--force-hypothesis-violation", action="store_true", help="allow convex runs with alpha > 1/L"
    )
    common.add_argument("--alpha", type=float, help="convex step size (default 1/L per problem)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    p = argparse.ArgumentParser(prog="wfriction", description="Weight-friction continual-learning experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="train a continual-learning sequence and write reports")
    sub.add_parser("gridsearch", parents=[common], help="select mu on validation data")
    sub.add_parser("convergence", parents=[common], help="run the convex convergence suite")
    rep = sub.add_parser("report", help="comparison tables and figures from finished runs")
    rep.add_argument("directory", help="directory containing finished runs")
    rep.add_argument("--out", metavar="DIR", help="where to write figures and CSV (default DIR/report)")
    rep.add_argument("-q", "--quiet", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e.strerror}", key="--config") from None
        cfg = parse_config(text)
    elif args.preset:
        cfg = apply_overrides(ExperimentConfig(), preset=args.preset)
    else:
        raise UsageError("one of --config or --preset is required")
    over = dict(seeds=args.seed_list, out=args.out, jobs=args.jobs)
    if args.mu is not None:
        if cfg.setting == "convex":
            over["convex_mus"] = (args.mu,)
        else:
            over.update(mu=args.mu, tune_mu=False)
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.force_hypothesis_violation:
        over["force_hypothesis_violation"] = True
    return apply_overrides(cfg, **over)


# ---------------------------------------------------------------- writers


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT).write_text(serialize(cfg))
    return out


def write_matrix(path, matrix: list[list[float]]):
    """Wide layout: after_task, task_1..task_T; cells above the diagonal stay empty."""
    n = len(matrix)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["after_task"] + [f"task_{j + 1}" for j in range(n)])
        for i, row in enumerate(matrix):
            w.writerow([i + 1] + [repr(float(a)) for a in row] + [""] * (n - len(row)))


def write_seed_matrix(path, per_seed: dict[int, list[list[float]]]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seed", "after_task", "task", "accuracy"])
        for s in sorted(per_seed):
            for i, row in enumerate(per_seed[s]):
                for j, a in enumerate(row):
                    w.writerow([s, i + 1, j + 1, repr(float(a))])


def append_log(path, records):
    with open(path, "a") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def write_grid(path, scores: dict[float, float], best: float):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mu", "validation_score", "selected"])
        for mu in sorted(scores):
            w.writerow([repr(mu), repr(scores[mu]), int(mu == best)])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- verbs


def _grid(cfg: ExperimentConfig, seq, out: Path):
    rc = build_run_config(cfg, WEIGHT_FRICTION, seq)
    g = gridsearch_mu(rc, cfg.mu_grid, cfg.cv_folds, jobs=cfg.jobs)
    write_grid(out / GRID_FILE, g.scores, g.best_mu)
    return g


def cmd_run(cfg: ExperimentConfig) -> int:
    if cfg.setting == "convex":
        return cmd_convergence(cfg)
    out = _prepare_out(cfg)
    log_path = out / RUN_LOG
    log_path.write_text("")
    seq = build_sequence(cfg)
    results: dict[str, RunResult] = {}
    grids = {}
    for method in cfg.methods:
        mu = None
        if method == WEIGHT_FRICTION and cfg.tune_mu:
            g = _grid(cfg, seq, out)
            grids[method] = g
            mu = g.best_mu
            log.info("selected mu=%g", mu)
        rc = build_run_config(cfg, method, seq, mu)
        try:
            res = run_continual(rc, jobs=cfg.jobs)
        except NumericError as e:
            append_log(log_path, getattr(e, "records", []))
            raise
        append_log(log_path, res.records)
        results[method] = res
        mdir = out / method
        mdir.mkdir(exist_ok=True)
        write_matrix(mdir / MATRIX_FILE, res.test.mean())
        write_seed_matrix(mdir / SEED_MATRIX_FILE, res.test.per_seed)
        seed0 = cfg.seeds[0]
        save_checkpoint(
            mdir / CHECKPOINT, res.models[seed0], seed0, PRNG_ALGORITHM, {"method": method, "setting": cfg.setting}
        )
        log.info("%s: average accuracy after each task %s", method, [round(a, 4) for a in res.test.average_accuracy_after()])

    rr = resource_report({m: (r.wall_time_seconds, r.memory_units) for m, r in results.items()})
    with open(out / RESOURCE_FILE, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["method", "wall_time_seconds", "memory_units", "relative_time", "relative_memory"])
        w.writeheader()
        for row in rr.rows():
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})

    methods = {}
    for m, r in results.items():
        mean = r.test.mean()
        info = {
            "accuracy_matrix": mean,
            "average_accuracy_after": r.test.average_accuracy_after(),
            "retained_first_task": mean[-1][0],
            "effective_mu": r.effective_mu,
            "first_task_optimizer": r.config.first_task_optimizer.method,
            "subsequent_optimizer": r.config.subsequent_optimizer.method,
            "memory_units": r.memory_units,
            "wall_time_seconds": r.wall_time_seconds,
            "files": {"accuracy_matrix": f"{m}/{MATRIX_FILE}", "checkpoint": f"{m}/{CHECKPOINT}"},
        }
        if m in grids:
            info["gridsearch"] = {"scores": {repr(k): v for k, v in grids[m].scores.items()}, "selected_mu": grids[m].best_mu}
        methods[m] = info
    summary = {
        "kind": "continual",
        "algorithm_id": PRNG_ALGORITHM,
        "preset": cfg.preset,
        "setting": cfg.setting,
        "seeds": list(cfg.seeds),
        "tasks": [t.name for t in seq.tasks],
        "methods": methods,
        "resource_report": rr.rows(),
        "reference_cost_ratios_vs_weight_friction": REFERENCE_COST_RATIOS,
    }
    _write_json(out / SUMMARY, summary)
    print(f"wrote {out}")
    for m, info in methods.items():
        avg = " ".join(f"{a:.4f}" for a in info["average_accuracy_after"])
        print(f"{m:16s} average accuracy after each task: {avg}")
    return EXIT_OK


def cmd_gridsearch(cfg: ExperimentConfig) -> int:
    if cfg.setting == "convex":
        raise ConfigError("gridsearch applies to continual settings", key="setting")
    if not cfg.mu_grid:
        raise ConfigError("mu_grid is empty", key="mu_grid")
    out = _prepare_out(cfg)
    g = _grid(cfg, build_sequence(cfg), out)
    _write_json(
        out / SUMMARY,
        {
            "kind": "gridsearch",
            "algorithm_id": PRNG_ALGORITHM,
            "setting": cfg.setting,
            "seeds": list(cfg.seeds),
            "cv_folds": cfg.cv_folds,
            "scores": {repr(k): v for k, v in g.scores.items()},
            "selected_mu": g.best_mu,
        },
    )
    for mu in sorted(g.scores):
        print(f"mu={mu:<8g} validation score {g.scores[mu]:.4f}{'  <- selected' if mu == g.best_mu else ''}")
    return EXIT_OK


def cmd_convergence(cfg: ExperimentConfig) -> int:
    out = _prepare_out(cfg)
    alpha = cfg.alpha or None
    with np.errstate(over="ignore", invalid="ignore"):
        entries, traces = conv.run_suite(
            mus=cfg.convex_mus,
            steps=cfg.convex_steps,
            alpha=alpha,
            force=cfg.force_hypothesis_violation,
            kind=cfg.friction,
            g_mode=cfg.g_mode,
        )
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for (name, mu), tr in traces.items():
        conv.write_trace_csv(tdir / f"{name}_mu{mu:g}.csv", tr, cfg.trace_every)
    cols = [
        "problem", "mu", "alpha", "steps", "descent_ok", "first_violation", "regret", "bound",
        "margin", "g_min", "bound_holds_all_T", "final_gap", "gap_ok", "identical_to_sgd",
    ]  # fmt: skip
    rows = []
    for e in entries:
        b = e.bound
        rows.append(
            dict(
                problem=e.problem, mu=e.mu, alpha=e.alpha, steps=e.steps, descent_ok=e.descent_ok,
                first_violation="" if e.descent_violation is None else e.descent_violation,
                regret=b.regret, bound=b.bound, margin=b.margin, g_min=b.g_min, bound_holds_all_T=b.holds_all_T,
                final_gap=e.final_gap, gap_ok=e.gap_ok, identical_to_sgd="" if e.identical_to_sgd is None else e.identical_to_sgd,
            )  # fmt: skip
        )
    with open(out / CONVERGENCE_FILE, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    failed = [
        e for e in entries if not (e.descent_ok and e.bound.holds_all_T and e.gap_ok and e.identical_to_sgd is not False)
    ]
    _write_json(
        out / SUMMARY,
        {
            "kind": "convergence",
            "friction": cfg.friction,
            "g_mode": cfg.g_mode,
            "forced": cfg.force_hypothesis_violation,
            "entries": [{k: (v if not isinstance(v, float) or np.isfinite(v) else repr(v)) for k, v in r.items()} for r in rows],
            "all_passed": not failed,
        },
    )
    print(f"{'problem':14s} {'mu':>5s} {'regret':>12s} {'bound':>12s} {'margin':>12s} {'gap':>10s}  checks")
    for e in entries:
        ok = e.descent_ok and e.bound.holds_all_T and e.gap_ok and e.identical_to_sgd is not False
        print(
            f"{e.problem:14s} {e.mu:5g} {e.bound.regret:12.6g} {e.bound.bound:12.6g} {e.bound.margin:12.6g} "
            f"{e.final_gap:10.2e}  {'ok' if ok else 'FAIL'}{'  ' + e.bound.diagnostic if e.bound.diagnostic else ''}"
        )
    print(f"wrote {out}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_report(directory, out=None) -> int:
    text, _ = build_report(directory, out)
    print(text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.verb == "report":
            return cmd_report(args.directory, args.out)
        cfg = resolve_config(args)
        if args.verb == "run":
            return cmd_run(cfg)
        if args.verb == "gridsearch":
            return cmd_gridsearch(cfg)
        if cfg.setting != "convex":
            raise ConfigError("convergence needs setting = convex (try --preset convex)", key="setting")
        return cmd_convergence(cfg)
    except (UsageError, EmptyReport) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except conv.HypothesisViolation as e:
        print(f"hypothesis violation: {e}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except Exception as e:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())

"""Comparison tables, long-format CSV and figures from finished runs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import plotting
from .continual import REFERENCE_COST_RATIOS, VANILLA

SUMMARY_FILE = "summary.json"
LONG_COLUMNS = ["run", "setting", "method", "after_task", "task", "accuracy", "average_accuracy"]


class EmptyReport(ValueError):
    """No finished continual runs under the given directory."""


def find_runs(root) -> list[tuple[str, dict]]:
    """(label, summary) for every continual-run summary under ``root``, sorted by path."""
    root = Path(root)
    found = []
    for p in sorted(root.rglob(SUMMARY_FILE)):
        try:
            summary = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if summary.get("kind") != "continual":
            continue
        rel = p.parent.relative_to(root).as_posix()
        found.append((rel if rel != "." else root.name, summary))
    return found


def _f(x, nd=3) -> str:
    return "n/a" if x is None else f"{x:.{nd}f}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows])


def accuracy_table(summary: dict) -> str:
    """Average accuracy after each task per method, with retained first-task accuracy."""
    methods = summary["methods"]
    n = len(summary["tasks"])
    base = methods.get(VANILLA, {}).get("retained_first_task")
    header = ["method"] + [f"avg@{i + 1}" for i in range(n)] + ["task1 retained"]
    if base is not None and len(methods) > 1:
        header.append("delta vs vanilla")
    rows = []
    for m, info in methods.items():
        r = [m] + [_f(a) for a in info["average_accuracy_after"]] + [_f(info["retained_first_task"])]
        if len(header) > n + 2:
            r.append(f"{info['retained_first_task'] - base:+.3f}")
        rows.append(r)
    return _table(header, rows)


def cost_table(summary: dict) -> str:
    rows = []
    for r in summary["resource_report"]:
        rows.append(
            [r["method"], f"{r['wall_time_seconds']:.3g}", str(r["memory_units"]), _f(r["relative_time"]), _f(r["relative_memory"])]
        )
    return _table(["method", "wall s", "memory slots", "rel time", "rel memory"], rows)


def reference_table() -> str:
    names = sorted(set(REFERENCE_COST_RATIOS["time"]) | set(REFERENCE_COST_RATIOS["memory"]))
    rows = [
        [n, _f(REFERENCE_COST_RATIOS["time"].get(n), 2), _f(REFERENCE_COST_RATIOS["memory"].get(n), 2)] for n in names
    ]
    return _table(["method", "time x WF", "memory x WF"], rows)


def order_effect(runs: list[tuple[str, dict]]) -> str | None:
    """Retained first-task accuracy for each task ordering present."""
    by_setting = {}
    for label, s in runs:
        if s["setting"] in ("setting1", "setting2"):
            by_setting.setdefault(s["setting"], (label, s))
    if not by_setting:
        return None
    rows = []
    for setting in sorted(by_setting):
        label, s = by_setting[setting]
        order = " -> ".join(s["tasks"])
        for m, info in s["methods"].items():
            rows.append([setting, order, m, _f(info["retained_first_task"]), _f(info["accuracy_matrix"][-1][-1])])
    return _table(["setting", "order", "method", "first task retained", "second task"], rows)


def long_rows(runs: list[tuple[str, dict]]) -> list[list]:
    out = []
    for label, s in runs:
        for m, info in s["methods"].items():
            for i, row in enumerate(info["accuracy_matrix"]):
                for j, a in enumerate(row):
                    out.append([label, s["setting"], m, i + 1, j + 1, repr(a), repr(info["average_accuracy_after"][i])])
    return out


def _slug(label: str) -> str:
    return label.replace("/", "_").replace(" ", "_") or "run"


def build_report(root, out=None) -> tuple[str, list[Path]]:
    """Render the text report; write long CSV and figures into ``out``.

    Returns (report text, written files).
    """
    runs = find_runs(root)
    if not runs:
        raise EmptyReport(f"no finished runs under {root}")
    out = Path(out) if out is not None else Path(root) / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    parts = []
    for label, s in runs:
        mus = {m: i.get("effective_mu") for m, i in s["methods"].items() if i.get("effective_mu") is not None}
        head = f"== {label}: {s['setting']} ({', '.join(s['tasks'])}); {len(s['seeds'])} seeds"
        if mus:
            head += "; mu " + ", ".join(f"{m}={v:g}" for m, v in mus.items())
        parts += [head, accuracy_table(s), "", cost_table(s), ""]
        slug = _slug(label)
        final = {m: i["accuracy_matrix"][-1] for m, i in s["methods"].items()}
        curves = {m: i["average_accuracy_after"] for m, i in s["methods"].items()}
        p = out / f"{slug}_final_accuracy.png"
        plotting.final_accuracy_bars(p, final, s["tasks"], f"{label}: accuracy after last task")
        written.append(p)
        p = out / f"{slug}_average_accuracy.png"
        plotting.average_accuracy_curve(p, curves, f"{label}: average accuracy")
        written.append(p)
        rr = s["resource_report"]
        if rr and rr[0]["relative_time"] is not None:
            p = out / f"{slug}_relative_cost.png"
            plotting.relative_cost_bars(
                p, {r["method"]: r["relative_time"] for r in rr}, {r["method"]: r["relative_memory"] for r in rr}, label
            )
            written.append(p)
    oe = order_effect(runs)
    if oe:
        parts += ["== task order", oe, ""]
    parts += ["== published reference costs relative to weight friction (not measured here)", reference_table()]
    p = out / "accuracy_long.csv"
    with open(p, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LONG_COLUMNS)
        w.writerows(long_rows(runs))
    written.append(p)
    text = "\n".join(parts) + "\n"
    p = out / "report.txt"
    p.write_text(text)
    written.append(p)
    return text, written

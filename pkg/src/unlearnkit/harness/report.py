"""Summary files: structured JSON, delimited CSV and a plain-text table.

Everything written here is a pure function of the run's results (no
timestamps, hostnames or timings), so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping

from .runner import METRICS, PRETRAINED, SEED_POLICY, ExperimentResult, GridResult, aggregate

SUMMARY_FORMAT = "unlearnkit-summary/1"
COLUMN_TITLES = {"utility_pct": "Utility (%)", "forget_pct": "Forgetting (%)", "nomus_pct": "NoMUS (%)"}
SUMMARY_FILES = ("summary.json", "summary.csv", "table.txt")


def _agg_dict(aggs) -> dict | None:
    return {m: a.to_dict() for m, a in aggs.items()} if aggs else None


def summary_dict(result: ExperimentResult) -> dict:
    seeds = result.seeds
    methods = {}
    for name in result.methods:
        done = result.completed(name)
        failed = result.failed(name)
        methods[name] = {
            "aggregate": _agg_dict(result.aggregates(name)),
            "per_seed": {str(c.seed): c.best.to_dict() for c in done},
            "trajectories": {str(s): result.cells[(name, s)].trajectory_file for s in seeds},
            "complete": not failed,
            "failures": [{"seed": c.seed, "error": c.error} for c in failed],
        }
    flags = []
    if result.single_seed:
        flags.append("single-seed: standard deviations are undefined and reported as 0")
    if result.failed() or result.pretrain_errors:
        flags.append("incomplete: some (method, seed) cells failed; aggregates cover completed cells only")
    return {
        "format": SUMMARY_FORMAT,
        "metadata": {
            "seeds": seeds,
            "seed_policy": SEED_POLICY,
            "metrics": list(METRICS),
            "best_epoch_rule": "highest NoMUS, earliest epoch on ties",
            "std": "sample standard deviation (n-1)",
            "single_seed": result.single_seed,
            "complete": not (result.failed() or result.pretrain_errors),
            "flags": flags,
        },
        "config": result.config.to_dict(),
        "pretrained": {
            "aggregate": _agg_dict(result.pretrained_aggregates()),
            "per_seed": {str(s): result.pretrained[s].to_dict() for s in seeds if s in result.pretrained},
            "failures": [{"seed": s, "error": e} for s, e in sorted(result.pretrain_errors.items())],
        },
        "methods": methods,
    }


def cell_text(agg: Mapping | None) -> str:
    if agg is None:
        return "n/a"
    return f"{agg['mean']:.2f} (±{agg['std']:.2f})"


def _format_table(header: list[str], body: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return [line(header), rule] + [line(r) for r in body]


def _rows(summary: dict) -> list[tuple[str, dict | None, bool]]:
    rows = [(PRETRAINED, summary["pretrained"]["aggregate"], not summary["pretrained"]["failures"])]
    for name, entry in summary["methods"].items():
        rows.append((name, entry["aggregate"], entry["complete"]))
    return rows


def render_table(summary: dict, title: str | None = None) -> str:
    """Aligned text table with one "mean (±std)" cell per metric."""
    header = ["Method"] + [COLUMN_TITLES[m] for m in METRICS]
    body = []
    for name, agg, complete in _rows(summary):
        label = name if complete else name + " *"
        body.append([label] + [cell_text(agg[m] if agg else None) for m in METRICS])
    out = [title] if title else []
    out += _format_table(header, body)
    seeds = summary["metadata"]["seeds"]
    out.append("")
    out.append(f"seeds: {', '.join(map(str, seeds))} (best epoch per seed by NoMUS; std is the sample std)")
    for flag in summary["metadata"]["flags"]:
        out.append(f"note: {flag}")
    if any(not c for _, _, c in _rows(summary)):
        out.append("* some seeds failed for this row; see summary.json")
    return "\n".join(out) + "\n"


def render_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["complete"])
    for name, agg, complete in _rows(summary):
        if agg is None:
            w.writerow([name, 0] + [""] * (2 * len(METRICS)) + [int(complete)])
            continue
        n = agg[METRICS[0]]["n"]
        w.writerow([name, n] + [repr(agg[m][s]) for m in METRICS for s in ("mean", "std")] + [int(complete)])
    return buf.getvalue()


def write_summary_files(summary: dict, output_dir: str | Path) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "summary.json": json.dumps(summary, indent=2, ensure_ascii=False) + "\n",
        "summary.csv": render_csv(summary),
        "table.txt": render_table(summary, title=summary["config"].get("name")),
    }
    paths = []
    for fname, text in files.items():
        p = out / fname
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


def emit_report(result: ExperimentResult, output_dir: str | Path) -> list[Path]:
    return write_summary_files(summary_dict(result), output_dir)


def load_summary(output_dir: str | Path) -> dict:
    path = Path(output_dir) / "summary.json"
    summary = json.loads(path.read_text(encoding="utf-8"))
    if summary.get("format") != SUMMARY_FORMAT:
        raise ValueError(f"{path}: not a {SUMMARY_FORMAT} file")
    return summary


def recompute_aggregates(summary: dict) -> dict[str, dict | None]:
    """Aggregates rebuilt from the persisted per-seed values."""
    out = {}
    for name, entry in summary["methods"].items():
        vals = list(entry["per_seed"].values())
        out[name] = {m: aggregate([v[m] for v in vals]).to_dict() for m in METRICS} if vals else None
    return out


def grid_summary(grid: GridResult) -> dict:
    rows = []
    for value, label, res in zip(grid.values, grid.labels, grid.results):
        s = summary_dict(res)
        entry = s["methods"][label]
        rows.append({
            "value": value,
            "label": label,
            "aggregate": entry["aggregate"],
            "complete": entry["complete"],
            "directory": f"{grid.parameter}={value}",
        })
    return {
        "format": SUMMARY_FORMAT + "+grid",
        "method": grid.method,
        "parameter": grid.parameter,
        "values": list(grid.values),
        "seeds": grid.results[0].seeds if grid.results else [],
        "rows": rows,
    }


def render_grid_table(gsum: dict) -> str:
    header = [gsum["parameter"]] + [COLUMN_TITLES[m] for m in METRICS]
    body = []
    for r in gsum["rows"]:
        agg = r["aggregate"]
        body.append([str(r["value"]) + ("" if r["complete"] else " *")] + [cell_text(agg[m] if agg else None) for m in METRICS])
    out = [f"{gsum['method']} ablation over {gsum['parameter']}"] + _format_table(header, body)
    out.append("")
    out.append(f"seeds: {', '.join(map(str, gsum['seeds']))}")
    return "\n".join(out) + "\n"


def emit_grid_report(grid: GridResult, output_dir: str | Path) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for value, res in zip(grid.values, grid.results):
        paths += emit_report(res, out / f"{grid.parameter}={value}")
    gsum = grid_summary(grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([gsum["parameter"]] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["complete"])
    for r in gsum["rows"]:
        agg = r["aggregate"]
        vals = [repr(agg[m][s]) for m in METRICS for s in ("mean", "std")] if agg else [""] * (2 * len(METRICS))
        w.writerow([r["value"]] + vals + [int(r["complete"])])
    files = {
        "ablation.json": json.dumps(gsum, indent=2, ensure_ascii=False) + "\n",
        "ablation.csv": buf.getvalue(),
        "ablation.txt": render_grid_table(gsum),
    }
    for fname, text in files.items():
        (out / fname).write_text(text, encoding="utf-8")
        paths.append(out / fname)
    return paths

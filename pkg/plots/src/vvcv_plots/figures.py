"""Figures over benchmark CSVs: convergence bands and error box plots.

These scripts are read-only consumers of the benchmark CSV contract.  All
statistics shown in legends are read verbatim from the summary CSV, never
recomputed from raw rows, so figures and tables cannot drift apart.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["PlotSpec", "load_csv", "plot_convergence", "plot_box"]

TRACE_REQUIRED = ("problem", "method", "m", "rep", "seed", "task", "epoch", "abs_err")
RAW_REQUIRED = ("problem", "method", "m", "rep", "seed", "task", "estimate", "abs_err")
SUMMARY_REQUIRED = ("problem", "method", "m", "task", "mean_abs_err", "sd")


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: input CSVs, figure kind, grouping, and output path."""

    inputs: tuple[str, ...]
    kind: str                      # "convergence-band" | "boxplot"
    out: str
    methods: tuple[str, ...] = ()  # empty = all methods found
    group_by: tuple[str, ...] = ("problem", "method", "m", "task")
    truth_line: float | None = None

    def __post_init__(self):
        if self.kind not in ("convergence-band", "boxplot"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("need at least one input CSV")


class Table:
    """A CSV held as a list of string-dicts plus its header."""

    def __init__(self, path: str, header: list[str], rows: list[dict]):
        self.path = path
        self.header = header
        self.rows = rows

    def has(self, *cols: str) -> bool:
        return all(c in self.header for c in cols)

    def require(self, cols: Sequence[str], context: str) -> None:
        missing = [c for c in cols if c not in self.header]
        if missing:
            raise ValueError(f"{self.path}: missing columns {missing} needed for {context}")


def load_csv(path: str) -> Table:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        rows = list(reader)
    return Table(path, list(reader.fieldnames), rows)


def _classify(tables: list[Table]):
    """Split loaded CSVs into (trace, raw, summary) by their headers."""
    trace = raw = summary = None
    for t in tables:
        if t.has(*SUMMARY_REQUIRED) and not t.has("rep"):
            summary = t
        elif t.has(*TRACE_REQUIRED):
            trace = t
        elif t.has(*RAW_REQUIRED):
            raw = t
        else:
            raise ValueError(f"{t.path}: header matches no known benchmark CSV schema")
    return trace, raw, summary


def _check_grouping(spec: PlotSpec, tables: list[Table]) -> None:
    for t in tables:
        t.require([c for c in spec.group_by if c != "epoch"], "grouping")


def _methods_in(table: Table) -> list[str]:
    seen = []
    for r in table.rows:
        if r["method"] not in seen:
            seen.append(r["method"])
    return seen


def _select_methods(spec: PlotSpec, available: list[str]) -> list[str]:
    if not spec.methods:
        return available
    chosen = [m for m in spec.methods if m in available]
    if not chosen:
        raise ValueError(
            f"none of the requested methods {list(spec.methods)} are present; "
            f"available: {available}"
        )
    return chosen


def _legend_stats(summary: Table | None, method: str, task: str) -> str:
    """Legend suffix quoting the summary CSV verbatim (single source of truth)."""
    if summary is None:
        return ""
    for r in summary.rows:
        if r["method"] == method and r["task"] == task:
            sd = r["sd"]
            return (f" (mean {r['mean_abs_err']}" + (f", sd {sd}" if sd else "") + ")")
    return ""


def _tasks_in(table: Table) -> list[str]:
    seen = []
    for r in table.rows:
        if r["task"] not in seen:
            seen.append(r["task"])
    return seen


def plot_convergence(spec: PlotSpec) -> str:
    """Error-vs-epoch curves: mean line per method with a +-1 SD band.

    Methods without epochs (plain Monte Carlo, closed-form fits) appear as
    horizontal reference lines at their fixed error.  The error axis is
    logarithmic.
    """
    tables = [load_csv(p) for p in spec.inputs]
    trace, raw, summary = _classify(tables)
    if trace is None:
        raise ValueError(
            "no per-epoch trace CSV given; rerun the benchmark with --trace "
            "to produce one"
        )
    _check_grouping(spec, [trace])
    methods = _select_methods(spec, _methods_in(trace))
    tasks = _tasks_in(trace)
    fig, axes = plt.subplots(1, len(tasks), figsize=(5.2 * len(tasks), 4.0),
                             squeeze=False)
    for ax, task in zip(axes[0], tasks):
        for method in methods:
            rows = [r for r in trace.rows if r["method"] == method and r["task"] == task]
            if not rows:
                continue
            by_epoch = defaultdict(list)
            for r in rows:
                by_epoch[int(r["epoch"])].append(float(r["abs_err"]))
            epochs = sorted(by_epoch)
            label = method + _legend_stats(summary, method, task)
            if len(epochs) == 1:
                level = float(np.mean(by_epoch[epochs[0]]))
                ax.axhline(level, linestyle="--", linewidth=1.2, label=label)
                continue
            mean = np.array([np.mean(by_epoch[e]) for e in epochs])
            sd = np.array([np.std(by_epoch[e], ddof=1) if len(by_epoch[e]) > 1 else 0.0
                           for e in epochs])
            line, = ax.plot(epochs, mean, label=label)
            lo = np.maximum(mean - sd, np.min(mean[mean > 0], initial=1e-300) * 1e-3)
            ax.fill_between(epochs, lo, mean + sd, alpha=0.25,
                            color=line.get_color(), linewidth=0)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("absolute error")
        ax.set_title(f"{trace.rows[0]['problem']}, task {task}")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    return spec.out


def plot_box(spec: PlotSpec) -> str:
    """Per-method box plots of absolute errors over repetitions."""
    tables = [load_csv(p) for p in spec.inputs]
    trace, raw, summary = _classify(tables)
    source = raw if raw is not None else trace
    if source is None:
        raise ValueError("need a raw (or trace) benchmark CSV with per-rep errors")
    _check_grouping(spec, [source])
    methods = _select_methods(spec, _methods_in(source))
    tasks = _tasks_in(source)
    fig, axes = plt.subplots(1, len(tasks), figsize=(1.2 + 1.3 * len(methods) * len(tasks),
                                                     4.0), squeeze=False)
    for ax, task in zip(axes[0], tasks):
        data, labels = [], []
        for method in methods:
            errs = [float(r["abs_err"]) for r in source.rows
                    if r["method"] == method and r["task"] == task and r["abs_err"]]
            if source is trace:
                # keep only the final epoch of each rep
                final = {}
                for r in source.rows:
                    if r["method"] == method and r["task"] == task and r["abs_err"]:
                        final[r["rep"]] = max(final.get(r["rep"], (-1, 0.0)),
                                              (int(r["epoch"]), float(r["abs_err"])))
                errs = [v for (_, v) in final.values()]
            if errs:
                data.append(errs)
                labels.append(method + _legend_stats(summary, method, task))
        ax.boxplot(data, tick_labels=labels)
        if spec.truth_line is not None:
            ax.axhline(spec.truth_line, linestyle=":", linewidth=1.0, color="k")
        ax.set_ylabel("absolute error")
        ax.set_title(f"{source.rows[0]['problem']}, task {task}")
        ax.tick_params(axis="x", labelsize=8, rotation=20)
    fig.tight_layout()
    fig.savefig(spec.out)
    plt.close(fig)
    return spec.out

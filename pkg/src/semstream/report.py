"""Delimited output and figure rendering for runs, sweeps, and comparisons.

CSV layouts (also in docs/FORMATS.md):

    metrics   run,batch,frame,tp,fp,fn,delay_s,bytes_attributed
              one row per frame, then a summary row with batch=frame="summary"
              carrying totals and the mean delay
    loss      epoch,loss
    diff      series,frame,value        (feature-comparison harness)
    compare   mode,micro_f1,normalized_bandwidth,... (one row per run)

Figures are SVG files rendered with matplotlib's Agg backend. The salt and
metadata are pinned so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .metrics import RunMetrics  # noqa: E402

plt.rcParams["svg.hashsalt"] = "semstream"

_SVG_METADATA = {"Date": None}

METRICS_HEADER = ("run", "batch", "frame", "tp", "fp", "fn", "delay_s",
                  "bytes_attributed")

SUMMARY_FIELDS = ("mode", "micro_f1", "normalized_bandwidth", "mean_delay",
                  "median_delay", "p95_delay", "uplink_bytes",
                  "downlink_bytes", "filtered_fraction", "updates_extension",
                  "updates_full")


def fmt_value(value):
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def write_metrics_csv(metrics: RunMetrics, path):
    """One row per frame plus a trailing summary row."""
    totals = metrics.summary()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for fm in metrics.frames:
            writer.writerow([metrics.mode, fm.batch, fm.frame_index, fm.tp,
                             fm.fp, fm.fn, fmt_value(fm.delay.total),
                             fmt_value(fm.bytes_attributed)])
        writer.writerow([metrics.mode, "summary", "summary",
                         sum(f.tp for f in metrics.frames),
                         sum(f.fp for f in metrics.frames),
                         sum(f.fn for f in metrics.frames),
                         fmt_value(totals["mean_delay"]),
                         fmt_value(metrics.uplink_bytes + metrics.downlink_bytes)])


def write_loss_csv(trace, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "loss"))
        for epoch, loss in enumerate(trace):
            writer.writerow((epoch, fmt_value(float(loss))))


def write_difference_csv(series, path):
    """series: {name: 1-D array of per-step difference values}."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("series", "frame", "value"))
        for name in sorted(series):
            for frame, value in enumerate(series[name], start=1):
                writer.writerow((name, frame, fmt_value(float(value))))


def write_compare_csv(rows, path):
    """rows: list of summary dicts from RunMetrics.summary()."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            writer.writerow([fmt_value(row[k]) for k in SUMMARY_FIELDS])


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=dict(_SVG_METADATA))
    plt.close(fig)


def bandwidth_f1_figure(rows, path, title="Bandwidth vs accuracy"):
    """Scatter of normalized bandwidth against micro-F1, one point per run."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for row in rows:
        ax.scatter(row["normalized_bandwidth"], row["micro_f1"], s=36,
                   label=str(row["mode"]))
        ax.annotate(str(row["mode"]),
                    (row["normalized_bandwidth"], row["micro_f1"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("normalized bandwidth")
    ax.set_ylabel("micro-F1")
    ax.set_title(title)
    ax.set_xlim(left=0.0)
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def delay_bars_figure(rows, path, title="Response delay"):
    """Mean/p95 delay bars, one group per run."""
    labels = [str(row["mode"]) for row in rows]
    means = [row["mean_delay"] for row in rows]
    p95s = [row["p95_delay"] for row in rows]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(x - 0.2, means, width=0.4, label="mean")
    ax.bar(x + 0.2, p95s, width=0.4, label="p95")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("delay (s)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def loss_curve_figure(trace, path, title="Distillation loss"):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(range(len(trace)), [float(v) for v in trace], marker="o",
            markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def cdf_figure(values, path, title="Region fraction CDF", xlabel="fraction"):
    """Empirical CDF of `values` on [0, 1]."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 0:
        vals = np.zeros(1)
    cum = np.arange(1, vals.size + 1) / vals.size
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.step(vals, cum, where="post")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.set_title(title)
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def difference_series_figure(series, path, title="Frame-difference series"):
    """Per-kind difference traces, each normalized to its own maximum."""
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    for name in sorted(series):
        values = np.asarray(series[name], dtype=np.float64)
        peak = values.max() if values.size and values.max() > 0 else 1.0
        ax.plot(range(1, values.size + 1), values / peak, label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("difference (peak-normalized)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(param, values, rows, path):
    """Bandwidth-F1 scatter for a parameter sweep, labeled by value."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    nbw = [row["normalized_bandwidth"] for row in rows]
    f1 = [row["micro_f1"] for row in rows]
    ax.plot(nbw, f1, linestyle=":", alpha=0.5)
    ax.scatter(nbw, f1, s=36)
    for value, x, y in zip(values, nbw, f1):
        ax.annotate(f"{param}={value}", (x, y), textcoords="offset points",
                    xytext=(4, 4), fontsize=8)
    ax.set_xlabel("normalized bandwidth")
    ax.set_ylabel("micro-F1")
    ax.set_title(f"Sweep over {param}")
    ax.set_xlim(left=0.0)
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path

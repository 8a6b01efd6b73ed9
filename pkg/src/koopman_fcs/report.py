"""Comparison tables and figures from simulation logs."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from . import analysis

REPORT_COLUMNS = (
    "controller",
    "speed_rpm",
    "id_ref",
    "iq_ref",
    "thd_pct",
    "setpoint_dev_A",
    "fsw_avg_Hz",
    "rise_ms",
    "settle_ms",
)

SPECTRUM_MAX_HZ = 12e3


def last_step_time(log) -> float | None:
    intervals = analysis.constant_reference_intervals(log)
    if len(intervals) < 2:
        return None
    return intervals[-1][0] * log.t_s


def metrics_row(log) -> dict:
    """One report row for the final operating point of a log."""
    seg = analysis.steady_segment(log)
    ss = analysis.steady_state_metrics(log, seg)
    rise = settle = math.nan
    t_step = last_step_time(log)
    if t_step is not None:
        smooth = int(log.meta.get("oversampling", 1)) if log.meta.get("controller") == "foc" else 1
        sm = analysis.step_metrics(log, t_step, smooth=smooth)
        axis = sm["q"] if sm["q"] is not None else sm["d"]
        rise, settle = axis["rise"] * 1e3, axis["settle"] * 1e3
    return {
        "controller": log.meta.get("controller", ""),
        "speed_rpm": float(log.meta.get("speed_rpm", math.nan)),
        "id_ref": float(log.id_ref[-1]),
        "iq_ref": float(log.iq_ref[-1]),
        "thd_pct": ss.thd,
        "setpoint_dev_A": ss.setpoint_deviation,
        "fsw_avg_Hz": ss.avg_switching_freq,
        "rise_ms": rise,
        "settle_ms": settle,
    }


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def write_csv(rows, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in REPORT_COLUMNS])


def read_csv(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({k: (v if k == "controller" else float(v)) for k, v in r.items()})
    return rows


def format_table(rows) -> str:
    head = f"{'controller':<14}{'n/min^-1':>9}{'id*/A':>9}{'iq*/A':>9}{'THD/%':>8}{'dev/A':>8}{'fsw/kHz':>9}{'rise/ms':>9}{'settle/ms':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['controller']:<14}{r['speed_rpm']:>9.0f}{r['id_ref']:>9.0f}{r['iq_ref']:>9.0f}"
            f"{r['thd_pct']:>8.1f}{r['setpoint_dev_A']:>8.2f}{r['fsw_avg_Hz'] / 1e3:>9.2f}"
            f"{r['rise_ms']:>9.2f}{r['settle_ms']:>10.2f}"
        )
    return "\n".join(lines) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "koopman-fcs"
    return plt


def plot_currents(logs: dict, path):
    plt = _pyplot()
    fig, axes = plt.subplots(len(logs), 1, figsize=(7, 2.4 * len(logs)), sharex=True, squeeze=False)
    for ax, (name, log) in zip(axes[:, 0], logs.items()):
        t = log.time * 1e3
        ax.plot(t, log.i_d, lw=0.8, label="i_d")
        ax.plot(t, log.i_q, lw=0.8, label="i_q")
        ax.plot(t, log.id_ref, "k--", lw=0.6)
        ax.plot(t, log.iq_ref, "k:", lw=0.6)
        ax.set_ylabel("current / A")
        ax.set_title(name, fontsize=9)
        ax.legend(loc="right", fontsize=7)
    axes[-1, 0].set_xlabel("time / ms")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_spectra(logs: dict, path, max_freq: float = SPECTRUM_MAX_HZ):
    plt = _pyplot()
    fig, axes = plt.subplots(len(logs), 1, figsize=(7, 2.4 * len(logs)), sharex=True, squeeze=False)
    for ax, (name, log) in zip(axes[:, 0], logs.items()):
        spec = analysis.phase_current_spectrum(log)
        keep = spec.freqs <= max_freq
        ax.semilogy(spec.freqs[keep] / 1e3, np.maximum(spec.amplitude[keep], 1e-6), lw=0.6)
        ax.set_ylim(1e-3, 1e3)
        ax.set_ylabel("|i_a| / A")
        ax.set_title(name, fontsize=9)
    axes[-1, 0].set_xlim(0.0, max_freq / 1e3)
    axes[-1, 0].set_xlabel("frequency / kHz")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(rows, out_dir, logs_by_scenario=None, figures=True):
    """Write report.csv, report.txt and per-scenario SVG figures; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.csv", out / "report.txt"]
    write_csv(rows, paths[0])
    paths[1].write_text(format_table(rows))
    if figures and logs_by_scenario:
        for scenario, logs in logs_by_scenario.items():
            p = out / f"{scenario}_currents.svg"
            plot_currents(logs, p)
            paths.append(p)
            p = out / f"{scenario}_spectrum.svg"
            plot_spectra(logs, p)
            paths.append(p)
    return paths

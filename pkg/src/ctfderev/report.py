"""Result tables (CSV and aligned text) and matplotlib figures."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluate import METHOD_LABELS, METHOD_ORDER  # noqa: E402
from .metrics import MetricReport  # noqa: E402

METRICS = (("si_sdr", "SI-SDR [dB]"), ("estoi", "ESTOI"), ("srmr", "SRMR"))
SCENARIO_TITLES = {
    "static": "Average results for the static simulated RIRs",
    "time-varying": "Average results for the time-varying simulated RIRs",
}
FOOTNOTES = (
    "SDR is the scale-invariant variant (SI-SDR), not the BSS-Eval SDR with a distortion filter.",
    "SRMR is not computed; the column is left blank on purpose.",
    "Reference signal for every score: the early-reverberant signal y^E.",
)
_PNG_META = {"Software": None}


def _methods(report: MetricReport) -> list[str]:
    present = set(report.methods)
    return [m for m in METHOD_ORDER if m in present]


def table_rows(report: MetricReport, scenario: str) -> list[list]:
    """Rows ``[room, rt60, metric, value per method...]`` plus an average row per metric."""
    methods = _methods(report)
    cells = sorted({(k[0], k[1]) for k in report.cells if k[2] == scenario})
    rows = []
    for metric, _ in METRICS:
        per_method = {m: [] for m in methods}
        for room, rt60 in cells:
            row = [room, f"{rt60:g}", metric]
            for m in methods:
                key = (room, rt60, scenario, m)
                if metric == "srmr" or key not in report.cells:
                    row.append("")
                else:
                    v = report.cells[key][metric]
                    per_method[m].append(v)
                    row.append(v)
            rows.append(row)
        avg = ["Avg.", "", metric]
        for m in methods:
            avg.append(float(np.mean(per_method[m])) if per_method[m] else "")
        rows.append(avg)
    return rows


def write_table_csv(path: Path, report: MetricReport) -> None:
    methods = _methods(report)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scenario", "room", "rt60", "metric"] + [METHOD_LABELS[m] for m in methods])
        for scenario in _scenarios(report):
            for row in table_rows(report, scenario):
                w.writerow([scenario] + [f"{v:.4f}" if isinstance(v, float) else v for v in row])


def _scenarios(report: MetricReport) -> list[str]:
    present = {k[2] for k in report.cells}
    return [s for s in ("static", "time-varying") if s in present]


def format_table(report: MetricReport) -> str:
    """Aligned text: one block per scenario, metric groups side by side."""
    methods = _methods(report)
    labels = [METHOD_LABELS[m] for m in methods]
    out = io.StringIO()
    for scenario in _scenarios(report):
        rows = table_rows(report, scenario)
        by_key: dict[tuple, dict] = {}
        order = []
        for room, rt60, metric, *vals in rows:
            key = (room, rt60)
            if key not in by_key:
                by_key[key] = {}
                order.append(key)
            by_key[key][metric] = vals
        head1 = f"{'Room':<8}{'RT60':>6} "
        head2 = " " * 15
        for _, title in METRICS:
            width = 8 * len(labels)
            head1 += f"| {title:^{width}}"
            head2 += "| " + "".join(f"{lb:>8}" for lb in labels)
        out.write(f"{SCENARIO_TITLES.get(scenario, scenario)}\n")
        out.write(head1 + "\n" + head2 + "\n")
        out.write("-" * len(head2) + "\n")
        for room, rt60 in order:
            line = f"{room:<8}{rt60:>6} "
            for metric, _ in METRICS:
                vals = by_key[(room, rt60)][metric]
                line += "| " + "".join(f"{v:>8.2f}" if isinstance(v, float) else f"{'':>8}" for v in vals)
            out.write(line + "\n")
        out.write("\n")
    for i, note in enumerate(FOOTNOTES, 1):
        out.write(f"[{i}] {note}\n")
    return out.getvalue()


def plot_metrics(path: Path, report: MetricReport) -> None:
    methods = _methods(report)
    scenarios = _scenarios(report)
    fig, axes = plt.subplots(len(scenarios), 2, figsize=(10, 3.2 * len(scenarios)), squeeze=False)
    width = 0.8 / max(len(methods), 1)
    for r, scenario in enumerate(scenarios):
        cells = sorted({(k[0], k[1]) for k in report.cells if k[2] == scenario})
        x = np.arange(len(cells))
        for c, (metric, title) in enumerate(METRICS[:2]):
            ax = axes[r, c]
            for i, m in enumerate(methods):
                vals = [report.cells.get((room, rt60, scenario, m), {}).get(metric, np.nan)
                        for room, rt60 in cells]
                ax.bar(x + (i - (len(methods) - 1) / 2) * width, vals, width, label=METHOD_LABELS[m])
            ax.set_xticks(x, [f"{room}\n{rt60:g} s" for room, rt60 in cells])
            ax.set_ylabel(title)
            ax.set_title(scenario)
            ax.grid(axis="y", alpha=0.3)
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def read_train_log(path: Path) -> dict[str, tuple[list, list]]:
    curves: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ep, loss = curves.setdefault(row["split"], ([], []))
            ep.append(int(row["epoch"]) + 1)
            loss.append(float(row["loss"]))
    return curves


def plot_training(path: Path, logs: dict[str, Path]) -> None:
    fig, axes = plt.subplots(1, max(len(logs), 1), figsize=(4 * max(len(logs), 1), 3), squeeze=False)
    for ax, (head, log_path) in zip(axes[0], sorted(logs.items())):
        for split, (ep, loss) in read_train_log(log_path).items():
            ax.semilogy(ep, loss, marker=".", label=split)
        ax.set_title(METHOD_LABELS.get(head, head))
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_spectrograms(path: Path, panels: list[tuple[str, np.ndarray]], hop_seconds: float,
                      sample_rate: int) -> None:
    """Log-magnitude images, one panel per ``(title, K x L magnitude)``."""
    fig, axes = plt.subplots(len(panels), 1, figsize=(8, 2.2 * len(panels)), sharex=True, squeeze=False)
    floor = max(max(float(np.max(m)) for _, m in panels), 1e-12) * 1e-4
    for ax, (title, mag) in zip(axes[:, 0], panels):
        k, n = mag.shape
        ax.imshow(20 * np.log10(np.maximum(mag, floor)), origin="lower", aspect="auto",
                  extent=(0, n * hop_seconds, 0, sample_rate / 2000), cmap="magma")
        ax.set_title(title, fontsize=9)
        ax.set_ylabel("kHz")
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)

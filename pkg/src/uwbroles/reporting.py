"""Post-run reporting: overlap table, trajectory exports, and figures.

Reads the files a scenario run leaves in its output directory (epochs.csv,
summary.json, optionally timing/latency JSON) and produces the per-node
overlap table, plot-ready trajectory CSVs with role-colored segments, and
rendered PNG figures: one trajectory plot per mobile node plus a latency box
plot when latency data is available.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

TRUTH_ACTIVE_COLOR = "tab:red"
TRUTH_PASSIVE_COLOR = "tab:blue"
EST_ACTIVE_COLOR = "purple"
EST_PASSIVE_COLOR = "cyan"


def load_epochs(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["epoch"] = int(row["epoch"])
        row["node"] = int(row["node"])
        for key in ("truth_x", "truth_y", "truth_z", "est_x", "est_y", "est_z", "err_m"):
            row[key] = float(row[key])
    return rows


def overlap_table_lines(summary: dict) -> list:
    """Text table with the Active %, Passive %, Total % Overlap columns."""
    lines = [
        f"{'':10s} {'truth[%]':>17s} {'estimated[%]':>17s} {'Total %':>9s}",
        f"{'':10s} {'Active':>8s} {'Passive':>8s} {'Active':>8s} {'Passive':>8s} {'Overlap':>9s}",
    ]
    for nid in summary["mobile_nodes"]:
        row = summary["overlap"][str(nid)]
        lines.append(
            f"Node {nid:<5d} {row['active_pct_truth']:8.2f} {row['passive_pct_truth']:8.2f} "
            f"{row['active_pct_est']:8.2f} {row['passive_pct_est']:8.2f} "
            f"{row['total_overlap_pct']:9.2f}"
        )
    return lines


def write_overlap_csv(summary: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["node", "active_pct_truth", "passive_pct_truth",
             "active_pct_est", "passive_pct_est", "total_overlap_pct"]
        )
        for nid in summary["mobile_nodes"]:
            row = summary["overlap"][str(nid)]
            writer.writerow(
                [nid, row["active_pct_truth"], row["passive_pct_truth"],
                 row["active_pct_est"], row["passive_pct_est"], row["total_overlap_pct"]]
            )


def write_trajectory_csv(rows, nid: int, path):
    """Per-node trajectory with the role at every epoch, ready for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "truth_x", "truth_y", "truth_z",
             "est_x", "est_y", "est_z", "role_truth", "role_est"]
        )
        for row in rows:
            if row["node"] != nid:
                continue
            writer.writerow(
                [row["epoch"],
                 f"{row['truth_x']:.6f}", f"{row['truth_y']:.6f}", f"{row['truth_z']:.6f}",
                 f"{row['est_x']:.6f}", f"{row['est_y']:.6f}", f"{row['est_z']:.6f}",
                 row["role_truth"], row["role_est"]]
            )


def plot_trajectory(rows, nid: int, path):
    """Path of one node with truth roles (red/blue) and estimated roles (purple/cyan)."""
    node_rows = [r for r in rows if r["node"] == nid]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(
        [r["truth_x"] for r in node_rows],
        [r["truth_y"] for r in node_rows],
        color="tab:orange", linewidth=1.0, alpha=0.8, label="trajectory", zorder=1,
    )
    for role, color in (("active", TRUTH_ACTIVE_COLOR), ("passive", TRUTH_PASSIVE_COLOR)):
        sel = [r for r in node_rows if r["role_truth"] == role]
        ax.scatter(
            [r["truth_x"] for r in sel], [r["truth_y"] for r in sel],
            s=14, color=color, label=f"{role} (truth)", zorder=2,
        )
    for role, color in (("active", EST_ACTIVE_COLOR), ("passive", EST_PASSIVE_COLOR)):
        sel = [r for r in node_rows if r["role_est"] == role]
        ax.scatter(
            [r["est_x"] for r in sel], [r["est_y"] for r in sel],
            s=6, color=color, label=f"{role} (estimated)", zorder=3,
        )
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"UWB Node {nid}")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_overlap(summary: dict, path):
    nodes = summary["mobile_nodes"]
    values = [summary["overlap"][str(n)]["total_overlap_pct"] for n in nodes]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([f"Node {n}" for n in nodes], values, color="tab:blue")
    ax.axhline(80, color="tab:red", linestyle="--", linewidth=1)
    ax.set_ylabel("role overlap (%)")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_latency(reports, path):
    """Box plot of per-call allocation latency, one box per mode."""
    labels = [r["mode"] for r in reports]
    data = [[s * 1000.0 for s in r["samples_s"]] for r in reports]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.boxplot(data, tick_labels=labels)
    ax.set_ylabel("time (ms)")
    ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def generate_report(out_dir) -> list:
    """Build every report artifact found in out_dir; returns the table lines."""
    epochs_path = os.path.join(out_dir, "epochs.csv")
    summary_path = os.path.join(out_dir, "summary.json")
    if not (os.path.exists(epochs_path) and os.path.exists(summary_path)):
        raise FileNotFoundError(f"{out_dir} is missing epochs.csv or summary.json")
    rows = load_epochs(epochs_path)
    with open(summary_path, encoding="utf-8") as fh:
        summary = json.load(fh)

    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    write_overlap_csv(summary, os.path.join(out_dir, "overlap_table.csv"))
    plot_overlap(summary, os.path.join(fig_dir, "overlap.png"))
    for nid in summary["mobile_nodes"]:
        write_trajectory_csv(rows, nid, os.path.join(out_dir, f"trajectory_node{nid}.csv"))
        plot_trajectory(rows, nid, os.path.join(fig_dir, f"node{nid}_trajectory.png"))

    latency_reports = []
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("latency") and name.endswith(".json"):
            with open(os.path.join(out_dir, name), encoding="utf-8") as fh:
                payload = json.load(fh)
            latency_reports.extend(payload if isinstance(payload, list) else [payload])
    if latency_reports:
        plot_latency(latency_reports, os.path.join(fig_dir, "latency_boxplot.png"))

    return overlap_table_lines(summary)

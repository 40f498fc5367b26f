"""Matplotlib rendering of reports and allocation plans to image files."""

from __future__ import annotations

import math
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .mapper import AllocationPlan
from .metrics import RunReport


def render_report_panels(reports: Sequence[RunReport], path: str) -> str:
    """Four-panel figure (latency, throughput, power, energy) across runs."""
    if not reports:
        raise ValueError("need at least one report to plot")
    x = np.arange(1, len(reports) + 1)
    unit = "FPS" if reports[0].workload_label in ("frames", "video") else "KPS"
    panels = [
        ("Latency [ms]", [r.latency_s * 1e3 for r in reports]),
        (f"Throughput [{unit}]", [r.throughput for r in reports]),
        ("Power [mW]", [r.power_w * 1e3 for r in reports]),
        ("Energy [mJ]", [r.energy_j * 1e3 for r in reports]),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(8, 6), sharex=True)
    for ax, (label, values) in zip(axes.flat, panels):
        if len(values) == 1:
            ax.bar(x, values, color="tab:blue", width=0.5)
        else:
            ax.plot(x, values, marker="o", markersize=3, color="tab:blue")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("Iteration")
    fig.suptitle(f"{reports[0].workload_label} workload, {len(reports)} run(s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_allocation(plan: AllocationPlan, path: str) -> str:
    """NPU fabric map: one cell per NPU, colored by the layer holding it."""
    cfg = plan.chip
    per_row = cfg.npus_per_node
    rows = math.ceil(cfg.n_npu / per_row)
    owner = np.full(cfg.n_npu, -1, dtype=int)
    for alloc in plan.layers:
        for i in alloc.npu_ids:
            owner[i] = alloc.layer_index

    n_layers = len(plan.layers)
    cmap = plt.get_cmap("tab20", max(n_layers, 1))
    grid = np.full((rows, per_row, 3), 0.92)
    for npu in range(cfg.n_npu):
        if owner[npu] >= 0:
            grid[npu // per_row, npu % per_row] = cmap(owner[npu] % 20)[:3]

    fig, ax = plt.subplots(figsize=(max(4, per_row * 0.8), max(4, rows * 0.3)))
    ax.imshow(grid, aspect="auto", interpolation="nearest")
    ax.set_xticks(range(per_row))
    ax.set_yticks(range(rows))
    ax.set_yticklabels([f"node {r}" for r in range(rows)], fontsize=7)
    ax.set_xlabel("NPU within node")
    util = float(plan.utilization)
    ax.set_title(
        f"{plan.model_name} on {cfg.name}: {plan.cost_c}/{cfg.n_npu} NPUs "
        f"({util:.2f}%)"
    )
    handles = [
        plt.Rectangle((0, 0), 1, 1, color=cmap(a.layer_index % 20))
        for a in plan.layers
    ]
    ax.legend(handles, [a.name for a in plan.layers], fontsize=6,
              loc="center left", bbox_to_anchor=(1.01, 0.5))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

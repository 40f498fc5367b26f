"""Latency/power/energy estimation from run statistics, plus report I/O.

latency = fixed + total_passes * per_pass
power   = static + dynamic_energy / latency
energy  = power * latency

Dynamic energy charges each synaptic event, neuron update, and layer
pass at the calibrated coefficient. Coefficients are calibration data
(see hwmodel); the arithmetic identities above hold exactly in the
internal representation regardless of calibration.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

from .errors import IoError, NonPositiveLatency, NonPositivePower, ParseError
from .hwmodel import ProcessorConfig
from .mapper import AllocationPlan
from .simcore import RunStats

CSV_HEADER = ["workload", "latency_s", "throughput", "power_w", "energy_j",
              "efficiency", "accuracy"]


@dataclass(frozen=True)
class RunReport:
    workload_label: str
    latency_s: float
    throughput: float
    power_w: float
    energy_j: float
    efficiency: float
    accuracy: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "workload": self.workload_label,
            "latency_s": self.latency_s,
            "throughput": self.throughput,
            "power_w": self.power_w,
            "energy_j": self.energy_j,
            "efficiency": self.efficiency,
            "accuracy": self.accuracy,
        }


def throughput_from_latency(latency_s: float) -> float:
    """Items per second for one inference taking latency_s."""
    if latency_s <= 0:
        raise NonPositiveLatency(f"latency must be > 0, got {latency_s}")
    return 1.0 / latency_s


def efficiency(throughput: float, power_w: float) -> float:
    """Items per second per watt."""
    if power_w <= 0:
        raise NonPositivePower(f"power must be > 0, got {power_w}")
    return throughput / power_w


def estimate(
    stats: RunStats,
    plan: AllocationPlan,
    cfg: ProcessorConfig,
    workload_label: str = "frames",
    accuracy: Optional[float] = None,
) -> RunReport:
    """Estimate a full report for one inference described by stats + plan."""
    cm = cfg.require_cost_model()
    passes = plan.total_passes
    latency = cm.latency_fixed + passes * cm.latency_per_pass
    dynamic = (
        cm.energy_per_synaptic_event * stats.synaptic_events
        + cm.energy_per_neuron_update * stats.neuron_updates
        + cm.energy_per_npu_pass * passes
    )
    if latency > 0:
        power = cm.static_power + dynamic / latency
        energy = power * latency
        tput = throughput_from_latency(latency)
        eff = efficiency(tput, power) if power > 0 else 0.0
    else:
        power = cm.static_power
        energy = 0.0
        tput = 0.0
        eff = 0.0
    return RunReport(
        workload_label=workload_label,
        latency_s=latency,
        throughput=tput,
        power_w=power,
        energy_j=energy,
        efficiency=eff,
        accuracy=accuracy,
    )


def meets_requirements(report: RunReport, lat_ms: Optional[float],
                       power_mw: Optional[float]) -> bool:
    ok = True
    if lat_ms is not None:
        ok = ok and report.latency_s * 1e3 <= lat_ms
    if power_mw is not None:
        ok = ok and report.power_w * 1e3 <= power_mw
    return ok


def format_report(report: RunReport) -> str:
    """Console rendering: ms to 2 decimals, mW integer, energy 3 sig figs."""
    unit = "FPS" if report.workload_label in ("frames", "video") else "KPS"
    tput = math.floor(report.throughput) if unit == "FPS" else round(report.throughput, 1)
    energy = _sig3(report.energy_j)
    lines = [
        f"latency:    {report.latency_s * 1e3:.2f} ms",
        f"throughput: {tput} {unit}",
        f"power:      {round(report.power_w * 1e3)} mW",
        f"energy:     {energy} J",
        f"efficiency: {report.efficiency:.2f} items/s/W",
    ]
    if report.accuracy is not None:
        lines.append(f"accuracy:   {report.accuracy * 100:.2f}%")
    return "\n".join(lines)


def _sig3(value: float) -> float:
    if value == 0:
        return 0.0
    exp = math.floor(math.log10(abs(value)))
    return round(value, -exp + 2)


def write_report(report: RunReport, path: str, format: str = "json",
                 append: bool = False) -> None:
    """Serialize one report; CSV appends a row under the fixed header."""
    if format not in ("json", "csv"):
        raise ValueError(f"unknown report format '{format}'")
    try:
        if format == "json":
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            fresh = not (append and os.path.exists(path) and os.path.getsize(path) > 0)
            mode = "w" if fresh else "a"
            with open(path, mode, encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                if fresh:
                    writer.writerow(CSV_HEADER)
                writer.writerow([
                    report.workload_label,
                    repr(report.latency_s),
                    repr(report.throughput),
                    repr(report.power_w),
                    repr(report.energy_j),
                    repr(report.efficiency),
                    "" if report.accuracy is None else repr(report.accuracy),
                ])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_report_csv(path: str):
    """All rows of an iteration CSV as RunReport objects."""
    reports = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                reports.append(RunReport(
                    workload_label=row["workload"],
                    latency_s=float(row["latency_s"]),
                    throughput=float(row["throughput"]),
                    power_w=float(row["power_w"]),
                    energy_j=float(row["energy_j"]),
                    efficiency=float(row["efficiency"]),
                    accuracy=float(row["accuracy"]) if row.get("accuracy") else None,
                ))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: bad CSV row ({exc})") from exc
    return reports


def read_report(path: str) -> RunReport:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return RunReport(
            workload_label=doc["workload"],
            latency_s=float(doc["latency_s"]),
            throughput=float(doc["throughput"]),
            power_w=float(doc["power_w"]),
            energy_j=float(doc["energy_j"]),
            efficiency=float(doc["efficiency"]),
            accuracy=None if doc.get("accuracy") is None else float(doc["accuracy"]),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: report missing field {exc}") from exc

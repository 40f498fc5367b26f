"""Parametric processor description, defaulting to an 80-NPU fabric.

Cost-model coefficients ship in data/akida_calibration.json. They are
calibration data fitted offline against published board measurements, not
vendor ground truth; see docs/format.md for the file layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Optional

from .errors import IoError, MissingCostModel, ParseError, ValidationError

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
CALIBRATION_FILE = os.path.join(_DATA_DIR, "akida_calibration.json")

KIB = 1024


@dataclass(frozen=True)
class CostModel:
    """Coefficients for the latency/power/energy estimator.

    Energies are joules per event, powers watts, latencies seconds.
    ``latency_per_pass`` is charged once per sequential layer pass.
    """

    energy_per_synaptic_event: float
    energy_per_neuron_update: float
    energy_per_npu_pass: float
    static_power: float
    latency_per_pass: float
    latency_fixed: float

    def __post_init__(self):
        for name in (
            "energy_per_synaptic_event",
            "energy_per_neuron_update",
            "energy_per_npu_pass",
            "static_power",
            "latency_per_pass",
            "latency_fixed",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"cost model coefficient {name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "energy_per_synaptic_event": self.energy_per_synaptic_event,
            "energy_per_neuron_update": self.energy_per_neuron_update,
            "energy_per_npu_pass": self.energy_per_npu_pass,
            "static_power": self.static_power,
            "latency_per_pass": self.latency_per_pass,
            "latency_fixed": self.latency_fixed,
        }

    @staticmethod
    def from_dict(d: dict) -> "CostModel":
        try:
            return CostModel(
                energy_per_synaptic_event=float(d["energy_per_synaptic_event"]),
                energy_per_neuron_update=float(d["energy_per_neuron_update"]),
                energy_per_npu_pass=float(d["energy_per_npu_pass"]),
                static_power=float(d["static_power"]),
                latency_per_pass=float(d["latency_per_pass"]),
                latency_fixed=float(d["latency_fixed"]),
            )
        except KeyError as exc:
            raise ParseError(f"cost model missing coefficient {exc}") from exc


@dataclass(frozen=True)
class ProcessorConfig:
    """Chip model: NPU fabric geometry, per-NPU buffers, cost coefficients."""

    name: str
    n_npu: int
    npus_per_node: int
    buf_net_bytes: int
    buf_dat_bytes: int
    npes_per_npu: int
    clock_hz: float
    cost_model: Optional[CostModel] = None

    def __post_init__(self):
        if self.n_npu <= 0:
            raise ValidationError("n_npu must be > 0")
        if self.npus_per_node <= 0 or self.n_npu % self.npus_per_node != 0:
            raise ValidationError("n_npu must divide evenly into nodes")
        if self.buf_net_bytes <= 0 or self.buf_dat_bytes <= 0:
            raise ValidationError("per-NPU buffers must be > 0")

    @property
    def n_nodes(self) -> int:
        return self.n_npu // self.npus_per_node

    def require_cost_model(self) -> CostModel:
        if self.cost_model is None:
            raise MissingCostModel(f"processor '{self.name}' has no cost model")
        return self.cost_model

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_npu": self.n_npu,
            "npus_per_node": self.npus_per_node,
            "buf_net_bytes": self.buf_net_bytes,
            "buf_dat_bytes": self.buf_dat_bytes,
            "npes_per_npu": self.npes_per_npu,
            "clock_hz": self.clock_hz,
            "cost_model": self.cost_model.to_dict() if self.cost_model else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "ProcessorConfig":
        try:
            cm = d.get("cost_model")
            return ProcessorConfig(
                name=d["name"],
                n_npu=int(d["n_npu"]),
                npus_per_node=int(d["npus_per_node"]),
                buf_net_bytes=int(d["buf_net_bytes"]),
                buf_dat_bytes=int(d["buf_dat_bytes"]),
                npes_per_npu=int(d["npes_per_npu"]),
                clock_hz=float(d["clock_hz"]),
                cost_model=CostModel.from_dict(cm) if cm else None,
            )
        except KeyError as exc:
            raise ParseError(f"processor config missing field {exc}") from exc


def load_calibration(path: str = CALIBRATION_FILE) -> dict:
    """Read the calibration file: named per-workload coefficient profiles."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read calibration file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if "profiles" not in doc or "default" not in doc:
        raise ParseError(f"{path}: calibration file needs 'profiles' and 'default'")
    return doc


def calibration_profile(name: Optional[str] = None, path: str = CALIBRATION_FILE) -> CostModel:
    doc = load_calibration(path)
    key = name or doc["default"]
    try:
        return CostModel.from_dict(doc["profiles"][key]["coefficients"])
    except KeyError as exc:
        raise ParseError(f"calibration profile {exc} not found in {path}") from exc


def default_akida(profile: Optional[str] = None) -> ProcessorConfig:
    """The default chip: 80 NPUs in nodes of 4, 40KiB+60KiB buffers per NPU.

    ``profile`` selects a cost-model calibration profile; the file's
    default profile is used when omitted.
    """
    return ProcessorConfig(
        name="akida-akd1000",
        n_npu=80,
        npus_per_node=4,
        buf_net_bytes=40 * KIB,
        buf_dat_bytes=60 * KIB,
        npes_per_npu=8,
        clock_hz=300e6,
        cost_model=calibration_profile(profile),
    )


def memory_budget_bytes(cfg: ProcessorConfig) -> int:
    """Total on-fabric SRAM: NPU count times the per-NPU buffer pair."""
    return cfg.n_npu * (cfg.buf_net_bytes + cfg.buf_dat_bytes)


def load_processor(path: str) -> ProcessorConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    cfg = ProcessorConfig.from_dict(doc)
    if cfg.cost_model is None:
        # Configs without coefficients fall back to the shipped calibration.
        cfg = replace(cfg, cost_model=calibration_profile())
    return cfg


def save_processor(cfg: ProcessorConfig, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc

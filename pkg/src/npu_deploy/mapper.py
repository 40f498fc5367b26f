"""NPU allocation: place every layer on the fabric at once, minimum passes.

The shipped execution policy is fully sequential within a layer: one
execution engine sweeps the layer's memory NPUs in a single pass, so the
per-layer allocation collapses to its memory demand. The policy is a
pluggable strategy so a parallel variant can raise the execution NPU
count later without touching the plan format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

from .compat import analyze
from .errors import InternalError, IoError, MappingError, ParseError, ValidationError
from .hwmodel import ProcessorConfig
from .netir import LayerSpec, NetworkModel


class SequentialExecution:
    """Minimum-parallelism policy: one execution NPU, one pass per layer."""

    name = "sequential"

    def exe_npus(self, layer: LayerSpec, cfg: ProcessorConfig) -> int:
        return 1

    def passes(self, layer: LayerSpec, npu_alloc: int) -> int:
        return 1


def min_exe_npus(layer: LayerSpec, cfg: ProcessorConfig) -> int:
    """Execution NPUs under the default sequential policy (always 1)."""
    return SequentialExecution().exe_npus(layer, cfg)


@dataclass(frozen=True)
class LayerAllocation:
    layer_index: int
    name: str
    npu_mem: int
    npu_exe: int
    npu_ids: Tuple[int, ...]
    passes: int

    @property
    def npu_alloc(self) -> int:
        return max(self.npu_mem, self.npu_exe)

    def to_dict(self) -> dict:
        return {
            "layer_index": self.layer_index,
            "name": self.name,
            "npu_mem": self.npu_mem,
            "npu_exe": self.npu_exe,
            "npu_alloc": self.npu_alloc,
            "npu_ids": list(self.npu_ids),
            "passes": self.passes,
        }


@dataclass(frozen=True)
class AllocationPlan:
    layers: Tuple[LayerAllocation, ...]
    chip: ProcessorConfig
    model_name: str

    @property
    def cost_c(self) -> int:
        return sum(a.npu_alloc for a in self.layers)

    @property
    def utilization(self) -> Fraction:
        return utilization(self)

    @property
    def total_passes(self) -> int:
        return sum(a.passes for a in self.layers)

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "chip": self.chip.to_dict(),
            "layers": [a.to_dict() for a in self.layers],
            "cost_c": self.cost_c,
            "utilization": render_percent(self.utilization),
        }


def utilization(plan: AllocationPlan) -> Fraction:
    """Allocated NPUs over the chip's NPU count, as an exact percentage."""
    return Fraction(plan.cost_c * 100, plan.chip.n_npu)


def render_percent(value: Fraction) -> float:
    """Round an exact percentage to two decimals (ties away from zero)."""
    hundredths = (value * 100 + Fraction(1, 2)).__floor__()
    return hundredths / 100


def map_network(
    model: NetworkModel,
    cfg: ProcessorConfig,
    policy: Optional[SequentialExecution] = None,
) -> AllocationPlan:
    """Assign contiguous NPU id ranges to layers in order.

    Ranges start on a node boundary whenever the layer spans at least a
    node and alignment still leaves room for the remaining layers.
    Requires a compatible model; run analyze() first.
    """
    policy = policy or SequentialExecution()
    report = analyze(model, cfg)
    if not report.compatible:
        raise MappingError(f"'{model.name}' does not fit '{cfg.name}': {report.reason()}")

    allocs = [
        max(cost.npu_mem, policy.exe_npus(layer, cfg))
        for layer, cost in zip(model.layers, report.per_layer)
    ]
    remaining = sum(allocs)
    if remaining > cfg.n_npu:
        # Possible only if the policy demands more exe NPUs than memory ones.
        raise MappingError(
            f"'{model.name}' needs {remaining} NPUs with policy '{policy.name}', "
            f"chip has {cfg.n_npu}"
        )

    layers = []
    cursor = 0
    seen = set()
    for index, (layer, cost, alloc) in enumerate(zip(model.layers, report.per_layer, allocs)):
        remaining -= alloc
        start = cursor
        if alloc >= cfg.npus_per_node and start % cfg.npus_per_node != 0:
            aligned = -(-start // cfg.npus_per_node) * cfg.npus_per_node
            if aligned + alloc + remaining <= cfg.n_npu:
                start = aligned
        ids = tuple(range(start, start + alloc))
        if ids and (ids[-1] >= cfg.n_npu or seen & set(ids)):
            raise InternalError(f"NPU id assignment overflowed or collided at layer {index}")
        seen |= set(ids)
        cursor = start + alloc
        layers.append(
            LayerAllocation(
                layer_index=index,
                name=layer.name,
                npu_mem=cost.npu_mem,
                npu_exe=policy.exe_npus(layer, cfg),
                npu_ids=ids,
                passes=policy.passes(layer, alloc),
            )
        )
    return AllocationPlan(layers=tuple(layers), chip=cfg, model_name=model.name)


def save_plan(plan: AllocationPlan, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(plan.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_plan(path: str) -> AllocationPlan:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    try:
        chip = ProcessorConfig.from_dict(doc["chip"])
        layers = tuple(
            LayerAllocation(
                layer_index=int(d["layer_index"]),
                name=d["name"],
                npu_mem=int(d["npu_mem"]),
                npu_exe=int(d["npu_exe"]),
                npu_ids=tuple(int(i) for i in d["npu_ids"]),
                passes=int(d["passes"]),
            )
            for d in doc["layers"]
        )
        plan = AllocationPlan(layers=layers, chip=chip, model_name=doc["model"])
    except KeyError as exc:
        raise ParseError(f"{path}: plan missing field {exc}") from exc
    _check_plan(plan)
    return plan


def _check_plan(plan: AllocationPlan) -> None:
    seen = set()
    for alloc in plan.layers:
        ids = set(alloc.npu_ids)
        if len(ids) != len(alloc.npu_ids) or (seen & ids):
            raise ValidationError("plan reuses NPU ids across layers")
        if any(i < 0 or i >= plan.chip.n_npu for i in ids):
            raise ValidationError("plan references NPU ids outside the chip")
        if alloc.passes < 1:
            raise ValidationError("every layer needs at least one pass")
        seen |= ids
    if plan.cost_c > plan.chip.n_npu:
        raise ValidationError("plan over-allocates the fabric")

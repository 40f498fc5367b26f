"""Single-pass compatibility analysis: does the network fit the fabric?

Per layer, the NPU demand is the larger of what the weights need and what
the activations need, each a ceiling division by the matching per-NPU
buffer. A network is compatible when the summed NPU demand fits the
fabric and its parameter footprint fits total on-fabric memory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .errors import EmptySelection
from .hwmodel import ProcessorConfig, memory_budget_bytes
from .netir import LayerSpec, NetworkModel, layer_activation_bytes, layer_param_bytes

log = logging.getLogger(__name__)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class LayerNpuCost:
    """Per-layer NPU demand split into weight-side and data-side needs."""

    layer_index: int
    name: str
    m_net: int
    m_dat: int
    npu_net: int
    npu_dat: int
    npu_mem: int

    def to_dict(self) -> dict:
        return {
            "layer_index": self.layer_index,
            "name": self.name,
            "m_net": self.m_net,
            "m_dat": self.m_dat,
            "npu_net": self.npu_net,
            "npu_dat": self.npu_dat,
            "npu_mem": self.npu_mem,
        }


@dataclass(frozen=True)
class CompatReport:
    per_layer: Tuple[LayerNpuCost, ...]
    npu_total: int
    npu_budget: int
    mem_total: int
    mem_budget: int

    @property
    def compatible(self) -> bool:
        return self.npu_total <= self.npu_budget and self.mem_total <= self.mem_budget

    def reason(self) -> Optional[str]:
        """Human-readable rejection reason, or None when compatible."""
        problems = []
        if self.npu_total > self.npu_budget:
            problems.append(f"needs {self.npu_total} NPUs, chip has {self.npu_budget}")
        if self.mem_total > self.mem_budget:
            problems.append(f"needs {self.mem_total} bytes, chip has {self.mem_budget}")
        return "; ".join(problems) if problems else None

    def to_dict(self) -> dict:
        return {
            "per_layer": [c.to_dict() for c in self.per_layer],
            "npu_total": self.npu_total,
            "npu_budget": self.npu_budget,
            "mem_total": self.mem_total,
            "mem_budget": self.mem_budget,
            "compatible": self.compatible,
        }


def layer_npu_cost(layer: LayerSpec, cfg: ProcessorConfig, index: int = 0) -> LayerNpuCost:
    m_net = layer_param_bytes(layer)
    m_dat = layer_activation_bytes(layer)
    npu_net = _ceil_div(m_net, cfg.buf_net_bytes)
    npu_dat = _ceil_div(m_dat, cfg.buf_dat_bytes)
    return LayerNpuCost(
        layer_index=index,
        name=layer.name,
        m_net=m_net,
        m_dat=m_dat,
        npu_net=npu_net,
        npu_dat=npu_dat,
        npu_mem=max(npu_net, npu_dat),
    )


def analyze(model: NetworkModel, cfg: ProcessorConfig) -> CompatReport:
    """Full compatibility report. Over-budget networks are reported, not errors."""
    costs = tuple(
        layer_npu_cost(layer, cfg, index=i) for i, layer in enumerate(model.layers)
    )
    return CompatReport(
        per_layer=costs,
        npu_total=sum(c.npu_mem for c in costs),
        npu_budget=cfg.n_npu,
        mem_total=sum(c.m_net for c in costs),
        mem_budget=memory_budget_bytes(cfg),
    )


def _rank_key(model: NetworkModel, report: CompatReport, ranking: str):
    if ranking == "npus":
        return (report.npu_total, model.name)
    # Default ranking: declared accuracy first (descending), higher input
    # resolution breaking ties, cheaper NPU demand after that.
    res = model.input_resolution or (0, 0)
    have_acc = model.accuracy is not None
    acc = model.accuracy if have_acc else 0.0
    return (not have_acc, -acc, -(res[0] * res[1]), report.npu_total, model.name)


def select_networks(
    candidates: Sequence[NetworkModel],
    cfg: ProcessorConfig,
    ranking: str = "accuracy",
) -> List[Tuple[NetworkModel, CompatReport]]:
    """Keep the candidates that fit the chip, best-ranked first.

    Raises EmptySelection when nothing fits; the caller is expected to
    come back with a smaller network.
    """
    if not candidates:
        raise EmptySelection(["no candidates supplied"])
    kept = []
    reasons = []
    for model in candidates:
        report = analyze(model, cfg)
        if report.compatible:
            kept.append((model, report))
        else:
            reason = f"{model.name}: {report.reason()}"
            reasons.append(reason)
            log.info("rejected %s", reason)
    if not kept:
        raise EmptySelection(reasons)
    kept.sort(key=lambda pair: _rank_key(pair[0], pair[1], ranking))
    return kept

"""Few-shot learning head: binary-weight fully-connected last layer.

The head keeps K neurons per class; learning a new class never touches
another class's weights. The update rule is overlap-guided: each sample
reinforces the best-matching slot of its class (or claims a fresh one),
OR-ing sample bits into the slot under a per-neuron weight budget. Bits
are evicted lowest-support-first when the budget overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, HeadIncompatible, SlotsExhausted, ValidationError
from .netir import LayerKind, LayerSpec, NetworkModel

UNASSIGNED = -1


def _as_binary_vector(x, n: int, what: str = "input") -> np.ndarray:
    arr = np.asarray(x).reshape(-1)
    if arr.size != n:
        raise DimensionMismatch(f"{what} has {arr.size} elements, head expects {n}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{what} must be binary")
    return arr.astype(np.uint8)


@dataclass
class LearnableHead:
    """Binary FC classifier head with per-class neuron slots.

    ``weights`` is (in_features, total_neurons) with entries in {0, 1};
    ``support`` tracks how many learned samples contributed each bit and
    drives budget eviction. Callers must serialize learn_class calls;
    infer_head on an unchanging head is safe concurrently.
    """

    in_features: int
    n_old_classes: int
    n_new_slots: int
    neurons_per_class: int
    weights: np.ndarray
    neuron_class: np.ndarray
    fire_threshold: np.ndarray
    w_max: int
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        total = (self.n_old_classes + self.n_new_slots) * self.neurons_per_class
        if self.weights.shape != (self.in_features, total):
            raise ValidationError(
                f"head weights must be ({self.in_features}, {total}), "
                f"got {self.weights.shape}"
            )
        if not np.isin(self.weights, (0, 1)).all():
            raise ValidationError("head weights must be binary")
        if self.support is None:
            self.support = self.weights.astype(np.int64)

    @property
    def total_neurons(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.n_old_classes + self.n_new_slots

    def class_slots(self, class_label: int) -> range:
        k = self.neurons_per_class
        return range(class_label * k, (class_label + 1) * k)

    def default_threshold(self, neuron: int) -> int:
        return math.ceil(0.5 * int(self.weights[:, neuron].sum()))


def default_w_max(in_features: int) -> int:
    return math.ceil(in_features / 4)


def _binarize_rows(rows: np.ndarray) -> np.ndarray:
    """Top-k binarization of signed weight rows; k is the median row sparsity."""
    nnz = np.count_nonzero(rows, axis=1)
    k = int(np.median(nnz)) if rows.size else 0
    k = max(1, k)
    out = np.zeros_like(rows, dtype=np.uint8)
    for r in range(rows.shape[0]):
        if k >= rows.shape[1]:
            top = np.arange(rows.shape[1])
        else:
            # Stable selection: largest values first, earliest index on ties.
            order = np.lexsort((np.arange(rows.shape[1]), -rows[r]))
            top = order[:k]
        top = top[rows[r, top] > 0]
        out[r, top] = 1
    return out


def replace_head(
    model: NetworkModel,
    n_new_slots: int,
    neurons_per_class: int,
    w_max: Optional[int] = None,
) -> Tuple[NetworkModel, LearnableHead]:
    """Swap the classifier layer for a learnable binary head.

    Old classes keep K neurons each, initialized from the original rows
    by top-k binarization; new-class slots start empty.
    """
    last = model.layers[-1]
    if last.kind != LayerKind.FULLY_CONNECTED:
        raise HeadIncompatible(
            f"last layer '{last.name}' is {last.kind.value}, head replacement "
            "needs a fully-connected classifier"
        )
    if neurons_per_class < 1 or n_new_slots < 0:
        raise ValidationError("need neurons_per_class >= 1 and n_new_slots >= 0")

    in_features = last.in_neurons
    n_old = last.out_neurons
    k = neurons_per_class
    total = (n_old + n_new_slots) * k
    budget = w_max if w_max is not None else default_w_max(in_features)

    weights = np.zeros((in_features, total), dtype=np.uint8)
    neuron_class = np.full(total, UNASSIGNED, dtype=np.int64)
    if model.has_weights:
        orig, _bias = model.layer_weights(len(model.layers) - 1)
        rows = orig.reshape(last.out_neurons, in_features)
        binary = _binarize_rows(rows)
        for cls in range(n_old):
            proto = binary[cls]
            if proto.sum() > budget:
                keep = np.nonzero(proto)[0][:budget]
                proto = np.zeros_like(proto)
                proto[keep] = 1
            for slot in range(k):
                weights[:, cls * k + slot] = proto
                neuron_class[cls * k + slot] = cls
    else:
        for cls in range(n_old):
            neuron_class[cls * k : (cls + 1) * k] = cls

    head = LearnableHead(
        in_features=in_features,
        n_old_classes=n_old,
        n_new_slots=n_new_slots,
        neurons_per_class=k,
        weights=weights,
        neuron_class=neuron_class,
        fire_threshold=np.zeros(total, dtype=np.int64),
        w_max=budget,
    )
    for n in range(total):
        head.fire_threshold[n] = head.default_threshold(n)

    # When the learned model is simulated as an SNN, fire on the typical
    # match level the head itself demands.
    assigned_thr = head.fire_threshold[head.fire_threshold > 0]
    layer_thr = int(np.median(assigned_thr)) if assigned_thr.size else 1
    head_layer = LayerSpec(
        name=f"{last.name}_learnable",
        kind=LayerKind.FULLY_CONNECTED,
        in_shape=last.in_shape,
        out_shape=(1, 1, total),
        kernel=None,
        stride=None,
        n_weights=in_features * total,
        n_bias=0,
        bit_par=1,
        bit_dat=last.bit_dat,
        u_thr=max(1, layer_thr),
        signed=False,
    )
    new_layers = list(model.layers[:-1]) + [head_layer]
    new_weights = None
    if model.has_weights:
        new_weights = [np.array(w) for w in model.weights[:-1]]
        new_weights.append(head_weight_tensor(head))
    new_model = NetworkModel(
        name=model.name,
        layers=new_layers,
        alpha=model.alpha,
        input_resolution=model.input_resolution,
        accuracy=None,
        weights=new_weights,
        weight_blob=model.weight_blob,
    )
    return new_model, head


def head_weight_tensor(head: LearnableHead) -> np.ndarray:
    """Flatten head weights into blob element order: (out, in) row-major."""
    return head.weights.T.reshape(-1).astype(np.int32)


def sync_model_weights(model: NetworkModel, head: LearnableHead) -> None:
    """Write the head's current weights back into the model's last tensor."""
    model.weights[-1] = head_weight_tensor(head)


def learn_class(
    head: LearnableHead,
    samples: Sequence,
    class_label: int,
) -> LearnableHead:
    """Teach one class from binary samples; other classes stay bit-identical.

    Mutates and returns the head. Raises SlotsExhausted when every slot of
    the class is taken and none overlaps the sample at threshold, which
    signals that K was chosen too small.
    """
    if not (0 <= class_label < head.n_classes):
        raise ValidationError(f"class label {class_label} out of range")
    if not len(samples):
        raise ValidationError("need at least one sample")
    slots = list(head.class_slots(class_label))
    for raw in samples:
        sample = _as_binary_vector(raw, head.in_features, "sample")
        assigned = [n for n in slots if head.neuron_class[n] == class_label
                    and head.weights[:, n].any()]
        target = None
        if assigned:
            overlaps = [int(head.weights[:, n] @ sample) for n in assigned]
            best = int(np.argmax(overlaps))
            if overlaps[best] >= head.fire_threshold[assigned[best]]:
                target = assigned[best]
        if target is None:
            free = [n for n in slots
                    if head.neuron_class[n] in (UNASSIGNED, class_label)
                    and not head.weights[:, n].any()]
            if not free:
                raise SlotsExhausted(
                    f"class {class_label}: all {head.neurons_per_class} slots "
                    "assigned and no slot matches the sample"
                )
            target = free[0]

        head.support[:, target] += sample.astype(np.int64)
        active = np.nonzero(head.support[:, target])[0]
        if active.size > head.w_max:
            # Evict lowest-support bits first; newest (highest index) goes
            # first among equals so established bits survive.
            order = np.lexsort((-active, head.support[active, target]))
            evict = active[order[: active.size - head.w_max]]
            head.support[evict, target] = 0
        head.weights[:, target] = (head.support[:, target] > 0).astype(np.uint8)
        head.neuron_class[target] = class_label
        head.fire_threshold[target] = head.default_threshold(target)
    return head


def infer_head(head: LearnableHead, x) -> Tuple[int, int]:
    """Classify a binary vector: class of the highest-overlap assigned neuron.

    Ties break toward the lowest neuron index. The winning class is
    returned even below the neuron's fire threshold (best effort).
    """
    vec = _as_binary_vector(x, head.in_features)
    assigned = np.nonzero(head.neuron_class != UNASSIGNED)[0]
    if not assigned.size:
        raise ValidationError("head has no assigned neurons")
    scores = head.weights[:, assigned].T @ vec.astype(np.int64)
    winner = assigned[int(np.argmax(scores))]
    return int(head.neuron_class[winner]), int(scores.max())

"""Network intermediate representation: layers, models, manifests, weight blobs.

The manifest format and the bit-exact weight blob layout are documented in
docs/format.md.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import IoError, ParseError, ValidationError

ALLOWED_BITS = (1, 2, 4, 8)


class LayerKind(str, Enum):
    CONV = "Conv"
    DEPTHWISE_CONV = "DepthwiseConv"
    POINTWISE_CONV = "PointwiseConv"
    FULLY_CONNECTED = "FullyConnected"
    INPUT_CONV = "InputConv"


CONV_KINDS = (
    LayerKind.CONV,
    LayerKind.DEPTHWISE_CONV,
    LayerKind.POINTWISE_CONV,
    LayerKind.INPUT_CONV,
)


def _flat(shape) -> int:
    h, w, c = shape
    return h * w * c


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the network IR.

    Shapes are (H, W, C). ``kernel`` and ``stride`` are None for
    fully-connected layers. ``n_weights``/``n_bias`` are element counts;
    ``bit_par``/``bit_dat`` are the parameter and activation precisions.
    """

    name: str
    kind: LayerKind
    in_shape: tuple
    out_shape: tuple
    kernel: Optional[tuple]
    stride: Optional[int]
    n_weights: int
    n_bias: int
    bit_par: int
    bit_dat: int
    padding: str = "same"
    u_thr: Optional[int] = None
    signed: Optional[bool] = None

    def __post_init__(self):
        self.validate()

    @property
    def in_neurons(self) -> int:
        return _flat(self.in_shape)

    @property
    def out_neurons(self) -> int:
        return _flat(self.out_shape)

    @property
    def weights_signed(self) -> bool:
        # Binary layers default to unsigned {0,1}; everything else to
        # two's-complement signed.
        if self.signed is not None:
            return self.signed
        return self.bit_par != 1

    def expected_weight_count(self) -> int:
        kh, kw = self.kernel if self.kernel else (1, 1)
        c_in = self.in_shape[2]
        c_out = self.out_shape[2]
        if self.kind == LayerKind.FULLY_CONNECTED:
            return self.in_neurons * self.out_neurons
        if self.kind == LayerKind.DEPTHWISE_CONV:
            return kh * kw * c_in
        return kh * kw * c_in * c_out

    def validate(self) -> None:
        for label, shape in (("in_shape", self.in_shape), ("out_shape", self.out_shape)):
            if len(shape) != 3 or any(int(d) <= 0 for d in shape):
                raise ValidationError(f"{self.name}: {label} must be three positive ints, got {shape}")
        if self.bit_par not in ALLOWED_BITS:
            raise ValidationError(f"{self.name}: bit_par must be one of {ALLOWED_BITS}")
        if self.bit_dat not in ALLOWED_BITS:
            raise ValidationError(f"{self.name}: bit_dat must be one of {ALLOWED_BITS}")
        if self.n_weights < 0 or self.n_bias < 0:
            raise ValidationError(f"{self.name}: parameter counts must be >= 0")
        if self.padding not in ("same", "valid"):
            raise ValidationError(f"{self.name}: padding must be 'same' or 'valid'")

        if self.kind == LayerKind.FULLY_CONNECTED:
            if self.kernel is not None or self.stride not in (None, 1):
                raise ValidationError(f"{self.name}: FC layers take no kernel/stride")
        else:
            if self.kernel is None or len(self.kernel) != 2:
                raise ValidationError(f"{self.name}: conv layers need a (kh, kw) kernel")
            if self.stride is None or self.stride < 1:
                raise ValidationError(f"{self.name}: conv layers need stride >= 1")
            if self.kind == LayerKind.POINTWISE_CONV and tuple(self.kernel) != (1, 1):
                raise ValidationError(f"{self.name}: pointwise conv requires a 1x1 kernel")
            if self.kind == LayerKind.DEPTHWISE_CONV and self.in_shape[2] != self.out_shape[2]:
                raise ValidationError(f"{self.name}: depthwise conv preserves the channel count")
            exp_h, exp_w = conv_output_hw(
                self.in_shape[0], self.in_shape[1], self.kernel, self.stride, self.padding
            )
            if (self.out_shape[0], self.out_shape[1]) != (exp_h, exp_w):
                raise ValidationError(
                    f"{self.name}: out_shape {self.out_shape[:2]} inconsistent with "
                    f"in_shape/kernel/stride/padding (expected {(exp_h, exp_w)})"
                )

        expected = self.expected_weight_count()
        if self.n_weights != expected:
            raise ValidationError(
                f"{self.name}: n_weights={self.n_weights} but {self.kind.value} "
                f"geometry implies {expected}"
            )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind.value,
            "in_shape": list(self.in_shape),
            "out_shape": list(self.out_shape),
            "kernel": list(self.kernel) if self.kernel else None,
            "stride": self.stride,
            "padding": self.padding,
            "n_weights": self.n_weights,
            "n_bias": self.n_bias,
            "bit_par": self.bit_par,
            "bit_dat": self.bit_dat,
        }
        if self.u_thr is not None:
            d["u_thr"] = self.u_thr
        if self.signed is not None:
            d["signed"] = self.signed
        return d


def conv_output_hw(h: int, w: int, kernel, stride: int, padding: str):
    kh, kw = kernel
    if padding == "same":
        return math.ceil(h / stride), math.ceil(w / stride)
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def param_bytes(n_weights: int, n_bias: int, bit_par: int) -> int:
    """Bytes for n parameters at bit_par bits each, rounded up to whole bytes."""
    return ((n_weights + n_bias) * bit_par + 7) // 8


def activation_bytes(h: int, w: int, c: int, bit_dat: int) -> int:
    """Bytes for an (H, W, C) feature map at bit_dat bits per element."""
    return (h * w * c * bit_dat + 7) // 8


def layer_param_bytes(layer: LayerSpec) -> int:
    """Byte footprint of a layer's weights + bias at its parameter precision."""
    return param_bytes(layer.n_weights, layer.n_bias, layer.bit_par)


def layer_activation_bytes(layer: LayerSpec) -> int:
    """Byte footprint of a layer's output feature map at its data precision."""
    h, w, c = layer.out_shape
    return activation_bytes(h, w, c, layer.bit_dat)


@dataclass(eq=False)
class NetworkModel:
    """A validated network: ordered layers plus optional quantized weights.

    ``weights[i]`` is a flat int32 array of length n_weights + n_bias for
    layer i (weights first, then bias). Models are treated as immutable
    after load.
    """

    name: str
    layers: Sequence[LayerSpec]
    alpha: Optional[float] = None
    input_resolution: Optional[tuple] = None
    accuracy: Optional[float] = None
    total_param_bytes: Optional[int] = None
    weights: Optional[list] = None
    weight_blob: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ValidationError(f"{self.name}: a model needs at least one layer")
        if self.alpha is not None and not (0.0 < self.alpha <= 1.0):
            raise ValidationError(f"{self.name}: alpha must lie in (0, 1]")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if tuple(prev.out_shape) != tuple(nxt.in_shape):
                raise ValidationError(
                    f"{self.name}: layer '{nxt.name}' in_shape {nxt.in_shape} does not "
                    f"chain from '{prev.name}' out_shape {prev.out_shape}"
                )
        if self.weights is not None:
            if len(self.weights) != len(self.layers):
                raise ValidationError(f"{self.name}: one weight tensor per layer required")
            for layer, w in zip(self.layers, self.weights):
                expected = layer.n_weights + layer.n_bias
                if w.size != expected:
                    raise ValidationError(
                        f"{self.name}: layer '{layer.name}' blob has {w.size} elements, "
                        f"expected {expected}"
                    )
        if self.total_param_bytes is not None:
            actual = sum(layer_param_bytes(l) for l in self.layers)
            if actual != self.total_param_bytes:
                raise ValidationError(
                    f"{self.name}: declared total_param_bytes={self.total_param_bytes} "
                    f"but layers sum to {actual}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def param_bytes(self) -> int:
        return sum(layer_param_bytes(l) for l in self.layers)

    def layer_weights(self, index: int):
        """(weights, bias) arrays for one layer, split from the flat tensor."""
        layer = self.layers[index]
        flat = self.weights[index]
        return flat[: layer.n_weights], flat[layer.n_weights :]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "alpha": self.alpha,
            "input_resolution": list(self.input_resolution) if self.input_resolution else None,
            "layers": [l.to_dict() for l in self.layers],
        }
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        if self.total_param_bytes is not None:
            d["total_param_bytes"] = self.total_param_bytes
        if self.weight_blob is not None:
            d["weight_blob"] = self.weight_blob
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkModel):
            return NotImplemented
        if self.to_dict() != other.to_dict():
            return False
        if (self.weights is None) != (other.weights is None):
            return False
        if self.weights is not None:
            return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        return True


# --- weight blob packing -------------------------------------------------
#
# Layers concatenated in manifest order; within a layer weights then bias,
# row-major (out-channel, in-channel, kh, kw). Sub-byte precisions pack
# LSB-first and each layer pads to a byte boundary.


def _pack_values(values: np.ndarray, bits: int) -> bytes:
    mask = (1 << bits) - 1
    encoded = (values.astype(np.int64) & mask).astype(np.uint64)
    if bits == 8:
        return encoded.astype(np.uint8).tobytes()
    per_byte = 8 // bits
    n = encoded.size
    padded = np.zeros(((n + per_byte - 1) // per_byte) * per_byte, dtype=np.uint64)
    padded[:n] = encoded
    groups = padded.reshape(-1, per_byte)
    shifts = np.arange(per_byte, dtype=np.uint64) * np.uint64(bits)
    packed = (groups << shifts).sum(axis=1).astype(np.uint8)
    return packed.tobytes()


def _unpack_values(raw: bytes, count: int, bits: int, signed: bool) -> np.ndarray:
    data = np.frombuffer(raw, dtype=np.uint8)
    if bits == 8:
        values = data[:count].astype(np.int64)
    else:
        per_byte = 8 // bits
        mask = (1 << bits) - 1
        shifts = np.arange(per_byte, dtype=np.uint8) * bits
        expanded = (data[:, None] >> shifts[None, :]) & mask
        values = expanded.reshape(-1)[:count].astype(np.int64)
    if signed:
        sign_bit = 1 << (bits - 1)
        values = np.where(values >= sign_bit, values - (1 << bits), values)
    return values.astype(np.int32)


def pack_weights(model: NetworkModel) -> bytes:
    out = bytearray()
    for layer, flat in zip(model.layers, model.weights):
        out += _pack_values(np.asarray(flat), layer.bit_par)
    return bytes(out)


def unpack_weights(model_layers: Sequence[LayerSpec], blob: bytes) -> list:
    tensors = []
    offset = 0
    for layer in model_layers:
        count = layer.n_weights + layer.n_bias
        nbytes = (count * layer.bit_par + 7) // 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValidationError(
                f"weight blob truncated at layer '{layer.name}' "
                f"(need {nbytes} bytes, have {len(chunk)})"
            )
        tensors.append(_unpack_values(chunk, count, layer.bit_par, layer.weights_signed))
        offset += nbytes
    if offset != len(blob):
        raise ValidationError(f"weight blob has {len(blob) - offset} trailing bytes")
    return tensors


# --- manifest I/O ---------------------------------------------------------


def _layer_from_dict(d: dict) -> LayerSpec:
    try:
        kind = LayerKind(d["kind"])
        return LayerSpec(
            name=d["name"],
            kind=kind,
            in_shape=tuple(d["in_shape"]),
            out_shape=tuple(d["out_shape"]),
            kernel=tuple(d["kernel"]) if d.get("kernel") else None,
            stride=d.get("stride"),
            padding=d.get("padding", "same"),
            n_weights=int(d["n_weights"]),
            n_bias=int(d["n_bias"]),
            bit_par=int(d["bit_par"]),
            bit_dat=int(d["bit_dat"]),
            u_thr=d.get("u_thr"),
            signed=d.get("signed"),
        )
    except KeyError as exc:
        raise ParseError(f"layer entry missing field {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"bad layer field: {exc}") from exc


def model_from_dict(doc: dict, base_dir: Optional[str] = None) -> NetworkModel:
    if not isinstance(doc, dict):
        raise ParseError("manifest root must be a JSON object")
    try:
        name = doc["name"]
        layer_docs = doc["layers"]
    except KeyError as exc:
        raise ParseError(f"manifest missing field {exc}") from exc
    if not isinstance(layer_docs, list):
        raise ParseError("manifest 'layers' must be a list")
    layers = [_layer_from_dict(d) for d in layer_docs]

    weights = None
    blob_path = doc.get("weight_blob")
    if blob_path is not None and base_dir is not None:
        full = os.path.join(base_dir, blob_path)
        try:
            with open(full, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise IoError(f"cannot read weight blob {full}: {exc}") from exc
        weights = unpack_weights(layers, blob)

    res = doc.get("input_resolution")
    return NetworkModel(
        name=name,
        layers=layers,
        alpha=doc.get("alpha"),
        input_resolution=tuple(res) if res else None,
        accuracy=doc.get("accuracy"),
        total_param_bytes=doc.get("total_param_bytes"),
        weights=weights,
        weight_blob=blob_path,
    )


def load_model(path: str) -> NetworkModel:
    """Load and validate a model manifest (plus its weight blob if present)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def save_model(model: NetworkModel, path: str) -> None:
    """Write the manifest; the weight blob goes next to it when present."""
    doc = model.to_dict()
    base = os.path.dirname(os.path.abspath(path))
    if model.weights is not None:
        blob_name = model.weight_blob or (os.path.splitext(os.path.basename(path))[0] + ".bin")
        doc["weight_blob"] = blob_name
        try:
            with open(os.path.join(base, blob_name), "wb") as fh:
                fh.write(pack_weights(model))
        except OSError as exc:
            raise IoError(f"cannot write weight blob: {exc}") from exc
    else:
        doc.pop("weight_blob", None)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc

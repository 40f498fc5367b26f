"""Discrete-time event-driven execution of a mapped network with LIF neurons.

Time advances in T global synchronous steps. Per step, each layer in
mapping order turns its incoming spike events into integer input currents,
updates membrane potentials, and emits unit spikes where the threshold is
reached. A spiking input integrates into the membrane; a silent step
decays it (fixed-point multiply, power-of-two denominator), so results
are platform-exact. All arithmetic is integer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EncodingError,
    IoError,
    MissingWeights,
    ParseError,
    ShapeMismatch,
    ValidationError,
)
from .mapper import AllocationPlan
from .netir import LayerKind, LayerSpec, NetworkModel

LEAK_SHIFT = 8  # leak factors quantize to 1/256 steps


@dataclass(frozen=True)
class LeakFactor:
    """Multiplicative decay num/2^shift applied on silent steps."""

    num: int
    shift: int = LEAK_SHIFT

    def __post_init__(self):
        if not (0 <= self.num <= (1 << self.shift)):
            raise ValidationError("leak factor must lie in [0, 1]")

    @staticmethod
    def from_float(value: float) -> "LeakFactor":
        if not (0.0 <= value <= 1.0):
            raise ValidationError("leak must lie in [0, 1]")
        return LeakFactor(num=round(value * (1 << LEAK_SHIFT)))

    def apply(self, u):
        # Arithmetic shift floors; exact for the non-negative potentials
        # used throughout and deterministic for negative ones.
        return (u * self.num) >> self.shift


@dataclass(frozen=True)
class NeuronState:
    u_mem: int
    u_thr: int
    u_rst: int = 0
    leak: LeakFactor = LeakFactor(1 << LEAK_SHIFT)


def step_neuron(state: NeuronState, input_current: int) -> Tuple[NeuronState, bool]:
    """One LIF step: integrate on input, decay when silent, fire-and-reset."""
    if input_current != 0:
        u = state.u_mem + input_current
    else:
        u = state.leak.apply(state.u_mem)
    fired = u >= state.u_thr
    if fired:
        u = state.u_rst
    return NeuronState(u_mem=u, u_thr=state.u_thr, u_rst=state.u_rst, leak=state.leak), fired


@dataclass
class SpikeFrame:
    """Sparse events for one timestep: coordinate arrays plus magnitudes."""

    shape: Tuple[int, int, int]
    t: int
    h: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    w: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    c: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mag: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        n = len(self.mag)
        if not (len(self.h) == len(self.w) == len(self.c) == n):
            raise ValidationError("event coordinate arrays must share one length")
        if n:
            hh, ww, cc = self.shape
            if (
                self.h.min() < 0 or self.h.max() >= hh
                or self.w.min() < 0 or self.w.max() >= ww
                or self.c.min() < 0 or self.c.max() >= cc
            ):
                raise ValidationError("event coordinates fall outside the frame shape")
            if self.mag.min() < 1:
                raise ValidationError("event magnitudes must be >= 1")

    @property
    def n_events(self) -> int:
        return len(self.mag)

    def to_grid(self) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=np.int64)
        np.add.at(grid, (self.h, self.w, self.c), self.mag)
        return grid


class EncodeMode(str, Enum):
    INTENSITY_THRESHOLD = "threshold"
    RATE = "rate"


def encode(
    tensor: np.ndarray,
    timesteps: int,
    mode: EncodeMode = EncodeMode.RATE,
    v_max: int = 255,
    threshold: Optional[int] = None,
) -> List[SpikeFrame]:
    """Turn a dense (H, W, C) integer tensor into T spike frames.

    Threshold mode emits one graded event per above-threshold pixel at
    t=0. Rate mode emits round(v / v_max * T) unit events per pixel,
    spread uniformly over the window (integer arithmetic throughout).
    """
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ShapeMismatch(f"input tensor must be (H, W, C), got shape {tensor.shape}")
    if timesteps < 1:
        raise EncodingError("timesteps must be >= 1")
    if tensor.size and (tensor.min() < 0 or tensor.max() > v_max):
        raise EncodingError(f"values must lie in [0, {v_max}]")
    shape = tuple(int(d) for d in tensor.shape)
    frames = [SpikeFrame(shape=shape, t=t) for t in range(timesteps)]

    if mode == EncodeMode.INTENSITY_THRESHOLD:
        thr = threshold if threshold is not None else (v_max + 1) // 2
        h, w, c = np.nonzero(tensor >= max(thr, 1))
        mags = tensor[h, w, c].astype(np.int64)
        frames[0] = SpikeFrame(
            shape=shape, t=0,
            h=h.astype(np.int64), w=w.astype(np.int64), c=c.astype(np.int64), mag=mags,
        )
        return frames

    # Rate coding: n spikes at steps floor(k * T / n), k = 0..n-1.
    values = tensor.astype(np.int64)
    counts = (2 * values * timesteps + v_max) // (2 * v_max)
    per_step = [[] for _ in range(timesteps)]
    h_idx, w_idx, c_idx = np.nonzero(counts)
    for h, w, c in zip(h_idx, w_idx, c_idx):
        n = counts[h, w, c]
        for k in range(n):
            per_step[(k * timesteps) // n].append((h, w, c))
    for t, coords in enumerate(per_step):
        if coords:
            arr = np.asarray(coords, dtype=np.int64)
            frames[t] = SpikeFrame(
                shape=shape, t=t,
                h=arr[:, 0], w=arr[:, 1], c=arr[:, 2],
                mag=np.ones(len(coords), dtype=np.int64),
            )
    return frames


@dataclass
class SimParams:
    """Run-time neuron parameters; per-layer thresholds override the model."""

    timesteps: int
    u_rst: int = 0
    leak: LeakFactor = LeakFactor.from_float(0.5)
    u_thr: Optional[Sequence[Optional[int]]] = None

    def threshold_for(self, index: int, layer: LayerSpec, weights: np.ndarray,
                      bias: np.ndarray, v_in_max: int) -> int:
        if self.u_thr is not None and index < len(self.u_thr) and self.u_thr[index] is not None:
            return int(self.u_thr[index])
        if layer.u_thr is not None:
            return int(layer.u_thr)
        return default_threshold(layer, weights, bias, v_in_max)


def default_threshold(layer: LayerSpec, weights: np.ndarray, bias: np.ndarray,
                      v_in_max: int) -> int:
    """Heuristic: half the largest positive per-step accumulation."""
    w = _weight_tensor(layer, weights)
    if layer.kind == LayerKind.FULLY_CONNECTED:
        pos = np.maximum(w, 0).sum(axis=1)
    elif layer.kind == LayerKind.DEPTHWISE_CONV:
        pos = np.maximum(w, 0).sum(axis=(1, 2))
    else:
        pos = np.maximum(w, 0).sum(axis=(1, 2, 3))
    max_acc = int(pos.max()) * v_in_max if pos.size else 0
    if bias.size:
        max_acc += int(np.maximum(bias, 0).max())
    return max(1, max_acc // 2)


@dataclass(frozen=True)
class RunStats:
    synaptic_events: int
    neuron_updates: int
    output_spikes: Tuple[int, ...]
    timesteps: int

    @property
    def predicted_class(self) -> int:
        spikes = np.asarray(self.output_spikes)
        return int(np.argmax(spikes)) if spikes.size else 0

    def to_dict(self) -> dict:
        return {
            "synaptic_events": self.synaptic_events,
            "neuron_updates": self.neuron_updates,
            "output_spikes": list(self.output_spikes),
            "timesteps": self.timesteps,
            "predicted_class": self.predicted_class,
        }


def save_stats(stats: RunStats, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_stats(path: str) -> RunStats:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return RunStats(
            synaptic_events=int(doc["synaptic_events"]),
            neuron_updates=int(doc["neuron_updates"]),
            output_spikes=tuple(int(s) for s in doc["output_spikes"]),
            timesteps=int(doc["timesteps"]),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: stats missing field {exc}") from exc


# --- layer compute kernels -------------------------------------------------


def _weight_tensor(layer: LayerSpec, flat: np.ndarray) -> np.ndarray:
    """Reshape the flat blob into the layer's logical weight tensor.

    FC: (out, in). Conv family: (c_out, c_in, kh, kw). Depthwise:
    (c, kh, kw). Matches the blob element order in docs/format.md.
    """
    kh, kw = layer.kernel if layer.kernel else (1, 1)
    c_in = layer.in_shape[2]
    c_out = layer.out_shape[2]
    if layer.kind == LayerKind.FULLY_CONNECTED:
        return flat.reshape(layer.out_neurons, layer.in_neurons)
    if layer.kind == LayerKind.DEPTHWISE_CONV:
        return flat.reshape(c_in, kh, kw)
    return flat.reshape(c_out, c_in, kh, kw)


def _same_padding(h: int, w: int, kernel, stride: int, out_hw) -> Tuple[int, int]:
    kh, kw = kernel
    oh, ow = out_hw
    pad_h = max((oh - 1) * stride + kh - h, 0)
    pad_w = max((ow - 1) * stride + kw - w, 0)
    return pad_h // 2, pad_w // 2


class _LayerEngine:
    """Precomputed state for one layer: weights, thresholds, event fanouts."""

    def __init__(self, layer: LayerSpec, weights: np.ndarray, bias: np.ndarray,
                 u_thr: int, params: SimParams):
        self.layer = layer
        self.w = _weight_tensor(layer, weights).astype(np.int64)
        self.bias = bias.astype(np.int64)
        self.u_thr = u_thr
        self.u_rst = params.u_rst
        self.leak = params.leak
        self.u = np.full(layer.out_neurons, params.u_rst, dtype=np.int64)
        self.out_shape = tuple(layer.out_shape)
        self.in_shape = tuple(layer.in_shape)
        if layer.kind == LayerKind.FULLY_CONNECTED:
            self.fanout = np.count_nonzero(self.w, axis=0).astype(np.int64)
        elif layer.kind == LayerKind.DEPTHWISE_CONV:
            self.nnz_tap = (self.w != 0).astype(np.int64)  # (c, kh, kw)
        else:
            self.nnz_tap = np.count_nonzero(self.w, axis=0).astype(np.int64)  # (c_in, kh, kw)
        if layer.kind != LayerKind.FULLY_CONNECTED:
            kh, kw = layer.kernel
            if layer.padding == "same":
                self.pad = _same_padding(
                    self.in_shape[0], self.in_shape[1], layer.kernel, layer.stride,
                    (self.out_shape[0], self.out_shape[1]),
                )
            else:
                self.pad = (0, 0)

    def bias_current(self) -> np.ndarray:
        if not self.bias.size or not np.any(self.bias):
            return np.zeros(0, dtype=np.int64)
        if self.layer.kind == LayerKind.FULLY_CONNECTED:
            return np.asarray(self.bias, dtype=np.int64)
        grid = np.zeros(self.out_shape, dtype=np.int64)
        grid[:, :] = self.bias[None, None, :]
        return grid.reshape(-1)

    def currents_from_events(self, frame: SpikeFrame) -> np.ndarray:
        """Synaptic input currents (flattened over out neurons) for one step."""
        if self.layer.kind == LayerKind.FULLY_CONNECTED:
            cur = np.zeros(self.layer.out_neurons, dtype=np.int64)
            if frame.n_events:
                hh, ww, cc = self.in_shape
                idx = (frame.h * ww + frame.w) * cc + frame.c
                cur += self.w[:, idx] @ frame.mag
            return cur
        grid = frame.to_grid()
        return self._conv_currents(grid).reshape(-1)

    def _conv_currents(self, grid: np.ndarray) -> np.ndarray:
        layer = self.layer
        kh, kw = layer.kernel
        s = layer.stride
        oh, ow, c_out = self.out_shape
        pad_t, pad_l = self.pad
        h_in, w_in, c_in = self.in_shape
        padded = np.zeros(
            (max(h_in + 2 * pad_t + kh, (oh - 1) * s + kh),
             max(w_in + 2 * pad_l + kw, (ow - 1) * s + kw),
             c_in),
            dtype=np.int64,
        )
        padded[pad_t : pad_t + h_in, pad_l : pad_l + w_in, :] = grid
        out = np.zeros((oh, ow, c_out), dtype=np.int64)
        for i in range(kh):
            for j in range(kw):
                window = padded[i : i + oh * s : s, j : j + ow * s : s, :]
                if layer.kind == LayerKind.DEPTHWISE_CONV:
                    out += window * self.w[:, i, j][None, None, :]
                else:
                    out += window @ self.w[:, :, i, j].T
        return out

    def count_macs(self, frame: SpikeFrame) -> int:
        """Nonzero weight-times-spike products triggered by these events."""
        if frame.n_events == 0:
            return 0
        if self.layer.kind == LayerKind.FULLY_CONNECTED:
            hh, ww, cc = self.in_shape
            idx = (frame.h * ww + frame.w) * cc + frame.c
            return int(self.fanout[idx].sum())
        kh, kw = self.layer.kernel
        s = self.layer.stride
        oh, ow, _ = self.out_shape
        pad_t, pad_l = self.pad
        total = 0
        for i in range(kh):
            for j in range(kw):
                oh_pos = frame.h + pad_t - i
                ow_pos = frame.w + pad_l - j
                valid = (
                    (oh_pos % s == 0) & (oh_pos >= 0) & (oh_pos < oh * s)
                    & (ow_pos % s == 0) & (ow_pos >= 0) & (ow_pos < ow * s)
                )
                if np.any(valid):
                    total += int(self.nnz_tap[frame.c[valid], i, j].sum())
        return total

    def step(self, frame: SpikeFrame, workers: int = 1) -> SpikeFrame:
        """Advance the layer one timestep; returns the emitted spike frame."""
        if workers <= 1 or frame.n_events <= 1:
            currents = self.currents_from_events(frame)
        else:
            # Integer addition is associative, so chunked accumulation in
            # fixed chunk order is bit-identical to the single-worker path.
            currents = np.zeros(self.layer.out_neurons, dtype=np.int64)
            bounds = np.linspace(0, frame.n_events, workers + 1, dtype=int)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                if lo == hi:
                    continue
                chunk = SpikeFrame(
                    shape=frame.shape, t=frame.t,
                    h=frame.h[lo:hi], w=frame.w[lo:hi],
                    c=frame.c[lo:hi], mag=frame.mag[lo:hi],
                )
                currents += self.currents_from_events(chunk)
        bias = self.bias_current()
        if bias.size:
            currents = currents + bias

        silent = currents == 0
        integrated = self.u + currents
        decayed = self.leak.apply(self.u)
        self.u = np.where(silent, decayed, integrated)
        fired = self.u >= self.u_thr
        self.u[fired] = self.u_rst

        flat = np.nonzero(fired)[0].astype(np.int64)
        oh, ow, oc = self.out_shape
        return SpikeFrame(
            shape=self.out_shape,
            t=frame.t,
            h=flat // (ow * oc),
            w=(flat // oc) % ow,
            c=flat % oc,
            mag=np.ones(flat.size, dtype=np.int64),
        )


def run(
    model: NetworkModel,
    plan: AllocationPlan,
    frames: Sequence[SpikeFrame],
    params: SimParams,
    workers: int = 1,
    v_in_max: int = 255,
) -> RunStats:
    """Execute the mapped network over the spike frames.

    Layers run in mapping order each timestep; statistics count one
    synaptic event per nonzero weight-spike product and one neuron
    update per neuron per timestep. Bit-identical across worker counts.
    """
    if not model.has_weights:
        raise MissingWeights(f"'{model.name}' carries no weight blobs")
    if plan.model_name != model.name or len(plan.layers) != len(model.layers):
        raise ShapeMismatch("plan does not belong to this model")
    if len(frames) != params.timesteps:
        raise ShapeMismatch(
            f"{len(frames)} frames supplied for {params.timesteps} timesteps"
        )
    in_shape = tuple(model.layers[0].in_shape)
    for frame in frames:
        if tuple(frame.shape) != in_shape:
            raise ShapeMismatch(f"frame shape {frame.shape} != model input {in_shape}")

    engines = []
    v_max = v_in_max
    for i, layer in enumerate(model.layers):
        w, b = model.layer_weights(i)
        thr = params.threshold_for(i, layer, w, b, v_max)
        engines.append(_LayerEngine(layer, w, b, thr, params))
        v_max = (1 << layer.bit_dat) - 1  # next layer sees this layer's spikes

    n_classes = model.layers[-1].out_neurons
    out_counts = np.zeros(n_classes, dtype=np.int64)
    synaptic = 0
    for t in range(params.timesteps):
        current_frame = frames[t]
        for engine in engines:
            synaptic += engine.count_macs(current_frame)
            current_frame = engine.step(current_frame, workers=workers)
        if current_frame.n_events:
            hh, ww, cc = current_frame.shape
            idx = (current_frame.h * ww + current_frame.w) * cc + current_frame.c
            np.add.at(out_counts, idx, current_frame.mag)

    updates = sum(l.out_neurons for l in model.layers) * params.timesteps
    return RunStats(
        synaptic_events=int(synaptic),
        neuron_updates=int(updates),
        output_spikes=tuple(int(x) for x in out_counts),
        timesteps=params.timesteps,
    )


# --- dense input tensor file ------------------------------------------------
#
# 16-byte header: magic "NPUT", H, W, C as uint16, dtype code uint16,
# 4 zero pad bytes; then little-endian values. Codes: 0=u8 1=i8 2=u16
# 3=i16 4=i32.

_TENSOR_MAGIC = b"NPUT"
_DTYPES = {0: np.uint8, 1: np.int8, 2: np.uint16, 3: np.int16, 4: np.int32}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_tensor(tensor: np.ndarray, path: str) -> None:
    tensor = np.ascontiguousarray(tensor)
    if tensor.ndim != 3:
        raise ShapeMismatch("tensor files hold (H, W, C) arrays")
    code = _DTYPE_CODES.get(tensor.dtype)
    if code is None:
        raise ValidationError(f"unsupported tensor dtype {tensor.dtype}")
    h, w, c = tensor.shape
    header = struct.pack("<4sHHHHI", _TENSOR_MAGIC, h, w, c, code, 0)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(tensor.astype(tensor.dtype.newbyteorder("<")).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_tensor(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != _TENSOR_MAGIC:
        raise ParseError(f"{path}: not a tensor file")
    _, h, w, c, code, _ = struct.unpack("<4sHHHHI", raw[:16])
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise ParseError(f"{path}: unknown dtype code {code}")
    expected = h * w * c * np.dtype(dtype).itemsize
    body = raw[16:]
    if len(body) != expected:
        raise ParseError(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    return np.frombuffer(body, dtype=np.dtype(dtype).newbyteorder("<")).reshape(h, w, c)

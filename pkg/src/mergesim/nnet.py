"""Minimal fully-connected network: forward pass, exact TD-loss backprop, Adam.

Everything is plain float64 numpy so gradients can be checked against finite
differences at tight tolerances. Hidden layers use rectifier activations, the
output layer is linear. Parameters live in one flat vector with per-layer
matrix views, which keeps the optimizer a handful of vectorized operations.
Checkpoints use a small self-describing binary format (see ``save_params``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, ContractViolation

CHECKPOINT_MAGIC = b"MRGNET"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths from input to output, e.g. (9, 256, 256, 128, 6)."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ContractViolation(f"invalid layer sizes {self.layer_sizes}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes, self.layer_sizes[1:]))


def _carve(flat: np.ndarray, sizes: Sequence[int]):
    """Per-layer weight/bias views into one flat buffer."""
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        biases.append(flat[offset:offset + fan_out])
        offset += fan_out
    return weights, biases


class NetworkParams:
    """All parameters of one network.

    ``flat`` owns the storage; ``weights[i]`` (fan_in, fan_out) and
    ``biases[i]`` are views into it, so mutating either side is mutating the
    same numbers.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        sizes = [np.asarray(weights[0]).shape[0]] + [np.asarray(w).shape[1]
                                                     for w in weights]
        spec = NetworkSpec(tuple(sizes))
        flat = np.empty(spec.n_params, dtype=np.float64)
        views_w, views_b = _carve(flat, spec.layer_sizes)
        for view, arr in zip(views_w, weights):
            view[...] = arr
        for view, arr in zip(views_b, biases):
            view[...] = arr
        self._init_from(spec, flat, views_w, views_b)

    def _init_from(self, spec, flat, weights, biases):
        self.spec = spec
        self.flat = flat
        self.weights = weights
        self.biases = biases

    @classmethod
    def from_flat(cls, spec: NetworkSpec, flat: np.ndarray) -> "NetworkParams":
        if flat.shape != (spec.n_params,):
            raise ContractViolation(f"flat vector has {flat.shape}, spec needs "
                                    f"({spec.n_params},)")
        obj = cls.__new__(cls)
        views_w, views_b = _carve(flat, spec.layer_sizes)
        obj._init_from(spec, flat, views_w, views_b)
        return obj

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "NetworkParams":
        return cls.from_flat(spec, np.zeros(spec.n_params))

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_flat(self.spec, self.flat.copy())

    def flatten(self) -> np.ndarray:
        return self.flat.copy()


class Gradient:
    """TD-loss gradient shaped like the parameters (flat plus per-layer views)."""

    def __init__(self, spec: NetworkSpec):
        self.flat = np.zeros(spec.n_params)
        self.weights, self.biases = _carve(self.flat, spec.layer_sizes)


def xavier_init(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform Xavier weights, zero biases."""
    params = NetworkParams.zeros(spec)
    for w in params.weights:
        fan_in, fan_out = w.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return params


def forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Q-values for a single observation (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("non-finite network input")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cached(params: NetworkParams, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    activations = [x]
    pre = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i != last else z
        activations.append(h)
    return pre, activations


def td_gradient(params: NetworkParams, states: np.ndarray, action_idx: np.ndarray,
                targets: np.ndarray) -> Gradient:
    """Exact gradient of the mean squared TD loss over a batch.

    Loss = (1/n) * sum_i (y_i - Q(s_i)[a_i])^2; only the selected output unit
    of each sample carries error.
    """
    states = np.asarray(states, dtype=np.float64)
    action_idx = np.asarray(action_idx, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    if states.ndim != 2:
        raise ContractViolation("states must be a (batch, features) array")
    n = states.shape[0]
    if np.any(action_idx < 0) or np.any(action_idx >= params.spec.n_out):
        raise ContractViolation("action index out of range")
    if not np.all(np.isfinite(targets)):
        raise ContractViolation("non-finite TD targets")

    pre, activations = _forward_cached(params, states)
    q = activations[-1]
    picked = q[np.arange(n), action_idx]

    delta = np.zeros_like(q)
    delta[np.arange(n), action_idx] = -2.0 * (targets - picked) / n

    grad = Gradient(params.spec)
    for i in range(len(params.weights) - 1, -1, -1):
        np.matmul(activations[i].T, delta, out=grad.weights[i])
        delta.sum(axis=0, out=grad.biases[i])
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0.0)
    return grad


def td_loss(params: NetworkParams, states: np.ndarray, action_idx: np.ndarray,
            targets: np.ndarray) -> float:
    """Mean squared TD loss (used by tests as the finite-difference target)."""
    q = forward(params, np.asarray(states, dtype=np.float64))
    picked = q[np.arange(q.shape[0]), np.asarray(action_idx, dtype=np.intp)]
    return float(np.mean((np.asarray(targets, dtype=np.float64) - picked) ** 2))


class AdamState:
    """First/second moment accumulators plus hyper-parameters."""

    def __init__(self, spec: NetworkSpec, learning_rate: float = 0.0013,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step = 0
        self.m = np.zeros(spec.n_params)
        self.v = np.zeros(spec.n_params)
        self._scratch = np.empty(spec.n_params)

    @classmethod
    def for_params(cls, params: NetworkParams, **kwargs) -> "AdamState":
        return cls(params.spec, **kwargs)


def adam_step(params: NetworkParams, state: AdamState, gradient: Gradient) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    g = gradient.flat
    m, v, scratch = state.m, state.v, state._scratch

    m *= b1
    np.multiply(g, 1.0 - b1, out=scratch)
    m += scratch

    v *= b2
    np.multiply(g, g, out=scratch)
    scratch *= 1.0 - b2
    v += scratch

    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    np.divide(v, corr2, out=scratch)
    np.sqrt(scratch, out=scratch)
    scratch += state.epsilon
    np.divide(m, scratch, out=scratch)
    scratch *= state.learning_rate / corr1
    params.flat -= scratch


# ---------------------------------------------------------------------------
# Checkpoint format
#
#   bytes 0..5   magic "MRGNET"
#   bytes 6..7   format version, little-endian uint16
#   bytes 8..11  header length H, little-endian uint32
#   bytes 12..12+H  UTF-8 JSON header:
#       {"layer_sizes": [...], "dtype": "<f8",
#        "arrays": [{"name": "w0"|"b0"|..., "shape": [...]}, ...],
#        "metadata": {...}}
#   remainder    raw little-endian float64 buffers, concatenated in header order
# ---------------------------------------------------------------------------

def save_params(params: NetworkParams, path, metadata: Optional[dict] = None) -> None:
    """Write a checkpoint; the round-trip through ``load_params`` is bit-exact."""
    arrays = []
    entries = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays.append(np.ascontiguousarray(w, dtype="<f8"))
        entries.append({"name": f"w{i}", "shape": list(w.shape)})
        arrays.append(np.ascontiguousarray(b, dtype="<f8"))
        entries.append({"name": f"b{i}", "shape": list(b.shape)})
    header = {
        "layer_sizes": list(params.spec.layer_sizes),
        "dtype": "<f8",
        "arrays": entries,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())


def load_params(path, expect_spec: Optional[NetworkSpec] = None) -> tuple[NetworkParams, dict]:
    """Read a checkpoint, returning (params, metadata).

    Raises CheckpointError on a bad magic, unsupported version, truncated
    payload, or (when ``expect_spec`` is given) a layer-shape mismatch.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:6] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a mergesim checkpoint")
    (version,) = struct.unpack_from("<H", data, 6)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", data, 8)
    body_start = 12 + header_len
    if len(data) < body_start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:body_start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    layer_sizes = tuple(header.get("layer_sizes", ()))
    arrays = {}
    offset = body_start
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        end = offset + nbytes
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(
            data[offset:end], dtype="<f8").reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")

    weights, biases = [], []
    try:
        for i in range(len(layer_sizes) - 1):
            weights.append(arrays[f"w{i}"])
            biases.append(arrays[f"b{i}"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc
    try:
        params = NetworkParams(weights, biases)
    except (ContractViolation, IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed arrays: {exc}") from exc
    if params.spec.layer_sizes != layer_sizes:
        raise CheckpointError(f"{path}: header/payload shape disagreement")
    if expect_spec is not None and params.spec != expect_spec:
        raise CheckpointError(
            f"{path}: layer sizes {params.spec.layer_sizes} do not match "
            f"expected {expect_spec.layer_sizes}")
    return params, header.get("metadata", {})

"""Minimal feed-forward engine: dense and 1-D convolution layers with ReLU,
LeakyReLU and sigmoid activations, hand-written backprop, Adam, and a small
binary model format.

Everything runs in float64. Inputs are row batches (batch, features); conv
layers view features as (channels, length) sequences and dense layers
flatten whatever they are given. Analytic gradients are validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01
_ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "none")
_MAGIC = b"DMRK"
_FORMAT_VERSION = 1


class DimensionError(ValueError):
    """Layer/input shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf crossed a layer boundary."""


class StateError(RuntimeError):
    """Backward called without a matching cached forward pass."""


class ModelFormatError(ValueError):
    """Serialized model is corrupt, truncated, or from an unknown version."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested operation (e.g. zero-norm vector)."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer: dense(size) or conv1d(kernel_count, kernel_size, stride)."""

    kind: str
    size: int = 0
    kernel_count: int = 0
    kernel_size: int = 0
    stride: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("dense", "conv1d"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "dense" and self.size < 1:
            raise ValueError("dense layer needs size >= 1")
        if self.kind == "conv1d":
            if self.kernel_count < 1 or self.kernel_size < 1 or self.stride < 1:
                raise ValueError("conv1d needs kernel_count, kernel_size, stride >= 1")


def dense(size: int, activation: str = "none") -> LayerSpec:
    return LayerSpec("dense", size=size, activation=activation)


def conv1d(kernel_count: int, kernel_size: int, stride: int = 1,
           activation: str = "none") -> LayerSpec:
    return LayerSpec("conv1d", kernel_count=kernel_count, kernel_size=kernel_size,
                     stride=stride, activation=activation)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if activation == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(post: np.ndarray, activation: str) -> np.ndarray:
    # Derivative expressed through the post-activation value; valid because
    # every supported activation is sign-preserving or invertible enough.
    if activation == "relu":
        return (post > 0.0).astype(np.float64)
    if activation == "leaky_relu":
        return np.where(post > 0.0, 1.0, LEAKY_SLOPE)
    if activation == "sigmoid":
        return post * (1.0 - post)
    return np.ones_like(post)


class ModelGraph:
    """An ordered stack of layers with weights, built for a fixed input width.

    forward() accepts a single sample (1-D) or a batch (2-D) and always
    returns the flattened output. Passing train=True retains intermediates
    so backward() can produce parameter and input gradients.
    """

    def __init__(self, input_dim: int, specs, seed: int = 0, init: bool = True):
        if input_dim < 1:
            raise DimensionError(f"input_dim must be >= 1, got {input_dim}")
        self.input_dim = int(input_dim)
        self.specs = tuple(specs)
        self.frozen = False
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self._in_structs: list[tuple] = []   # structure each layer consumes
        self._out_structs: list[tuple] = []
        self._cache = None
        rng = np.random.default_rng(seed)
        struct = ("flat", self.input_dim)
        for spec in self.specs:
            struct = self._add_layer(spec, struct, rng, init)
        self.output_dim = struct[1] if struct[0] == "flat" else struct[1] * struct[2]

    def _add_layer(self, spec: LayerSpec, struct, rng, init: bool):
        if spec.kind == "dense":
            fan_in = struct[1] if struct[0] == "flat" else struct[1] * struct[2]
            fan_out = spec.size
            in_struct = ("flat", fan_in)
            out_struct = ("flat", spec.size)
            w_shape, b_shape = (fan_in, spec.size), (spec.size,)
        else:
            if struct[0] == "flat":
                channels, length = 1, struct[1]
            else:
                channels, length = struct[1], struct[2]
            if length < spec.kernel_size:
                raise DimensionError(
                    f"conv1d kernel {spec.kernel_size} exceeds input length {length}")
            out_len = (length - spec.kernel_size) // spec.stride + 1
            fan_in = channels * spec.kernel_size
            fan_out = spec.kernel_count * spec.kernel_size
            in_struct = ("seq", channels, length)
            out_struct = ("seq", spec.kernel_count, out_len)
            w_shape = (spec.kernel_count, channels, spec.kernel_size)
            b_shape = (spec.kernel_count,)
        if init:
            if spec.activation in ("relu", "leaky_relu"):
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=w_shape))
            self.biases.append(np.zeros(b_shape))
        else:
            self.weights.append(np.zeros(w_shape))
            self.biases.append(np.zeros(b_shape))
        self._in_structs.append(in_struct)
        self._out_structs.append(out_struct)
        return out_struct

    # -- forward / backward -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def freeze(self) -> "ModelGraph":
        self.frozen = True
        return self

    def _check_finite(self, arr: np.ndarray, where: str):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values at {where}")

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"expected input of width {self.input_dim}, got shape {x.shape}")
        self._check_finite(x, "model input")
        batch = x.shape[0]
        consumed_shapes = []
        inputs = []
        posts = []
        cur = x
        for i, spec in enumerate(self.specs):
            consumed_shapes.append(cur.shape)
            ist = self._in_structs[i]
            if spec.kind == "dense":
                cur = cur.reshape(batch, ist[1])
            else:
                cur = cur.reshape(batch, ist[1], ist[2])
            inputs.append(cur)
            if spec.kind == "dense":
                z = cur @ self.weights[i] + self.biases[i]
            else:
                windows = np.lib.stride_tricks.sliding_window_view(
                    cur, spec.kernel_size, axis=2)[:, :, ::spec.stride, :]
                z = np.einsum("bcls,kcs->bkl", windows, self.weights[i],
                              optimize=True) + self.biases[i][None, :, None]
            post = _activate(z, spec.activation)
            self._check_finite(post, f"layer {i} output")
            posts.append(post)
            cur = post
        out = cur.reshape(batch, -1) if cur.ndim == 3 else cur
        if train:
            self._cache = {"x": x, "inputs": inputs, "posts": posts,
                           "consumed_shapes": consumed_shapes, "batch": batch}
        if squeeze:
            return out[0]
        return out

    def backward(self, upstream) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Backprop through the cached forward pass.

        upstream is the gradient of the loss w.r.t. the flattened model
        output (same leading batch shape the forward saw). Returns
        (weight_grads, bias_grads, input_grad); the cache is consumed.
        """
        if self._cache is None:
            raise StateError("backward requires a prior forward(..., train=True)")
        cache = self._cache
        self._cache = None
        batch = cache["batch"]
        grad = np.asarray(upstream, dtype=np.float64)
        if grad.ndim == 1:
            grad = grad[None, :]
        if grad.shape[0] != batch:
            raise DimensionError(
                f"upstream batch {grad.shape[0]} != forward batch {batch}")
        w_grads: list[np.ndarray] = [None] * len(self.specs)
        b_grads: list[np.ndarray] = [None] * len(self.specs)
        for i in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[i]
            post = cache["posts"][i]
            grad = grad.reshape(post.shape)
            dz = grad * _activation_grad(post, spec.activation)
            x_in = cache["inputs"][i]
            if spec.kind == "dense":
                w_grads[i] = x_in.T @ dz
                b_grads[i] = dz.sum(axis=0)
                grad = dz @ self.weights[i].T
            else:
                windows = np.lib.stride_tricks.sliding_window_view(
                    x_in, spec.kernel_size, axis=2)[:, :, ::spec.stride, :]
                w_grads[i] = np.einsum("bkl,bcls->kcs", dz, windows, optimize=True)
                b_grads[i] = dz.sum(axis=(0, 2))
                grad_x = np.zeros_like(x_in)
                out_len = dz.shape[2]
                pos = np.arange(out_len) * spec.stride
                for s in range(spec.kernel_size):
                    grad_x[:, :, pos + s] += np.einsum(
                        "bkl,kc->bcl", dz, self.weights[i][:, :, s], optimize=True)
                grad = grad_x
            grad = grad.reshape(cache["consumed_shapes"][i])
        return w_grads, b_grads, grad.reshape(batch, self.input_dim)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moments with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params, grads) -> None:
    """One in-place Adam update over a parameter list."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise DimensionError("parameter/gradient/moment counts differ")
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


# -- losses -------------------------------------------------------------------

def mean_absolute_error(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mean_absolute_error_grad(pred, target) -> np.ndarray:
    """d MAE / d pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return np.sign(pred - target) / pred.size


def cosine_similarity(a, b, eps: float | None = None) -> float:
    """Cosine of two vectors, clamped into [-1, 1].

    With eps=None a zero-norm vector raises DegenerateInputError; training
    code passes a small eps to keep gradients finite instead.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DimensionError(f"length mismatch {a.size} vs {b.size}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if eps is None:
        if na == 0.0 or nb == 0.0:
            raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    else:
        na += eps
        nb += eps
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_rows(a, b, eps: float = 1e-12):
    """Row-wise cosine for batches, with gradients.

    Returns (cos values (B,), d/d a, d/d b) where the gradients are of the
    raw (unclamped) cosine of each row.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"expected matching 2-D arrays, got {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1) + eps
    nb = np.linalg.norm(b, axis=1) + eps
    dots = np.sum(a * b, axis=1)
    cos = dots / (na * nb)
    da = b / (na * nb)[:, None] - (cos / na ** 2)[:, None] * a
    db = a / (na * nb)[:, None] - (cos / nb ** 2)[:, None] * b
    return cos, da, db


def softmax_cross_entropy(logits, class_ids):
    """Mean cross-entropy over a batch of logits; returns (loss, d/d logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    ids = np.asarray(class_ids, dtype=np.int64).ravel()
    if ids.size != logits.shape[0]:
        raise DimensionError(f"{ids.size} labels for {logits.shape[0]} logit rows")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    picked = probs[np.arange(batch), ids]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[np.arange(batch), ids] -= 1.0
    grad /= batch
    return loss, grad


# -- serialization -------------------------------------------------------------

def model_to_bytes(model: ModelGraph) -> bytes:
    if not model.specs:
        raise ModelFormatError("refusing to serialize a model with zero layers")
    header = {
        "version": _FORMAT_VERSION,
        "input_dim": model.input_dim,
        "layers": [
            {"kind": s.kind, "size": s.size, "kernel_count": s.kernel_count,
             "kernel_size": s.kernel_size, "stride": s.stride,
             "activation": s.activation}
            for s in model.specs
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for pair in zip(model.weights, model.biases) for arr in pair
    )
    body = (_MAGIC
            + len(header_bytes).to_bytes(4, "little")
            + header_bytes
            + len(blob).to_bytes(8, "little")
            + blob)
    return body + (zlib.crc32(body) & 0xFFFFFFFF).to_bytes(4, "little")


def model_from_bytes(data: bytes) -> ModelGraph:
    if len(data) < 4 + 4 + 8 + 4 or data[:4] != _MAGIC:
        raise ModelFormatError("bad magic or truncated model file")
    body, checksum = data[:-4], int.from_bytes(data[-4:], "little")
    if (zlib.crc32(body) & 0xFFFFFFFF) != checksum:
        raise ModelFormatError("checksum mismatch")
    offset = 4
    header_len = int.from_bytes(body[offset:offset + 4], "little")
    offset += 4
    try:
        header = json.loads(body[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable header: {exc}") from None
    offset += header_len
    if header.get("version") != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {header.get('version')}")
    blob_len = int.from_bytes(body[offset:offset + 8], "little")
    offset += 8
    blob = body[offset:offset + blob_len]
    if len(blob) != blob_len or offset + blob_len != len(body):
        raise ModelFormatError("weight blob length mismatch")
    specs = [LayerSpec(**d) for d in header["layers"]]
    model = ModelGraph(header["input_dim"], specs, init=False)
    cursor = 0
    for i in range(len(specs)):
        for store, idx in ((model.weights, i), (model.biases, i)):
            arr = store[idx]
            nbytes = arr.size * 8
            chunk = blob[cursor:cursor + nbytes]
            if len(chunk) != nbytes:
                raise ModelFormatError("weight blob shorter than layer table implies")
            store[idx] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape).copy()
            cursor += nbytes
    if cursor != blob_len:
        raise ModelFormatError("trailing bytes after weights")
    return model


def save_model(model: ModelGraph, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> ModelGraph:
    return model_from_bytes(Path(path).read_bytes())


def model_checksum(model: ModelGraph) -> str:
    import hashlib
    return hashlib.sha256(model_to_bytes(model)).hexdigest()

"""Probe classifier architectures over frozen per-layer embeddings.

Four topologies: {single, multi} classifier head x {with, without} shared
dense block, each reading either one fixed encoder layer or a learnable
softmax-weighted sum of all layers. Weights live in a flat name -> array
dict so the optimizer, serializer, and gradient checker all walk the same
fixed order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numerics import (
    RngStream,
    dropout,
    dropout_backward,
    softmax,
)
from .store import FeatureLabelSet

MAGIC = b"LPPM"
FORMAT_VERSION = 1

HEAD_MODES = ("single", "multi")
LAYER_MODES = ("fixed", "weighted_sum")


@dataclass
class ArchitectureConfig:
    """Everything that fixes a probe's topology and parameter shapes.

    Bottleneck values of None mean "hidden width equals input_dim". The
    fixed layer_index is required (and checked against n_layers) only when
    layer_mode is "fixed".
    """

    head_mode: str = "single"
    shared_dense: bool = False
    layer_mode: str = "fixed"
    layer_index: int | None = None
    shared_dense_bottleneck: int | None = None
    classifier_bottleneck: int | None = None
    n_layers: int = 13
    input_dim: int = 768
    n_features: int = 5
    dropout_p: float = 0.3

    def validate(self) -> None:
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if self.layer_mode not in LAYER_MODES:
            raise ValueError(f"layer_mode must be one of {LAYER_MODES}, got {self.layer_mode!r}")
        if self.layer_mode == "fixed":
            if self.layer_index is None or not (0 <= self.layer_index < self.n_layers):
                raise ValueError(
                    f"fixed layer_index must satisfy 0 <= index < {self.n_layers}, got {self.layer_index}"
                )
        for name in ("shared_dense_bottleneck", "classifier_bottleneck"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1 when set, got {v}")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_layers < 1 or self.input_dim < 1:
            raise ValueError("n_layers and input_dim must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def shared_width(self) -> int:
        return self.shared_dense_bottleneck or self.input_dim

    @property
    def classifier_input_dim(self) -> int:
        return self.shared_width if self.shared_dense else self.input_dim

    @property
    def hidden_width(self) -> int:
        return self.classifier_bottleneck or self.input_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        return cls(**d)


@dataclass
class PooledExample:
    """Per-layer time-pooled vectors for one recording, plus its labels."""

    layers: np.ndarray  # [n_layers, dim] float64
    labels: FeatureLabelSet = field(default_factory=FeatureLabelSet)


@dataclass
class ProbeParams:
    """Trainable scalars of one probe, keyed by tensor name in fixed order."""

    config: ArchitectureConfig
    tensors: dict[str, np.ndarray]

    def scalar_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ProbeParams":
        return ProbeParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def layer_weights(self) -> np.ndarray | None:
        """Current softmax layer weights, or None for fixed-layer probes."""
        if "layer_logits" not in self.tensors:
            return None
        return softmax(self.tensors["layer_logits"])


def tensor_shapes(config: ArchitectureConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map; also the serialization order."""
    config.validate()
    d, f = config.input_dim, config.n_features
    c_in, h = config.classifier_input_dim, config.hidden_width
    shapes: dict[str, tuple[int, ...]] = {}
    if config.layer_mode == "weighted_sum":
        shapes["layer_logits"] = (config.n_layers,)
    if config.shared_dense:
        s = config.shared_width
        shapes["shared.W"] = (d, s)
        shapes["shared.b"] = (s,)
    if config.head_mode == "single":
        shapes["head.hidden.W"] = (c_in, h)
        shapes["head.hidden.b"] = (h,)
        shapes["head.proj.W"] = (h, f)
        shapes["head.proj.b"] = (f,)
    else:
        shapes["heads.hidden.W"] = (f, c_in, h)
        shapes["heads.hidden.b"] = (f, h)
        shapes["heads.proj.W"] = (f, h, 1)
        shapes["heads.proj.b"] = (f, 1)
    return shapes


def count_params(config: ArchitectureConfig) -> int:
    """Exact trainable scalar count, closed form."""
    config.validate()
    d, f = config.input_dim, config.n_features
    c_in, h = config.classifier_input_dim, config.hidden_width
    total = 0
    if config.layer_mode == "weighted_sum":
        total += config.n_layers
    if config.shared_dense:
        s = config.shared_width
        total += d * s + s
    if config.head_mode == "single":
        total += (c_in * h + h) + (h * f + f)
    else:
        total += f * ((c_in * h + h) + (h + 1))
    return total


def build(config: ArchitectureConfig, rng: RngStream) -> ProbeParams:
    """Initialize a probe: linear weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    biases zero, weighted-sum logits zero (uniform layer weights)."""
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith(".W"):
            fan_in = shape[-2]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = (rng.uniform(size=shape) * 2.0 - 1.0) * bound
        else:
            tensors[name] = np.zeros(shape)
    return ProbeParams(config=config, tensors=tensors)


def combine_layers(
    example: PooledExample, params: ProbeParams, config: ArchitectureConfig
) -> np.ndarray:
    """Collapse the [n_layers, dim] pooled matrix to one [dim] vector."""
    if example.layers.shape != (config.n_layers, config.input_dim):
        raise ValueError(
            f"pooled matrix shape {example.layers.shape} does not match "
            f"({config.n_layers}, {config.input_dim})"
        )
    if config.layer_mode == "fixed":
        return example.layers[config.layer_index]
    w = softmax(params.tensors["layer_logits"])
    return w @ example.layers


@dataclass
class ForwardTrace:
    """Saved activations from one train-mode forward pass."""

    stack: np.ndarray  # [n, n_layers, dim]
    combine_w: np.ndarray | None
    combined: np.ndarray  # [n, input_dim]
    shared_pre: np.ndarray | None
    shared_mask: np.ndarray | None
    clf_input: np.ndarray  # [n, c_in]
    hidden_pre: np.ndarray
    hidden_mask: np.ndarray
    hidden_drop: np.ndarray


def _stack_batch(batch: list[PooledExample]) -> np.ndarray:
    if not batch:
        raise ValueError("batch must be non-empty")
    return np.stack([ex.layers for ex in batch]).astype(np.float64)


def forward(
    batch: list[PooledExample],
    params: ProbeParams,
    config: ArchitectureConfig,
    mode: str = "eval",
    rng: RngStream | None = None,
    return_trace: bool = False,
):
    """Run the probe over a batch; returns [n, n_features] logits.

    With return_trace=True also returns the saved activations that
    `backward` needs. Eval mode is a pure deterministic function of
    (params, inputs); train mode draws dropout masks from rng.
    """
    t = params.tensors
    p = config.dropout_p
    stack = _stack_batch(batch)

    if config.layer_mode == "fixed":
        combine_w = None
        combined = stack[:, config.layer_index, :]
    else:
        combine_w = softmax(t["layer_logits"])
        combined = np.einsum("nld,l->nd", stack, combine_w)

    if config.shared_dense:
        shared_pre = combined @ t["shared.W"] + t["shared.b"]
        shared_relu = np.maximum(shared_pre, 0.0)
        shared_drop, shared_mask = dropout(shared_relu, p, mode, rng)
        clf_input = shared_drop
    else:
        shared_pre = shared_mask = None
        clf_input = combined

    if config.head_mode == "single":
        hidden_pre = clf_input @ t["head.hidden.W"] + t["head.hidden.b"]
        hidden_relu = np.maximum(hidden_pre, 0.0)
        hidden_drop, hidden_mask = dropout(hidden_relu, p, mode, rng)
        logits = hidden_drop @ t["head.proj.W"] + t["head.proj.b"]
    else:
        hidden_pre = np.einsum("nc,fch->nfh", clf_input, t["heads.hidden.W"]) + t["heads.hidden.b"]
        hidden_relu = np.maximum(hidden_pre, 0.0)
        hidden_drop, hidden_mask = dropout(hidden_relu, p, mode, rng)
        logits = np.einsum("nfh,fho->nfo", hidden_drop, t["heads.proj.W"])[:, :, 0]
        logits = logits + t["heads.proj.b"][None, :, 0]

    if not return_trace:
        return logits
    trace = ForwardTrace(
        stack=stack,
        combine_w=combine_w,
        combined=combined,
        shared_pre=shared_pre,
        shared_mask=shared_mask,
        clf_input=clf_input,
        hidden_pre=hidden_pre,
        hidden_mask=hidden_mask,
        hidden_drop=hidden_drop,
    )
    return logits, trace


def backward(
    params: ProbeParams,
    config: ArchitectureConfig,
    dlogits: np.ndarray,
    trace: ForwardTrace,
) -> dict[str, np.ndarray]:
    """Exact gradients for every trainable tensor, keyed like params.tensors."""
    t = params.tensors
    p = config.dropout_p
    grads: dict[str, np.ndarray] = {}

    if config.head_mode == "single":
        grads["head.proj.W"] = trace.hidden_drop.T @ dlogits
        grads["head.proj.b"] = dlogits.sum(axis=0)
        d_drop = dlogits @ t["head.proj.W"].T
        d_relu = dropout_backward(d_drop, trace.hidden_mask, p)
        d_pre = d_relu * (trace.hidden_pre > 0.0)
        grads["head.hidden.W"] = trace.clf_input.T @ d_pre
        grads["head.hidden.b"] = d_pre.sum(axis=0)
        d_clf_input = d_pre @ t["head.hidden.W"].T
    else:
        grads["heads.proj.W"] = np.einsum("nfh,nf->fh", trace.hidden_drop, dlogits)[:, :, None]
        grads["heads.proj.b"] = dlogits.sum(axis=0)[:, None]
        d_drop = np.einsum("nf,fh->nfh", dlogits, t["heads.proj.W"][:, :, 0])
        d_relu = dropout_backward(d_drop, trace.hidden_mask, p)
        d_pre = d_relu * (trace.hidden_pre > 0.0)
        grads["heads.hidden.W"] = np.einsum("nc,nfh->fch", trace.clf_input, d_pre)
        grads["heads.hidden.b"] = d_pre.sum(axis=0)
        d_clf_input = np.einsum("nfh,fch->nc", d_pre, t["heads.hidden.W"])

    if config.shared_dense:
        d_sdrop = dropout_backward(d_clf_input, trace.shared_mask, p)
        d_spre = d_sdrop * (trace.shared_pre > 0.0)
        grads["shared.W"] = trace.combined.T @ d_spre
        grads["shared.b"] = d_spre.sum(axis=0)
        d_combined = d_spre @ t["shared.W"].T
    else:
        d_combined = d_clf_input

    if config.layer_mode == "weighted_sum":
        w = trace.combine_w
        dw = np.einsum("nd,nld->l", d_combined, trace.stack)
        grads["layer_logits"] = w * (dw - float(np.dot(dw, w)))

    # Return in canonical tensor order so optimizers walk a stable sequence.
    return {name: grads[name] for name in t}


def flatten_tensors(tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([t.ravel() for t in tensors.values()])


def unflatten_tensors(vec: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    i = 0
    for name, t in like.items():
        out[name] = vec[i : i + t.size].reshape(t.shape).astype(np.float64)
        i += t.size
    if i != vec.size:
        raise ValueError(f"vector length {vec.size} does not match tensor sizes {i}")
    return out


def save_params(params: ProbeParams, path: str | Path) -> None:
    """Serialize: magic, u32 version, length-prefixed config JSON, then every
    tensor in canonical order as little-endian float64."""
    cfg_blob = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        for name in tensor_shapes(params.config):
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())


def load_params(path: str | Path) -> ProbeParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 8)
    config = ArchitectureConfig.from_dict(json.loads(raw[12 : 12 + cfg_len].decode()))
    offset = 12 + cfg_len
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64, copy=True)
        offset += 8 * n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter payload")
    return ProbeParams(config=config, tensors=tensors)

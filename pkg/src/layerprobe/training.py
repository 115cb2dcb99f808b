"""Deterministic mini-batch training loop: AdamW with decoupled weight decay
plus binary cross entropy over the probe architectures.

Determinism contract: (manifest, architecture, train config) fully determine
every logged loss and the final parameter bytes. All randomness flows through
named RngStream substreams (init, shuffle keyed by epoch, dropout), so the
order of consumers never shifts between runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .numerics import (
    RngStream,
    STREAM_DROPOUT,
    STREAM_INIT,
    STREAM_SHUFFLE,
    mean_pool_time,
    sigmoid,
    sigmoid_bce_with_logits,
)
from .model import (
    ArchitectureConfig,
    PooledExample,
    ProbeParams,
    backward,
    build,
    forward,
    tensor_shapes,
)
from .store import DatasetManifest, FeatureLabelSet, LayerStackRecord, iterate_split


@dataclass
class TrainConfig:
    """Hyperparameters for one deterministic run."""

    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    dropout_p: float = 0.3
    epochs: int = 20
    batch_size: int = 8
    seed: int = 4200
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class OptimizerState:
    """AdamW moment buffers, congruent to the parameter tensors."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_optimizer(params: ProbeParams) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(a) for k, a in params.tensors.items()},
        v={k: np.zeros_like(a) for k, a in params.tensors.items()},
    )


def adamw_step(
    params: ProbeParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
) -> tuple[ProbeParams, OptimizerState]:
    """One AdamW update with decoupled decay applied to every trainable
    scalar (weights, biases, and weighted-sum logits alike)."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient keys do not match parameter keys")
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon
    lr, wd = cfg.learning_rate, cfg.weight_decay
    state.t += 1
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, theta in params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} mismatches {name} {theta.shape}")
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for {name}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        params.tensors[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * wd * theta
    return params, state


def batch_iterator(
    items: list, batch_size: int, epoch: int, shuffle_rng: RngStream
) -> list[list]:
    """Contiguous batches over one seeded shuffle; the shuffle stream is keyed
    by epoch so later epochs reorder independently. Final short batch kept."""
    if not items:
        raise ValueError("cannot batch an empty split")
    perm = shuffle_rng.derive(epoch).permutation(len(items))
    return [
        [items[j] for j in perm[i : i + batch_size]]
        for i in range(0, len(items), batch_size)
    ]


def pool_record(record: LayerStackRecord, labels: FeatureLabelSet) -> PooledExample:
    """Cache one recording as its per-layer time-pooled matrix."""
    pooled = np.stack(
        [mean_pool_time(record.data[l].astype(np.float64)) for l in range(record.n_layers)]
    )
    return PooledExample(layers=pooled, labels=labels)


def pool_split(
    manifest: DatasetManifest, split: str
) -> tuple[list[PooledExample], list[str]]:
    """Pooled examples plus record ids for one split, in manifest order."""
    examples: list[PooledExample] = []
    ids: list[str] = []
    for rec, labels in iterate_split(manifest, split):
        examples.append(pool_record(rec, labels))
        ids.append(rec.record_id)
    return examples, ids


def pool_dataset(manifest: DatasetManifest) -> dict[str, tuple[list[PooledExample], list[str]]]:
    """Pool every split once; the result is read-only and shareable."""
    return {split: pool_split(manifest, split) for split in ("train", "val", "test", "ood_test")}


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_balanced_accuracy: dict[str, float | None] = field(default_factory=dict)
    duration_seconds: float = 0.0
    softmax_sum_error: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_balanced_accuracy": self.val_balanced_accuracy,
            "duration_seconds": self.duration_seconds,
            "softmax_sum_error": self.softmax_sum_error,
        }


def epoch_logs_to_jsonl(logs: list[EpochLog]) -> str:
    import json

    return "".join(json.dumps(log.to_dict()) + "\n" for log in logs)


def _labels_matrix(batch: list[PooledExample]) -> np.ndarray:
    return np.stack([ex.labels.as_vector() for ex in batch])


def _val_balanced_accuracy(
    examples: list[PooledExample],
    params: ProbeParams,
    arch: ArchitectureConfig,
    feature_names: tuple[str, ...],
) -> dict[str, float | None]:
    """Per-feature balanced accuracy snapshot, eval mode, threshold 0.5.
    Features with a single label class report None."""
    if not examples:
        return {name: None for name in feature_names}
    logits = forward(examples, params, arch, mode="eval")
    preds = sigmoid(logits) >= 0.5
    labels = _labels_matrix(examples) > 0.5
    out: dict[str, float | None] = {}
    for j, name in enumerate(feature_names):
        y, yhat = labels[:, j], preds[:, j]
        pos, neg = int(y.sum()), int((~y).sum())
        if pos == 0 or neg == 0:
            out[name] = None
            continue
        sens = float((yhat & y).sum()) / pos
        spec = float((~yhat & ~y).sum()) / neg
        out[name] = 0.5 * (sens + spec)
    return out


def train_pooled(
    train_examples: list[PooledExample],
    val_examples: list[PooledExample],
    arch: ArchitectureConfig,
    cfg: TrainConfig,
    feature_names: tuple[str, ...],
) -> tuple[ProbeParams, list[EpochLog]]:
    """Core loop over pre-pooled examples; see `train` for the manifest entry."""
    arch.validate()
    cfg.validate()
    if arch.dropout_p != cfg.dropout_p:
        raise ValueError(
            f"architecture dropout_p={arch.dropout_p} disagrees with train config "
            f"dropout_p={cfg.dropout_p}; grid expansion keeps them in lockstep"
        )
    if not train_examples:
        raise ValueError("train split is empty")
    if arch.n_features != len(feature_names):
        raise ValueError(
            f"architecture has {arch.n_features} outputs but dataset has "
            f"{len(feature_names)} features"
        )

    params = build(arch, RngStream(cfg.seed, STREAM_INIT))
    state = init_optimizer(params)
    dropout_rng = RngStream(cfg.seed, STREAM_DROPOUT)
    shuffle_rng = RngStream(cfg.seed, STREAM_SHUFFLE)

    logs: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        loss_sum = 0.0
        n_seen = 0
        softmax_err: float | None = None
        for batch_idx, batch in enumerate(batch_iterator(train_examples, cfg.batch_size, epoch, shuffle_rng)):
            logits, trace = forward(batch, params, arch, mode="train", rng=dropout_rng, return_trace=True)
            loss, dlogits = sigmoid_bce_with_logits(logits, _labels_matrix(batch))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}, batch {batch_idx}")
            grads = backward(params, arch, dlogits, trace)
            adamw_step(params, grads, state, cfg)
            loss_sum += loss * len(batch)
            n_seen += len(batch)
            w = params.layer_weights()
            if w is not None:
                err = abs(float(w.sum()) - 1.0)
                softmax_err = err if softmax_err is None else max(softmax_err, err)
                if w.min() <= 0.0:
                    raise RuntimeError(f"non-positive layer weight at epoch {epoch}, batch {batch_idx}")
        logs.append(
            EpochLog(
                epoch=epoch,
                train_loss=loss_sum / n_seen,
                val_balanced_accuracy=_val_balanced_accuracy(val_examples, params, arch, feature_names),
                duration_seconds=time.perf_counter() - started,
                softmax_sum_error=softmax_err,
            )
        )
    return params, logs


def train(
    manifest: DatasetManifest, arch: ArchitectureConfig, cfg: TrainConfig
) -> tuple[ProbeParams, list[EpochLog]]:
    """Train one probe on the manifest's train split, evaluating the val
    split each epoch. Returns final-epoch params plus the full epoch log."""
    train_examples, _ = pool_split(manifest, "train")
    val_examples, _ = pool_split(manifest, "val")
    return train_pooled(train_examples, val_examples, arch, cfg, tuple(manifest.feature_names))

"""Dense numerical kernels for the probe architectures.

Everything here operates on plain numpy arrays in float64. Forward ops have
hand-derived backward companions, and `grad_check` provides the independent
central-difference oracle used to validate them. Randomness goes through
`RngStream`, a counter-based generator with named substreams so that one
consumer's draws never perturb another's.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

_MASK64 = (1 << 64) - 1

# Named stream ids, one per consumer of randomness.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3
STREAM_BOOTSTRAP = 4
STREAM_SYNTH = 5


def _mix64(a: int, b: int) -> int:
    """splitmix64-style finalizer combining two 64-bit words."""
    x = (a ^ (b * 0x9E3779B97F4A7C15 + 0x7F4A7C15)) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RngStream:
    """Deterministic counter-based random stream.

    Identical (seed, stream_id, call sequence) always yields identical
    outputs. Distinct stream_ids are statistically independent streams of
    the same master seed; `derive` mixes additional keys (epoch number,
    resample index, ...) into a child stream.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self._gen = np.random.Generator(bitgen)

    def derive(self, *keys: int) -> "RngStream":
        """Child stream keyed by extra integers; independent of this one."""
        sid = self.stream_id
        for k in keys:
            sid = _mix64(sid, int(k) & _MASK64)
        return RngStream(self.seed, sid)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.uniform(size=size)

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def _require_2d(name: str, a: np.ndarray) -> None:
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b with b broadcast over rows."""
    _require_2d("x", x)
    _require_2d("w", w)
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"inner dims disagree: x {x.shape} vs w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias shape {b.shape} does not match output dim {w.shape[1]}")
    return x @ w + b


def linear_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of linear_forward: dx = dy @ w.T, dw = x.T @ dy, db = dy column sums."""
    if dy.shape != (x.shape[0], w.shape[1]):
        raise ValueError(f"dy shape {dy.shape} inconsistent with x {x.shape}, w {w.shape}")
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Subgradient at exactly 0 is 0 (strict x > 0 mask)."""
    return dy * (x > 0.0)


def dropout(
    x: np.ndarray, p: float, mode: str, rng: RngStream | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout.

    Train mode zeroes each element with probability p and scales survivors
    by 1/(1-p); eval mode is the identity. Returns (y, keep_mask); the mask
    makes the backward pass exact: dx = dy * mask / (1 - p).
    """
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval":
        return x, np.ones(x.shape, dtype=bool)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if p == 0.0:
        return x, np.ones(x.shape, dtype=bool)
    if rng is None:
        raise ValueError("train-mode dropout with p > 0 requires an RngStream")
    keep = rng.uniform(size=x.shape) >= p
    return x * keep / (1.0 - p), keep


def dropout_backward(dy: np.ndarray, mask: np.ndarray, p: float) -> np.ndarray:
    return dy * mask / (1.0 - p)


def mean_pool_time(stack: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the frame axis of a [n_frames, dim] matrix."""
    _require_2d("stack", stack)
    if stack.shape[0] < 1:
        raise ValueError("cannot pool over zero frames")
    return stack.mean(axis=0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; output is positive and sums to 1."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bce_with_logits(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy over all elements, from raw logits.

    Uses the log-sum-exp form max(l,0) - l*y + log(1+exp(-|l|)) so large
    logits neither overflow nor lose the loss floor at 0. Gradient is
    (sigmoid(l) - y) / (n*f).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} disagree")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise ValueError("targets must be binary (0 or 1)")
    elem = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    loss = float(elem.mean())
    dlogits = (sigmoid(logits) - targets) / logits.size
    return loss, dlogits


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    h: float = 1e-5,
    f_value: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Central-difference check of an analytic gradient.

    f maps a flat parameter vector to (scalar value, analytic gradient).
    Perturbed evaluations only need the value; pass f_value to skip the
    gradient work there (defaults to calling f and discarding the gradient).
    Each coordinate's numeric estimate is (f(t+h*e_i) - f(t-h*e_i)) / (2h);
    the result is the largest coordinate discrepancy |analytic - numeric|
    over the shared denominator max(|analytic|, |numeric|, 1e-8), where
    |.| is the max-norm of the gradient vectors. The denominator is global
    rather than per-coordinate: single near-zero gradient entries sit below
    the roundoff floor of central differences (~eps*|f|/h) and would
    otherwise report spurious errors unrelated to gradient correctness.
    """
    theta = np.asarray(theta, dtype=np.float64)
    _, analytic = f(theta)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ValueError("analytic gradient shape does not match theta")
    if f_value is None:
        f_value = lambda vec: f(vec)[0]
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        numeric[i] = (f_value(theta + step) - f_value(theta - step)) / (2.0 * h)
    denom = max(
        float(np.abs(analytic).max(initial=0.0)),
        float(np.abs(numeric).max(initial=0.0)),
        1e-8,
    )
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom

"""Classification metrics against the no-information rate, with percentile
bootstrap intervals and one-sided bootstrap tests.

Chance on imbalanced splits is the NIR (largest class proportion), so raw
accuracy is tested against it; balanced accuracy has chance 0.5 regardless of
imbalance and is tested against that instead. Bootstrap resampling draws whole
prediction rows so probability and label stay paired.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, STREAM_BOOTSTRAP, sigmoid
from .model import ArchitectureConfig, PooledExample, ProbeParams, forward
from .store import DatasetManifest, iterate_split
from .training import pool_split

DEFAULT_N_BOOT = 1000
DEFAULT_CI_LEVEL = 0.95
DEFAULT_EVAL_SEED = 4200
REDRAW_BUDGET_FACTOR = 10

# Features excluded from out-of-distribution evaluation: too few positive
# SMR recordings carry them for the metrics to be meaningful.
OOD_EXCLUDED_FEATURES = ("irregular_articulatory_breakdowns", "rapid_rate")


class UndefinedMetricError(ValueError):
    """A metric's definition breaks down on this sample (missing class)."""


@dataclass
class PredictionSet:
    """Aligned per-record probabilities and ground-truth labels for one split."""

    record_ids: list[str]
    probabilities: np.ndarray  # [n, n_features] in [0, 1]
    labels: np.ndarray  # [n, n_features] in {0, 1}
    threshold: float = 0.5

    def __post_init__(self) -> None:
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.probabilities.shape != self.labels.shape or self.probabilities.ndim != 2:
            raise ValueError("probabilities and labels must share a 2-D shape")
        if len(self.record_ids) != self.probabilities.shape[0]:
            raise ValueError("record_ids length mismatches prediction rows")
        if self.probabilities.size and (
            self.probabilities.min() < 0.0 or self.probabilities.max() > 1.0
        ):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.isin(self.labels, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n_records(self) -> int:
        return self.probabilities.shape[0]

    @property
    def n_features(self) -> int:
        return self.probabilities.shape[1]

    def binary_predictions(self) -> np.ndarray:
        # Ties at the threshold count as positive.
        return self.probabilities >= self.threshold


def confusion(preds: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) from boolean vectors."""
    preds = np.asarray(preds, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds and labels must be 1-D and aligned")
    tp = int((preds & labels).sum())
    fp = int((preds & ~labels).sum())
    tn = int((~preds & ~labels).sum())
    fn = int((~preds & labels).sum())
    return tp, fp, tn, fn


def accuracy(tp: int, fp: int, tn: int, fn: int) -> float:
    total = tp + fp + tn + fn
    if total == 0:
        raise UndefinedMetricError("accuracy undefined on an empty sample")
    return (tp + tn) / total


def balanced_accuracy(tp: int, fp: int, tn: int, fn: int) -> float:
    """Mean of sensitivity and specificity; undefined without both classes."""
    pos = tp + fn
    neg = tn + fp
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("balanced accuracy needs both classes present")
    return 0.5 * (tp / pos + tn / neg)


def nir(labels: np.ndarray) -> float:
    """No-information rate: the proportion of the larger class."""
    labels = np.asarray(labels, dtype=bool)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-D vector")
    # divide the majority count rather than taking 1 - mean: the subtraction
    # can land one ulp away from n_majority / n and break exact-match checks
    n_pos = int(labels.sum())
    return max(n_pos, labels.size - n_pos) / labels.size


def _row_confusions(
    preds: np.ndarray, labels: np.ndarray, idx: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized confusion counts for each resample row of `idx`."""
    p = preds[idx]
    y = labels[idx]
    tp = (p & y).sum(axis=1)
    fp = (p & ~y).sum(axis=1)
    tn = (~p & ~y).sum(axis=1)
    fn = (~p & y).sum(axis=1)
    return tp, fp, tn, fn


def _bootstrap_indices(
    n: int, n_boot: int, rng: RngStream, require_both_classes: np.ndarray | None
) -> np.ndarray:
    """[n_boot, n] resample index matrix. When `require_both_classes` (the
    boolean label vector) is given, rows lacking a class are redrawn one at a
    time, up to REDRAW_BUDGET_FACTOR * n_boot total draws."""
    idx = rng.integers(0, n, size=(n_boot, n))
    if require_both_classes is None:
        return idx
    y = require_both_classes
    ys = y[idx]
    invalid = ~(ys.any(axis=1) & (~ys).any(axis=1))
    budget = REDRAW_BUDGET_FACTOR * n_boot - n_boot
    for i in np.nonzero(invalid)[0]:
        row = y[idx[i]]
        while not (row.any() and (~row).any()):
            if budget <= 0:
                raise UndefinedMetricError(
                    "bootstrap redraw budget exhausted; class too rare to resample"
                )
            idx[i] = rng.integers(0, n, size=n)
            row = y[idx[i]]
            budget -= 1
    return idx


def bootstrap_ci(
    pred_set: PredictionSet,
    feature_index: int,
    metric: str = "balanced_accuracy",
    n_boot: int = DEFAULT_N_BOOT,
    level: float = DEFAULT_CI_LEVEL,
    rng: RngStream | None = None,
) -> tuple[float, float, float]:
    """(point_estimate, ci_low, ci_high) via the percentile bootstrap over
    prediction rows. The interval is widened to include the point estimate if
    resampling noise leaves it outside, then clipped to [0, 1]."""
    if metric not in ("accuracy", "balanced_accuracy"):
        raise ValueError(f"unknown metric {metric!r}")
    if not (0.0 < level < 1.0):
        raise ValueError("level must be in (0, 1)")
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    if rng is None:
        rng = RngStream(DEFAULT_EVAL_SEED, STREAM_BOOTSTRAP)
    preds = pred_set.binary_predictions()[:, feature_index]
    labels = pred_set.labels[:, feature_index] > 0.5
    n = preds.shape[0]
    if n == 0:
        raise UndefinedMetricError("cannot bootstrap an empty prediction set")

    if metric == "accuracy":
        point = accuracy(*confusion(preds, labels))
        idx = _bootstrap_indices(n, n_boot, rng, None)
        tp, fp, tn, fn = _row_confusions(preds, labels, idx)
        stats = (tp + tn) / n
    else:
        point = balanced_accuracy(*confusion(preds, labels))  # raises if one-class
        idx = _bootstrap_indices(n, n_boot, rng, labels)
        tp, fp, tn, fn = _row_confusions(preds, labels, idx)
        stats = 0.5 * (tp / (tp + fn) + tn / (tn + fp))

    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    lo = min(float(lo), point)
    hi = max(float(hi), point)
    return point, max(lo, 0.0), min(hi, 1.0)


@dataclass
class ChanceTest:
    """One-sided bootstrap p-values against chance."""

    accuracy_vs_nir: float
    balanced_vs_half: float | None


def p_value_vs_chance(
    pred_set: PredictionSet,
    feature_index: int,
    n_boot: int = DEFAULT_N_BOOT,
    rng: RngStream | None = None,
) -> ChanceTest:
    """Proportion of bootstrap accuracies <= NIR, and of bootstrap balanced
    accuracies <= 0.5. The balanced variant is None when the sample has a
    single class."""
    if rng is None:
        rng = RngStream(DEFAULT_EVAL_SEED, STREAM_BOOTSTRAP)
    preds = pred_set.binary_predictions()[:, feature_index]
    labels = pred_set.labels[:, feature_index] > 0.5
    n = preds.shape[0]
    if n == 0:
        raise UndefinedMetricError("cannot test an empty prediction set")
    nir_value = nir(labels)

    idx = _bootstrap_indices(n, n_boot, rng.derive(0), None)
    tp, fp, tn, fn = _row_confusions(preds, labels, idx)
    acc_stats = (tp + tn) / n
    p_acc = float((acc_stats <= nir_value).mean())

    if labels.all() or not labels.any():
        return ChanceTest(accuracy_vs_nir=p_acc, balanced_vs_half=None)
    idx = _bootstrap_indices(n, n_boot, rng.derive(1), labels)
    tp, fp, tn, fn = _row_confusions(preds, labels, idx)
    bal_stats = 0.5 * (tp / (tp + fn) + tn / (tn + fp))
    p_bal = float((bal_stats <= 0.5).mean())
    return ChanceTest(accuracy_vs_nir=p_acc, balanced_vs_half=p_bal)


@dataclass
class FeatureMetrics:
    feature: str
    n_total: int
    n_positive: int
    nir: float
    accuracy: float
    balanced_accuracy: float | None
    ci_low: float | None
    ci_high: float | None
    p_accuracy_vs_nir: float
    p_balanced_vs_half: float | None

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "n_total": self.n_total,
            "n_positive": self.n_positive,
            "nir": self.nir,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_accuracy_vs_nir": self.p_accuracy_vs_nir,
            "p_balanced_vs_half": self.p_balanced_vs_half,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMetrics":
        return cls(**d)


@dataclass
class MetricReport:
    """Full evaluation of one parameter set on one split."""

    split: str
    n_records: int
    feature_names: list[str]
    features: dict[str, FeatureMetrics] = field(default_factory=dict)
    excluded_features: list[str] = field(default_factory=list)
    undefined_features: list[str] = field(default_factory=list)
    macro_balanced_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "n_records": self.n_records,
            "feature_names": list(self.feature_names),
            "features": {k: v.to_dict() for k, v in self.features.items()},
            "excluded_features": list(self.excluded_features),
            "undefined_features": list(self.undefined_features),
            "macro_balanced_accuracy": self.macro_balanced_accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            split=d["split"],
            n_records=d["n_records"],
            feature_names=list(d["feature_names"]),
            features={k: FeatureMetrics.from_dict(v) for k, v in d["features"].items()},
            excluded_features=list(d["excluded_features"]),
            undefined_features=list(d["undefined_features"]),
            macro_balanced_accuracy=d["macro_balanced_accuracy"],
        )


def predictions_for_pooled(
    params: ProbeParams,
    config: ArchitectureConfig,
    examples: list[PooledExample],
    record_ids: list[str],
) -> PredictionSet:
    """Eval-mode probabilities for pre-pooled examples."""
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    logits = forward(examples, params, config, mode="eval")
    labels = np.stack([ex.labels.as_vector() for ex in examples])
    return PredictionSet(record_ids=list(record_ids), probabilities=sigmoid(logits), labels=labels)


def evaluate_predictions(
    pred_set: PredictionSet,
    feature_names: list[str],
    split: str,
    excluded_features: tuple[str, ...] = (),
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = DEFAULT_EVAL_SEED,
) -> MetricReport:
    """Score a prediction set feature by feature.

    Excluded features are skipped entirely (reported by name only). Features
    whose sample has a single class report accuracy and NIR but leave balanced
    accuracy, its CI, and its chance test undefined. Bootstrap streams are
    derived per feature index and purpose, so reports are reproducible at a
    fixed seed regardless of evaluation order.
    """
    if len(feature_names) != pred_set.n_features:
        raise ValueError("feature_names length mismatches prediction columns")
    unknown = set(excluded_features) - set(feature_names)
    if unknown:
        raise ValueError(f"excluded features not in dataset: {sorted(unknown)}")
    base = RngStream(seed, STREAM_BOOTSTRAP)
    report = MetricReport(
        split=split,
        n_records=pred_set.n_records,
        feature_names=list(feature_names),
        excluded_features=sorted(excluded_features),
    )
    defined: list[float] = []
    for j, name in enumerate(feature_names):
        if name in excluded_features:
            continue
        preds = pred_set.binary_predictions()[:, j]
        labels = pred_set.labels[:, j] > 0.5
        tp, fp, tn, fn = confusion(preds, labels)
        acc = accuracy(tp, fp, tn, fn)
        chance = p_value_vs_chance(pred_set, j, n_boot=n_boot, rng=base.derive(j, 1))
        try:
            bal, ci_low, ci_high = bootstrap_ci(
                pred_set, j, "balanced_accuracy", n_boot=n_boot, rng=base.derive(j, 0)
            )
        except UndefinedMetricError:
            bal, ci_low, ci_high = None, None, None
            report.undefined_features.append(name)
        report.features[name] = FeatureMetrics(
            feature=name,
            n_total=pred_set.n_records,
            n_positive=int(labels.sum()),
            nir=nir(labels),
            accuracy=acc,
            balanced_accuracy=bal,
            ci_low=ci_low,
            ci_high=ci_high,
            p_accuracy_vs_nir=chance.accuracy_vs_nir,
            p_balanced_vs_half=chance.balanced_vs_half,
        )
        if bal is not None:
            defined.append(bal)
    if defined:
        report.macro_balanced_accuracy = float(np.mean(defined))
    return report


def evaluate(
    params: ProbeParams,
    config: ArchitectureConfig,
    manifest: DatasetManifest,
    split: str,
    excluded_features: tuple[str, ...] = (),
    n_boot: int = DEFAULT_N_BOOT,
    seed: int = DEFAULT_EVAL_SEED,
) -> MetricReport:
    """Pool a split from disk, predict, and score it. Deterministic at a
    fixed seed; the seed only feeds the bootstrap streams."""
    examples, record_ids = pool_split(manifest, split)
    pred_set = predictions_for_pooled(params, config, examples, record_ids)
    return evaluate_predictions(
        pred_set,
        list(manifest.feature_names),
        split,
        excluded_features=excluded_features,
        n_boot=n_boot,
        seed=seed,
    )

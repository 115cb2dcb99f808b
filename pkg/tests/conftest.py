"""Shared test fixtures and builders.

Provides a small fast planted dataset, closures for finite-difference
gradient checking of whole probes, and constructors for synthetic
RunResult fixtures used by the table/analysis tests.
"""

import numpy as np
import pytest

from layerprobe.evaluation import FeatureMetrics, MetricReport
from layerprobe.experiment import WEIGHTED_SUM, RunResult, make_run_id
from layerprobe.model import (
    ArchitectureConfig,
    PooledExample,
    ProbeParams,
    backward,
    build,
    flatten_tensors,
    forward,
    unflatten_tensors,
)
from layerprobe.numerics import RngStream, STREAM_INIT, sigmoid_bce_with_logits
from layerprobe.store import FEATURE_NAMES, FeatureLabelSet
from layerprobe.synthgen import FeaturePlant, PlantSpec, generate
from layerprobe.training import TrainConfig


def tiny_plant_spec(**overrides) -> PlantSpec:
    """Small fast dataset: 4 layers, dim 8, 54 recordings across all splits."""
    spec = PlantSpec(
        n_speakers={"train": 24, "val": 10, "test": 12, "ood_test": 8},
        dim=8,
        n_frames_range=(3, 6),
        n_layers=4,
        features={
            "strained": FeaturePlant(planted_layer=1),
            "irregular_articulatory_breakdowns": FeaturePlant(planted_layer=2),
            "rapid_rate": FeaturePlant(planted_layer=3),
            "slow_rate": FeaturePlant(planted_layer=0),
            "distortions": FeaturePlant(planted_layer=2),
        },
        seed=901,
    )
    for key, value in overrides.items():
        setattr(spec, key, value)
    return spec


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """(spec, manifest) for a generated tiny planted dataset, built once."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    spec = tiny_plant_spec()
    manifest = generate(spec, out)
    return spec, manifest


def random_labels(rng: RngStream) -> FeatureLabelSet:
    bits = rng.uniform(size=len(FEATURE_NAMES)) < 0.5
    return FeatureLabelSet(**{n: bool(bits[j]) for j, n in enumerate(FEATURE_NAMES)})


def random_batch(arch: ArchitectureConfig, rng: RngStream, n: int) -> list[PooledExample]:
    return [
        PooledExample(
            layers=rng.derive(1, i).standard_normal((arch.n_layers, arch.input_dim)),
            labels=random_labels(rng.derive(2, i)),
        )
        for i in range(n)
    ]


# Architecture cells covered by gradient checking: head mode x shared dense
# x layer mode.
GRAD_CELLS = tuple(
    (head, sd, mode)
    for head in ("single", "multi")
    for sd in (False, True)
    for mode in ("fixed", "weighted_sum")
)

# Central differences with h=1e-5 are invalid when any ReLU pre-activation
# sits closer to its kink than the perturbation can move it: the analytic
# subgradient and the two-sided numeric slope then legitimately disagree.
KINK_MARGIN = 1e-3


def grad_arch(head_mode, shared_dense, layer_mode, n_layers=4, input_dim=16, **kw):
    kw.setdefault("dropout_p", 0.0)
    kw.setdefault("layer_index", 1 if layer_mode == "fixed" else None)
    return ArchitectureConfig(
        head_mode=head_mode,
        shared_dense=shared_dense,
        layer_mode=layer_mode,
        n_layers=n_layers,
        input_dim=input_dim,
        n_features=5,
        **kw,
    )


def gradient_case(arch: ArchitectureConfig, seed: int, batch_size: int = 3):
    """(f, f_value, theta0) mapping a flat parameter vector to the batch BCE
    loss, or None when the seed lands inside the kink margin."""
    rng = RngStream(seed, 700)
    params = build(arch, RngStream(seed, STREAM_INIT))
    batch = random_batch(arch, rng, batch_size)
    targets = np.stack([ex.labels.as_vector() for ex in batch])

    _, trace = forward(batch, params, arch, mode="train", return_trace=True)
    margin = np.abs(trace.hidden_pre).min()
    if trace.shared_pre is not None:
        margin = min(margin, np.abs(trace.shared_pre).min())
    if margin < KINK_MARGIN:
        return None

    def f(vec):
        cand = ProbeParams(arch, unflatten_tensors(vec, params.tensors))
        logits, tr = forward(batch, cand, arch, mode="train", return_trace=True)
        loss, dlogits = sigmoid_bce_with_logits(logits, targets)
        return loss, flatten_tensors(backward(cand, arch, dlogits, tr))

    def f_value(vec):
        cand = ProbeParams(arch, unflatten_tensors(vec, params.tensors))
        loss, _ = sigmoid_bce_with_logits(forward(batch, cand, arch, mode="train"), targets)
        return loss

    return f, f_value, flatten_tensors(params.tensors)


def gradient_cases(arch: ArchitectureConfig, n_cases: int, max_seeds: int = 400):
    """First n_cases kink-safe cases, scanning seeds in order."""
    out = []
    for seed in range(max_seeds):
        case = gradient_case(arch, seed)
        if case is not None:
            out.append(case)
            if len(out) == n_cases:
                return out
    raise AssertionError(f"only {len(out)} kink-safe cases in {max_seeds} seeds")


# Builders for aggregation-test fixtures: RunResult lists with prescribed
# balanced accuracies, no training involved.

REPORT_POINT = TrainConfig(learning_rate=1e-3, weight_decay=1e-4, dropout_p=0.3)


def make_feature_metrics(name: str, bacc, n_total: int = 100) -> FeatureMetrics:
    return FeatureMetrics(
        feature=name,
        n_total=n_total,
        n_positive=n_total // 2,
        nir=0.5,
        accuracy=0.5 if bacc is None else bacc,
        balanced_accuracy=bacc,
        ci_low=None if bacc is None else max(bacc - 0.05, 0.0),
        ci_high=None if bacc is None else min(bacc + 0.05, 1.0),
        p_accuracy_vs_nir=0.01,
        p_balanced_vs_half=None if bacc is None else 0.01,
    )


def make_report(split: str, feature_values: dict) -> MetricReport:
    report = MetricReport(
        split=split,
        n_records=100,
        feature_names=list(feature_values),
    )
    defined = []
    for name, bacc in feature_values.items():
        report.features[name] = make_feature_metrics(name, bacc)
        if bacc is None:
            report.undefined_features.append(name)
        else:
            defined.append(bacc)
    if defined:
        report.macro_balanced_accuracy = float(np.mean(defined))
    return report


def fixture_result(
    head_mode: str,
    shared_dense: bool,
    layer_key,
    feature_values: dict,
    split: str = "test",
    n_layers: int = 13,
    learning_rate: float = 1e-3,
) -> RunResult:
    arch = ArchitectureConfig(
        head_mode=head_mode,
        shared_dense=shared_dense,
        layer_mode="weighted_sum" if layer_key == WEIGHTED_SUM else "fixed",
        layer_index=None if layer_key == WEIGHTED_SUM else int(layer_key),
        n_layers=n_layers,
        input_dim=768,
        n_features=len(feature_values),
        dropout_p=0.3,
    )
    tcfg = TrainConfig(learning_rate=learning_rate, weight_decay=1e-4, dropout_p=0.3)
    return RunResult(
        run_id=make_run_id(arch, tcfg, "fixture"),
        architecture=arch,
        train=tcfg,
        reports={split: make_report(split, feature_values)},
    )


def fixture_column(
    values: list,
    head_mode: str = "single",
    shared_dense: bool = False,
    feature: str = "strained",
    split: str = "test",
    learning_rate: float = 1e-3,
) -> list[RunResult]:
    """One architecture column: values for layers 0..n-2 then weighted sum."""
    n_fixed = len(values) - 1
    keys = list(range(n_fixed)) + [WEIGHTED_SUM]
    return [
        fixture_result(
            head_mode,
            shared_dense,
            key,
            {feature: v},
            split=split,
            n_layers=n_fixed,
            learning_rate=learning_rate,
        )
        for key, v in zip(keys, values)
    ]


# Balanced accuracies of the single-head no-shared-dense reporting column:
# thirteen fixed layers then the weighted sum.
TABLE2_COLUMN = (
    0.69, 0.71, 0.69, 0.72, 0.70, 0.71, 0.72, 0.67, 0.69, 0.69, 0.68, 0.63, 0.61,
    0.70,
)

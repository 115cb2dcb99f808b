"""Grid expansion, parallel run orchestration, and result aggregation:
layer/architecture tables, best/worst/final-layer delta analyses, and
plot-ready CSV dumps.

Runs are content-addressed: run_id hashes the architecture, train config,
and a dataset fingerprint, so re-executions land on the same files and
resume can skip completed work. Workers share one read-only pooled copy of
the dataset; every run is independent, which makes aggregate output
invariant to parallelism degree and execution order.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ArchitectureConfig, ProbeParams, save_params
from .store import DatasetManifest, validate_manifest
from .training import TrainConfig, epoch_logs_to_jsonl, pool_dataset, train_pooled
from .evaluation import (
    DEFAULT_N_BOOT,
    MetricReport,
    OOD_EXCLUDED_FEATURES,
    evaluate_predictions,
    predictions_for_pooled,
)

# Reporting point: the hyperparameters fixed when tables and layer analyses
# are rendered, chosen once for the whole study.
REPORT_LEARNING_RATE = 1e-3
REPORT_WEIGHT_DECAY = 1e-4
REPORT_DROPOUT_P = 0.3
REPORT_CLASSIFIER_BOTTLENECK = None
REPORT_SHARED_DENSE_BOTTLENECK = None

WEIGHTED_SUM = "weighted_sum"
PLOT_FIGURES = ("per_layer_lines", "best_worst_bars", "lr_comparison")
PLOT_HEADER = "feature,layer_or_sum,learning_rate,split,balanced_accuracy,ci_low,ci_high"


@dataclass
class GridSpec:
    """The full search space. Defaults reproduce the study grid: two
    learning rates x three weight decays x two dropouts x three classifier
    bottlenecks x three shared-dense bottlenecks, over 2 head modes x 2
    shared-dense flags x 14 layer choices."""

    learning_rates: tuple = (1e-4, 1e-3)
    weight_decays: tuple = (1e-4, 1e-3, 1e-2)
    dropout_ps: tuple = (0.2, 0.3)
    classifier_bottlenecks: tuple = (None, 700, 300)
    shared_dense_bottlenecks: tuple = (None, 700, 300)
    head_modes: tuple = ("single", "multi")
    shared_dense_flags: tuple = (True, False)
    layer_choices: tuple = tuple(range(13)) + (WEIGHTED_SUM,)
    n_layers: int = 13
    input_dim: int = 768
    n_features: int = 5
    epochs: int = 20
    batch_size: int = 8
    seed: int = 4200

    def validate(self) -> None:
        for name in (
            "learning_rates",
            "weight_decays",
            "dropout_ps",
            "classifier_bottlenecks",
            "shared_dense_bottlenecks",
            "head_modes",
            "shared_dense_flags",
            "layer_choices",
        ):
            if not getattr(self, name):
                raise ValueError(f"grid set {name} is empty")
        for choice in self.layer_choices:
            if choice == WEIGHTED_SUM:
                continue
            if not isinstance(choice, int) or not (0 <= choice < self.n_layers):
                raise ValueError(f"invalid layer choice {choice!r}")

    @classmethod
    def fixed_point(cls, **overrides) -> "GridSpec":
        """Singleton hyperparameter sets at the reporting point; the
        architecture and layer axes stay full (56 cells at defaults)."""
        spec = cls(
            learning_rates=(REPORT_LEARNING_RATE,),
            weight_decays=(REPORT_WEIGHT_DECAY,),
            dropout_ps=(REPORT_DROPOUT_P,),
            classifier_bottlenecks=(REPORT_CLASSIFIER_BOTTLENECK,),
            shared_dense_bottlenecks=(REPORT_SHARED_DENSE_BOTTLENECK,),
        )
        for key, value in overrides.items():
            if not hasattr(spec, key):
                raise TypeError(f"unknown GridSpec field {key!r}")
            setattr(spec, key, value)
        return spec

    def to_dict(self) -> dict:
        d = {
            "learning_rates": list(self.learning_rates),
            "weight_decays": list(self.weight_decays),
            "dropout_ps": list(self.dropout_ps),
            "classifier_bottlenecks": list(self.classifier_bottlenecks),
            "shared_dense_bottlenecks": list(self.shared_dense_bottlenecks),
            "head_modes": list(self.head_modes),
            "shared_dense_flags": list(self.shared_dense_flags),
            "layer_choices": list(self.layer_choices),
        }
        for key in ("n_layers", "input_dim", "n_features", "epochs", "batch_size", "seed"):
            d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        spec = cls()
        tuple_fields = {
            "learning_rates",
            "weight_decays",
            "dropout_ps",
            "classifier_bottlenecks",
            "shared_dense_bottlenecks",
            "head_modes",
            "shared_dense_flags",
            "layer_choices",
        }
        for key, value in d.items():
            if not hasattr(spec, key):
                raise ValueError(f"unknown GridSpec field {key!r}")
            setattr(spec, key, tuple(value) if key in tuple_fields else value)
        return spec


def expand_grid(spec: GridSpec) -> list[tuple[ArchitectureConfig, TrainConfig]]:
    """Cartesian product in canonical order: head mode, shared-dense flag,
    layer choice, learning rate, weight decay, dropout, classifier
    bottleneck, shared-dense bottleneck. When shared_dense is off the
    shared-dense bottleneck is inert, so that axis collapses to a single
    canonical None entry (the dedup rule)."""
    spec.validate()
    combos: list[tuple[ArchitectureConfig, TrainConfig]] = []
    for head_mode in spec.head_modes:
        for sd in spec.shared_dense_flags:
            for choice in spec.layer_choices:
                for lr in spec.learning_rates:
                    for wd in spec.weight_decays:
                        for do in spec.dropout_ps:
                            for cb in spec.classifier_bottlenecks:
                                sd_bottlenecks = spec.shared_dense_bottlenecks if sd else (None,)
                                for sb in sd_bottlenecks:
                                    arch = ArchitectureConfig(
                                        head_mode=head_mode,
                                        shared_dense=sd,
                                        layer_mode=WEIGHTED_SUM if choice == WEIGHTED_SUM else "fixed",
                                        layer_index=None if choice == WEIGHTED_SUM else int(choice),
                                        shared_dense_bottleneck=sb,
                                        classifier_bottleneck=cb,
                                        n_layers=spec.n_layers,
                                        input_dim=spec.input_dim,
                                        n_features=spec.n_features,
                                        dropout_p=do,
                                    )
                                    tcfg = TrainConfig(
                                        learning_rate=lr,
                                        weight_decay=wd,
                                        dropout_p=do,
                                        epochs=spec.epochs,
                                        batch_size=spec.batch_size,
                                        seed=spec.seed,
                                    )
                                    combos.append((arch, tcfg))
    return combos


@dataclass
class RunResult:
    """One trained-and-evaluated grid cell, as persisted."""

    run_id: str
    architecture: ArchitectureConfig
    train: TrainConfig
    status: str = "done"
    error: str | None = None
    reports: dict[str, MetricReport] = field(default_factory=dict)
    params_path: str | None = None
    epoch_log_path: str | None = None
    duration_seconds: float | None = None

    def layer_key(self) -> int | str:
        if self.architecture.layer_mode == WEIGHTED_SUM:
            return WEIGHTED_SUM
        return int(self.architecture.layer_index)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "error": self.error,
            "architecture": self.architecture.to_dict(),
            "train": self.train.to_dict(),
            "reports": {split: rep.to_dict() for split, rep in self.reports.items()},
            "params_path": self.params_path,
            "epoch_log_path": self.epoch_log_path,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(
            run_id=d["run_id"],
            architecture=ArchitectureConfig.from_dict(d["architecture"]),
            train=TrainConfig.from_dict(d["train"]),
            status=d["status"],
            error=d["error"],
            reports={s: MetricReport.from_dict(r) for s, r in d["reports"].items()},
            params_path=d["params_path"],
            epoch_log_path=d["epoch_log_path"],
            duration_seconds=d["duration_seconds"],
        )


def dataset_fingerprint(manifest: DatasetManifest) -> str:
    return hashlib.sha256(manifest.to_json().encode()).hexdigest()


def make_run_id(arch: ArchitectureConfig, tcfg: TrainConfig, fingerprint: str) -> str:
    doc = {"architecture": arch.to_dict(), "train": tcfg.to_dict(), "dataset": fingerprint}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_save_params(params: ProbeParams, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_params(params, tmp)
    os.replace(tmp, path)


def save_run_result(result: RunResult, results_dir: str | Path) -> Path:
    path = Path(results_dir) / f"{result.run_id}.json"
    _atomic_write_text(path, json.dumps(result.to_dict(), indent=2) + "\n")
    return path


def load_run_result(path: str | Path) -> RunResult:
    return RunResult.from_dict(json.loads(Path(path).read_text()))


def load_results(results_dir: str | Path) -> list[RunResult]:
    """All persisted runs, ordered by run_id for stable aggregation."""
    paths = sorted(Path(results_dir).glob("*.json"))
    return [load_run_result(p) for p in paths]


# Worker-side state: the pooled dataset and run settings, installed once per
# worker process (and reused in-process when parallelism is 1, so both paths
# execute identical code).
_WORKER: dict | None = None


def _init_worker(payload: dict) -> None:
    global _WORKER
    _WORKER = payload


def _run_one(job: dict) -> dict:
    data = _WORKER
    if data is None:
        raise RuntimeError("worker not initialized")
    arch = ArchitectureConfig.from_dict(job["architecture"])
    tcfg = TrainConfig.from_dict(job["train"])
    run_id = job["run_id"]
    results_dir = Path(data["results_dir"])
    started = time.perf_counter()
    result = RunResult(run_id=run_id, architecture=arch, train=tcfg)
    try:
        train_ex, _ = data["splits"]["train"]
        val_ex, _ = data["splits"]["val"]
        params, logs = train_pooled(train_ex, val_ex, arch, tcfg, data["feature_names"])
        for split in ("test", "ood_test"):
            examples, record_ids = data["splits"][split]
            if not examples:
                continue
            excluded = OOD_EXCLUDED_FEATURES if split == "ood_test" else ()
            pred_set = predictions_for_pooled(params, arch, examples, record_ids)
            result.reports[split] = evaluate_predictions(
                pred_set,
                list(data["feature_names"]),
                split,
                excluded_features=excluded,
                n_boot=data["n_boot"],
                seed=data["eval_seed"],
            )
        result.params_path = f"params/{run_id}.params"
        result.epoch_log_path = f"logs/{run_id}.jsonl"
        _atomic_save_params(params, results_dir / result.params_path)
        _atomic_write_text(results_dir / result.epoch_log_path, epoch_logs_to_jsonl(logs))
    except Exception as exc:  # individual failures must not sink the grid
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        result.reports = {}
        result.params_path = None
        result.epoch_log_path = None
    result.duration_seconds = time.perf_counter() - started
    save_run_result(result, results_dir)
    return result.to_dict()


def run_grid(
    manifest: DatasetManifest,
    spec: GridSpec,
    results_dir: str | Path,
    parallelism: int = 1,
    resume: bool = False,
    n_boot: int = DEFAULT_N_BOOT,
) -> list[RunResult]:
    """Execute every grid cell, persisting each run on completion.

    Returns results in grid-expansion order. With resume=True, cells whose
    persisted result exists with status "done" are loaded, not re-executed
    (failed cells are retried).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    violations = validate_manifest(manifest)
    if violations:
        listing = "; ".join(str(v) for v in violations[:10])
        raise ValueError(f"manifest failed validation ({len(violations)} violations): {listing}")
    combos = expand_grid(spec)
    fingerprint = dataset_fingerprint(manifest)
    results_dir = Path(results_dir)
    (results_dir / "params").mkdir(parents=True, exist_ok=True)
    (results_dir / "logs").mkdir(exist_ok=True)

    order: list[str] = []
    done: dict[str, RunResult] = {}
    jobs: list[dict] = []
    for arch, tcfg in combos:
        rid = make_run_id(arch, tcfg, fingerprint)
        order.append(rid)
        path = results_dir / f"{rid}.json"
        if resume and path.exists():
            existing = load_run_result(path)
            if existing.status == "done":
                done[rid] = existing
                continue
        jobs.append({"run_id": rid, "architecture": arch.to_dict(), "train": tcfg.to_dict()})

    if jobs:
        payload = {
            "splits": pool_dataset(manifest),
            "feature_names": tuple(manifest.feature_names),
            "results_dir": str(results_dir),
            "n_boot": n_boot,
            "eval_seed": spec.seed,
        }
        if parallelism == 1:
            _init_worker(payload)
            try:
                for job in jobs:
                    done[job["run_id"]] = RunResult.from_dict(_run_one(job))
            finally:
                _init_worker(None)
        else:
            with ProcessPoolExecutor(
                max_workers=parallelism, initializer=_init_worker, initargs=(payload,)
            ) as pool:
                for out in pool.map(_run_one, jobs):
                    done[out["run_id"]] = RunResult.from_dict(out)
    return [done[rid] for rid in order]


# Hyperparameter-point filter: analysis and rendering operate on one point of
# the hyperparameter axes. Keys absent from a user filter take these values.
DEFAULT_POINT = {
    "learning_rate": REPORT_LEARNING_RATE,
    "weight_decay": REPORT_WEIGHT_DECAY,
    "dropout_p": REPORT_DROPOUT_P,
    "classifier_bottleneck": REPORT_CLASSIFIER_BOTTLENECK,
    "shared_dense_bottleneck": REPORT_SHARED_DENSE_BOTTLENECK,
}
DEFAULT_CELL = {"head_mode": "single", "shared_dense": False}

_ARCH_KEYS = {
    "head_mode",
    "shared_dense",
    "classifier_bottleneck",
    "shared_dense_bottleneck",
    "dropout_p",
}
_TRAIN_KEYS = {"learning_rate", "weight_decay", "dropout_p"}


def _matches(result: RunResult, flt: dict) -> bool:
    for key, want in flt.items():
        if key in _ARCH_KEYS and getattr(result.architecture, key) != want:
            return False
        if key in _TRAIN_KEYS and getattr(result.train, key) != want:
            return False
        if key not in _ARCH_KEYS | _TRAIN_KEYS:
            raise ValueError(f"unknown filter key {key!r}")
    return True


def _collect_layer_cells(
    results: list[RunResult], flt: dict, split: str
) -> tuple[dict[int | str, RunResult], int]:
    by_layer: dict[int | str, RunResult] = {}
    n_layers = None
    for res in results:
        if res.status != "done" or not _matches(res, flt):
            continue
        if split not in res.reports:
            continue
        key = res.layer_key()
        if key in by_layer:
            raise ValueError(
                f"multiple runs for layer cell {key!r} under the filter; pin more hyperparameters"
            )
        by_layer[key] = res
        n_layers = res.architecture.n_layers
    if n_layers is None:
        raise ValueError("no runs match the filter")
    missing = [k for k in list(range(n_layers)) + [WEIGHTED_SUM] if k not in by_layer]
    if missing:
        raise ValueError(f"missing layer cells under the filter: {missing}")
    return by_layer, n_layers


@dataclass
class LayerCurve:
    """One metric traced over the fixed layers plus the weighted sum."""

    name: str
    values: dict[int, float]
    weighted_sum: float | None
    best_layers: list[int]
    worst_layers: list[int]

    @property
    def best_layer(self) -> int:
        return self.best_layers[0]

    @property
    def worst_layer(self) -> int:
        return self.worst_layers[0]

    @property
    def best(self) -> float:
        return self.values[self.best_layers[0]]

    @property
    def worst(self) -> float:
        return self.values[self.worst_layers[0]]

    @property
    def final(self) -> float:
        return self.values[max(self.values)]

    def deltas(self) -> dict[str, float | None]:
        ws = self.weighted_sum
        return {
            "best_minus_worst": self.best - self.worst,
            "best_minus_final": self.best - self.final,
            "ws_minus_worst": None if ws is None else ws - self.worst,
            "ws_minus_final": None if ws is None else ws - self.final,
            "ws_minus_best": None if ws is None else ws - self.best,
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "values": {str(k): v for k, v in sorted(self.values.items())},
            "weighted_sum": self.weighted_sum,
            "best_layers": self.best_layers,
            "worst_layers": self.worst_layers,
            "deltas": self.deltas(),
        }


def _curve(name: str, values: dict[int, float], weighted_sum: float | None) -> LayerCurve:
    arr = np.array([values[k] for k in sorted(values)])
    keys = sorted(values)
    best_v, worst_v = arr.max(), arr.min()
    return LayerCurve(
        name=name,
        values=values,
        weighted_sum=weighted_sum,
        best_layers=[k for k, v in zip(keys, arr) if v == best_v],
        worst_layers=[k for k, v in zip(keys, arr) if v == worst_v],
    )


@dataclass
class LayerAnalysis:
    """Best/worst/final-layer structure of one architecture cell's results."""

    split: str
    filter: dict
    n_layers: int
    features: dict[str, LayerCurve]
    skipped_features: list[str]
    macro: LayerCurve | None
    avg_best_layer: int | None
    summary: dict[str, float | None]

    def summary_points(self) -> dict[str, float | None]:
        """The summary deltas in absolute balanced-accuracy points (x100)."""
        return {k: (None if v is None else 100.0 * v) for k, v in self.summary.items()}

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "filter": {k: self.filter[k] for k in sorted(self.filter)},
            "n_layers": self.n_layers,
            "features": {k: v.to_dict() for k, v in self.features.items()},
            "skipped_features": list(self.skipped_features),
            "macro": None if self.macro is None else self.macro.to_dict(),
            "avg_best_layer": self.avg_best_layer,
            "summary": self.summary,
            "summary_points": self.summary_points(),
        }


def analyze_layers(
    results: list[RunResult], filter: dict | None = None, split: str = "test"
) -> LayerAnalysis:
    """Per-feature and macro argmax/argmin over layers at one hyperparameter
    point (defaults: reporting point, single head, no shared dense).

    A feature enters the per-feature analysis only if its balanced accuracy
    is defined at every layer cell; others are listed as skipped. The
    average-best layer is the argmax of the macro (feature-mean) curve.
    """
    flt = {**DEFAULT_POINT, **DEFAULT_CELL, **(filter or {})}
    by_layer, n_layers = _collect_layer_cells(results, flt, split)
    fixed = list(range(n_layers))

    feature_names = by_layer[0].reports[split].feature_names
    curves: dict[str, LayerCurve] = {}
    skipped: list[str] = []
    for name in feature_names:
        values: dict[int, float] = {}
        ok = True
        for k in fixed:
            fm = by_layer[k].reports[split].features.get(name)
            if fm is None or fm.balanced_accuracy is None:
                ok = False
                break
            values[k] = fm.balanced_accuracy
        ws_fm = by_layer[WEIGHTED_SUM].reports[split].features.get(name)
        if not ok or ws_fm is None or ws_fm.balanced_accuracy is None:
            skipped.append(name)
            continue
        curves[name] = _curve(name, values, ws_fm.balanced_accuracy)

    macro_values = {k: by_layer[k].reports[split].macro_balanced_accuracy for k in fixed}
    macro_ws = by_layer[WEIGHTED_SUM].reports[split].macro_balanced_accuracy
    macro = None
    avg_best = None
    if all(v is not None for v in macro_values.values()):
        macro = _curve("macro", macro_values, macro_ws)
        avg_best = macro.best_layer

    summary: dict[str, float | None] = {}
    if curves:
        keys = ("best_minus_worst", "best_minus_final", "ws_minus_worst", "ws_minus_final", "ws_minus_best")
        for key in keys:
            vals = [c.deltas()[key] for c in curves.values()]
            summary[key] = None if any(v is None for v in vals) else float(np.mean(vals))
        if avg_best is not None:
            summary["best_minus_avg_best"] = float(
                np.mean([c.best - c.values[avg_best] for c in curves.values()])
            )
            if all(c.weighted_sum is not None for c in curves.values()):
                summary["ws_minus_avg_best"] = float(
                    np.mean([c.weighted_sum - c.values[avg_best] for c in curves.values()])
                )
    return LayerAnalysis(
        split=split,
        filter=flt,
        n_layers=n_layers,
        features=curves,
        skipped_features=skipped,
        macro=macro,
        avg_best_layer=avg_best,
        summary=summary,
    )


CELL_ORDER = (("single", True), ("single", False), ("multi", True), ("multi", False))


def _cell_label(head_mode: str, shared_dense: bool, n_features: int) -> str:
    heads = "1" if head_mode == "single" else str(n_features)
    return f"{heads}, {'sd' if shared_dense else 'No sd'}"


def _row_label(key: int | str) -> str:
    return "Weighted Sum" if key == WEIGHTED_SUM else str(key)


@dataclass
class TableRender:
    """Macro balanced accuracy per layer (rows) and architecture (columns),
    at 2-decimal precision; per-column maxima flagged with '*'."""

    text: str
    csv: str
    row_labels: list[str]
    col_labels: list[str]
    values: dict[tuple[str, str], float]
    flagged: set[tuple[str, str]]


def render_table(
    results: list[RunResult],
    grouping: str = "architecture",
    filter: dict | None = None,
    split: str = "test",
) -> TableRender:
    """Aligned text plus CSV. Rows are layer choices in order, columns the
    architecture cells present; entries macro balanced accuracy rounded to
    2 decimals. Ties at a column's maximum are all flagged."""
    if grouping != "architecture":
        raise ValueError(f"unknown grouping {grouping!r}")
    if not results:
        raise ValueError("no results to render")
    flt = {**DEFAULT_POINT, **(filter or {})}

    cells: dict[tuple[str, bool], dict[int | str, float]] = {}
    n_features = results[0].architecture.n_features
    for res in results:
        if res.status != "done" or not _matches(res, flt) or split not in res.reports:
            continue
        macro = res.reports[split].macro_balanced_accuracy
        if macro is None:
            continue
        cell = (res.architecture.head_mode, res.architecture.shared_dense)
        layer = res.layer_key()
        col = cells.setdefault(cell, {})
        if layer in col:
            raise ValueError(
                f"multiple runs for cell {cell} layer {layer!r}; pin more hyperparameters"
            )
        col[layer] = macro
    if not cells:
        raise ValueError("no runs match the filter")

    row_keys: list[int | str] = sorted(
        {k for col in cells.values() for k in col},
        key=lambda k: (1, 0) if k == WEIGHTED_SUM else (0, k),
    )
    col_keys = [c for c in CELL_ORDER if c in cells]
    row_labels = [_row_label(k) for k in row_keys]
    col_labels = [_cell_label(h, sd, n_features) for h, sd in col_keys]

    values: dict[tuple[str, str], float] = {}
    flagged: set[tuple[str, str]] = set()
    for cell, label in zip(col_keys, col_labels):
        col = cells[cell]
        rounded = {k: round(v, 2) for k, v in col.items()}
        top = max(rounded.values())
        for k in col:
            values[(_row_label(k), label)] = rounded[k]
            if rounded[k] == top:
                flagged.add((_row_label(k), label))

    def fmt(row: str, col: str) -> str:
        if (row, col) not in values:
            return ""
        mark = "*" if (row, col) in flagged else ""
        return f"{values[(row, col)]:.2f}{mark}"

    widths = [max(len("Layer"), *(len(r) for r in row_labels))]
    widths += [max(len(c), *(len(fmt(r, c)) for r in row_labels)) for c in col_labels]
    header = ["Layer"] + col_labels
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for r in row_labels:
        cells_text = [r.ljust(widths[0])] + [
            fmt(r, c).rjust(w) for c, w in zip(col_labels, widths[1:])
        ]
        lines.append("  ".join(cells_text).rstrip())
    text = "\n".join(lines) + "\n"

    def csv_quote(s: str) -> str:
        return f'"{s}"' if "," in s else s

    csv_lines = [",".join(["layer"] + [csv_quote(c) for c in col_labels])]
    for r in row_labels:
        fields = [csv_quote(r)]
        for c in col_labels:
            fields.append(f"{values[(r, c)]:.2f}" if (r, c) in values else "")
        csv_lines.append(",".join(fields))
    csv = "\n".join(csv_lines) + "\n"

    return TableRender(
        text=text,
        csv=csv,
        row_labels=row_labels,
        col_labels=col_labels,
        values=values,
        flagged=flagged,
    )


def parse_table(csv: str) -> dict[tuple[str, str], float]:
    """Invert render_table's CSV back to {(row_label, col_label): value}."""
    import csv as csv_mod
    import io

    rows = list(csv_mod.reader(io.StringIO(csv)))
    if not rows:
        raise ValueError("empty table CSV")
    header = rows[0][1:]
    out: dict[tuple[str, str], float] = {}
    for row in rows[1:]:
        if not row:
            continue
        label = row[0]
        for col, cell in zip(header, row[1:]):
            if cell != "":
                out[(label, col)] = float(cell)
    return out


def _plot_row(
    feature: str,
    layer_key: int | str,
    lr: float,
    split: str,
    bacc: float | None,
    ci_low: float | None,
    ci_high: float | None,
) -> str:
    def num(v: float | None) -> str:
        return "" if v is None else f"{v:.6f}"

    return ",".join(
        [feature, _row_label(layer_key).replace(" ", "_").lower(), f"{lr:g}", split, num(bacc), num(ci_low), num(ci_high)]
    )


def emit_plot_data(
    results: list[RunResult],
    figure: str,
    filter: dict | None = None,
    split: str = "test",
) -> str:
    """Long-format CSV for the three figure families: per-feature layer
    curves, best/worst/weighted-sum bars with CI bounds, and learning-rate
    comparison curves. Empty results yield a header-only CSV."""
    if figure not in PLOT_FIGURES:
        raise ValueError(f"unknown figure {figure!r}; expected one of {PLOT_FIGURES}")
    lines = [PLOT_HEADER]
    if not results:
        return "\n".join(lines) + "\n"

    if figure == "lr_comparison":
        flt = {**DEFAULT_POINT, **DEFAULT_CELL, **(filter or {})}
        flt.pop("learning_rate", None)
        rates = sorted({r.train.learning_rate for r in results if r.status == "done" and _matches(r, flt)})
        if not rates:
            raise ValueError("no runs match the filter")
        for lr in rates:
            by_layer, n_layers = _collect_layer_cells(results, {**flt, "learning_rate": lr}, split)
            for key in list(range(n_layers)) + [WEIGHTED_SUM]:
                report = by_layer[key].reports[split]
                for name in report.feature_names:
                    fm = report.features.get(name)
                    if fm is None:
                        continue
                    lines.append(
                        _plot_row(name, key, lr, split, fm.balanced_accuracy, fm.ci_low, fm.ci_high)
                    )
        return "\n".join(lines) + "\n"

    flt = {**DEFAULT_POINT, **DEFAULT_CELL, **(filter or {})}
    by_layer, n_layers = _collect_layer_cells(results, flt, split)
    lr = by_layer[0].train.learning_rate

    if figure == "per_layer_lines":
        report0 = by_layer[0].reports[split]
        for name in report0.feature_names:
            for key in list(range(n_layers)) + [WEIGHTED_SUM]:
                fm = by_layer[key].reports[split].features.get(name)
                if fm is None:
                    continue
                lines.append(
                    _plot_row(name, key, lr, split, fm.balanced_accuracy, fm.ci_low, fm.ci_high)
                )
        return "\n".join(lines) + "\n"

    # best_worst_bars
    analysis = analyze_layers(results, filter=flt, split=split)
    for name, curve in analysis.features.items():
        for key in (curve.best_layer, curve.worst_layer, WEIGHTED_SUM):
            fm = by_layer[key].reports[split].features[name]
            lines.append(
                _plot_row(name, key, lr, split, fm.balanced_accuracy, fm.ci_low, fm.ci_high)
            )
    return "\n".join(lines) + "\n"

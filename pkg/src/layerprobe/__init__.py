"""Layer-selection probing harness for frozen speech encoder embeddings.

Submodules:
  store       binary embedding files, dataset manifests, validation
  numerics    seeded streams, layer kernels, loss, gradient checking
  model       probe architectures, forward/backward, params serialization
  training    AdamW loop with per-epoch validation snapshots
  evaluation  balanced accuracy, NIR, bootstrap CIs, chance tests
  experiment  grid expansion, parallel runs, tables, analyses, plot data
  synthgen    planted-signal synthetic datasets plus a Fisher-ratio oracle
"""

from .store import (
    FEATURE_NAMES,
    SPLITS,
    TASKS,
    DatasetManifest,
    FeatureLabelSet,
    LayerStackRecord,
    ManifestRecord,
    StoreFormatError,
    Violation,
    iterate_split,
    load_manifest,
    read_record,
    save_manifest,
    validate_manifest,
    write_record,
)
from .numerics import RngStream, grad_check
from .model import (
    ArchitectureConfig,
    PooledExample,
    ProbeParams,
    build,
    count_params,
    forward,
    load_params,
    save_params,
)
from .training import TrainConfig, EpochLog, adamw_step, train
from .evaluation import (
    MetricReport,
    OOD_EXCLUDED_FEATURES,
    PredictionSet,
    UndefinedMetricError,
    balanced_accuracy,
    bootstrap_ci,
    evaluate,
    nir,
    p_value_vs_chance,
)
from .experiment import (
    GridSpec,
    LayerAnalysis,
    RunResult,
    analyze_layers,
    emit_plot_data,
    expand_grid,
    render_table,
    run_grid,
)
from .synthgen import OracleRanking, PlantSpec, generate, oracle_rank

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES",
    "SPLITS",
    "TASKS",
    "DatasetManifest",
    "FeatureLabelSet",
    "LayerStackRecord",
    "ManifestRecord",
    "StoreFormatError",
    "Violation",
    "iterate_split",
    "load_manifest",
    "read_record",
    "save_manifest",
    "validate_manifest",
    "write_record",
    "RngStream",
    "grad_check",
    "ArchitectureConfig",
    "PooledExample",
    "ProbeParams",
    "build",
    "count_params",
    "forward",
    "load_params",
    "save_params",
    "TrainConfig",
    "EpochLog",
    "adamw_step",
    "train",
    "MetricReport",
    "OOD_EXCLUDED_FEATURES",
    "PredictionSet",
    "UndefinedMetricError",
    "balanced_accuracy",
    "bootstrap_ci",
    "evaluate",
    "nir",
    "p_value_vs_chance",
    "GridSpec",
    "LayerAnalysis",
    "RunResult",
    "analyze_layers",
    "emit_plot_data",
    "expand_grid",
    "render_table",
    "run_grid",
    "OracleRanking",
    "PlantSpec",
    "generate",
    "oracle_rank",
]

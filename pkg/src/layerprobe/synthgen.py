"""Synthetic layer-stack datasets with a known answer key.

Each feature's class signal is a constant mean shift along a fixed unit
direction, planted at one chosen layer and bled at a reduced magnitude into
the two adjacent layers. Everything else is i.i.d. noise, so per-layer
separability is known by construction and a closed-form Fisher-ratio oracle
(independent of the probe/training code) can rank layers without training
anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import RngStream, STREAM_SYNTH
from .store import (
    FEATURE_NAMES,
    DatasetManifest,
    FeatureLabelSet,
    LayerStackRecord,
    ManifestRecord,
    iterate_split,
    save_manifest,
    validate_manifest,
    write_record,
)

DEFAULT_PLANTED_LAYERS = (2, 3, 5, 8, 11)


@dataclass
class FeaturePlant:
    """Where and how strongly one feature's signal is planted."""

    planted_layer: int
    effect_size: float = 2.0
    positive_rate: float = 0.5


@dataclass
class PlantSpec:
    """Full recipe for one synthetic dataset."""

    n_speakers: dict[str, int] = field(
        default_factory=lambda: {"train": 600, "val": 100, "test": 150}
    )
    recordings_per_speaker: int = 1
    dim: int = 64
    n_frames_range: tuple[int, int] = (10, 30)
    n_layers: int = 13
    features: dict[str, FeaturePlant] = field(
        default_factory=lambda: {
            name: FeaturePlant(planted_layer=layer)
            for name, layer in zip(FEATURE_NAMES, DEFAULT_PLANTED_LAYERS)
        }
    )
    leak: float = 0.25
    noise_sigma: float = 1.0
    seed: int = 4200

    def validate(self) -> None:
        if set(self.features) != set(FEATURE_NAMES):
            raise ValueError(f"features must cover exactly {FEATURE_NAMES}")
        if not self.n_speakers or any(n < 0 for n in self.n_speakers.values()):
            raise ValueError("n_speakers must map splits to counts >= 0")
        unknown = set(self.n_speakers) - {"train", "val", "test", "ood_test"}
        if unknown:
            raise ValueError(f"unknown splits in n_speakers: {sorted(unknown)}")
        if self.recordings_per_speaker < 1:
            raise ValueError("recordings_per_speaker must be >= 1")
        if self.dim < 1 or self.n_layers < 1:
            raise ValueError("dim and n_layers must be >= 1")
        lo, hi = self.n_frames_range
        if not (1 <= lo <= hi):
            raise ValueError("n_frames_range must satisfy 1 <= min <= max")
        if not (0.0 <= self.leak < 1.0):
            raise ValueError("leak must be in [0, 1)")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        for name, plant in self.features.items():
            if not (0 <= plant.planted_layer < self.n_layers):
                raise ValueError(f"{name}: planted_layer {plant.planted_layer} out of range")
            if not (0.0 < plant.positive_rate < 1.0):
                raise ValueError(f"{name}: positive_rate must be in (0, 1)")
            if plant.effect_size < 0:
                raise ValueError(f"{name}: effect_size must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_speakers": dict(self.n_speakers),
            "recordings_per_speaker": self.recordings_per_speaker,
            "dim": self.dim,
            "n_frames_range": list(self.n_frames_range),
            "n_layers": self.n_layers,
            "features": {
                name: {
                    "planted_layer": p.planted_layer,
                    "effect_size": p.effect_size,
                    "positive_rate": p.positive_rate,
                }
                for name, p in self.features.items()
            },
            "leak": self.leak,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantSpec":
        spec = cls()
        for key in ("recordings_per_speaker", "dim", "n_layers", "leak", "noise_sigma", "seed"):
            if key in d:
                setattr(spec, key, d[key])
        if "n_speakers" in d:
            spec.n_speakers = {k: int(v) for k, v in d["n_speakers"].items()}
        if "n_frames_range" in d:
            spec.n_frames_range = tuple(int(v) for v in d["n_frames_range"])
        if "features" in d:
            spec.features = {
                name: FeaturePlant(
                    planted_layer=int(p["planted_layer"]),
                    effect_size=float(p.get("effect_size", 2.0)),
                    positive_rate=float(p.get("positive_rate", 0.5)),
                )
                for name, p in d["features"].items()
            }
        return spec


def _draw_labels(spec: PlantSpec, rng: RngStream) -> FeatureLabelSet:
    """Independent Bernoulli labels per feature; the mutually exclusive rate
    pair (rapid_rate, slow_rate) is redrawn together until not both true, so
    generated manifests always pass the rate-conflict validation rule."""
    rates = np.array([spec.features[n].positive_rate for n in FEATURE_NAMES])
    hits = rng.uniform(size=len(FEATURE_NAMES)) < rates
    i_rapid = FEATURE_NAMES.index("rapid_rate")
    i_slow = FEATURE_NAMES.index("slow_rate")
    while hits[i_rapid] and hits[i_slow]:
        pair = rng.uniform(size=2)
        hits[i_rapid] = pair[0] < rates[i_rapid]
        hits[i_slow] = pair[1] < rates[i_slow]
    return FeatureLabelSet(**{n: bool(hits[j]) for j, n in enumerate(FEATURE_NAMES)})


def signal_directions(spec: PlantSpec) -> dict[str, np.ndarray]:
    """Fixed unit direction per feature, a pure function of the seed."""
    base = RngStream(spec.seed, STREAM_SYNTH)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(FEATURE_NAMES):
        v = base.derive(0, j).standard_normal(spec.dim)
        out[name] = v / np.linalg.norm(v)
    return out


def generate(spec: PlantSpec, out_dir: str | Path) -> DatasetManifest:
    """Write the dataset (embedding files + manifest.json) under out_dir.

    Deterministic for a fixed spec: every record gets its own derived
    stream, so record content is independent of generation order.
    """
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "emb").mkdir(parents=True, exist_ok=True)
    base = RngStream(spec.seed, STREAM_SYNTH)
    directions = signal_directions(spec)
    lo, hi = spec.n_frames_range

    manifest = DatasetManifest(records=[], feature_names=FEATURE_NAMES, base_dir=out_dir)
    for split_idx, split in enumerate(("train", "val", "test", "ood_test")):
        task = "SMR" if split == "ood_test" else "AMR"
        for s in range(spec.n_speakers.get(split, 0)):
            speaker_id = f"{split}-spk{s:04d}"
            for r in range(spec.recordings_per_speaker):
                rec_rng = base.derive(1, split_idx, s, r)
                labels = _draw_labels(spec, rec_rng)
                n_frames = int(rec_rng.integers(lo, hi + 1))
                data = rec_rng.standard_normal((spec.n_layers, n_frames, spec.dim))
                data *= spec.noise_sigma
                for name in FEATURE_NAMES:
                    if not getattr(labels, name):
                        continue
                    plant = spec.features[name]
                    shift = plant.effect_size * directions[name]
                    data[plant.planted_layer] += shift
                    for neighbor in (plant.planted_layer - 1, plant.planted_layer + 1):
                        if 0 <= neighbor < spec.n_layers:
                            data[neighbor] += spec.leak * shift
                record_id = f"{split}-spk{s:04d}-r{r}"
                rel_path = f"emb/{record_id}.emb"
                record = LayerStackRecord(
                    data=data.astype(np.float32),
                    record_id=record_id,
                    speaker_id=speaker_id,
                    task=task,
                )
                write_record(record, out_dir / rel_path)
                manifest.records.append(
                    ManifestRecord(
                        record_id=record_id,
                        speaker_id=speaker_id,
                        task=task,
                        file_path=rel_path,
                        labels=labels,
                        split=split,
                    )
                )
    save_manifest(manifest, out_dir / "manifest.json")
    violations = validate_manifest(manifest)
    if violations:  # constructive guarantee; any hit is a generator bug
        raise RuntimeError("generated dataset failed validation: " + "; ".join(map(str, violations)))
    return manifest


@dataclass
class OracleRanking:
    """Per-layer separability scores for one feature, plus the argmax."""

    feature: str
    scores: np.ndarray
    argmax_layer: int


def oracle_rank(manifest: DatasetManifest, feature: str, split: str = "train") -> OracleRanking:
    """Rank layers by the Fisher discriminant ratio along the empirical
    class-mean difference.

    Deliberately independent of the probe/training path: frame pooling,
    projection, and variance are computed inline with plain numpy so this
    can serve as an oracle for the trained-probe results.
    """
    if feature not in manifest.feature_names:
        raise ValueError(f"unknown feature {feature!r}")
    pooled: list[np.ndarray] = []
    flags: list[bool] = []
    for rec, labels in iterate_split(manifest, split):
        pooled.append(rec.data.astype(np.float64).mean(axis=1))  # [n_layers, dim]
        flags.append(bool(getattr(labels, feature)))
    if not pooled:
        raise ValueError(f"split {split!r} is empty")
    x = np.stack(pooled)  # [n, n_layers, dim]
    y = np.array(flags)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"feature {feature!r} has a single class in split {split!r}")

    n_layers = x.shape[1]
    scores = np.zeros(n_layers)
    for layer in range(n_layers):
        xp, xn = x[y, layer, :], x[~y, layer, :]
        gap = xp.mean(axis=0) - xn.mean(axis=0)
        norm = np.linalg.norm(gap)
        if norm == 0.0:
            continue
        z = x[:, layer, :] @ (gap / norm)
        zp, zn = z[y], z[~y]
        within = ((n_pos - 1) * zp.var(ddof=1) + (n_neg - 1) * zn.var(ddof=1)) / (n_pos + n_neg - 2)
        if within <= 0.0:
            scores[layer] = np.inf
            continue
        scores[layer] = (zp.mean() - zn.mean()) ** 2 / within
    return OracleRanking(feature=feature, scores=scores, argmax_layer=int(np.argmax(scores)))


def oracle_rank_all(manifest: DatasetManifest, split: str = "train") -> dict[str, OracleRanking]:
    return {name: oracle_rank(manifest, name, split) for name in manifest.feature_names}


def save_plant_spec(spec: PlantSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_plant_spec(path: str | Path) -> PlantSpec:
    return PlantSpec.from_dict(json.loads(Path(path).read_text()))

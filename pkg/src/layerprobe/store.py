"""On-disk interchange format for layer-wise embeddings plus the dataset manifest.

One binary file per recording holds the full [n_layers, n_frames, dim] float32
stack; one JSON manifest per dataset carries identity, labels, and the
speaker-disjoint split assignment. Records and manifests are immutable after
load, so concurrent read-only access is safe.

Binary layout (little-endian throughout):
    bytes 0-3   magic b"LPS1"
    4 x u32     version (=1), n_layers, dim, n_frames
    16 bytes    reserved, must be zero
    payload     n_layers*n_frames*dim float32, layer-major, frame-minor
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"LPS1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s4I16s")

TASKS = ("AMR", "SMR")
SPLITS = ("train", "val", "test", "ood_test")

# Canonical feature order; fixes the column layout of every label matrix,
# probability matrix, and report in the harness.
FEATURE_NAMES = (
    "strained",
    "irregular_articulatory_breakdowns",
    "rapid_rate",
    "slow_rate",
    "distortions",
)


class StoreFormatError(ValueError):
    """Raised when an embedding file violates the binary layout."""


@dataclass
class FeatureLabelSet:
    """Binary annotations for one recording."""

    strained: bool = False
    irregular_articulatory_breakdowns: bool = False
    rapid_rate: bool = False
    slow_rate: bool = False
    distortions: bool = False

    def as_vector(self) -> np.ndarray:
        """Labels as a float64 0/1 vector in canonical feature order."""
        return np.array([float(getattr(self, n)) for n in FEATURE_NAMES])

    def as_dict(self) -> dict[str, bool]:
        return {n: bool(getattr(self, n)) for n in FEATURE_NAMES}

    @classmethod
    def from_dict(cls, d: dict[str, bool]) -> "FeatureLabelSet":
        return cls(**{n: bool(d[n]) for n in FEATURE_NAMES})


@dataclass
class LayerStackRecord:
    """One recording's embeddings for every encoder layer.

    `data` is float32 with shape [n_layers, n_frames, dim]. Identity fields
    are carried by the manifest, not the binary file; records read straight
    from disk have them empty until a manifest attaches them.
    """

    data: np.ndarray
    record_id: str = ""
    speaker_id: str = ""
    task: str = "AMR"

    @property
    def n_layers(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def check(self) -> None:
        """Raise if any type invariant fails."""
        if self.data.ndim != 3:
            raise ValueError(f"data must be [n_layers, n_frames, dim], got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            raise ValueError(f"data must be float32, got {self.data.dtype}")
        if min(self.data.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("data contains non-finite values")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")


def write_record(record: LayerStackRecord, path: str | Path) -> None:
    """Write one record; byte-identical output for identical input."""
    record.check()
    n_layers, n_frames, dim = record.data.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, n_layers, dim, n_frames, b"\x00" * 16)
    payload = np.ascontiguousarray(record.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_record(path: str | Path) -> LayerStackRecord:
    """Read and validate one record (identity fields left empty)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise StoreFormatError(
            f"{path}: file too short for header ({len(raw)} < {_HEADER.size} bytes)"
        )
    magic, version, n_layers, dim, n_frames, reserved = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    if min(n_layers, dim, n_frames) < 1:
        raise StoreFormatError(
            f"{path}: header dims must be >= 1, got n_layers={n_layers} dim={dim} n_frames={n_frames}"
        )
    if reserved != b"\x00" * 16:
        raise StoreFormatError(f"{path}: reserved header bytes are not zero")
    expected = _HEADER.size + 4 * n_layers * dim * n_frames
    if len(raw) < expected:
        raise StoreFormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}")
    if len(raw) > expected:
        raise StoreFormatError(f"{path}: trailing bytes, expected {expected} bytes, got {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    data = flat.reshape(n_layers, n_frames, dim).astype(np.float32, copy=True)
    if not np.isfinite(data).all():
        raise StoreFormatError(f"{path}: payload contains non-finite values")
    return LayerStackRecord(data=data)


@dataclass
class ManifestRecord:
    record_id: str
    speaker_id: str
    task: str
    file_path: str
    labels: FeatureLabelSet
    split: str


@dataclass
class DatasetManifest:
    """Dataset index: records plus the canonical feature ordering.

    `base_dir` anchors relative file_path entries; it is set when loading
    from disk and is not part of the serialized document.
    """

    records: list[ManifestRecord] = field(default_factory=list)
    feature_names: tuple[str, ...] = FEATURE_NAMES
    base_dir: Path = field(default_factory=Path)

    def resolve(self, rec: ManifestRecord) -> Path:
        p = Path(rec.file_path)
        return p if p.is_absolute() else self.base_dir / p

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def to_json(self) -> str:
        doc = {
            "feature_names": list(self.feature_names),
            "records": [
                {
                    "record_id": r.record_id,
                    "speaker_id": r.speaker_id,
                    "task": r.task,
                    "file_path": r.file_path,
                    "labels": r.labels.as_dict(),
                    "split": r.split,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc, indent=2)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(manifest.to_json())


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    records = [
        ManifestRecord(
            record_id=r["record_id"],
            speaker_id=r["speaker_id"],
            task=r["task"],
            file_path=r["file_path"],
            labels=FeatureLabelSet.from_dict(r["labels"]),
            split=r["split"],
        )
        for r in doc["records"]
    ]
    return DatasetManifest(
        records=records,
        feature_names=tuple(doc["feature_names"]),
        base_dir=path.parent,
    )


@dataclass
class Violation:
    """One manifest rule violation; record_id is empty for dataset-level rules."""

    record_id: str
    rule: str
    detail: str

    def __str__(self) -> str:
        where = self.record_id or "<manifest>"
        return f"{where}: {self.rule}: {self.detail}"


def validate_manifest(manifest: DatasetManifest) -> list[Violation]:
    """Check every manifest invariant; empty list means the dataset is valid.

    Violations are data, not exceptions: each one names the offending
    record_id (or the manifest itself) and the rule it breaks.
    """
    out: list[Violation] = []

    if tuple(manifest.feature_names) != FEATURE_NAMES:
        out.append(
            Violation("", "feature-names", f"expected canonical order {list(FEATURE_NAMES)}")
        )

    seen: set[str] = set()
    for rec in manifest.records:
        if rec.record_id in seen:
            out.append(Violation(rec.record_id, "duplicate-record-id", "record_id appears more than once"))
        seen.add(rec.record_id)
        if rec.task not in TASKS:
            out.append(Violation(rec.record_id, "bad-task", f"task {rec.task!r} not in {TASKS}"))
        if rec.split not in SPLITS:
            out.append(Violation(rec.record_id, "bad-split", f"split {rec.split!r} not in {SPLITS}"))
        if rec.labels.rapid_rate and rec.labels.slow_rate:
            out.append(Violation(rec.record_id, "rate-conflict", "rapid_rate and slow_rate both set"))

    # Speaker disjointness: train/val/test pairwise, and ood_test against all.
    speakers: dict[str, set[str]] = {s: set() for s in SPLITS}
    for rec in manifest.records:
        if rec.split in speakers:
            speakers[rec.split].add(rec.speaker_id)
    core = ("train", "val", "test")
    for i, a in enumerate(core):
        for b in core[i + 1 :]:
            for spk in sorted(speakers[a] & speakers[b]):
                out.append(Violation("", "split-leak", f"speaker {spk!r} appears in both {a} and {b}"))
    for other in core:
        for spk in sorted(speakers["ood_test"] & speakers[other]):
            out.append(Violation("", "split-leak", f"speaker {spk!r} appears in both ood_test and {other}"))

    # Every file must exist and round-trip, with one (n_layers, dim) shape
    # across the whole dataset.
    shape_seen: tuple[int, int] | None = None
    for rec in manifest.records:
        fpath = manifest.resolve(rec)
        if not fpath.is_file():
            out.append(Violation(rec.record_id, "missing-file", f"no file at {fpath}"))
            continue
        try:
            stack = read_record(fpath)
        except (StoreFormatError, OSError) as exc:
            out.append(Violation(rec.record_id, "invalid-file", str(exc)))
            continue
        if shape_seen is None:
            shape_seen = (stack.n_layers, stack.dim)
        elif (stack.n_layers, stack.dim) != shape_seen:
            out.append(
                Violation(
                    rec.record_id,
                    "shape-mismatch",
                    f"(n_layers, dim) = ({stack.n_layers}, {stack.dim}) differs from {shape_seen}",
                )
            )
    return out


def iterate_split(
    manifest: DatasetManifest, split: str
) -> Iterator[tuple[LayerStackRecord, FeatureLabelSet]]:
    """Yield the split's (record, labels) pairs lazily, in manifest order."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    for rec in manifest.split_records(split):
        stack = read_record(manifest.resolve(rec))
        full = replace(stack, record_id=rec.record_id, speaker_id=rec.speaker_id, task=rec.task)
        yield full, rec.labels

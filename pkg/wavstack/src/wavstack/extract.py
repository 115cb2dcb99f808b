"""Batch extraction: a labels CSV plus an audio directory becomes an
embedding-store dataset.

Structural problems in the CSV (schema, enums, duplicate ids, split leaks,
missing audio files) are fatal before any extraction starts; per-recording
decode or encode failures are logged and skipped so one corrupt file cannot
sink a batch. Every output file is written atomically and the finished
dataset must pass the harness validator.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from layerprobe.store import (
    FEATURE_NAMES,
    SPLITS,
    TASKS,
    DatasetManifest,
    FeatureLabelSet,
    LayerStackRecord,
    ManifestRecord,
    load_manifest,
    save_manifest,
    validate_manifest,
    write_record,
)

from .audio import TARGET_SAMPLE_RATE, load_mono_16k
from .encoder import FrozenEncoder

log = logging.getLogger("wavstack")

REQUIRED_COLUMNS = ("record_id", "speaker_id", "task", "split") + FEATURE_NAMES


@dataclass
class ExtractionJob:
    audio_root: Path
    labels_csv: Path
    encoder_id: str
    output_dir: Path
    target_sample_rate: int = TARGET_SAMPLE_RATE

    def __post_init__(self):
        self.audio_root = Path(self.audio_root)
        self.labels_csv = Path(self.labels_csv)
        self.output_dir = Path(self.output_dir)

    def validate(self) -> None:
        if not self.audio_root.is_dir():
            raise ValueError(f"audio root {self.audio_root} is not a directory")
        if not self.labels_csv.is_file():
            raise ValueError(f"labels csv {self.labels_csv} does not exist")
        if self.target_sample_rate != TARGET_SAMPLE_RATE:
            raise ValueError(f"target sample rate must be {TARGET_SAMPLE_RATE}")

    def audio_path(self, record_id: str) -> Path:
        return self.audio_root / f"{record_id}.wav"


@dataclass
class LabelRow:
    record_id: str
    speaker_id: str
    task: str
    split: str
    labels: FeatureLabelSet = field(default_factory=FeatureLabelSet)


def _parse_bool(value: str, column: str, row_number: int) -> bool:
    if value == "0":
        return False
    if value == "1":
        return True
    raise ValueError(f"row {row_number}: column {column} must be 0 or 1, got {value!r}")


def read_labels_csv(path: str | Path) -> list[LabelRow]:
    """Parsed and structurally validated label rows."""
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"labels csv is missing columns: {missing}")
        rows = []
        seen_ids: set[str] = set()
        speaker_splits: dict[str, str] = {}
        for number, raw in enumerate(reader, start=2):
            rid = (raw["record_id"] or "").strip()
            speaker = (raw["speaker_id"] or "").strip()
            task = (raw["task"] or "").strip()
            split = (raw["split"] or "").strip()
            if not rid or not speaker:
                raise ValueError(f"row {number}: record_id and speaker_id are required")
            if rid in seen_ids:
                raise ValueError(f"row {number}: duplicate record_id {rid!r}")
            seen_ids.add(rid)
            if task not in TASKS:
                raise ValueError(f"row {number}: task must be one of {TASKS}, got {task!r}")
            if split not in SPLITS:
                raise ValueError(f"row {number}: split must be one of {SPLITS}, got {split!r}")
            previous = speaker_splits.get(speaker)
            if previous is not None and previous != split:
                raise ValueError(
                    f"row {number}: speaker {speaker!r} appears in both "
                    f"{previous!r} and {split!r} splits"
                )
            speaker_splits[speaker] = split
            labels = FeatureLabelSet(
                **{n: _parse_bool((raw[n] or "").strip(), n, number) for n in FEATURE_NAMES}
            )
            if labels.rapid_rate and labels.slow_rate:
                raise ValueError(f"row {number}: rapid_rate and slow_rate are exclusive")
            rows.append(LabelRow(rid, speaker, task, split, labels))
    return rows


def make_manifest(rows: list[LabelRow], file_paths: dict[str, str]) -> DatasetManifest:
    """Manifest over extracted rows; file_paths maps record_id to the
    embedding file path relative to the dataset directory."""
    records = [
        ManifestRecord(
            record_id=row.record_id,
            speaker_id=row.speaker_id,
            task=row.task,
            file_path=file_paths[row.record_id],
            labels=row.labels,
            split=row.split,
        )
        for row in rows
    ]
    return DatasetManifest(records=records)


def _atomic_write_record(record: LayerStackRecord, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write_record(record, tmp)
    os.replace(tmp, path)


def extract(job: ExtractionJob) -> DatasetManifest:
    """Run the frozen encoder over every labeled recording and write the
    dataset (embedding files + manifest.json) under job.output_dir."""
    job.validate()
    rows = read_labels_csv(job.labels_csv)
    missing = [str(job.audio_path(r.record_id)) for r in rows if not job.audio_path(r.record_id).is_file()]
    if missing:
        raise ValueError(f"labels csv references missing audio files: {missing}")

    encoder = FrozenEncoder.load(job.encoder_id)
    emb_dir = job.output_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)

    kept: list[LabelRow] = []
    file_paths: dict[str, str] = {}
    for row in rows:
        source = job.audio_path(row.record_id)
        try:
            waveform = load_mono_16k(source)
            stack = encoder.extract(waveform)
        except Exception as exc:  # undecodable audio skips, it must not sink the batch
            log.warning("skipping %s: %s", source, exc)
            continue
        rel = f"emb/{row.record_id}.emb"
        _atomic_write_record(LayerStackRecord(data=stack), job.output_dir / rel)
        kept.append(row)
        file_paths[row.record_id] = rel

    manifest = make_manifest(kept, file_paths)
    manifest_path = job.output_dir / "manifest.json"
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    save_manifest(manifest, tmp)
    os.replace(tmp, manifest_path)

    violations = validate_manifest(load_manifest(manifest_path))
    if violations:
        listed = "; ".join(str(v) for v in violations[:10])
        raise RuntimeError(f"extracted dataset failed validation: {listed}")
    return load_manifest(manifest_path)

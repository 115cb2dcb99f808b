"""Synthetic planted-signal datasets and the training-free layer oracle."""

import dataclasses

import numpy as np
import pytest

from layerprobe.model import ArchitectureConfig
from layerprobe.store import FEATURE_NAMES, load_manifest, read_record, validate_manifest
from layerprobe.synthgen import (
    DEFAULT_PLANTED_LAYERS,
    FeaturePlant,
    PlantSpec,
    generate,
    load_plant_spec,
    oracle_rank,
    oracle_rank_all,
    save_plant_spec,
    signal_directions,
)
from layerprobe.training import TrainConfig, train

from conftest import tiny_plant_spec


def planted_spec(planted: dict, effect=2.0, leak=0.25, **kw) -> PlantSpec:
    features = {n: FeaturePlant(planted_layer=l, effect_size=effect) for n, l in planted.items()}
    defaults = dict(
        n_speakers={"train": 30, "val": 10, "test": 10, "ood_test": 5},
        dim=16,
        n_frames_range=(3, 6),
        n_layers=4,
        leak=leak,
        seed=77,
    )
    defaults.update(kw)
    return PlantSpec(features=features, **defaults)


FOUR_LAYER_PLANT = {
    "strained": 1,
    "irregular_articulatory_breakdowns": 2,
    "rapid_rate": 3,
    "slow_rate": 0,
    "distortions": 2,
}


class TestPlantSpecValidation:
    def check_raises(self, **overrides):
        spec = tiny_plant_spec()
        for key, value in overrides.items():
            setattr(spec, key, value)
        with pytest.raises(ValueError):
            spec.validate()

    def test_valid_by_default(self):
        PlantSpec().validate()
        tiny_plant_spec().validate()

    def test_feature_set_must_be_exact(self):
        spec = tiny_plant_spec()
        del spec.features["strained"]
        with pytest.raises(ValueError):
            spec.validate()
        spec = tiny_plant_spec()
        spec.features["extra"] = FeaturePlant(planted_layer=0)
        with pytest.raises(ValueError):
            spec.validate()

    def test_speaker_counts(self):
        self.check_raises(n_speakers={"train": -1})
        self.check_raises(n_speakers={"train": 5, "holdout": 2})
        self.check_raises(n_speakers={})

    def test_scalar_ranges(self):
        self.check_raises(recordings_per_speaker=0)
        self.check_raises(dim=0)
        self.check_raises(n_layers=0)
        self.check_raises(n_frames_range=(0, 5))
        self.check_raises(n_frames_range=(8, 3))
        self.check_raises(leak=1.0)
        self.check_raises(leak=-0.1)
        self.check_raises(noise_sigma=0.0)

    def test_per_feature_ranges(self):
        spec = tiny_plant_spec()
        spec.features["strained"] = FeaturePlant(planted_layer=4)
        with pytest.raises(ValueError, match="planted_layer"):
            spec.validate()
        spec = tiny_plant_spec()
        spec.features["strained"] = FeaturePlant(planted_layer=1, positive_rate=1.0)
        with pytest.raises(ValueError, match="positive_rate"):
            spec.validate()
        spec = tiny_plant_spec()
        spec.features["strained"] = FeaturePlant(planted_layer=1, effect_size=-0.5)
        with pytest.raises(ValueError, match="effect_size"):
            spec.validate()


class TestPlantSpecIO:
    def test_dict_round_trip(self):
        spec = planted_spec(FOUR_LAYER_PLANT, effect=3.0, leak=0.1, seed=9)
        assert PlantSpec.from_dict(spec.to_dict()) == spec

    def test_from_dict_partial_keeps_defaults(self):
        spec = PlantSpec.from_dict({"dim": 16, "seed": 3})
        assert spec.dim == 16
        assert spec.seed == 3
        assert spec.n_layers == 13
        assert spec.n_speakers == {"train": 600, "val": 100, "test": 150}
        assert {n: p.planted_layer for n, p in spec.features.items()} == dict(
            zip(FEATURE_NAMES, DEFAULT_PLANTED_LAYERS)
        )

    def test_file_round_trip(self, tmp_path):
        spec = planted_spec(FOUR_LAYER_PLANT, seed=12)
        save_plant_spec(spec, tmp_path / "plant.json")
        assert load_plant_spec(tmp_path / "plant.json") == spec


class TestGenerate:
    def test_deterministic_bytes(self, tmp_path):
        spec = planted_spec(FOUR_LAYER_PLANT, n_speakers={"train": 6, "val": 2,
                                                          "test": 2, "ood_test": 2})
        m1 = generate(spec, tmp_path / "a")
        m2 = generate(spec, tmp_path / "b")
        assert (tmp_path / "a/manifest.json").read_text() == (tmp_path / "b/manifest.json").read_text()
        for rec in m1.records:
            assert (m1.resolve(rec)).read_bytes() == (m2.resolve(m2.records[0]).parent / f"{rec.record_id}.emb").read_bytes()

    def test_counts_ids_tasks_and_frames(self, tmp_path):
        spec = planted_spec(
            FOUR_LAYER_PLANT,
            n_speakers={"train": 5, "val": 2, "test": 2, "ood_test": 3},
            recordings_per_speaker=2,
        )
        manifest = generate(spec, tmp_path)
        assert len(manifest.split_records("train")) == 10
        assert len(manifest.split_records("val")) == 4
        assert len(manifest.split_records("test")) == 4
        assert len(manifest.split_records("ood_test")) == 6
        assert validate_manifest(manifest) == []
        for rec in manifest.records:
            split = rec.split
            assert rec.record_id.startswith(f"{split}-spk")
            assert rec.record_id.endswith(("-r0", "-r1"))
            assert rec.task == ("SMR" if split == "ood_test" else "AMR")
            stack = read_record(manifest.resolve(rec))
            assert stack.n_layers == 4 and stack.dim == 16
            assert 3 <= stack.n_frames <= 6
        on_disk = load_manifest(tmp_path / "manifest.json")
        assert on_disk.records == manifest.records

    def test_rate_pair_never_conflicts(self, tmp_path):
        spec = planted_spec(FOUR_LAYER_PLANT, n_speakers={"train": 120})
        for name in ("rapid_rate", "slow_rate"):
            spec.features[name] = dataclasses.replace(
                spec.features[name], positive_rate=0.9
            )
        manifest = generate(spec, tmp_path)
        for rec in manifest.records:
            assert not (rec.labels.rapid_rate and rec.labels.slow_rate)

    def test_train_content_independent_of_other_splits(self, tmp_path):
        base = dict(n_speakers={"train": 4, "val": 2, "test": 2, "ood_test": 2})
        grown = dict(n_speakers={"train": 4, "val": 5, "test": 1, "ood_test": 7})
        m1 = generate(planted_spec(FOUR_LAYER_PLANT, **base), tmp_path / "a")
        m2 = generate(planted_spec(FOUR_LAYER_PLANT, **grown), tmp_path / "b")
        r1 = m1.split_records("train")
        r2 = m2.split_records("train")
        assert [r.record_id for r in r1] == [r.record_id for r in r2]
        assert [r.labels for r in r1] == [r.labels for r in r2]
        for a, b in zip(r1, r2):
            assert m1.resolve(a).read_bytes() == m2.resolve(b).read_bytes()

    def test_signal_directions_unit_norm_and_stable(self):
        spec = planted_spec(FOUR_LAYER_PLANT, seed=5)
        d1 = signal_directions(spec)
        d2 = signal_directions(spec)
        assert set(d1) == set(FEATURE_NAMES)
        for name in FEATURE_NAMES:
            assert abs(np.linalg.norm(d1[name]) - 1.0) <= 1e-12
            assert np.array_equal(d1[name], d2[name])

    def test_zero_effect_probe_stays_at_chance(self, tmp_path):
        # with no planted signal anywhere, a trained probe's validation
        # balanced accuracy must sit in a band around 0.5
        spec = planted_spec(
            FOUR_LAYER_PLANT, effect=0.0,
            n_speakers={"train": 150, "val": 150}, seed=31,
        )
        manifest = generate(spec, tmp_path)
        arch = ArchitectureConfig(
            head_mode="single", shared_dense=False, layer_mode="fixed",
            layer_index=1, n_layers=4, input_dim=16, dropout_p=0.2,
        )
        cfg = TrainConfig(dropout_p=0.2, epochs=8, seed=4200)
        _, logs = train(manifest, arch, cfg)
        for name, bacc in logs[-1].val_balanced_accuracy.items():
            assert bacc is not None
            assert 0.4 <= bacc <= 0.6, (name, bacc)


class TestOracle:
    def test_clean_plant_dominates_everywhere(self, tmp_path):
        spec = planted_spec(FOUR_LAYER_PLANT, effect=6.0, leak=0.0,
                            n_frames_range=(5, 10),
                            n_speakers={"train": 120}, seed=21)
        manifest = generate(spec, tmp_path)
        for name, plant in spec.features.items():
            ranking = oracle_rank(manifest, name)
            assert ranking.argmax_layer == plant.planted_layer
            others = np.delete(ranking.scores, plant.planted_layer)
            assert ranking.scores[plant.planted_layer] > 50.0 * others.max()

    def test_leak_raises_neighbors_but_not_above_plant(self, tmp_path):
        planted = dict(FOUR_LAYER_PLANT, strained=5)
        spec = planted_spec(planted, effect=3.0, leak=0.25, n_layers=13,
                            n_speakers={"train": 100}, seed=22)
        manifest = generate(spec, tmp_path)
        ranking = oracle_rank(manifest, "strained")
        assert ranking.argmax_layer == 5
        far = [ranking.scores[l] for l in (0, 1, 9, 12)]
        assert ranking.scores[4] > max(far)
        assert ranking.scores[6] > max(far)
        assert ranking.scores[5] > ranking.scores[4]
        assert ranking.scores[5] > ranking.scores[6]

    def test_two_features_rank_independently(self, tmp_path):
        planted = dict(FOUR_LAYER_PLANT, strained=2, distortions=9)
        spec = planted_spec(planted, effect=3.0, n_layers=13,
                            n_speakers={"train": 80}, seed=23)
        manifest = generate(spec, tmp_path)
        assert oracle_rank(manifest, "strained").argmax_layer == 2
        assert oracle_rank(manifest, "distortions").argmax_layer == 9

    def test_recovery_across_seeds(self, tmp_path):
        # moderate effect, heavy leak: the argmax must still be the planted
        # layer for every feature on every seed
        for seed in range(20):
            spec = PlantSpec(
                n_speakers={"train": 200},
                dim=24,
                n_frames_range=(5, 10),
                n_layers=13,
                leak=0.5,
                seed=1000 + seed,
            )
            for name, plant in spec.features.items():
                plant.effect_size = 1.0
            manifest = generate(spec, tmp_path / f"s{seed}")
            rankings = oracle_rank_all(manifest)
            for name, plant in spec.features.items():
                assert rankings[name].argmax_layer == plant.planted_layer, (seed, name)

    def test_zero_effect_scores_stay_at_null_scale(self, tmp_path):
        # projecting onto the empirical class-mean gap inflates null Fisher
        # scores to about dim*(1/n_pos + 1/n_neg); scores must stay at that
        # scale, far below any planted-signal score
        spec = planted_spec(FOUR_LAYER_PLANT, effect=0.0,
                            n_speakers={"train": 200}, seed=24)
        manifest = generate(spec, tmp_path)
        for name in FEATURE_NAMES:
            ranking = oracle_rank(manifest, name)
            n_pos = sum(getattr(r.labels, name) for r in manifest.split_records("train"))
            n_neg = 200 - n_pos
            null_scale = spec.dim * (1.0 / n_pos + 1.0 / n_neg)
            assert ranking.scores.max() < 5.0 * null_scale, name

    def test_oracle_errors(self, tmp_path):
        spec = planted_spec(FOUR_LAYER_PLANT, n_speakers={"train": 10}, seed=25)
        manifest = generate(spec, tmp_path)
        with pytest.raises(ValueError, match="unknown feature"):
            oracle_rank(manifest, "pitch_break")
        with pytest.raises(ValueError, match="empty"):
            oracle_rank(manifest, "strained", split="ood_test")
        for rec in manifest.records:
            rec.labels.strained = False
        with pytest.raises(ValueError, match="single class"):
            oracle_rank(manifest, "strained")

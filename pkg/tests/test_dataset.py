"""Record ingestion, DMOS grade mapping, and patch dataset splits."""

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from deepquality.dataset import (
    DatasetError,
    SampleRecord,
    SplitSpec,
    build_patch_dataset,
    load_csiq,
    load_synth_manifest,
    map_dmos_to_grades,
    patches_for_records,
)
from deepquality.grades import QualityGrade
from deepquality.imgio import save_gray_png
from deepquality.pooling import PoolingConfig


def write_csiq_tree(root, rows, drop_files=()):
    """Fabricate a CSIQ-layout tree plus DMOS CSV for the given rows."""
    rng = np.random.default_rng(0)
    csv_path = root / "dmos.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image", "distortion", "level", "dmos"])
        for image, distortion, level, dmos in rows:
            w.writerow([image, distortion, level, dmos])
            name = f"{image}.{distortion}.{level}.png"
            if name in drop_files:
                continue
            d = root / "dst_imgs" / distortion
            d.mkdir(parents=True, exist_ok=True)
            save_gray_png(d / name, rng.random((64, 64)))
    return csv_path


class TestLoadCsiq:
    def test_loads_all_rows(self, tmp_path):
        rows = [(f"im{i}", "blur", lvl, 0.1 * i + lvl)
                for i in range(3) for lvl in range(2)]
        csv_path = write_csiq_tree(tmp_path, rows)
        records = load_csiq(tmp_path, csv_path)
        assert len(records) == 6
        assert all(r.dmos is not None for r in records)
        assert records[0].source_id == "im0"

    def test_missing_image_reported_with_path(self, tmp_path):
        rows = [("im0", "blur", 1, 0.5), ("im1", "blur", 1, 0.6)]
        csv_path = write_csiq_tree(tmp_path, rows, drop_files=("im1.blur.1.png",))
        with pytest.raises(DatasetError, match="im1.blur.1.png"):
            load_csiq(tmp_path, csv_path)

    def test_partial_load_behind_flag(self, tmp_path):
        rows = [("im0", "blur", 1, 0.5), ("im1", "blur", 1, 0.6)]
        csv_path = write_csiq_tree(tmp_path, rows, drop_files=("im1.blur.1.png",))
        records = load_csiq(tmp_path, csv_path, allow_partial=True)
        assert len(records) == 1

    def test_empty_root_hard_error(self, tmp_path):
        csv_path = tmp_path / "dmos.csv"
        csv_path.write_text("image,distortion,level,dmos\n")
        with pytest.raises(DatasetError, match="no CSIQ records"):
            load_csiq(tmp_path, csv_path)

    def test_bad_row_reported_with_line(self, tmp_path):
        rows = [("im0", "blur", 1, 0.5)]
        csv_path = write_csiq_tree(tmp_path, rows)
        with open(csv_path, "a") as f:
            f.write("im1,blur,notanumber,0.3\n")
        with pytest.raises(DatasetError, match=":3"):
            load_csiq(tmp_path, csv_path)

    def test_missing_header_rejected(self, tmp_path):
        csv_path = tmp_path / "dmos.csv"
        csv_path.write_text("image,distortion,level\nim0,blur,1\n")
        with pytest.raises(DatasetError, match="header"):
            load_csiq(tmp_path, csv_path)


def fake_records(dmos_values):
    return [SampleRecord(image_id=f"r{i}", kind="blur", path=Path(f"/nope/{i}.png"),
                         level=0, dmos=v) for i, v in enumerate(dmos_values)]


class TestDmosMapping:
    def test_quantile_equal_frequency(self):
        """Ten evenly spread values land two per grade, lowest pair in c0."""
        records, edges = map_dmos_to_grades(fake_records(
            [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]))
        grades = [int(r.grade) for r in records]
        assert grades == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
        assert len(edges) == 6

    def test_extremes_map_to_extreme_grades(self):
        for strategy in ("quantile", "uniform-range"):
            records, _ = map_dmos_to_grades(fake_records([0.9, 0.1, 0.5, 0.7, 0.3]),
                                            strategy)
            by_dmos = sorted(records, key=lambda r: r.dmos)
            assert by_dmos[0].grade == QualityGrade.C0
            assert by_dmos[-1].grade == QualityGrade.C4

    def test_uniform_range_arithmetic(self):
        records, _ = map_dmos_to_grades(fake_records([0.0, 0.5, 1.0]), "uniform-range")
        assert [int(r.grade) for r in records] == [0, 2, 4]

    def test_quantile_ties_take_lower_grade(self):
        """A tie spanning a cut point pulls the whole tie into the lower bin."""
        records, _ = map_dmos_to_grades(fake_records([0.1, 0.2, 0.2, 0.2, 0.9]))
        tied = [int(r.grade) for r in records if r.dmos == 0.2]
        assert len(set(tied)) == 1

    def test_mapping_monotone(self):
        rng = np.random.default_rng(8)
        values = rng.random(50).tolist()
        for strategy in ("quantile", "uniform-range"):
            records, _ = map_dmos_to_grades(fake_records(values), strategy)
            by_dmos = sorted(records, key=lambda r: r.dmos)
            grades = [int(r.grade) for r in by_dmos]
            assert grades == sorted(grades)

    def test_quantile_balanced_without_ties(self):
        rng = np.random.default_rng(9)
        records, _ = map_dmos_to_grades(fake_records(rng.permutation(25).tolist()))
        counts = np.bincount([int(r.grade) for r in records], minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_constant_dmos_rejected(self):
        with pytest.raises(DatasetError, match="constant"):
            map_dmos_to_grades(fake_records([0.5, 0.5, 0.5]))

    def test_missing_dmos_rejected(self):
        bad = [replace(fake_records([0.1])[0], dmos=None)]
        with pytest.raises(DatasetError, match="dmos"):
            map_dmos_to_grades(bad + fake_records([0.2]))


class TestSynthManifest:
    def test_roundtrip_counts(self, small_corpus):
        """Loading a generated corpus yields one record per manifest line."""
        records = load_synth_manifest(small_corpus["manifest"])
        lines = small_corpus["manifest"].read_text().strip().splitlines()
        assert len(records) == len(lines) == 100
        counts = np.bincount([int(r.grade) for r in records], minlength=5)
        assert counts.tolist() == [20, 20, 20, 20, 20]

    def test_grade_equals_level(self, small_corpus):
        records = load_synth_manifest(small_corpus["manifest"])
        assert all(int(r.grade) == r.level for r in records)

    def test_bad_level_rejected_with_line(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text('{"source_id": "a", "kind": "blur", "level": 7, '
                        '"output_path": "x.png"}\n')
        with pytest.raises(DatasetError, match="manifest.jsonl:1"):
            load_synth_manifest(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("not json\n")
        with pytest.raises(DatasetError, match=":1"):
            load_synth_manifest(path)


@pytest.fixture(scope="module")
def graded_corpus(tmp_path_factory):
    """A tiny graded corpus on disk: 4 sources x 4 kinds x 5 levels."""
    from deepquality.distortions import synthesize_corpus
    from deepquality.imgio import load_luminance
    from deepquality.textures import write_textures
    base = tmp_path_factory.mktemp("ds")
    paths = write_textures(base / "clean", count=4, seed=50, size=128)
    sources = {p.stem: load_luminance(p) for p in paths}
    manifest, _ = synthesize_corpus(sources, base / "corpus", seed=2)
    return load_synth_manifest(manifest)


POOL = PoolingConfig(stride=32, patches_per_image=9)


class TestBuildPatchDataset:
    def test_patch_random_counts_and_determinism(self, graded_corpus):
        split = SplitSpec(train_count=500, test_count=100, mode="patch-random")
        a_train, a_test, _ = build_patch_dataset(graded_corpus, POOL, split, seed=4)
        b_train, b_test, _ = build_patch_dataset(graded_corpus, POOL, split, seed=4)
        assert len(a_train) == 500 and len(a_test) == 100
        assert np.array_equal(a_train.patches, b_train.patches)
        assert np.array_equal(a_train.labels, b_train.labels)
        c_train, _, _ = build_patch_dataset(graded_corpus, POOL, split, seed=5)
        assert not np.array_equal(a_train.labels, c_train.labels)

    def test_image_disjoint_no_overlap(self, graded_corpus):
        split = SplitSpec(train_count=400, test_count=150, mode="image-disjoint")
        train, test, info = build_patch_dataset(graded_corpus, POOL, split, seed=4)
        assert not set(train.image_ids) & set(test.image_ids)
        # disjoint by source scene, not just by distorted image
        train_sources = {i.rsplit(".", 2)[0] for i in train.image_ids}
        test_sources = {i.rsplit(".", 2)[0] for i in test.image_ids}
        assert not train_sources & test_sources
        assert sorted(test_sources) == sorted(info.test_keys)

    def test_labels_match_source_grade(self, graded_corpus):
        split = SplitSpec(train_count=300, test_count=60, mode="patch-random")
        train, _, _ = build_patch_dataset(graded_corpus, POOL, split, seed=4)
        grade_by_id = {r.image_id: int(r.grade) for r in graded_corpus}
        for label, image_id in zip(train.labels, train.image_ids):
            assert label == grade_by_id[image_id]

    def test_targets_beyond_available_rejected(self, graded_corpus):
        split = SplitSpec(train_count=10_000, test_count=10_000, mode="patch-random")
        with pytest.raises(DatasetError, match="available"):
            build_patch_dataset(graded_corpus, POOL, split, seed=4)

    def test_ungraded_records_rejected(self, graded_corpus):
        bad = [replace(graded_corpus[0], grade=None)]
        with pytest.raises(DatasetError, match="graded"):
            build_patch_dataset(bad, POOL, SplitSpec(10, 5), seed=0)

    def test_worker_count_does_not_change_result(self, graded_corpus):
        split = SplitSpec(train_count=200, test_count=50, mode="image-disjoint")
        a, _, _ = build_patch_dataset(graded_corpus, POOL, split, seed=4, workers=1)
        b, _, _ = build_patch_dataset(graded_corpus, POOL, split, seed=4, workers=4)
        assert np.array_equal(a.patches, b.patches)
        assert np.array_equal(a.labels, b.labels)

    def test_patches_for_records_pools_everything(self, graded_corpus):
        ds = patches_for_records(graded_corpus[:10], POOL)
        assert len(ds) == 10 * POOL.patches_per_image
        assert ds.patches.shape[1:] == (1, 64, 64)

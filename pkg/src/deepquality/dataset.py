"""Labeled sample ingestion and patch dataset construction.

Two sources feed the pipeline: the CSIQ benchmark (directory of distorted
images plus a DMOS CSV) and synthetic corpora written by the distortion
module. Benchmark DMOS values are binned into the five grades; synthetic
records carry their grade directly as the distortion level.
"""

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .grades import NUM_GRADES, QualityGrade
from .imgio import ImageReadError, load_luminance
from .parallel import map_ordered
from .pooling import select_patches

log = logging.getLogger(__name__)

CSIQ_EXPECTED_COUNT = 866
CSIQ_CSV_COLUMNS = ("image", "distortion", "level", "dmos")


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class SampleRecord:
    image_id: str
    kind: str
    path: Path
    level: Optional[int] = None
    dmos: Optional[float] = None
    grade: Optional[QualityGrade] = None
    source_id: Optional[str] = None


@dataclass
class PatchDataset:
    patches: np.ndarray      # (N, 1, 64, 64) float32
    labels: np.ndarray       # (N,) int64
    image_ids: np.ndarray    # (N,) object
    split: str

    def __len__(self):
        return self.patches.shape[0]

    def grade_counts(self):
        return np.bincount(self.labels, minlength=NUM_GRADES).tolist()


@dataclass(frozen=True)
class SplitSpec:
    train_count: Optional[int] = 50_000
    test_count: Optional[int] = 10_000
    mode: str = "patch-random"  # or "image-disjoint"

    def __post_init__(self):
        if self.mode not in ("patch-random", "image-disjoint"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        for n in (self.train_count, self.test_count):
            if n is not None and n < 1:
                raise ValueError(f"split target counts must be positive, got {n}")


# ---------------------------------------------------------------------------
# CSIQ ingestion


def load_csiq(root, dmos_file, allow_partial=False):
    """Records for the CSIQ layout root/dst_imgs/<distortion>/<image>.<distortion>.<level>.png.

    The DMOS CSV must carry a header row with columns image, distortion,
    level, dmos. Problems are collected with their file/line and raised
    together unless allow_partial is set and at least one record loads.
    """
    root = Path(root)
    dmos_file = Path(dmos_file)
    if not dmos_file.is_file():
        raise DatasetError(f"DMOS file not found: {dmos_file}")
    records = []
    errors = []
    with open(dmos_file, newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CSIQ_CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(
                f"{dmos_file}: header must include {CSIQ_CSV_COLUMNS}, missing {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                image, distortion = row["image"].strip(), row["distortion"].strip()
                level = int(row["level"])
                dmos = float(row["dmos"])
            except (KeyError, AttributeError, ValueError) as e:
                errors.append(f"{dmos_file}:{lineno}: unparseable row ({e})")
                continue
            path = root / "dst_imgs" / distortion / f"{image}.{distortion}.{level}.png"
            if not path.is_file():
                errors.append(f"{dmos_file}:{lineno}: image file missing: {path}")
                continue
            records.append(SampleRecord(
                image_id=f"{image}.{distortion}.{level}", kind=distortion, path=path,
                level=level, dmos=dmos, source_id=image))
    if errors and not (allow_partial and records):
        raise DatasetError(
            f"{len(errors)} problem(s) loading CSIQ:\n" + "\n".join(errors[:20])
            + ("" if len(errors) <= 20 else f"\n... and {len(errors) - 20} more"))
    if not records:
        raise DatasetError(f"no CSIQ records found under {root}")
    if len(records) != CSIQ_EXPECTED_COUNT:
        log.warning("loaded %d CSIQ records (expected %d)", len(records), CSIQ_EXPECTED_COUNT)
    return records


def map_dmos_to_grades(records, strategy="quantile"):
    """Assign grades from DMOS (higher DMOS = worse = higher grade).

    quantile: five equal-frequency bins; ties at a cut take the lower grade.
    uniform-range: five equal-width bins over [min, max].
    Returns (graded records, bin edges) with edges recorded for the manifest.
    """
    if strategy not in ("quantile", "uniform-range"):
        raise ValueError(f"unknown DMOS mapping strategy {strategy!r}")
    if any(r.dmos is None for r in records):
        raise DatasetError("DMOS mapping needs a dmos value on every record")
    values = np.array([r.dmos for r in records], dtype=np.float64)
    lo, hi = values.min(), values.max()
    if lo == hi:
        raise DatasetError("constant DMOS across all records; binning undefined")

    if strategy == "quantile":
        order = np.argsort(values, kind="stable")
        n = len(records)
        rank_grade = np.empty(n, dtype=np.int64)
        for pos, idx in enumerate(order):
            rank_grade[idx] = pos * NUM_GRADES // n
        # equal DMOS values must share a grade: ties take the lowest
        by_value = {}
        for idx, v in enumerate(values):
            by_value.setdefault(v, []).append(idx)
        for idxs in by_value.values():
            g = min(rank_grade[i] for i in idxs)
            for i in idxs:
                rank_grade[i] = g
        grades = rank_grade
        cuts = [float(values[order[k * n // NUM_GRADES]]) for k in range(1, NUM_GRADES)]
        edges = [float(lo)] + cuts + [float(hi)]
    else:
        width = (hi - lo) / NUM_GRADES
        grades = np.minimum((values - lo) // width, NUM_GRADES - 1).astype(np.int64)
        edges = [float(lo + k * width) for k in range(NUM_GRADES)] + [float(hi)]

    graded = [replace(r, grade=QualityGrade(int(g))) for r, g in zip(records, grades)]
    return graded, edges


# ---------------------------------------------------------------------------
# synthetic manifest ingestion


def load_synth_manifest(manifest_path):
    """Records from a corpus manifest; grade comes from the distortion level."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    records = []
    with open(manifest_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                level = int(row["level"])
                grade = QualityGrade(level)
                records.append(SampleRecord(
                    image_id=f"{row['source_id']}.{row['kind']}.{level}",
                    kind=row["kind"], path=base / row["output_path"],
                    level=level, grade=grade, source_id=row["source_id"]))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise DatasetError(f"{manifest_path}:{lineno}: bad manifest line ({e})") from e
    if not records:
        raise DatasetError(f"manifest {manifest_path} contains no records")
    return records


# ---------------------------------------------------------------------------
# patch dataset construction


def extract_record_patches(records, pooling_config, workers=None):
    """Per record: load the image and keep its selected low-variance patches.

    Returns a list aligned with records of (patch stack (l, 64, 64), record).
    """
    def pull(record):
        image = load_luminance(record.path)
        selection = select_patches(image, pooling_config)
        if selection.shortfall:
            log.warning("%s: only %d patches available (wanted %d)",
                        record.image_id, len(selection.patches),
                        pooling_config.patches_per_image)
        return np.stack([s.patch for s in selection.patches])

    stacks = map_ordered(pull, records, workers)
    return list(zip(stacks, records))


def patches_for_records(records, pooling_config, workers=None, tag="eval"):
    """All pooled patches of the given graded records as one dataset."""
    if any(r.grade is None for r in records):
        raise DatasetError("records must be graded")
    pulled = extract_record_patches(records, pooling_config, workers)
    patches = np.concatenate([stack for stack, _ in pulled])
    labels = np.concatenate([
        np.full(stack.shape[0], int(rec.grade), dtype=np.int64) for stack, rec in pulled])
    ids = np.concatenate([
        np.full(stack.shape[0], rec.image_id, dtype=object) for stack, rec in pulled])
    return PatchDataset(patches[:, None, :, :], labels, ids, tag)


@dataclass
class SplitInfo:
    seed: int
    mode: str
    train_counts: list
    test_counts: list
    train_images: int
    test_images: int
    test_keys: list

    def as_dict(self):
        return {
            "seed": self.seed, "mode": self.mode,
            "train_patches_per_grade": self.train_counts,
            "test_patches_per_grade": self.test_counts,
            "train_images": self.train_images, "test_images": self.test_images,
            "test_keys": list(self.test_keys),
        }


def build_patch_dataset(records, pooling_config, split, seed, workers=None):
    """Pool patches per image and split them into train/test.

    patch-random shuffles all pooled patches with the seed and deals the
    target counts. image-disjoint first deals whole images (grouped by source
    image when known) to the test side until its target is met, then caps
    each side by uniform per-image truncation, keeping each image's
    lowest-variance patches.
    """
    if any(r.grade is None for r in records):
        raise DatasetError("records must be graded before building a patch dataset")
    pulled = extract_record_patches(records, pooling_config, workers)
    total = sum(stack.shape[0] for stack, _ in pulled)
    want = (split.train_count or 0) + (split.test_count or 0)
    if want > total:
        raise DatasetError(
            f"split targets need {want} patches but only {total} are available")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD5]))
    if split.mode == "patch-random":
        patches = np.concatenate([stack for stack, _ in pulled])
        labels = np.concatenate([
            np.full(stack.shape[0], int(rec.grade), dtype=np.int64)
            for stack, rec in pulled])
        ids = np.concatenate([
            np.full(stack.shape[0], rec.image_id, dtype=object)
            for stack, rec in pulled])
        perm = rng.permutation(total)
        n_test = split.test_count or (total - (split.train_count or total))
        n_train = split.train_count if split.train_count is not None else total - n_test
        test_idx = perm[:n_test]
        train_idx = perm[n_test:n_test + n_train]
        train = _make_split(patches, labels, ids, train_idx, "train")
        test = _make_split(patches, labels, ids, test_idx, "test")
        test_keys = []
    else:
        groups = {}
        for stack, rec in pulled:
            key = rec.source_id or rec.image_id
            groups.setdefault(key, []).append((stack, rec))
        keys = sorted(groups)
        rng.shuffle(keys)
        n_test = split.test_count or max(1, total // 6)
        test_keys, test_total = [], 0
        for key in keys:
            if test_total >= n_test:
                break
            test_keys.append(key)
            test_total += sum(stack.shape[0] for stack, _ in groups[key])
        if len(test_keys) == len(keys):
            raise DatasetError("image-disjoint split left no images for training")
        train_keys = [k for k in keys if k not in set(test_keys)]
        train = _assemble_group_split(groups, train_keys, split.train_count, "train")
        test = _assemble_group_split(groups, test_keys, split.test_count, "test")

    overlap = set(train.image_ids) & set(test.image_ids)
    if split.mode == "image-disjoint" and overlap:
        raise DatasetError(f"internal error: split shares images {sorted(overlap)[:3]}")
    info = SplitInfo(seed, split.mode, train.grade_counts(), test.grade_counts(),
                     len(set(train.image_ids)), len(set(test.image_ids)),
                     test_keys)
    return train, test, info


def _make_split(patches, labels, ids, idx, tag):
    return PatchDataset(patches[idx][:, None, :, :], labels[idx], ids[idx], tag)


def _assemble_group_split(groups, keys, target, tag):
    chunks = [chunk for key in keys for chunk in groups[key]]
    total = sum(stack.shape[0] for stack, _ in chunks)
    if target is not None and target < total:
        # uniform per-image cap; patches are variance-ordered so the cap
        # keeps each image's flattest patches
        quota, extra = divmod(target, len(chunks))
        kept = []
        for i, (stack, rec) in enumerate(chunks):
            k = min(stack.shape[0], quota + (1 if i < extra else 0))
            kept.append((stack[:k], rec))
        chunks = [(s, r) for s, r in kept if s.shape[0]]
    patches = np.concatenate([stack for stack, _ in chunks])
    labels = np.concatenate([
        np.full(stack.shape[0], int(rec.grade), dtype=np.int64) for stack, rec in chunks])
    ids = np.concatenate([
        np.full(stack.shape[0], rec.image_id, dtype=object) for stack, rec in chunks])
    return PatchDataset(patches[:, None, :, :], labels, ids, tag)

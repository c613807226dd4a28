"""Dataset loading, resizing, augmentation, patient-level splitting and batching."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInput

TARGET_SIZE = (832, 832)
LABELS = {"benign": 0, "malignant": 1}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
VIEWS = ("CC", "MLO")
MANIFEST_FIELDS = ("patient_id", "view", "label", "dm_path", "dbt_path")
AUGMENTATIONS = ("orig", "hflip", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class SampleRecord:
    patient_id: str
    view: str
    label: int
    dm_path: str
    dbt_path: str
    sample_id: str = ""

    def __post_init__(self):
        if self.view not in VIEWS:
            raise InvalidInput(f"view must be one of {VIEWS}, got {self.view!r}")
        if self.label not in (0, 1):
            raise InvalidInput(f"label must be 0 or 1, got {self.label!r}")
        if not self.dm_path or not self.dbt_path:
            raise InvalidInput(f"record for patient {self.patient_id} is not a DM/DBT pair")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            key = (r.patient_id, r.view, r.dm_path)
            if key in seen:
                raise InvalidInput(f"duplicate record {key}")
            seen.add(key)

    def patients(self):
        """Map patient_id -> list of that patient's records, in manifest order."""
        groups = {}
        for r in self.records:
            groups.setdefault(r.patient_id, []).append(r)
        return groups


@dataclass(frozen=True)
class Split:
    train: tuple
    test: tuple
    seed: int = 0

    def patient_ids(self, fold):
        return sorted({r.patient_id for r in getattr(self, fold)})

    def to_json(self):
        return {
            "seed": self.seed,
            "train": self.patient_ids("train"),
            "test": self.patient_ids("test"),
        }


def read_manifest(path, split_seed=0):
    """Parse a manifest CSV; relative image paths resolve against the CSV's folder."""
    path = Path(path)
    base = path.parent
    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise InvalidInput(f"manifest {path} lacks columns {sorted(missing)}")
        for i, row in enumerate(reader):
            label = row["label"].strip().lower()
            if label not in LABELS:
                raise InvalidInput(f"row {i + 2}: label must be benign/malignant, got {label!r}")
            records.append(
                SampleRecord(
                    patient_id=row["patient_id"].strip(),
                    view=row["view"].strip().upper(),
                    label=LABELS[label],
                    dm_path=str(base / row["dm_path"].strip()),
                    dbt_path=str(base / row["dbt_path"].strip()),
                    sample_id=f"{row['patient_id'].strip()}_{row['view'].strip().upper()}_{i}",
                )
            )
    return DatasetManifest(records, split_seed)


def write_manifest(path, records, base=None):
    path = Path(path)
    base = Path(base) if base else path.parent
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow(
                [
                    r.patient_id,
                    r.view,
                    LABEL_NAMES[r.label],
                    _relpath(r.dm_path, base),
                    _relpath(r.dbt_path, base),
                ]
            )


def _relpath(p, base):
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)


def load_image(path):
    """Load an 8-bit image as grayscale float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def save_image(path, image):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def downsample(image, target=TARGET_SIZE):
    """Bilinear resize with pixel-centre alignment to ``target`` (rows, cols).

    Output pixel ``i`` samples source coordinate ``(i + 0.5) * in/out - 0.5``,
    clamped to the valid range, so equal sizes give the identity.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInput(f"cannot resize image of shape {img.shape}")
    out_h, out_w = target
    if out_h < 1 or out_w < 1:
        raise InvalidInput(f"invalid target size {target}")
    r0, r1, fr = _bilinear_axis(img.shape[0], out_h)
    c0, c1, fc = _bilinear_axis(img.shape[1], out_w)
    extra = (None,) * (img.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def _bilinear_axis(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def augment(image):
    """Return ``[original, hflip, rot90, rot180, rot270]``; rotations are counter-clockwise."""
    img = np.asarray(image)
    if img.ndim < 2 or img.shape[0] != img.shape[1]:
        raise InvalidInput(f"augmentation needs a square image, got shape {img.shape}")
    return [img.copy(), np.fliplr(img).copy()] + [
        np.rot90(img, k).copy() for k in (1, 2, 3)
    ]


def _patient_label(records):
    # a patient is malignant if any of their exams is
    return max(r.label for r in records)


def partition(manifest, ratio=(4, 1), seed=None):
    """Patient-level, class-stratified train/test split.

    Within each class the patient ids are sorted, shuffled with ``seed`` and
    the first ``round(n * test_share)`` (at least one, at most ``n - 1``)
    become test patients.
    """
    seed = manifest.split_seed if seed is None else seed
    train_w, test_w = ratio
    if train_w <= 0 or test_w <= 0:
        raise InvalidInput(f"invalid split ratio {ratio}")
    share = test_w / (train_w + test_w)
    groups = manifest.patients()
    by_class = {0: [], 1: []}
    for pid, recs in groups.items():
        by_class[_patient_label(recs)].append(pid)
    rng = np.random.default_rng(seed)
    test_ids = set()
    for cls in (0, 1):
        pids = sorted(by_class[cls])
        if len(pids) < 2:
            raise InvalidInput(
                f"class {LABEL_NAMES[cls]} has {len(pids)} patient(s); need at least 2"
            )
        order = rng.permutation(len(pids))
        n_test = min(max(int(round(len(pids) * share)), 1), len(pids) - 1)
        test_ids.update(pids[i] for i in order[:n_test])
    train = tuple(r for r in manifest.records if r.patient_id not in test_ids)
    test = tuple(r for r in manifest.records if r.patient_id in test_ids)
    return Split(train, test, seed)


def write_split(path, split):
    Path(path).write_text(json.dumps(split.to_json(), indent=2) + "\n")


def balanced_batches(labels, batch_size=32, seed=0, epoch=0):
    """Yield index arrays, each holding ``batch_size // 2`` samples per class.

    ``labels`` may be ints or objects with a ``label`` attribute. Each class
    is drawn from reshuffled passes over its members until the epoch's
    ``ceil(max_class_count / half)`` batches are filled, so the minority class
    is resampled and every record appears at least once per epoch. The
    stream depends only on ``(seed, epoch)``.
    """
    labels = np.array([getattr(x, "label", x) for x in labels], dtype=np.int64)
    if batch_size < 2 or batch_size % 2:
        raise InvalidInput("batch_size must be an even number >= 2")
    half = batch_size // 2
    members = [np.flatnonzero(labels == c) for c in (0, 1)]
    if any(len(m) == 0 for m in members):
        raise InvalidInput("balanced batches need both classes present")
    n_batches = -(-max(len(m) for m in members) // half)
    rng = np.random.default_rng([seed, epoch])
    streams = []
    for m in members:
        need = n_batches * half
        passes = [rng.permutation(m) for _ in range(-(-need // len(m)))]
        streams.append(np.concatenate(passes)[:need])
    for b in range(n_batches):
        batch = np.concatenate([s[b * half:(b + 1) * half] for s in streams])
        yield batch[rng.permutation(batch_size)]

"""On-disk pipeline stages shared by the CLI and the synthetic demo.

Work directory layout::

    pooled/<sample_id>.png, .json      dynamic feature images + sidecars
    prep/split.json                    patient ids per fold
    prep/samples.csv                   one row per (possibly augmented) sample
    prep/images/<row_id>_{dm,dbt}.png  resized inputs
    features/<row_id>_{dm,dbt}.tnsr    feature maps
    models/<kind>/                     weights (TNSR) + spec.json + loss.csv
    predictions/<name>.csv             sample_id,label,prob_0,prob_1
    reports/<name>.json                evaluation reports
"""

import csv
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import classifier as cl
from . import dataprep as dp
from . import ensemble as en
from . import features as ft
from . import metrics as mt
from . import rankpool as rp
from .errors import FormatError, InvalidInput

log = logging.getLogger(__name__)

KINDS = {"dm": "single_modality", "dbt": "single_modality", "dm-dbt": "dual_modality"}
SAMPLE_FIELDS = (
    "sample_id", "source_id", "patient_id", "view", "label", "fold",
    "augmentation", "dm_png", "dbt_png",
)


def _pool_one(args):
    source_id, dbt_dir, out_dir, cfg, approximate = args
    volume = rp.load_volume(dbt_dir, source_id)
    dfi = rp.pool_volume(volume, cfg, approximate=approximate)
    png, _ = rp.save_dynamic_image(dfi, Path(out_dir) / f"{source_id}.png")
    return str(png)


def pool_dirs(jobs, out_dir, cfg, workers=1, approximate=False):
    """Rank-pool each ``(source_id, slice_dir)`` job into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(sid, d, out_dir, cfg, approximate) for sid, d in jobs]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_pool_one, args))
    return [_pool_one(a) for a in args]


def pool_manifest(manifest, workdir, cfg, workers=1, approximate=False):
    jobs = [(r.sample_id, r.dbt_path) for r in manifest.records]
    return pool_dirs(jobs, Path(workdir) / "pooled", cfg, workers, approximate)


def _load_dynamic(workdir, sample_id):
    path = Path(workdir) / "pooled" / f"{sample_id}.png"
    if not path.exists():
        raise InvalidInput(f"missing dynamic feature image {path}; run the pool stage first")
    return dp.load_image(path)


def prep(manifest, workdir, size=832, seed=0, augment="train"):
    """Split by patient, resize DM and dynamic images, augment, and index the result."""
    if augment not in ("train", "all", "none"):
        raise InvalidInput(f"augment must be train/all/none, got {augment!r}")
    workdir = Path(workdir)
    out = workdir / "prep"
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    split = dp.partition(manifest, seed=seed)
    dp.write_split(out / "split.json", split)
    rows = []
    for fold in ("train", "test"):
        for rec in getattr(split, fold):
            dm = dp.downsample(dp.load_image(rec.dm_path), (size, size))
            dbt = dp.downsample(_load_dynamic(workdir, rec.sample_id), (size, size))
            if augment == "all" or (augment == "train" and fold == "train"):
                variants = zip(dp.AUGMENTATIONS, dp.augment(dm), dp.augment(dbt))
            else:
                variants = [("orig", dm, dbt)]
            for aug, dm_v, dbt_v in variants:
                row_id = rec.sample_id if aug == "orig" else f"{rec.sample_id}__{aug}"
                dm_png = images / f"{row_id}_dm.png"
                dbt_png = images / f"{row_id}_dbt.png"
                dp.save_image(dm_png, dm_v)
                dp.save_image(dbt_png, dbt_v)
                rows.append(
                    dict(
                        sample_id=row_id, source_id=rec.sample_id,
                        patient_id=rec.patient_id, view=rec.view, label=rec.label,
                        fold=fold, augmentation=aug,
                        dm_png=str(dm_png.relative_to(workdir)),
                        dbt_png=str(dbt_png.relative_to(workdir)),
                    )
                )
    with (out / "samples.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, SAMPLE_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return split, rows


def read_samples(workdir, fold=None):
    path = Path(workdir) / "prep" / "samples.csv"
    if not path.exists():
        raise InvalidInput(f"missing {path}; run the prep stage first")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["label"] = int(r["label"])
    return [r for r in rows if fold is None or r["fold"] == fold]


def extract(workdir, extractor=None, import_dir=None):
    """Write DM and DBT feature maps for every prepared sample.

    With ``import_dir`` the maps are taken from precomputed
    ``<sample_id>_{dm,dbt}.tnsr`` files instead (validated, then copied).
    """
    workdir = Path(workdir)
    out = workdir / "features"
    out.mkdir(parents=True, exist_ok=True)
    rows = read_samples(workdir)
    extractor = extractor or ft.ToyExtractor()
    for r in rows:
        dm_path, dbt_path = ft.feature_map_paths(out, r["sample_id"])
        if import_dir is not None:
            src_dm, src_dbt = ft.feature_map_paths(import_dir, r["sample_id"])
            dm_map = ft.import_feature_map(src_dm, "DM")
            dbt_map = ft.import_feature_map(src_dbt, "DBT")
            if dm_map.shape != dbt_map.shape:
                raise InvalidInput(f"{r['sample_id']}: DM and DBT map shapes differ")
            shutil.copyfile(src_dm, dm_path)
            shutil.copyfile(src_dbt, dbt_path)
            continue
        dm_map = extractor.extract(dp.load_image(workdir / r["dm_png"]), "DM")
        dbt_map = extractor.extract(dp.load_image(workdir / r["dbt_png"]), "DBT")
        ft.export_feature_map(dm_path, dm_map)
        ft.export_feature_map(dbt_path, dbt_map)
    return len(rows)


def load_inputs(workdir, kind, fold):
    """Stacked classifier inputs, labels and sample ids for one fold."""
    if kind not in KINDS:
        raise InvalidInput(f"kind must be one of {sorted(KINDS)}, got {kind!r}")
    rows = read_samples(workdir, fold)
    if not rows:
        raise InvalidInput(f"no {fold} samples in {workdir}")
    feat_dir = Path(workdir) / "features"
    xs = []
    for r in rows:
        dm_path, dbt_path = ft.feature_map_paths(feat_dir, r["sample_id"])
        if kind == "dm":
            xs.append(ft.import_feature_map(dm_path, "DM").data)
        elif kind == "dbt":
            xs.append(ft.import_feature_map(dbt_path, "DBT").data)
        else:
            fused = ft.concat_modality(
                ft.import_feature_map(dm_path, "DM"), ft.import_feature_map(dbt_path, "DBT")
            )
            xs.append(fused.data)
    labels = np.array([r["label"] for r in rows], dtype=np.int64)
    return np.stack(xs).astype(np.float64), labels, [r["sample_id"] for r in rows]


def train(workdir, kind, cfg):
    x, y, _ = load_inputs(workdir, kind, "train")
    spec = cl.ClassifierSpec.for_input(x.shape[1:])
    if spec.kind != KINDS[kind]:
        raise InvalidInput(f"{kind} features have unexpected rank {x.ndim - 1}")
    model, trace = cl.train(spec, x, y, cfg)
    out = Path(workdir) / "models" / kind
    model.save(out)
    cl.write_loss_trace(out / "loss.csv", trace)
    log.info("trained %s: loss %.4f -> %.4f", kind, trace[0], trace[-1])
    return model, trace


def write_predictions(path, sample_ids, labels, probs, classes=None):
    """Write a prediction CSV; ``classes`` adds a ``predicted_class`` column (ensemble votes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if labels is None:
        labels = [None] * len(sample_ids)
    header = ["sample_id", "label", "prob_0", "prob_1"]
    if classes is not None:
        header.append("predicted_class")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, (sid, lab, p) in enumerate(zip(sample_ids, labels, probs)):
            row = [sid, "" if lab is None else int(lab), repr(float(p[0])), repr(float(p[1]))]
            if classes is not None:
                row.append(int(classes[i]))
            w.writerow(row)


def read_predictions(path, with_classes=False):
    """Returns ``(sample_ids, labels or None, probs)`` from a prediction CSV.

    With ``with_classes`` a fourth item holds the ``predicted_class`` column,
    or None when the file has none.
    """
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"sample_id", "prob_0", "prob_1"}
        if not need <= set(reader.fieldnames or ()):
            raise InvalidInput(f"{path}: prediction CSV needs columns {sorted(need)}")
        rows = list(reader)
    ids = [r["sample_id"] for r in rows]
    probs = np.array([[float(r["prob_0"]), float(r["prob_1"])] for r in rows]).reshape(-1, 2)
    labels = None
    if rows and "label" in rows[0] and all(r["label"] != "" for r in rows):
        labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    if not with_classes:
        return ids, labels, probs
    classes = None
    if rows and "predicted_class" in rows[0]:
        classes = np.array([int(r["predicted_class"]) for r in rows], dtype=np.int64)
    return ids, labels, probs, classes


def predict(workdir, kind, fold="test", model_dir=None):
    model = cl.ShallowCNN.load(model_dir or Path(workdir) / "models" / kind)
    x, y, ids = load_inputs(workdir, kind, fold)
    probs = model.predict_proba(x)
    path = Path(workdir) / "predictions" / f"{kind}.csv"
    write_predictions(path, ids, y, probs)
    return path


def ensemble_files(paths, weights, out_path):
    members = [read_predictions(p) for p in paths]
    ids, labels, _ = members[0]
    for other_ids, _, _ in members[1:]:
        if other_ids != ids:
            raise InvalidInput("prediction files list different samples or orders")
    cfg = en.EnsembleConfig.normalized(weights) if weights is not None else en.EnsembleConfig.uniform(len(paths))
    probs, classes, conf = en.ensemble_arrays([m[2] for m in members], cfg)
    write_predictions(out_path, ids, labels, probs, classes)
    return ids, labels, probs, classes, conf


def evaluate_file(path, out_json=None):
    ids, labels, probs, classes = read_predictions(path, with_classes=True)
    if labels is None:
        raise InvalidInput(f"{path}: labels are required for evaluation")
    if classes is None:
        classes = np.argmax(probs, axis=1)
    confidences = probs[np.arange(len(classes)), classes]
    report = mt.compute_report(probs[:, 1], labels, confidences, predicted=classes)
    if out_json:
        out_json = Path(out_json)
        out_json.parent.mkdir(parents=True, exist_ok=True)
        out_json.write_text(report.to_json())
    return report


def load_config(path):
    """Read a JSON pipeline config. Unknown top-level keys are rejected."""
    known = {
        "manifest", "workdir", "seed", "workers", "rankpool", "prep",
        "extractor", "train", "ensemble",
    }
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise InvalidInput(f"{path}: config must be a JSON object")
    unknown = set(cfg) - known
    if unknown:
        raise InvalidInput(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg

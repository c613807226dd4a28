"""Synthetic paired DM / DBT data where only the joint view predicts the label.

Each patient carries two hidden bits. Bit A sets the sign of a blob in the
DM image (bright or dark). Bit B sets whether the same blob brightens or
darkens with slice depth in the DBT stack; the slice-averaged DBT image is
the same either way, so B is visible only through slice-to-slice change.
The label is ``A xor B``, so neither modality alone says anything about it.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rankpool import RankPoolConfig


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 500
    size: int = 32
    n_slices: int = 8
    blob_sigma: float = 3.0
    blob_amplitude: float = 0.25
    noise: float = 0.06
    jitter: int = 4


@dataclass
class SyntheticPatient:
    patient_id: str
    bit_a: int
    bit_b: int
    dm: np.ndarray  # (size, size) in [0, 1]
    dbt: np.ndarray  # (n_slices, size, size) in [0, 1]

    @property
    def label(self):
        return self.bit_a ^ self.bit_b


def _blob(size, center, sigma):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2 * sigma**2))


def make_patient(rng, patient_id, cfg, bit_a=None, bit_b=None):
    a = int(rng.integers(2)) if bit_a is None else bit_a
    b = int(rng.integers(2)) if bit_b is None else bit_b
    s = cfg.size
    c = s / 2 - 0.5
    center = c + rng.integers(-cfg.jitter, cfg.jitter + 1, size=2)
    blob = _blob(s, center, cfg.blob_sigma)
    amp = cfg.blob_amplitude * rng.uniform(0.8, 1.2)

    dm = 0.5 + (amp if a else -amp) * blob + rng.normal(0, cfg.noise, (s, s))

    # depth ramp from -1 to 1; its mean over slices is zero for both signs
    ramp = np.linspace(-1.0, 1.0, cfg.n_slices)
    if not b:
        ramp = -ramp
    dbt = 0.5 + amp * ramp[:, None, None] * blob[None] + rng.normal(0, cfg.noise, (cfg.n_slices, s, s))
    return SyntheticPatient(
        patient_id, a, b, np.clip(dm, 0.0, 1.0), np.clip(dbt, 0.0, 1.0)
    )


def make_dataset(seed, cfg=None):
    """Patients with balanced (A, B) combinations, shuffled deterministically."""
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(seed)
    combos = [(i % 4) // 2 for i in range(cfg.n_patients)], [i % 2 for i in range(cfg.n_patients)]
    order = rng.permutation(cfg.n_patients)
    width = len(str(cfg.n_patients - 1))
    return [
        make_patient(rng, f"P{i:0{width}d}", cfg, combos[0][k], combos[1][k])
        for i, k in enumerate(order)
    ]


def write_dataset(patients, root):
    """Write patients as PNG files plus a manifest CSV; returns the manifest path."""
    from . import dataprep as dp

    root = Path(root)
    records = []
    for p in patients:
        dm_path = root / "dm" / f"{p.patient_id}.png"
        dp.save_image(dm_path, p.dm)
        slice_dir = root / "dbt" / p.patient_id
        for t, sl in enumerate(p.dbt):
            dp.save_image(slice_dir / f"slice_{t:03d}.png", sl)
        records.append(
            dp.SampleRecord(p.patient_id, "CC", p.label, str(dm_path), str(slice_dir))
        )
    manifest = root / "manifest.csv"
    dp.write_manifest(manifest, records)
    return manifest


def run_demo(out_dir, seed=0, cfg=None, epochs=30, rankpool_cfg=None, workers=1,
             weights=None, extractor_seed=0):
    """Full pipeline on a generated dataset; returns EvalReports keyed by classifier.

    Keys are ``dm``, ``dbt``, ``dm-dbt`` and ``ensemble``; reports are also
    written to ``<out_dir>/reports/<key>.json``.
    """
    from . import classifier as cl
    from . import dataprep as dp
    from . import features as ft
    from . import pipeline as pl

    cfg = cfg or SyntheticConfig()
    out_dir = Path(out_dir)
    manifest_path = write_dataset(make_dataset(seed, cfg), out_dir / "data")
    manifest = dp.read_manifest(manifest_path, split_seed=seed)
    pl.pool_manifest(manifest, out_dir, rankpool_cfg or RankPoolConfig(), workers)
    pl.prep(manifest, out_dir, size=cfg.size, seed=seed, augment="train")
    pl.extract(out_dir, ft.ToyExtractor(ft.ToyExtractorSpec(rng_seed=extractor_seed)))
    train_cfg = cl.TrainConfig(epochs=epochs, seed=seed)
    reports = {}
    pred_paths = []
    for kind in ("dm", "dbt", "dm-dbt"):
        pl.train(out_dir, kind, train_cfg)
        pred_paths.append(pl.predict(out_dir, kind))
    pl.ensemble_files(pred_paths, weights, out_dir / "predictions" / "ensemble.csv")
    for name in ("dm", "dbt", "dm-dbt", "ensemble"):
        reports[name] = pl.evaluate_file(
            out_dir / "predictions" / f"{name}.csv", out_dir / "reports" / f"{name}.json"
        )
    return reports

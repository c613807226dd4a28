import csv
import hashlib
import json

import numpy as np
import pytest

from rankfuse import cli, synthetic
from rankfuse import dataprep as dp


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = synthetic.SyntheticConfig(n_patients=24, size=16, n_slices=5)
    return synthetic.write_dataset(synthetic.make_dataset(0, cfg), root)


def write_stack(directory, slices):
    for t, s in enumerate(slices):
        dp.save_image(directory / f"s{t:02d}.png", s)
    return directory


class TestPool:
    def test_single_volume(self, tmp_path, rng, capsys):
        vol = write_stack(tmp_path / "vol", rng.random((4, 10, 12)))
        assert cli.main(["pool", str(vol), "--out", str(tmp_path / "out")]) == 0
        png = tmp_path / "out" / "vol.png"
        side = json.loads((tmp_path / "out" / "vol.json").read_text())
        assert png.exists()
        assert side["T"] == 4 and side["lambda"] == 1.0 and side["source_id"] == "vol"
        assert set(side) == {"source_id", "T", "lambda", "iterations", "final_objective"}
        assert str(png) in capsys.readouterr().out

    def test_one_slice_fails(self, tmp_path, rng, capsys):
        vol = write_stack(tmp_path / "vol", rng.random((1, 8, 8)))
        assert cli.main(["pool", str(vol), "--out", str(tmp_path / "out")]) != 0
        assert "T < 2" in capsys.readouterr().err

    def test_slice_order_matters(self, tmp_path, rng):
        slices = rng.random((5, 8, 8))
        fwd = write_stack(tmp_path / "fwd", slices)
        rev = write_stack(tmp_path / "rev", slices[::-1])
        assert cli.main(["pool", str(fwd), str(rev), "--out", str(tmp_path / "out")]) == 0
        assert sha(tmp_path / "out" / "fwd.png") != sha(tmp_path / "out" / "rev.png")

    def test_missing_directory(self, tmp_path, capsys):
        assert cli.main(["pool", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1
        assert capsys.readouterr().err.startswith("rankfuse pool:")


class TestChain:
    def test_all_stages(self, dataset, tmp_path, capsys):
        work = tmp_path / "work"
        common = ["--out", str(work)]
        assert cli.main(["pool", "--manifest", str(dataset), "--workers", "2", *common]) == 0
        assert cli.main(["prep", "--manifest", str(dataset), "--size", "16", *common]) == 0
        split = json.loads((work / "prep" / "split.json").read_text())
        assert not set(split["train"]) & set(split["test"])
        assert cli.main(["extract", *common]) == 0
        for kind in ("dm", "dbt", "dm-dbt"):
            assert cli.main(["train", "--kind", kind, "--epochs", "2", *common]) == 0
            assert cli.main(["predict", "--kind", kind, *common]) == 0
            loss = (work / "models" / kind / "loss.csv").read_text().splitlines()
            assert loss[0] == "epoch,mean_loss" and len(loss) == 3
        preds = [str(work / "predictions" / f"{k}.csv") for k in ("dm", "dbt", "dm-dbt")]
        ens = work / "predictions" / "ensemble.csv"
        assert cli.main(["ensemble", *preds, "--weights", "1", "1", "2", "--out", str(ens)]) == 0
        with ens.open() as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["sample_id", "label", "prob_0", "prob_1", "predicted_class"]
        for r in rows:
            assert float(r["prob_0"]) + float(r["prob_1"]) == pytest.approx(1.0)
        capsys.readouterr()
        assert cli.main(["evaluate", str(ens), "--out", str(work / "reports" / "e.json")]) == 0
        out = capsys.readouterr().out
        for name in ("ACC", "AUC", "F1", "Prec", "Reca", "AP", "AC"):
            assert name in out
        report = json.loads((work / "reports" / "e.json").read_text())
        assert report["n_samples"] == len(rows)

    def test_import_feature_maps(self, dataset, tmp_path):
        work = tmp_path / "work"
        assert cli.main(["pool", "--manifest", str(dataset), "--out", str(work), "--approximate"]) == 0
        assert cli.main(["prep", "--manifest", str(dataset), "--size", "16", "--augment", "none", "--out", str(work)]) == 0
        assert cli.main(["extract", "--out", str(work)]) == 0
        feats = work / "features"
        other = tmp_path / "other"
        assert cli.main(["pool", "--manifest", str(dataset), "--out", str(other), "--approximate"]) == 0
        assert cli.main(["prep", "--manifest", str(dataset), "--size", "16", "--augment", "none", "--out", str(other)]) == 0
        assert cli.main(["extract", "--import-dir", str(feats), "--out", str(other)]) == 0
        for f in feats.iterdir():
            assert sha(f) == sha(other / "features" / f.name)

    def test_mismatched_weights(self, tmp_path):
        with pytest.raises(SystemExit):
            cli.main(["ensemble", "a.csv", "b.csv", "--weights", "1", "--out", str(tmp_path / "e.csv")])

    def test_evaluate_missing_labels(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("sample_id,label,prob_0,prob_1\na,,0.3,0.7\n")
        assert cli.main(["evaluate", str(path)]) == 1
        assert "labels" in capsys.readouterr().err


class TestConfig:
    def test_config_supplies_values(self, dataset, tmp_path):
        work = tmp_path / "work"
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({
            "manifest": str(dataset), "workdir": str(work), "seed": 3,
            "rankpool": {"lambda": 0.5, "max_iters": 50}, "prep": {"size": 16},
        }))
        assert cli.main(["pool", "--config", str(conf)]) == 0
        side = json.loads(next((work / "pooled").glob("*.json")).read_text())
        assert side["lambda"] == 0.5 and side["iterations"] <= 50
        assert cli.main(["prep", "--config", str(conf)]) == 0
        assert json.loads((work / "prep" / "split.json").read_text())["seed"] == 3
        assert cli.main(["prep", "--config", str(conf), "--seed", "4"]) == 0
        assert json.loads((work / "prep" / "split.json").read_text())["seed"] == 4

    def test_unknown_key(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text('{"workdir": "x", "bogus": 1}')
        assert cli.main(["extract", "--config", str(conf)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text("{")
        assert cli.main(["extract", "--config", str(conf)]) == 1


class TestDemo:
    def test_deterministic(self, tmp_path):
        args = ["demo", "--patients", "24", "--epochs", "2", "--seed", "1"]
        assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
        assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
        for name in ("dm", "dbt", "dm-dbt", "ensemble", "summary"):
            a = tmp_path / "a" / "reports" / f"{name}.json"
            assert sha(a) == sha(tmp_path / "b" / "reports" / f"{name}.json")
        summary = json.loads((tmp_path / "a" / "reports" / "summary.json").read_text())
        assert set(summary) == {"dm", "dbt", "dm-dbt", "ensemble"}
        probs = np.loadtxt(tmp_path / "a" / "predictions" / "dm.csv", delimiter=",", skiprows=1, usecols=(2, 3))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

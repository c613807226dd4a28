"""Command-line interface.

Subcommands map onto pipeline stages and share a work directory (``--out``)::

    rankfuse pool     --manifest data/manifest.csv --out work
    rankfuse prep     --manifest data/manifest.csv --out work
    rankfuse extract  --out work
    rankfuse train    --out work --kind dm-dbt
    rankfuse predict  --out work --kind dm-dbt
    rankfuse ensemble work/predictions/{dm,dbt,dm-dbt}.csv --out work/predictions/ensemble.csv
    rankfuse evaluate work/predictions/ensemble.csv --out work/reports/ensemble.json
    rankfuse demo     --out demo --seed 0

Values from ``--config`` (JSON) fill in any flag left unset.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import classifier as cl
from . import dataprep as dp
from . import features as ft
from . import pipeline as pl
from . import rankpool as rp
from . import synthetic as syn
from .errors import RankfuseError

log = logging.getLogger("rankfuse")


def _section(config, name):
    return config.get(name, {}) if config else {}


def _pick(value, config_value, default):
    if value is not None:
        return value
    if config_value is not None:
        return config_value
    return default


def _rankpool_cfg(args, config):
    sec = _section(config, "rankpool")
    return rp.RankPoolConfig(
        lam=_pick(args.lam, sec.get("lambda"), 1.0),
        max_iters=_pick(args.max_iters, sec.get("max_iters"), 500),
        tolerance=_pick(args.tolerance, sec.get("tolerance"), 1e-10),
        step_rule=_pick(args.step_rule, sec.get("step_rule"), "backtracking"),
        step_size=_pick(args.step_size, sec.get("step_size"), 1.0),
    )


def _train_cfg(args, config):
    sec = _section(config, "train")
    return cl.TrainConfig(
        lr=_pick(args.lr, sec.get("lr"), 1e-4),
        batch_size=_pick(args.batch_size, sec.get("batch_size"), 32),
        epochs=_pick(args.epochs, sec.get("epochs"), 30),
        seed=_pick(args.seed, config.get("seed") if config else None, 0),
    )


def _workdir(args, config):
    out = _pick(args.out, config.get("workdir") if config else None, None)
    if out is None:
        raise SystemExit("error: --out (or 'workdir' in the config) is required")
    return Path(out)


def _manifest(args, config):
    path = _pick(args.manifest, config.get("manifest") if config else None, None)
    if path is None:
        raise SystemExit("error: --manifest (or 'manifest' in the config) is required")
    seed = _pick(args.seed, config.get("seed") if config else None, 0)
    return dp.read_manifest(path, split_seed=seed)


def cmd_pool(args, config):
    cfg = _rankpool_cfg(args, config)
    workers = _pick(args.workers, config.get("workers") if config else None, 1)
    if args.volumes:
        if args.out is None:
            raise SystemExit("error: --out is required")
        jobs = [(Path(v).name, v) for v in args.volumes]
        written = pl.pool_dirs(jobs, args.out, cfg, workers, args.approximate)
    else:
        workdir = _workdir(args, config)
        written = pl.pool_manifest(_manifest(args, config), workdir, cfg, workers, args.approximate)
    for path in written:
        print(path)


def cmd_prep(args, config):
    sec = _section(config, "prep")
    workdir = _workdir(args, config)
    split, rows = pl.prep(
        _manifest(args, config),
        workdir,
        size=_pick(args.size, sec.get("size"), dp.TARGET_SIZE[0]),
        seed=_pick(args.seed, config.get("seed") if config else None, 0),
        augment=_pick(args.augment, sec.get("augment"), "train"),
    )
    log.info("%d train / %d test records, %d prepared samples", len(split.train), len(split.test), len(rows))
    print(workdir / "prep" / "split.json")


def cmd_extract(args, config):
    sec = _section(config, "extractor")
    workdir = _workdir(args, config)
    import_dir = _pick(args.import_dir, sec.get("import_dir"), None)
    extractor = None
    if import_dir is None:
        spec = ft.ToyExtractorSpec(
            channels=tuple(sec.get("channels", (8, 16, 32))),
            rng_seed=_pick(args.extractor_seed, sec.get("seed"), 0),
        )
        extractor = ft.ToyExtractor(spec)
    n = pl.extract(workdir, extractor, import_dir)
    log.info("wrote feature maps for %d samples", n)
    print(workdir / "features")


def cmd_train(args, config):
    workdir = _workdir(args, config)
    _, trace = pl.train(workdir, args.kind, _train_cfg(args, config))
    print(workdir / "models" / args.kind)


def cmd_predict(args, config):
    workdir = _workdir(args, config)
    print(pl.predict(workdir, args.kind, args.fold, args.model))


def cmd_ensemble(args, config):
    weights = _pick(args.weights, _section(config, "ensemble").get("weights"), None)
    if weights is not None and len(weights) != len(args.predictions):
        raise SystemExit(f"error: {len(weights)} weights for {len(args.predictions)} prediction files")
    if args.out is None:
        raise SystemExit("error: --out is required")
    pl.ensemble_files(args.predictions, weights, args.out)
    print(args.out)


def cmd_evaluate(args, config):
    report = pl.evaluate_file(args.predictions, args.out)
    print(report.table(Path(args.predictions).stem))


def cmd_demo(args, config):
    out = Path(_pick(args.out, config.get("workdir") if config else None, "rankfuse-demo"))
    seed = _pick(args.seed, config.get("seed") if config else None, 0)
    weights = _pick(args.weights, _section(config, "ensemble").get("weights"), None)
    synth = syn.SyntheticConfig(n_patients=args.patients)
    reports = syn.run_demo(
        out,
        seed=seed,
        cfg=synth,
        epochs=_pick(args.epochs, _section(config, "train").get("epochs"), 30),
        rankpool_cfg=_rankpool_cfg(args, config),
        workers=_pick(args.workers, config.get("workers") if config else None, 1),
        weights=weights,
    )
    for name, report in reports.items():
        print(report.table(f"== {name}"))
        print()
    summary = {name: r.to_dict() for name, r in reports.items()}
    (out / "reports" / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="split / training / synthetic-data seed")
    p.add_argument("--workers", type=int, help="parallel processes for pooling")
    p.add_argument("--out", help="output path (work directory for pipeline stages)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def _rankpool_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, help="regulariser weight (default 1.0)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--step-rule", choices=("backtracking", "fixed"))
    p.add_argument("--step-size", type=float)


def _train_flags(p):
    p.add_argument("--epochs", type=int, help="default 30")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-4)")
    p.add_argument("--batch-size", type=int, help="default 32")


def build_parser():
    parser = argparse.ArgumentParser(prog="rankfuse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool", help="rank-pool slice stacks into dynamic feature images")
    _common(p)
    _rankpool_flags(p)
    p.add_argument("volumes", nargs="*", help="slice directories (else every DBT in --manifest)")
    p.add_argument("--manifest")
    p.add_argument("--approximate", action="store_true", help="closed-form approximation instead of the exact solver")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("prep", help="split, resize and augment a manifest")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--size", type=int, help="square side length after resizing (default 832)")
    p.add_argument("--augment", choices=("train", "all", "none"))
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("extract", help="compute or import feature maps")
    _common(p)
    p.add_argument("--extractor-seed", type=int)
    p.add_argument("--import-dir", help="directory of precomputed <sample_id>_{dm,dbt}.tnsr maps")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one classifier")
    _common(p)
    _train_flags(p)
    p.add_argument("--kind", required=True, choices=sorted(pl.KINDS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predictions for one classifier")
    _common(p)
    p.add_argument("--kind", required=True, choices=sorted(pl.KINDS))
    p.add_argument("--fold", default="test", choices=("train", "test"))
    p.add_argument("--model", help="weights directory (default <out>/models/<kind>)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ensemble", help="weighted majority vote over prediction CSVs")
    _common(p)
    p.add_argument("predictions", nargs="+")
    p.add_argument("--weights", type=float, nargs="+", help="one per file; normalised to sum to 1")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="metrics for a prediction CSV")
    _common(p)
    p.add_argument("predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("demo", help="synthetic end-to-end run: DM-only vs DBT-only vs joint vs ensemble")
    _common(p)
    _rankpool_flags(p)
    _train_flags(p)
    p.add_argument("--patients", type=int, default=syn.SyntheticConfig.n_patients)
    p.add_argument("--weights", type=float, nargs="+")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = pl.load_config(args.config) if args.config else {}
        args.func(args, config)
    except (RankfuseError, OSError) as exc:
        print(f"rankfuse {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

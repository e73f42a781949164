"""Command-line entry point: ``sramage <command> [options]``.

Exit codes: 0 success, 2 bad usage, 3 missing input, 4 schema mismatch,
5 malformed data, 6 computation failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agesim import NO_DRIFT, STRONG_DRIFT, generate_fleet
from .bitcore import compute_instability, compute_p1
from .datasetio import (DumpSizeError, DuplicateDeviceError, LabeledDataset, ManifestError, discretize_usage,
                        iter_ingest, load_manifest, num_usage_classes, read_device, stratified_device_split)
from .errors import (ConvergenceError, InvalidArgumentError, MissingDumpError, SchemaMismatchError,
                     UndefinedMetricError)
from .features import (BASE_FEATURES, FeatureSchema, blockwise_p1, extract_features, p1_address_regression,
                       p1_spectrum)
from .learners import CLASSIFICATION, FAMILIES, REGRESSION, TrainedModel, fit, params_from_dict, params_to_dict
from .pipeline import (ExperimentConfig, FeatureTable, build_feature_table, derive_seed,
                       evaluate_model, labeled_dataset, prepare, random_search, run_classification_experiment,
                       run_regression_experiment)
from .render import render_bitmap, render_xy

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_DATA = 5
EXIT_COMPUTE = 6

log = logging.getLogger("sramage")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingDumpError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
        doc.pop("simulate", None)
    search = doc.setdefault("search", {})
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.jobs is not None:
        search["jobs"] = args.jobs
    else:
        search.setdefault("jobs", None)
    for key in ("group_size", "block_bytes", "num_frequencies", "train_fraction"):
        v = getattr(args, key, None)
        if v is not None:
            doc[key] = v
    if getattr(args, "candidates", None) is not None:
        search["num_candidates"] = args.candidates
        search.setdefault("budgets", {})
        search["budgets"] = {k: min(v, args.candidates) for k, v in search["budgets"].items()}
    if getattr(args, "folds", None) is not None:
        search["k_folds"] = args.folds
    if getattr(args, "learners", None):
        doc["learners"] = args.learners
    return ExperimentConfig.from_dict(doc)


def _stanza(args, config: ExperimentConfig) -> dict:
    return {"seed": config.seed, "config_hash": config.digest, "toolkit_version": __version__,
            "command": args.command}


def _write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- commands ---------------------------------------------------------------------

def cmd_simulate(args, config):
    raw = json.loads(Path(args.config).read_text()).get("simulate", {}) if args.config else {}
    profile = dict(STRONG_DRIFT if args.drift == "strong" else NO_DRIFT)
    profile.update(raw.get("profile", {}))
    if args.drift_rate is not None:
        profile["drift_rate"] = args.drift_rate
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fleet = generate_fleet(args.devices, ("uniform", args.usage_min, args.usage_max), raw.get("population"),
                           profile, config.seed, args.samples, args.sram_bytes, out_dir=out)
    if args.shuffle_labels:
        rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
        doc = json.loads((out / "manifest.json").read_text())
        usages = [d["usage_months"] for d in doc["devices"]]
        for d, u in zip(doc["devices"], rng.permutation(usages)):
            d["usage_months"] = float(u)
        _write_json(out / "manifest.json", doc)
    _write_json(out / "simulate.json", {"reproducibility": _stanza(args, config), "devices": args.devices,
                                        "samples": args.samples, "sram_bytes": args.sram_bytes,
                                        "profile": {k: v for k, v in profile.items()}})
    print(f"wrote {len(fleet.devices)} devices to {out}")


def cmd_ingest(args, config):
    manifest = load_manifest(args.manifest, args.bit_order)
    rows = []
    for dev in iter_ingest(manifest):
        p1 = compute_p1(dev)
        frac = dev.ones_per_sample() / dev.num_bits
        rows.append({"device_id": dev.device_id, "usage_months": dev.usage_months, "num_samples": dev.num_samples,
                     "num_bits": dev.num_bits, "pct1s_mean": float(frac.mean()),
                     "mean_instability": float(compute_instability(p1).values.mean())})
    doc = {"reproducibility": _stanza(args, config), "devices": rows}
    if args.out:
        _write_json(args.out, doc)
    for r in rows:
        print(f"{r['device_id']:<16} usage={r['usage_months']:7.2f}  N={r['num_samples']:5d}  "
              f"B={r['num_bits']}  %1s={r['pct1s_mean']:.4f}  I={r['mean_instability']:.4f}")


def cmd_features(args, config):
    manifest = load_manifest(args.manifest, args.bit_order)
    table = build_feature_table(manifest, config.group_size, config.block_bytes, config.per_device_pct)
    table.save(args.out)
    _write_json(Path(args.out).with_suffix(".json"), {"reproducibility": _stanza(args, config),
                                                      "rows": int(table.base.shape[0]),
                                                      "devices": len(table.device_list())})
    print(f"{table.base.shape[0]} groups from {len(table.device_list())} devices -> {args.out}")


def cmd_split(args, config):
    if args.features:
        table = FeatureTable.load(args.features)
        devices = table.device_list()
    else:
        table = None
        devices = [(e.device_id, e.usage_months) for e in load_manifest(args.manifest).entries]
    split = stratified_device_split(devices, config.train_fraction, config.split_bin_months,
                                    derive_seed(config.seed, "split"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "split.json", {**split.to_dict(), "reproducibility": _stanza(args, config)})
    if table is not None:
        ds, schema = labeled_dataset(table, split, config.num_frequencies)
        (out / "schema.json").write_text(schema.to_json() + "\n")
        ds.to_csv(out / "dataset.csv")
    print(f"train {len(split.train_devices)} devices, test {len(split.test_devices)} devices -> {out}")


def _labels(ds: LabeledDataset, task: str, resolution, span):
    if task == REGRESSION:
        return ds.usage, 0
    if resolution is None:
        raise InvalidArgumentError("classification needs --resolution")
    return discretize_usage(ds.usage, resolution, span), num_usage_classes(span, resolution)


def _span(ds: LabeledDataset, args) -> float:
    return args.span if getattr(args, "span", None) is not None else float(ds.usage.max())


def _tag(task, resolution, features="all"):
    return f"reg/{features}" if task == REGRESSION else f"cls/{resolution}"


def _select(ds: LabeledDataset, features: str) -> LabeledDataset:
    return ds.columns(BASE_FEATURES) if features == "no_spectrum" else ds


def cmd_tune(args, config):
    ds = _select(LabeledDataset.from_csv(args.dataset), args.features)
    span = _span(ds, args)
    train = ds.part("train")
    y, n_cls = _labels(train, args.task, args.resolution, span)
    sr = random_search(config.search, args.learner, args.task, train, y, n_cls,
                       _tag(args.task, args.resolution, args.features))
    doc = {"reproducibility": _stanza(args, config), "task": args.task, "resolution": args.resolution,
           "span_months": span, "features": args.features, **sr.to_dict()}
    _write_json(args.out, doc)
    print(f"{args.learner}: best cv score {sr.cv_score:.4f} with {params_to_dict(sr.best_params)}")


def cmd_train(args, config):
    ds = _select(LabeledDataset.from_csv(args.dataset), args.features)
    tuned = json.loads(Path(args.params).read_text())
    task = tuned["task"]
    resolution = tuned.get("resolution")
    span = tuned.get("span_months", float(ds.usage.max()))
    train = ds.part("train")
    y, n_cls = _labels(train, task, resolution, span)
    params = params_from_dict(tuned["best_params"])
    digest = FeatureSchema.from_json(Path(args.schema).read_text()).digest if args.schema else None
    model = fit(params, task, train.X, y, seed=derive_seed(config.seed, "final", params.family,
                                                           _tag(task, resolution, args.features)),
                num_classes=n_cls, schema_digest=digest)
    doc = model.to_dict()
    doc["training"] = {"resolution": resolution, "span_months": span, "features": args.features,
                       "reproducibility": _stanza(args, config)}
    _write_json(args.out, doc)
    print(f"trained {params.family} {task} model on {len(train)} rows -> {args.out}")


def cmd_evaluate(args, config):
    doc = json.loads(Path(args.model).read_text())
    model = TrainedModel.from_dict(doc)
    training = doc.get("training", {})
    if args.dataset:
        ds = _select(LabeledDataset.from_csv(args.dataset), training.get("features", "all"))
        if args.part != "all":
            ds = ds.part(args.part)
    else:
        if not args.schema:
            raise InvalidArgumentError("--manifest needs --schema")
        schema = FeatureSchema.from_json(Path(args.schema).read_text())
        if model.schema_digest and model.schema_digest != schema.digest:
            raise SchemaMismatchError("model was trained with a different feature schema")
        manifest = load_manifest(args.manifest, args.bit_order)
        vecs = [v for dev in iter_ingest(manifest) for v in extract_features(dev, schema, config.group_size)]
        ds = LabeledDataset(np.array([v.values for v in vecs]), [v.usage_months for v in vecs],
                            [v.device_id for v in vecs], ["eval"] * len(vecs), schema.names)
        ds = _select(ds, training.get("features", "all"))
    metrics = evaluate_model(model, ds, resolution=training.get("resolution"), span_months=training.get("span_months"),
                             epsilon=config.epsilon)
    out = {"reproducibility": _stanza(args, config), "learner": model.family, "task": model.task, **metrics}
    if args.out:
        _write_json(args.out, out)
    if model.task == REGRESSION:
        print(f"{'learner':<8} {'rows':>6} {'r2':>8} {'mape%':>8}")
        print(f"{model.family:<8} {metrics['rows']:>6} {metrics['r2']:>8.3f} {100 * metrics['mape']:>8.1f}")
    else:
        print(f"{'learner':<8} {'res':>4} {'rows':>6} {'f1':>8}")
        print(f"{model.family:<8} {metrics['resolution']:>4} {metrics['rows']:>6} {metrics['f1_macro']:>8.3f}")


def cmd_render(args, config):
    manifest = load_manifest(args.manifest, args.bit_order)
    entries = {e.device_id: e for e in manifest.entries}
    ids = args.device or [manifest.entries[0].device_id]
    missing = [d for d in ids if d not in entries]
    if missing:
        raise MissingDumpError(f"unknown device(s) {missing}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    devices = [read_device(manifest, entries[d]) for d in ids]
    if args.kind in ("p1", "instability"):
        p1 = compute_p1(devices[0])
        render_bitmap(p1 if args.kind == "p1" else compute_instability(p1), out, args.mode)
        print(f"wrote {out}")
    elif args.kind == "blockwise":
        p1 = compute_p1(devices[0])
        blocks = blockwise_p1(p1, config.block_bytes)
        intercept, slope, _ = p1_address_regression(p1, config.block_bytes)
        block_bits = 8 * config.block_bytes
        x = (np.arange(blocks.size) * block_bits + (block_bits - 1) / 2) / (p1.num_bits - 1)
        paths = render_xy(out, x, {"p1_block_mean": blocks}, "address", (intercept, slope),
                          title=f"{ids[0]} blockwise P1")
        print("wrote " + ", ".join(map(str, paths)))
    else:
        spectra = {f"{d.device_id}": p1_spectrum(compute_p1(d)) for d in devices}
        n = next(iter(spectra.values())).size
        paths = render_xy(out, np.arange(n), spectra, "bin", title="P1 spatial spectrum")
        print("wrote " + ", ".join(map(str, paths)))


def cmd_report(args, config):
    if args.from_json:
        print(json.loads(Path(args.from_json).read_text()).get("table", ""), end="")
        return
    source = FeatureTable.load(args.features) if args.features else load_manifest(args.manifest, args.bit_order)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [REGRESSION, CLASSIFICATION] if args.task == "both" else [args.task]
    prep = prepare(source, config)
    for task in tasks:
        if task == REGRESSION:
            rep = run_regression_experiment(prep, config)
        else:
            rep = run_classification_experiment(prep, config, args.resolutions or None)
        doc = rep.to_dict()
        doc["reproducibility"] = _stanza(args, config)
        doc["table"] = rep.table()
        _write_json(out / f"{task}_report.json", doc)
        (out / f"{task}_report.txt").write_text(rep.table())
        print(rep.table(), end="")


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; command-line flags override its keys")
    common.add_argument("--seed", type=int, help="single seed from which every stage derives its own")
    common.add_argument("--jobs", type=int, help="worker threads (default: all cores); results do not depend on it")
    common.add_argument("--bit-order", choices=("little", "big"), help="override the manifest's bit order")
    common.add_argument("-v", "--verbose", action="store_true")

    feat = argparse.ArgumentParser(add_help=False)
    feat.add_argument("--group-size", type=int, help="startup samples per P1 group (default 10)")
    feat.add_argument("--block-bytes", type=int, help="block size for blockwise P1 (default 1024)")
    feat.add_argument("--num-frequencies", type=int, help="spectrum bins kept by feature selection (default 50)")
    feat.add_argument("--train-fraction", type=float, help="share of devices used for training (default 0.7)")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--candidates", type=int, help="random-search candidates per learner")
    search.add_argument("--folds", type=int, help="cross-validation folds (default 5)")

    p = _Parser(prog="sramage", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"sramage {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic fleet (dumps + manifest)")
    s.add_argument("--out", required=True)
    s.add_argument("--devices", type=int, default=20)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--sram-bytes", type=int, default=2048)
    s.add_argument("--usage-min", type=float, default=2.0)
    s.add_argument("--usage-max", type=float, default=18.0)
    s.add_argument("--drift", choices=("strong", "none"), default="strong")
    s.add_argument("--drift-rate", type=float)
    s.add_argument("--shuffle-labels", action="store_true", help="permute usage labels across devices")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ingest", parents=[common], help="validate dumps and print per-device statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("features", parents=[common, feat], help="compute per-group features and spectra")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output .npz feature table")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("split", parents=[common, feat],
                       help="device-level stratified split; with --features also fits the schema")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--features")
    g.add_argument("--manifest")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_split)

    for name, helptext in (("tune", "random search with device-level K-fold CV"),):
        s = sub.add_parser(name, parents=[common, search], help=helptext)
        s.add_argument("--dataset", required=True)
        s.add_argument("--learner", choices=FAMILIES, required=True)
        s.add_argument("--task", choices=(REGRESSION, CLASSIFICATION), default=REGRESSION)
        s.add_argument("--resolution", type=int)
        s.add_argument("--span", type=float, help="usage span in months (default: max usage in dataset)")
        s.add_argument("--features", choices=("all", "no_spectrum"), default="all")
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_tune)

    s = sub.add_parser("train", parents=[common], help="fit a model with tuned parameters")
    s.add_argument("--dataset", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--schema")
    s.add_argument("--features", choices=("all", "no_spectrum"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common, feat], help="score a trained model")
    s.add_argument("--model", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset")
    g.add_argument("--manifest")
    s.add_argument("--schema")
    s.add_argument("--part", choices=("train", "test", "all"), default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", parents=[common, feat], help="bitmap, blockwise or spectrum output")
    s.add_argument("--manifest", required=True)
    s.add_argument("--device", action="append")
    s.add_argument("--kind", choices=("p1", "instability", "blockwise", "spectrum"), default="p1")
    s.add_argument("--mode", choices=("unsorted", "row-ranked"), default="unsorted")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("report", parents=[common, feat, search], help="full tuning + evaluation report")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--features")
    g.add_argument("--from-json", help="print the table stored in an existing report")
    s.add_argument("--task", choices=(REGRESSION, CLASSIFICATION, "both"), default="regression")
    s.add_argument("--resolutions", type=int, nargs="*")
    s.add_argument("--learners", nargs="*", choices=FAMILIES)
    s.add_argument("--out", default="report")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args)
        args.func(args, config)
    except (MissingDumpError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SchemaMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ManifestError, DumpSizeError, DuplicateDeviceError, InvalidArgumentError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

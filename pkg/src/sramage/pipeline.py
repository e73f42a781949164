"""Randomised hyperparameter search, resolution sweeps and held-out evaluation."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .bitcore import BitSampleSet
from .datasetio import (DEFAULT_BIN_MONTHS, DeviceManifest, LabeledDataset, SplitAssignment, discretize_usage,
                        iter_ingest, load_manifest, num_usage_classes, stratified_device_folds,
                        stratified_device_split)
from .errors import ConvergenceError, InvalidArgumentError, UndefinedMetricError
from .features import (BASE_FEATURES, DEFAULT_BLOCK_BYTES, DEFAULT_NUM_FREQUENCIES, FeatureSchema,
                       assemble_features, fit_frequency_selection, group_base_features)
from .learners import (CLASSIFICATION, FAMILIES, REGRESSION, Standardizer, TrainedModel, fit,
                       knn_from_order, neighbor_order, params_to_dict, sample_params)
from .metrics import DEFAULT_EPSILON, f1_multiclass, mape, r2_score

log = logging.getLogger(__name__)

REPORT_FORMAT = "sramage-report"
REPORT_VERSION = 1
_FAILURES = (ConvergenceError, UndefinedMetricError, InvalidArgumentError, FloatingPointError)


def derive_seed(seed: int, *keys) -> int:
    """Deterministic sub-seed for a named stage."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass
class SearchConfig:
    num_candidates: int = 1000
    k_folds: int = 5
    seed: int = 0
    budgets: dict = field(default_factory=lambda: {"svm": 50})
    search_space: dict = field(default_factory=dict)
    bin_months: float = DEFAULT_BIN_MONTHS
    jobs: int | None = 1

    def __post_init__(self):
        if self.k_folds < 2:
            raise InvalidArgumentError("k_folds must be >= 2")
        if self.num_candidates < 1:
            raise InvalidArgumentError("num_candidates must be >= 1")

    def candidates_for(self, family: str) -> int:
        return int(min(self.num_candidates, self.budgets.get(family, self.num_candidates)))

    def worker_count(self) -> int:
        return self.jobs if self.jobs and self.jobs > 0 else (os.cpu_count() or 1)


@dataclass
class ExperimentConfig:
    seed: int = 0
    group_size: int = 10
    block_bytes: int = DEFAULT_BLOCK_BYTES
    num_frequencies: int = DEFAULT_NUM_FREQUENCIES
    train_fraction: float = 0.7
    split_bin_months: float = DEFAULT_BIN_MONTHS
    epsilon: float = DEFAULT_EPSILON
    learners: tuple = FAMILIES
    resolutions: tuple = tuple(range(1, 10))
    ablation: bool = True
    per_device_pct: bool = False
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        self.learners = tuple(self.learners)
        self.resolutions = tuple(int(r) for r in self.resolutions)
        unknown = set(self.learners) - set(FAMILIES)
        if unknown:
            raise InvalidArgumentError(f"unknown learners {sorted(unknown)}")
        # a single seed drives every stage
        self.search.seed = self.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learners"] = list(self.learners)
        d["resolutions"] = list(self.resolutions)
        d["search"].pop("jobs")
        return d

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        search = SearchConfig(**doc.pop("search", {}))
        return cls(search=search, **doc)


# -- feature tables ---------------------------------------------------------------

@dataclass(eq=False)
class FeatureTable:
    """Per-group base features and full spectra, before frequency selection."""

    device_ids: np.ndarray
    usage: np.ndarray
    base: np.ndarray
    spectra: np.ndarray
    num_bits: int
    block_bytes: int

    def device_list(self) -> list:
        seen = {}
        for d, u in zip(self.device_ids, self.usage):
            seen.setdefault(d, u)
        return list(seen.items())

    def save(self, path):
        np.savez_compressed(path, device_ids=self.device_ids.astype(str), usage=self.usage, base=self.base,
                            spectra=self.spectra, num_bits=self.num_bits, block_bytes=self.block_bytes)

    @classmethod
    def load(cls, path) -> "FeatureTable":
        with np.load(path) as z:
            return cls(z["device_ids"].astype(object), z["usage"], z["base"], z["spectra"],
                       int(z["num_bits"]), int(z["block_bytes"]))


def _device_source(source) -> Iterable[BitSampleSet]:
    if isinstance(source, (str, os.PathLike)):
        return iter_ingest(load_manifest(source))
    if isinstance(source, DeviceManifest):
        return iter_ingest(source)
    return source


def build_feature_table(source, group_size: int = 10, block_bytes: int = DEFAULT_BLOCK_BYTES,
                        per_device_pct: bool = False) -> FeatureTable:
    """Stream devices and compute group features; only one device is held in memory at a time."""
    ids, usage, bases, spectra = [], [], [], []
    num_bits = None
    for dev in _device_source(source):
        if num_bits is None:
            num_bits = dev.num_bits
        elif dev.num_bits != num_bits:
            raise InvalidArgumentError("all devices must have the same SRAM size")
        b, s = group_base_features(dev, group_size, block_bytes, per_device_pct)
        ids += [dev.device_id] * b.shape[0]
        usage += [dev.usage_months] * b.shape[0]
        bases.append(b)
        spectra.append(s.astype(np.float32))
    if num_bits is None:
        raise InvalidArgumentError("no devices to process")
    return FeatureTable(np.array(ids, dtype=object), np.array(usage, float), np.vstack(bases),
                        np.vstack(spectra), num_bits, block_bytes)


def labeled_dataset(table: FeatureTable, split: SplitAssignment,
                    num_frequencies: int = DEFAULT_NUM_FREQUENCIES) -> tuple[LabeledDataset, FeatureSchema]:
    """Fit the frequency selection on training rows only and assemble the 56-column table."""
    tags = np.array([split.tag(d) for d in table.device_ids], dtype=object)
    train = tags == "train"
    schema = fit_frequency_selection(table.spectra[train], table.usage[train], num_frequencies,
                                     table.num_bits, table.block_bytes)
    X = assemble_features(table.base, table.spectra, schema.selected_freq_indices)
    return LabeledDataset(X, table.usage, table.device_ids, tags, schema.names), schema


@dataclass(eq=False)
class PreparedData:
    dataset: LabeledDataset
    schema: FeatureSchema
    split: SplitAssignment


def prepare(source, config: ExperimentConfig) -> PreparedData:
    if isinstance(source, PreparedData):
        return source
    table = source if isinstance(source, FeatureTable) else build_feature_table(
        source, config.group_size, config.block_bytes, config.per_device_pct)
    split = stratified_device_split(table.device_list(), config.train_fraction, config.split_bin_months,
                                    derive_seed(config.seed, "split"))
    ds, schema = labeled_dataset(table, split, config.num_frequencies)
    return PreparedData(ds, schema, split)


# -- search -----------------------------------------------------------------------

@dataclass
class SearchResult:
    family: str
    best_params: object
    cv_score: float
    candidates: int
    failed: int

    def to_dict(self):
        return {"family": self.family, "best_params": params_to_dict(self.best_params),
                "cv_score": self.cv_score, "candidates": self.candidates, "failed": self.failed}


def device_folds(data: LabeledDataset, k: int, bin_months: float, seed: int) -> np.ndarray:
    """Fold index for every row; a device's rows always share a fold."""
    devices = sorted(data.devices())
    if len(devices) < k:
        raise InvalidArgumentError(f"{len(devices)} devices cannot fill {k} folds")
    fold_of = stratified_device_folds([d for d, _ in devices], [u for _, u in devices], k, bin_months, seed)
    return np.array([fold_of[d] for d in data.device_ids], dtype=np.int64)


def _score(task, y, pred, num_classes):
    if task == REGRESSION:
        return r2_score(y, pred)
    return f1_multiclass(y, pred, num_classes).f1_macro


def _evaluate_candidate(params, task, X, y, folds, k, num_classes, seed, knn_cache=None):
    scores = []
    try:
        for f in range(k):
            tr, va = folds != f, folds == f
            if knn_cache is not None:
                kk = min(params.k, int(tr.sum()))
                pred = knn_from_order(knn_cache[f], y[tr], kk, task, num_classes)
            else:
                model = fit(params, task, X[tr], y[tr], seed=seed, num_classes=num_classes)
                pred = model.predict(X[va])
            scores.append(_score(task, y[va], pred, num_classes))
    except _FAILURES as exc:
        log.debug("candidate %s failed: %s", params, exc)
        return -np.inf
    return float(np.mean(scores))


def random_search(config: SearchConfig, family: str, task: str, train_data: LabeledDataset,
                  labels=None, num_classes: int = 0, tag: str = "") -> SearchResult:
    """Sample candidates and rank them by mean device-level K-fold score.

    ``labels`` replaces the usage targets (class indices for classification).
    Candidates that fail on any fold score ``-inf``; ties keep the earliest.
    """
    if np.any(train_data.split != "train"):
        raise InvalidArgumentError("random_search accepts training rows only")
    X = train_data.X
    y = train_data.usage if labels is None else np.asarray(labels, dtype=float)
    k = config.k_folds
    folds = device_folds(train_data, k, config.bin_months, derive_seed(config.seed, "folds", tag))
    rng = np.random.default_rng(derive_seed(config.seed, "candidates", family, task, tag))
    n_cand = config.candidates_for(family)
    candidates = [sample_params(family, rng, config.search_space) for _ in range(n_cand)]
    fit_seed = derive_seed(config.seed, "fit", family, tag)

    knn_cache = None
    if family == "knn":
        knn_cache = []
        for f in range(k):
            tr, va = folds != f, folds == f
            std = Standardizer.fit(X[tr])
            knn_cache.append(neighbor_order(std.transform(X[va]), std.transform(X[tr])))

    def run(params):
        return _evaluate_candidate(params, task, X, y, folds, k, num_classes, fit_seed, knn_cache)

    workers = config.worker_count()
    if workers > 1 and n_cand > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(run, candidates))
    else:
        scores = [run(p) for p in candidates]
    scores = np.array(scores)
    failed = int(np.sum(~np.isfinite(scores)))
    if failed == n_cand:
        raise ConvergenceError(f"every {family} candidate failed during cross-validation")
    best = int(np.argmax(scores))
    return SearchResult(family, candidates[best], float(scores[best]), n_cand, failed)


# -- experiments ------------------------------------------------------------------

@dataclass
class ExperimentReport:
    task: str
    seed: int
    config: dict
    config_hash: str
    dataset: dict
    results: list
    baselines: list
    skipped: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"format": REPORT_FORMAT, "report_version": REPORT_VERSION, "toolkit_version": self.version,
             "task": self.task, "seed": self.seed, "config_hash": self.config_hash, "config": self.config,
             "dataset": self.dataset, "results": self.results, "baselines": self.baselines,
             "skipped": self.skipped, "notes": self.notes}
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def canonical(self) -> str:
        """Serialisation without wall-clock data; identical inputs give identical text."""
        return self.to_json(include_timing=False)

    def result(self, learner: str, features: str = "all", resolution: int | None = None) -> dict:
        for r in self.results:
            if r["learner"] == learner and r["features"] == features and r.get("resolution") == resolution:
                return r
        raise KeyError((learner, features, resolution))

    def baseline(self, resolution: int | None = None) -> dict:
        for b in self.baselines:
            if b.get("resolution") == resolution:
                return b
        raise KeyError(resolution)

    def table(self) -> str:
        lines = [f"# {self.task} report  seed={self.seed}  config={self.config_hash}  "
                 f"toolkit={self.version}"]
        if self.task == REGRESSION:
            lines.append(f"{'learner':<8} {'features':<12} {'cv_r2':>8} {'test_r2':>8} {'mape%':>8}")
            for r in self.results:
                lines.append(f"{r['learner']:<8} {r['features']:<12} {r['cv_score']:>8.3f} "
                             f"{r['test']['r2']:>8.3f} {100 * r['test']['mape']:>8.1f}")
            for b in self.baselines:
                lines.append(f"{'mean':<8} {'-':<12} {'-':>8} {b['test']['r2']:>8.3f} "
                             f"{100 * b['test']['mape']:>8.1f}")
        else:
            lines.append(f"{'res':>4} {'classes':>7} {'learner':<9} {'cv_f1':>7} {'test_f1':>8}")
            for r in self.results:
                lines.append(f"{r['resolution']:>4} {r['num_classes']:>7} {r['learner']:<9} "
                             f"{r['cv_score']:>7.3f} {r['test']['f1_macro']:>8.3f}")
            for b in self.baselines:
                lines.append(f"{b['resolution']:>4} {b['num_classes']:>7} {'majority':<9} {'-':>7} "
                             f"{b['test']['f1_macro']:>8.3f}")
        for s in self.skipped:
            lines.append(f"skipped: {s}")
        for n in self.notes:
            lines.append(f"note: {n}")
        return "\n".join(lines) + "\n"


def _dataset_summary(prep: PreparedData) -> dict:
    ds = prep.dataset
    tr, te = ds.part("train"), ds.part("test")
    return {"train_devices": len(prep.split.train_devices), "test_devices": len(prep.split.test_devices),
            "train_rows": len(tr), "test_rows": len(te), "num_features": len(ds.feature_names),
            "num_bits": prep.schema.num_bits, "selected_freq_indices": list(prep.schema.selected_freq_indices)}


def _budget_notes(config: ExperimentConfig) -> list:
    notes = []
    for fam in config.learners:
        n = config.search.candidates_for(fam)
        if n != config.search.num_candidates:
            notes.append(f"{fam}: search budget reduced to {n} candidates")
    return notes


def _tune_and_test(config, family, task, train, test, y_train, y_test, num_classes, tag):
    t0 = time.perf_counter()
    sr = random_search(config.search, family, task, train, y_train, num_classes, tag)
    model = fit(sr.best_params, task, train.X, y_train, seed=derive_seed(config.seed, "final", family, tag),
                num_classes=num_classes)
    pred = model.predict(test.X)
    return sr, model, pred, time.perf_counter() - t0


def run_regression_experiment(source, config: ExperimentConfig | None = None) -> ExperimentReport:
    """Tune every configured regressor, score it on unseen devices, and repeat without spectra."""
    config = config or ExperimentConfig()
    prep = prepare(source, config)
    variants = [("all", prep.dataset)]
    if config.ablation:
        variants.append(("no_spectrum", prep.dataset.columns(BASE_FEATURES)))
    results, timing = [], {}
    for feat_name, ds in variants:
        train, test = ds.part("train"), ds.part("test")
        for fam in config.learners:
            sr, _, pred, dt = _tune_and_test(config, fam, REGRESSION, train, test, train.usage, test.usage, 0,
                                             f"reg/{feat_name}")
            results.append({"learner": fam, "features": feat_name, "resolution": None,
                            "best_params": params_to_dict(sr.best_params), "cv_score": sr.cv_score,
                            "failed_candidates": sr.failed, "candidates": sr.candidates,
                            "test": {"r2": r2_score(test.usage, pred),
                                     "mape": mape(test.usage, pred, config.epsilon)}})
            timing[f"{fam}/{feat_name}"] = dt
    train, test = prep.dataset.part("train"), prep.dataset.part("test")
    naive = np.full(len(test), train.usage.mean())
    baselines = [{"resolution": None, "predictor": "train_mean",
                  "test": {"r2": r2_score(test.usage, naive), "mape": mape(test.usage, naive, config.epsilon)}}]
    return ExperimentReport(REGRESSION, config.seed, config.to_dict(), config.digest, _dataset_summary(prep),
                            results, baselines, [], _budget_notes(config), timing)


def majority_class(labels: np.ndarray, num_classes: int) -> int:
    return int(np.bincount(labels.astype(np.int64), minlength=num_classes).argmax())


def run_classification_experiment(source, config: ExperimentConfig | None = None,
                                  resolutions: Sequence[int] | None = None) -> ExperimentReport:
    """Per resolution: discretise usage, re-tune every classifier and score macro F1 on test devices."""
    config = config or ExperimentConfig()
    prep = prepare(source, config)
    resolutions = tuple(resolutions or config.resolutions)
    ds = prep.dataset
    span = float(ds.usage.max())
    train, test = ds.part("train"), ds.part("test")
    results, baselines, skipped, timing = [], [], [], {}
    for res in resolutions:
        n_cls = num_usage_classes(span, res)
        y_tr = discretize_usage(train.usage, res, span)
        y_te = discretize_usage(test.usage, res, span)
        if np.unique(y_tr).size < 2 or n_cls < 2:
            msg = f"resolution {res}: training labels occupy a single class"
            log.warning(msg)
            skipped.append(msg)
            continue
        maj = majority_class(y_tr, n_cls)
        baselines.append({"resolution": res, "num_classes": n_cls, "predictor": "majority", "class": maj,
                          "test": f1_multiclass(y_te, np.full(y_te.size, maj), n_cls).to_dict()})
        for fam in config.learners:
            try:
                sr, _, pred, dt = _tune_and_test(config, fam, CLASSIFICATION, train, test, y_tr, y_te, n_cls,
                                                 f"cls/{res}")
            except ConvergenceError as exc:
                skipped.append(f"resolution {res}, {fam}: {exc}")
                continue
            results.append({"learner": fam, "features": "all", "resolution": res, "num_classes": n_cls,
                            "best_params": params_to_dict(sr.best_params), "cv_score": sr.cv_score,
                            "failed_candidates": sr.failed, "candidates": sr.candidates,
                            "test": f1_multiclass(y_te, pred, n_cls).to_dict()})
            timing[f"{fam}/res{res}"] = dt
    return ExperimentReport(CLASSIFICATION, config.seed, config.to_dict(), config.digest, _dataset_summary(prep),
                            results, baselines, skipped, _budget_notes(config), timing)


def evaluate_model(model: TrainedModel, data: LabeledDataset, task: str | None = None,
                   resolution: int | None = None, span_months: float | None = None,
                   epsilon: float = DEFAULT_EPSILON) -> dict:
    """Score a trained model on ``data`` (all rows)."""
    pred = model.predict(data.X)
    if model.task == REGRESSION:
        return {"rows": len(data), "r2": r2_score(data.usage, pred), "mape": mape(data.usage, pred, epsilon)}
    if resolution is None:
        raise InvalidArgumentError("classification evaluation needs the label resolution")
    y = discretize_usage(data.usage, resolution, span_months)
    y = np.minimum(y, model.num_classes - 1)
    return {"rows": len(data), "resolution": resolution, **f1_multiclass(y, pred, model.num_classes).to_dict()}

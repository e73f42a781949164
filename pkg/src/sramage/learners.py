"""KNN, RBF-SVM, CART and random forest in regressor and classifier form.

All learners standardise their inputs with statistics fitted on the training
matrix. Class labels are integers ``0 .. num_classes - 1``; vote ties go to
the lowest class index.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InvalidArgumentError, SchemaMismatchError

log = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASKS = (REGRESSION, CLASSIFICATION)

MODEL_FORMAT = "sramage-model"
MODEL_VERSION = 1

SVR_EPSILON = 0.1
SVM_TOL = 1e-3
SVM_MAX_PASSES = 10


# -- hyperparameters -------------------------------------------------------------

@dataclass(frozen=True)
class KNNParams:
    k: int = 100

    family = "knn"


@dataclass(frozen=True)
class SVMParams:
    c: float = 1.0
    gamma: float = 0.01

    family = "svm"


@dataclass(frozen=True)
class DTParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_features_per_split: int | None = None

    family = "dt"


@dataclass(frozen=True)
class RFParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_features_per_split: int | None = None
    num_trees: int = 100
    bootstrap: bool = True

    family = "rf"


HyperParams = Union[KNNParams, SVMParams, DTParams, RFParams]
PARAM_TYPES = {cls.family: cls for cls in (KNNParams, SVMParams, DTParams, RFParams)}
FAMILIES = tuple(PARAM_TYPES)


def params_to_dict(params: HyperParams) -> dict:
    return {"family": params.family, **asdict(params)}


def params_from_dict(doc: dict) -> HyperParams:
    doc = dict(doc)
    return PARAM_TYPES[doc.pop("family")](**doc)


# Search distributions. ``("int", lo, hi)`` is uniform over integers,
# ``("loguniform", lo, hi)`` is uniform in log space.
DEFAULT_SEARCH_SPACE = {
    "knn": {"k": ("int", 100, 2000)},
    "svm": {"c": ("loguniform", 1e-2, 1e3), "gamma": ("loguniform", 1e-4, 1e1)},
    "dt": {"max_depth": ("int", 2, 32), "min_samples_split": ("int", 2, 100),
           "min_features_per_split": ("int", 1, 56)},
    "rf": {"max_depth": ("int", 2, 32), "min_samples_split": ("int", 2, 100),
           "min_features_per_split": ("int", 1, 56), "num_trees": ("int", 10, 300)},
}


def sample_params(family: str, rng: np.random.Generator, space: dict | None = None) -> HyperParams:
    dists = {**DEFAULT_SEARCH_SPACE[family], **((space or {}).get(family, {}))}
    values = {}
    for name in sorted(dists):
        kind, lo, hi = dists[name]
        if kind == "int":
            values[name] = int(rng.integers(int(lo), int(hi) + 1))
        elif kind == "loguniform":
            values[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        elif kind == "uniform":
            values[name] = float(rng.uniform(lo, hi))
        else:
            raise InvalidArgumentError(f"unknown distribution {kind!r} for {family}.{name}")
    return PARAM_TYPES[family](**values)


# -- standardisation --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    constant_features: tuple = ()

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        const = tuple(int(i) for i in np.flatnonzero(~(std > 0)))
        if const:
            log.warning("features %s are constant in training data; using unit scale", list(const))
            std = np.where(std > 0, std, 1.0)
        return cls(mean, std, const)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "constant_features": list(self.constant_features)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   tuple(d.get("constant_features", ())))


# -- shared helpers ---------------------------------------------------------------

def vote(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Row-wise majority over integer labels; ties go to the lowest class."""
    labels = np.atleast_2d(labels)
    counts = np.zeros((labels.shape[0], num_classes), dtype=np.int64)
    rows = np.repeat(np.arange(labels.shape[0]), labels.shape[1])
    np.add.at(counts, (rows, labels.ravel()), 1)
    return counts.argmax(axis=1)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Exact pairwise squared Euclidean distances (no norm-expansion cancellation)."""
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, 4_000_000 // max(1, B.size))
    for r0 in range(0, A.shape[0], step):
        diff = A[r0:r0 + step, None, :] - B[None, :, :]
        out[r0:r0 + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def neighbor_order(Xq: np.ndarray, Xtrain: np.ndarray, k: int | None = None) -> np.ndarray:
    """Training indices sorted by distance for every query; ties keep training order."""
    d = squared_distances(Xq, Xtrain)
    order = np.argsort(d, axis=1, kind="stable")
    return order if k is None else order[:, :k]


def knn_from_order(order: np.ndarray, y: np.ndarray, k: int, task: str, num_classes: int = 0) -> np.ndarray:
    nb = y[order[:, :k]]
    if task == REGRESSION:
        return nb.mean(axis=1)
    return vote(nb.astype(np.int64), num_classes)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distances(A, B))


def _tree_seeds(seed: int, n: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# -- fitted model -----------------------------------------------------------------

@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.feature.shape[0]

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        leaves = _kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)
        return self.value[leaves]

    def predict(self, X: np.ndarray, task: str) -> np.ndarray:
        v = self.leaf_values(X)
        return v[:, 0] if task == REGRESSION else v.argmax(axis=1)

    def same_structure(self, other: "Tree") -> bool:
        return (np.array_equal(self.feature, other.feature) and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left) and np.array_equal(self.right, other.right))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], np.int64), np.array(d["threshold"], float),
                   np.array(d["left"], np.int64), np.array(d["right"], np.int64),
                   np.array(d["value"], float).reshape(len(d["feature"]), -1))


@dataclass(frozen=True)
class BinaryMachine:
    """One RBF machine: ``f(x) = sum(coef * K(sv, x)) - rho``."""

    support_vectors: np.ndarray
    coef: np.ndarray
    rho: float
    positive_class: int = -1
    negative_class: int = -1
    iterations: int = 0
    alpha: np.ndarray | None = None  # full dual vector, kept for diagnostics only

    def decision(self, X: np.ndarray, gamma: float) -> np.ndarray:
        if self.coef.size == 0:
            return np.full(X.shape[0], -self.rho)
        return rbf_kernel(X, self.support_vectors, gamma) @ self.coef - self.rho

    def to_dict(self):
        return {"support_vectors": self.support_vectors.tolist(), "coef": self.coef.tolist(),
                "rho": self.rho, "positive_class": self.positive_class,
                "negative_class": self.negative_class, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        sv = np.array(d["support_vectors"], float)
        return cls(sv.reshape(len(d["coef"]), -1) if sv.size else sv.reshape(0, 0),
                   np.array(d["coef"], float), float(d["rho"]), int(d["positive_class"]),
                   int(d["negative_class"]), int(d.get("iterations", 0)))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    params: HyperParams
    task: str
    num_classes: int
    standardizer: Standardizer
    num_features: int
    payload: dict = field(repr=False)
    schema_digest: str | None = None

    @property
    def family(self) -> str:
        return self.params.family

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        p = self.payload
        if self.family == "knn":
            body = {"X": p["X"].tolist(), "y": p["y"].tolist(), "k": p["k"]}
        elif self.family == "svm":
            body = {"machines": [m.to_dict() for m in p["machines"]]}
        else:
            body = {"trees": [t.to_dict() for t in p["trees"]]}
        return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "params": params_to_dict(self.params),
                "task": self.task, "num_classes": self.num_classes, "num_features": self.num_features,
                "schema_digest": self.schema_digest, "standardizer": self.standardizer.to_dict(),
                "fitted": body}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise SchemaMismatchError("not a supported model document")
        params = params_from_dict(doc["params"])
        body = doc["fitted"]
        if params.family == "knn":
            payload = {"X": np.array(body["X"], float).reshape(-1, doc["num_features"]),
                       "y": np.array(body["y"], float), "k": int(body["k"])}
        elif params.family == "svm":
            payload = {"machines": [BinaryMachine.from_dict(m) for m in body["machines"]]}
        else:
            payload = {"trees": [Tree.from_dict(t) for t in body["trees"]]}
        return cls(params, doc["task"], int(doc["num_classes"]), Standardizer.from_dict(doc["standardizer"]),
                   int(doc["num_features"]), payload, doc.get("schema_digest"))

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))


# -- fitting ----------------------------------------------------------------------

def _check_xy(X, y, task, num_classes):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise InvalidArgumentError(f"X ({X.shape}) and y ({y.shape}) do not align")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise InvalidArgumentError("inputs contain non-finite values")
    if task not in TASKS:
        raise InvalidArgumentError(f"task must be one of {TASKS}")
    if task == CLASSIFICATION:
        if num_classes < 2:
            raise InvalidArgumentError("classification needs num_classes >= 2")
        if (y != np.round(y)).any() or y.min() < 0 or y.max() >= num_classes:
            raise InvalidArgumentError(f"class labels must be integers in [0, {num_classes})")
        if np.unique(y).size < 2:
            raise InvalidArgumentError("training labels contain a single class")
    return X, y


def svm_max_iter(n: int, max_passes: int = SVM_MAX_PASSES) -> int:
    return max_passes * n * n


def solve_binary_svc(K: np.ndarray, y_pm: np.ndarray, c: float, tol: float = SVM_TOL,
                     max_iter: int | None = None):
    """Soft-margin dual for labels in {+1, -1}; returns ``(alpha, rho, iterations)``."""
    n = y_pm.size
    idx = np.arange(n, dtype=np.int64)
    max_iter = svm_max_iter(n) if max_iter is None else max_iter
    alpha, rho, it, gap = _kernels.smo_solve(K, idx, y_pm.astype(float), -np.ones(n), float(c), tol, max_iter)
    if gap >= tol:
        raise ConvergenceError(f"SVC solver stopped after {it} iterations with KKT gap {gap:.3g}")
    return alpha, rho, it


def solve_svr(K: np.ndarray, z: np.ndarray, c: float, epsilon: float = SVR_EPSILON,
              tol: float = SVM_TOL, max_iter: int | None = None):
    """epsilon-insensitive regression dual; returns ``(coef, rho, iterations)``."""
    n = z.size
    idx = np.concatenate([np.arange(n), np.arange(n)]).astype(np.int64)
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - z, epsilon + z])
    max_iter = svm_max_iter(2 * n) if max_iter is None else max_iter
    alpha, rho, it, gap = _kernels.smo_solve(K, idx, y, p, float(c), tol, max_iter)
    if gap >= tol:
        raise ConvergenceError(f"SVR solver stopped after {it} iterations with KKT gap {gap:.3g}")
    return alpha[:n] - alpha[n:], rho, it


def _fit_svm(params: SVMParams, task, num_classes, Xs, y):
    if params.c <= 0 or params.gamma <= 0:
        raise InvalidArgumentError("SVM needs positive c and gamma")
    K = rbf_kernel(Xs, Xs, params.gamma)
    machines = []
    if task == REGRESSION:
        coef, rho, it = solve_svr(K, y, params.c)
        nz = np.flatnonzero(coef != 0)
        machines.append(BinaryMachine(Xs[nz], coef[nz], rho, iterations=it))
        return {"machines": machines}
    labels = y.astype(np.int64)
    present = np.unique(labels)
    for a_pos, a in enumerate(present):
        for b in present[a_pos + 1:]:
            rows = np.flatnonzero((labels == a) | (labels == b))
            y_pm = np.where(labels[rows] == a, 1.0, -1.0)
            alpha, rho, it = solve_binary_svc(K[np.ix_(rows, rows)], y_pm, params.c)
            nz = np.flatnonzero(alpha > 0)
            machines.append(BinaryMachine(Xs[rows[nz]], alpha[nz] * y_pm[nz], rho, int(a), int(b), it, alpha))
    return {"machines": machines}


def _grow(Xs, y, rows, task, num_classes, max_depth, min_samples_split, n_sub, rng):
    n_cls = num_classes if task == CLASSIFICATION else 0
    keys = rng.random((2 * rows.size + 1, Xs.shape[1]))
    f, t, l, r, v = _kernels.build_tree(Xs, y, rows.astype(np.int64).copy(), n_cls,
                                        -1 if max_depth is None else int(max_depth),
                                        int(min_samples_split), int(n_sub), keys)
    return Tree(f, t, l, r, v)


def _n_sub(params, p):
    m = params.min_features_per_split
    return p if m is None else int(min(max(1, m), p))


def _fit_trees(params, task, num_classes, Xs, y, seed):
    n = y.size
    if isinstance(params, DTParams):
        rngs = _tree_seeds(seed, 1)
        bootstrap = False
    else:
        if params.num_trees < 1:
            raise InvalidArgumentError("num_trees must be >= 1")
        rngs = _tree_seeds(seed, params.num_trees)
        bootstrap = params.bootstrap
    trees = []
    for rng in rngs:
        rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(_grow(Xs, y, rows, task, num_classes, params.max_depth, params.min_samples_split,
                           _n_sub(params, Xs.shape[1]), rng))
    return {"trees": trees}


def fit(params: HyperParams, task: str, X, y, seed: int = 0, num_classes: int = 0,
        schema_digest: str | None = None) -> TrainedModel:
    """Standardise ``X`` and train the learner described by ``params``."""
    X, y = _check_xy(X, y, task, num_classes)
    if task == REGRESSION:
        num_classes = 0
    std = Standardizer.fit(X)
    Xs = std.transform(X)
    if isinstance(params, KNNParams):
        if params.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        payload = {"X": Xs, "y": y, "k": int(min(params.k, y.size))}
    elif isinstance(params, SVMParams):
        payload = _fit_svm(params, task, num_classes, Xs, y)
    elif isinstance(params, (DTParams, RFParams)):
        if params.min_samples_split < 2:
            raise InvalidArgumentError("min_samples_split must be >= 2")
        payload = _fit_trees(params, task, num_classes, Xs, y, seed)
    else:
        raise InvalidArgumentError(f"unknown hyperparameter type {type(params).__name__}")
    return TrainedModel(params, task, num_classes, std, X.shape[1], payload, schema_digest)


def predict(model: TrainedModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.num_features:
        raise SchemaMismatchError(f"model expects {model.num_features} features, got {X.shape[1]}")
    Xs = model.standardizer.transform(X)
    p = model.payload
    if model.family == "knn":
        order = neighbor_order(Xs, p["X"], p["k"])
        return knn_from_order(order, p["y"], p["k"], model.task, model.num_classes)
    if model.family == "svm":
        gamma = model.params.gamma
        if model.task == REGRESSION:
            return p["machines"][0].decision(Xs, gamma)
        votes = np.empty((Xs.shape[0], len(p["machines"])), dtype=np.int64)
        for j, m in enumerate(p["machines"]):
            votes[:, j] = np.where(m.decision(Xs, gamma) > 0, m.positive_class, m.negative_class)
        return vote(votes, model.num_classes)
    trees = p["trees"]
    if model.task == REGRESSION:
        return np.mean([t.predict(Xs, REGRESSION) for t in trees], axis=0)
    votes = np.stack([t.predict(Xs, CLASSIFICATION) for t in trees], axis=1)
    return vote(votes, model.num_classes)

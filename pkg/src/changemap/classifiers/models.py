"""Per-cluster change classifiers and their training entry points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ..errors import ConfigError, TrainingError
from ..features import as_descriptors, min_distances
from .kernels import KernelParams, canonical_kernel, gram
from .platt import fit_platt, platt_probability
from .smo import DEFAULT_MAX_ITER, solve_dual

ClassifierKind = Literal["nn", "svm"]
CV_FOLDS = 5
# Plain logistic link on the decision value, used when no fit is oriented.
FALLBACK_PLATT = (-1.0, 0.0)


@dataclass(frozen=True)
class ClassifierConfig:
    """Hyperparameters shared by every cluster classifier of a map.

    ``gamma=None`` resolves to 1/D at training time.
    """

    kind: ClassifierKind = "svm"
    kernel: str = "rbf"
    gamma: float | None = None
    coef0: float = 0.0
    degree: int = 3
    C: float = 1.0
    tol: float = 1e-3
    sigma_d: float = 32.0
    folds: int = CV_FOLDS
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.kind not in ("nn", "svm"):
            raise ConfigError(f"unknown classifier {self.kind!r}")
        object.__setattr__(self, "kernel", canonical_kernel(self.kernel))
        if self.C <= 0 or self.tol <= 0 or self.sigma_d <= 0:
            raise ConfigError("C, tol and sigma_d must be positive")
        if self.folds < 2:
            raise ConfigError("need at least 2 cross-validation folds")

    def kernel_params(self, nbits: int) -> KernelParams:
        gamma = 1.0 / nbits if self.gamma is None else self.gamma
        return KernelParams(gamma, self.coef0, self.degree)


@dataclass(frozen=True, eq=False)
class NNClassifier:
    negatives: np.ndarray = field(repr=False)
    sigma_d: float = 32.0

    def __post_init__(self):
        neg = as_descriptors(self.negatives)
        if len(neg) == 0:
            raise TrainingError("NN classifier needs at least one negative")
        if self.sigma_d <= 0:
            raise ConfigError("sigma_d must be positive")
        object.__setattr__(self, "negatives", neg)

    def distance(self, queries: np.ndarray) -> np.ndarray:
        return min_distances(queries, self.negatives)[0]

    def predict_change_prob(self, queries: np.ndarray) -> np.ndarray:
        d = self.distance(queries).astype(np.float64)
        return 1.0 - np.exp(-(d * d) / (self.sigma_d * self.sigma_d))


@dataclass(frozen=True, eq=False)
class SVMClassifier:
    kernel: str
    params: KernelParams
    support_vectors: np.ndarray = field(repr=False)
    dual_coef: np.ndarray = field(repr=False)  # alpha_i * y_i, support-vector order
    bias: float
    C: float
    platt_A: float
    platt_B: float
    # Full training state, kept for diagnostics (KKT checks).
    alpha: np.ndarray = field(repr=False, default=None)
    labels: np.ndarray = field(repr=False, default=None)
    iterations: int = 0

    def decision_function(self, queries: np.ndarray) -> np.ndarray:
        queries = as_descriptors(queries)
        if len(self.support_vectors) == 0:
            return np.full(len(queries), self.bias)
        K = gram(self.kernel, self.params, queries, self.support_vectors)
        return K @ self.dual_coef + self.bias

    def predict_change_prob(self, queries: np.ndarray) -> np.ndarray:
        return platt_probability(self.decision_function(queries), self.platt_A, self.platt_B)


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per example; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=np.int64)
    rng = np.random.default_rng([seed, 0x706C6174])
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        perm = idx[rng.permutation(len(idx))]
        out[perm] = np.arange(len(perm)) % folds
    return out


def _fit_dual(K, y, C, tol, max_iter):
    return solve_dual(K, y, C, tol=tol, max_iter=max_iter)


def cross_validated_decisions(K: np.ndarray, y: np.ndarray, C: float, tol: float, folds: int,
                              seed: int, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Held-out decision values from a stratified k-fold split of ``K``."""
    fold = stratified_folds(y, folds, seed)
    dec = np.zeros(len(y))
    for k in range(folds):
        test = fold == k
        if not test.any():
            continue
        train = ~test
        ytr = y[train]
        npos, nneg = int((ytr > 0).sum()), int((ytr < 0).sum())
        if npos == 0 or nneg == 0:
            # One-class training fold: emit the label LIBSVM-style.
            dec[test] = 1.0 if npos else (-1.0 if nneg else 0.0)
            continue
        sol = _fit_dual(K[np.ix_(train, train)], ytr, C, tol, max_iter)
        dec[test] = K[np.ix_(test, train)] @ (sol.alpha * ytr) + sol.bias
    return dec


def train_svm(positives: np.ndarray, negatives: np.ndarray, kernel: str = "rbf",
              C: float = 1.0, tol: float = 1e-3, params: KernelParams | None = None,
              seed: int = 0, folds: int = CV_FOLDS,
              max_iter: int = DEFAULT_MAX_ITER) -> SVMClassifier:
    """Train a change (+1) vs no-change (-1) SVM and calibrate it.

    Training rows are positives followed by negatives, in the order given.
    """
    positives = as_descriptors(positives)
    negatives = as_descriptors(negatives)
    if len(positives) == 0 or len(negatives) == 0:
        raise TrainingError("SVM training needs both positive and negative examples")
    kernel = canonical_kernel(kernel)
    if params is None:
        params = KernelParams(gamma=1.0 / (positives.shape[1] * 8))
    X = np.concatenate([positives, negatives])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    K = gram(kernel, params, X, X)

    sol = _fit_dual(K, y, C, tol, max_iter)
    dec = cross_validated_decisions(K, y, C, tol, folds, seed, max_iter)
    A, B = fit_platt(dec, y)
    if not A < 0:
        # Held-out values carry no usable ranking signal (typical when a class
        # has only a handful of examples); calibrate on the training fit instead.
        A, B = fit_platt(K @ (sol.alpha * y) + sol.bias, y)
    if not A < 0:
        A, B = FALLBACK_PLATT

    sv = np.flatnonzero(sol.alpha > 0)
    return SVMClassifier(
        kernel=kernel, params=params, support_vectors=X[sv], dual_coef=(sol.alpha * y)[sv],
        bias=sol.bias, C=C, platt_A=A, platt_B=B, alpha=sol.alpha, labels=y,
        iterations=sol.iterations)


def train_classifier(positives: np.ndarray, negatives: np.ndarray, cfg: ClassifierConfig,
                     seed: int = 0) -> NNClassifier | SVMClassifier:
    """Build the configured classifier, falling back to NN when there are no positives."""
    positives = as_descriptors(positives)
    if cfg.kind == "nn" or len(positives) == 0:
        return NNClassifier(negatives, cfg.sigma_d)
    negatives = as_descriptors(negatives)
    return train_svm(positives, negatives, cfg.kernel, cfg.C, cfg.tol,
                     cfg.kernel_params(negatives.shape[1] * 8), seed, cfg.folds, cfg.max_iter)


def predict_change_prob(classifier: NNClassifier | SVMClassifier, queries: np.ndarray) -> np.ndarray:
    return classifier.predict_change_prob(queries)

"""Nearest-neighbour and kernel-SVM change classifiers."""

from .kernels import KERNELS, KernelParams, canonical_kernel, eval_kernel, gram
from .models import (
    ClassifierConfig,
    NNClassifier,
    SVMClassifier,
    cross_validated_decisions,
    predict_change_prob,
    stratified_folds,
    train_classifier,
    train_svm,
)
from .platt import fit_platt, platt_probability
from .smo import DualSolution, dual_objective, solve_dual

__all__ = [
    "KERNELS", "KernelParams", "canonical_kernel", "eval_kernel", "gram",
    "ClassifierConfig", "NNClassifier", "SVMClassifier", "cross_validated_decisions",
    "predict_change_prob", "stratified_folds", "train_classifier", "train_svm",
    "fit_platt", "platt_probability", "DualSolution", "dual_objective", "solve_dual",
]

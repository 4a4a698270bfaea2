"""Evaluation protocol: fold planning, classifiers, F1 metrics and neighborhood purity."""

from .folds import FoldPlan, stratified_session_kfold
from .forest import DecisionTree, ForestParams, RandomForest, gini, train_random_forest
from .metrics import ClassifierReport, confusion_matrix, f1_scores
from .mlp import MLPClassifier, MLPConfig, class_weights, count_trainables, mlp_trainables, train_mlp_classifier
from .neighbors import PurityCurve, cosine_distances, knn_class_probability, knn_classify, purity_curve
from .protocol import AblationResult, ProtocolConfig, arm_features, arm_modalities, labeled_records, run_ablation

__all__ = [
    "AblationResult", "ClassifierReport", "DecisionTree", "FoldPlan", "ForestParams", "MLPClassifier",
    "MLPConfig", "ProtocolConfig", "PurityCurve", "RandomForest", "arm_features", "arm_modalities",
    "class_weights", "confusion_matrix", "cosine_distances", "count_trainables", "f1_scores", "gini",
    "knn_class_probability", "knn_classify", "labeled_records", "mlp_trainables", "purity_curve",
    "run_ablation", "stratified_session_kfold", "train_mlp_classifier", "train_random_forest",
]

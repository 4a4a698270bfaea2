"""Cross-validated evaluation of one input representation ("arm").

Arms are a single modality (``"ip"``, ``"stats"``, ...), the raw
concatenation baseline (``"concat"``), all entity embeddings together
(``"entities"``), all quantities together (``"quantities"``) or the
autoencoder embeddings (``"mae"``).  Every arm reuses the same fold plan.
Labels listed in ``exclude_labels`` are left out of supervised evaluation
only; self-supervised stages may still consume them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..dataio.features import CONCAT_ORDER, QUANTITY_MODALITIES, FeaturePipeline
from ..dataio.records import ENTITY_MODALITIES, MODALITIES
from ..errors import ConfigError, DataError
from .folds import stratified_session_kfold
from .forest import ForestParams, train_random_forest
from .metrics import f1_scores
from .mlp import MLPConfig, train_mlp_classifier
from .neighbors import knn_classify

CLASSIFIERS = ("mlp", "rf", "knn")
GROUP_ARMS = {"concat": CONCAT_ORDER, "entities": ENTITY_MODALITIES, "quantities": QUANTITY_MODALITIES}


@dataclass
class ProtocolConfig:
    k: int = 5
    seed: int = 0
    classifier: str = "mlp"
    mlp: MLPConfig = field(default_factory=MLPConfig)
    forest: ForestParams = field(default_factory=ForestParams)
    knn_k: int = 7
    exclude_labels: tuple = ("unknown",)

    def __post_init__(self):
        if isinstance(self.mlp, dict):
            self.mlp = MLPConfig.from_dict(self.mlp)
        if isinstance(self.forest, dict):
            self.forest = ForestParams(**self.forest)
        self.exclude_labels = tuple(self.exclude_labels)
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        extra = set(obj) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown protocol fields: {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        out = asdict(self)
        out["mlp"] = self.mlp.to_dict()
        out["exclude_labels"] = list(self.exclude_labels)
        return out


@dataclass
class AblationResult:
    arm: str
    classifier: str
    input_dim: int
    folds: list  # ClassifierReport per fold
    fold_plan_digest: str

    @property
    def macro_f1(self):
        return float(np.mean([r.macro_f1 for r in self.folds]))

    @property
    def weighted_f1(self):
        return float(np.mean([r.weighted_f1 for r in self.folds]))

    @property
    def trainables(self):
        return self.folds[0].trainables if self.folds else None

    def to_dict(self):
        return {
            "arm": self.arm, "classifier": self.classifier, "input_dim": self.input_dim,
            "fold_plan": self.fold_plan_digest, "trainables": self.trainables,
            "macro_f1_mean": self.macro_f1, "weighted_f1_mean": self.weighted_f1,
            "macro_f1_std": float(np.std([r.macro_f1 for r in self.folds])),
            "folds": [r.to_dict() for r in self.folds],
        }


def arm_modalities(arm):
    if arm in MODALITIES:
        return (arm,)
    if arm in GROUP_ARMS:
        return GROUP_ARMS[arm]
    raise ConfigError(f"unknown ablation arm {arm!r}; expected a modality, "
                      f"{', '.join(sorted(GROUP_ARMS))} or mae")


def labeled_records(dataset, exclude_labels=("unknown",)):
    records = list(getattr(dataset, "records", dataset))
    return [r for r in records if r.label is not None and r.label not in exclude_labels]


def arm_features(arm, train, test, entity_matrices=None, embeddings=None):
    """``(X_train, X_test)`` for one fold; normalizers are fitted on ``train`` only."""
    if arm == "mae":
        if embeddings is None:
            raise ConfigError("the mae arm needs sample embeddings")
        row = {sid: i for i, sid in enumerate(embeddings.sample_ids)}
        missing = [r.sample_id for r in train + test if r.sample_id not in row]
        if missing:
            raise DataError(f"no embedding for sample {missing[0]!r}")
        pick = lambda recs: embeddings.matrix[[row[r.sample_id] for r in recs]]  # noqa: E731
        return pick(train), pick(test)
    mods = [m for m in arm_modalities(arm) if all(m in r.modalities() for r in train + test)]
    if not mods:
        raise DataError(f"no record set carries the modalities of arm {arm!r}")
    pipeline = FeaturePipeline.fit(train, mods, entity_matrices)
    return pipeline.concat(train, mods), pipeline.concat(test, mods)


def _fit_predict(protocol, X_train, y_train, X_test, classes, seed):
    if protocol.classifier == "mlp":
        clf, _ = train_mlp_classifier(X_train, y_train, protocol.mlp, seed, classes=classes)
        return clf.predict(X_test), clf.num_parameters()
    if protocol.classifier == "rf":
        params = ForestParams(**{**asdict(protocol.forest), "seed": seed})
        return train_random_forest(X_train, y_train, params).predict(X_test), None
    return knn_classify(X_train, y_train, X_test, protocol.knn_k), None


def run_ablation(dataset, arm, protocol=None, entity_matrices=None, embeddings=None, fold_plan=None):
    """Per-fold reports of ``protocol.classifier`` trained on ``arm`` features.

    Fold ``f`` trains with seed ``protocol.seed + f``.  The aggregate is the
    mean over folds.
    """
    protocol = protocol or ProtocolConfig()
    if arm != "mae":
        arm_modalities(arm)
    records = labeled_records(dataset, protocol.exclude_labels)
    if not records:
        raise DataError("no labeled records to evaluate")
    plan = fold_plan or stratified_session_kfold(records, protocol.k, protocol.seed)
    classes = sorted({r.label for r in records})
    ids = [r.sample_id for r in records]
    reports, dim = [], None
    for fold in range(plan.k):
        train_mask, test_mask = plan.split(ids, fold)
        train = [r for r, keep in zip(records, train_mask) if keep]
        test = [r for r, keep in zip(records, test_mask) if keep]
        if not test or not train:
            continue
        X_train, X_test = arm_features(arm, train, test, entity_matrices, embeddings)
        dim = X_train.shape[1]
        pred, trainables = _fit_predict(protocol, X_train, [r.label for r in train], X_test, classes,
                                        protocol.seed + fold)
        reports.append(f1_scores(pred, [r.label for r in test], trainables))
    return AblationResult(arm, protocol.classifier, dim, reports, plan.digest())

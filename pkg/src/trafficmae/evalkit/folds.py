"""Session-aware stratified k-fold planning."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError

log = logging.getLogger(__name__)


@dataclass
class FoldPlan:
    k: int
    assignments: dict  # sample_id -> fold index
    grouping: str = "session_id"
    warnings: list = field(default_factory=list)

    def fold_ids(self, fold):
        return [sid for sid, f in self.assignments.items() if f == fold]

    def split(self, sample_ids, fold):
        """Boolean ``(train, test)`` masks over ``sample_ids`` for held-out ``fold``."""
        folds = np.array([self.assignments[s] for s in sample_ids])
        return folds != fold, folds == fold

    def digest(self):
        text = json.dumps({"k": self.k, "assignments": self.assignments}, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def to_dict(self):
        return {"k": self.k, "grouping": self.grouping, "assignments": dict(self.assignments),
                "warnings": list(self.warnings)}


def stratified_session_kfold(records, k=5, seed=0):
    """Assign whole sessions to ``k`` folds, balancing each class greedily.

    Records without a session id form singleton groups, which reduces the
    plan to ordinary stratified k-fold.  A group takes the majority label of
    its members (ties to the lexically smallest).  Within each class the
    groups are shuffled by ``seed``, sorted by size (largest first) and each
    goes to the fold holding the fewest samples of that class, ties broken
    by fold total and then fold index.
    """
    records = list(getattr(records, "records", records))
    if k < 2:
        raise ArgumentError("k must be >= 2")
    if len(records) < k:
        raise ArgumentError(f"cannot split {len(records)} samples into {k} folds")
    members = defaultdict(list)
    for r in records:
        members[r.group].append(r)
    group_label = {}
    for g, rs in members.items():
        counts = Counter(str(r.label) for r in rs)
        group_label[g] = min(counts, key=lambda lab: (-counts[lab], lab))
    by_class = defaultdict(list)
    for g in sorted(members):
        by_class[group_label[g]].append(g)

    rng = np.random.default_rng(seed)
    fold_total = np.zeros(k, dtype=int)
    assignments, warnings = {}, []
    for label in sorted(by_class):
        groups = by_class[label]
        if len(groups) < k:
            msg = f"class {label!r} has {len(groups)} sessions for {k} folds"
            warnings.append(msg)
            log.warning(msg)
        groups = [groups[i] for i in rng.permutation(len(groups))]
        groups.sort(key=lambda g: -len(members[g]))
        class_count = np.zeros(k, dtype=int)
        for g in groups:
            fold = min(range(k), key=lambda f: (class_count[f], fold_total[f], f))
            size = len(members[g])
            class_count[fold] += size
            fold_total[fold] += size
            for r in members[g]:
                assignments[r.sample_id] = fold
    grouping = "session_id" if any(r.session_id is not None for r in records) else "sample_id"
    ordered = {r.sample_id: assignments[r.sample_id] for r in records}
    return FoldPlan(k, ordered, grouping, warnings)

"""Evaluation: confusion-matrix metrics, group-constrained splits, feature reports.

FPR treats legitimate as the negative class. Splits are assigned over connected
components of the bipartite (host, destination) graph so neither an infected
host nor a contacted server leaks between train and test.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .features import FEATURE_NAMES, N_FEATURES
from .forest import ModelArtifact, PairForestClassifier

NEGATIVE_CLASS = "legitimate"


def confusion_matrix(y_true: list[str], y_pred: list[str],
                     classes: list[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        cm[index[t], index[p]] += 1
    return cm


@dataclass
class EvalReport:
    classes: list[str]
    confusion: list[list[int]]
    per_class: dict[str, dict[str, float]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float
    fpr: float
    feature_importances: list[tuple[int, str, float]] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "classes": self.classes,
            "confusion": self.confusion,
            "per_class": self.per_class,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall,
                      "f1": self.macro_f1},
            "weighted": {"precision": self.weighted_precision,
                         "recall": self.weighted_recall, "f1": self.weighted_f1},
            "accuracy": self.accuracy,
            "fpr": self.fpr,
            "feature_importances": [[fid, name, imp]
                                    for fid, name, imp in self.feature_importances],
        }


def metrics_from_confusion(cm: np.ndarray, classes: list[str],
                           negative_class: str = NEGATIVE_CLASS) -> EvalReport:
    cm = np.asarray(cm, dtype=float)
    n = cm.sum()
    per_class: dict[str, dict[str, float]] = {}
    precisions, recalls, f1s, supports = [], [], [], []
    for i, cls in enumerate(classes):
        tp = cm[i, i]
        support = cm[i].sum()
        predicted = cm[:, i].sum()
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / support if support > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class[cls] = {"precision": precision, "recall": recall,
                          "f1": f1, "support": support}
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        supports.append(support)
    total_support = sum(supports)
    weights = [s / total_support if total_support else 0.0 for s in supports]
    fpr = 0.0
    if negative_class in classes:
        neg = classes.index(negative_class)
        neg_total = cm[neg].sum()
        fpr = (neg_total - cm[neg, neg]) / neg_total if neg_total > 0 else 0.0
    return EvalReport(
        classes=list(classes),
        confusion=[[int(v) for v in row] for row in cm],
        per_class=per_class,
        macro_precision=statistics.fmean(precisions),
        macro_recall=statistics.fmean(recalls),
        macro_f1=statistics.fmean(f1s),
        weighted_precision=sum(w * p for w, p in zip(weights, precisions)),
        weighted_recall=sum(w * r for w, r in zip(weights, recalls)),
        weighted_f1=sum(w * f for w, f in zip(weights, f1s)),
        accuracy=float(np.trace(cm) / n) if n else 0.0,
        fpr=float(fpr),
    )


def evaluate(model: ModelArtifact, X, y_true: list[str],
             negative_class: str = NEGATIVE_CLASS) -> EvalReport:
    """Score a test set and compute the full report, importances included."""
    clf = PairForestClassifier.from_artifact(model)
    y_pred = clf.predict(X)
    classes = sorted(set(y_true) | set(model.class_set))
    report = metrics_from_confusion(confusion_matrix(y_true, y_pred, classes),
                                    classes, negative_class)
    importances = model.feature_importances()
    order = np.argsort(importances)[::-1]
    report.feature_importances = [(int(i) + 1, FEATURE_NAMES[int(i) + 1],
                                   float(importances[i]))
                                  for i in order if importances[i] > 0]
    return report


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def group_split(groups: list[tuple], test_fraction: float,
                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """70/30-style split over connected components of the host-destination graph.

    groups: one (host_key, destination) tuple per row. Returns boolean
    (train_mask, test_mask); every component lands wholly on one side.
    """
    uf = _UnionFind()
    for host, dest in groups:
        uf.union(("h", host), ("d", dest))
    comp_rows: dict = {}
    for row, (host, dest) in enumerate(groups):
        comp_rows.setdefault(uf.find(("h", host)), []).append(row)
    components = [comp_rows[k] for k in sorted(comp_rows, key=str)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(components))
    n = len(groups)
    target_train = round(n * (1.0 - test_fraction))
    train_mask = np.zeros(n, dtype=bool)
    assigned = 0
    for ci in order:
        rows = components[ci]
        if assigned < target_train:
            for r in rows:
                train_mask[r] = True
            assigned += len(rows)
    test_mask = ~train_mask
    if not test_mask.any() or not train_mask.any():
        # degenerate corpus: fall back to moving one component over
        first = components[order[0]]
        for r in first:
            train_mask[r] = not train_mask[r]
        test_mask = ~train_mask
    return train_mask, test_mask


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def feature_report(model: ModelArtifact, X, ttp_columns: dict[str, np.ndarray],
                   ) -> tuple[list[tuple[int, str, float]], dict[str, dict[int, float]]]:
    """Importance table plus feature-vs-TTP Pearson correlations (analysis only,
    never an input to detection)."""
    importances = model.feature_importances()
    order = np.argsort(importances)[::-1]
    table = [(int(i) + 1, FEATURE_NAMES[int(i) + 1], float(importances[i]))
             for i in order]
    X = np.asarray(X, dtype=float)
    correlations: dict[str, dict[int, float]] = {}
    for name, column in ttp_columns.items():
        correlations[name] = {fid: pearson(X[:, fid - 1], column)
                              for fid in range(1, N_FEATURES + 1)}
    return table, correlations

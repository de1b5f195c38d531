"""Ensemble of decision trees over the 102-slot feature space.

Trees are grown from bootstrap samples with a random feature subset per split
and Gini splitting. The trained model serializes to a self-describing JSON
file with its mode mask embedded, so the masked-feature audit can run on the
file alone and identical (data, seed) runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import DegenerateData, MaskMismatch
from .features import N_FEATURES, active_slots, mask_table, masked_slots

MODEL_SCHEMA = "pairflow.model.v1"


def check_matrix(X) -> np.ndarray:
    """Validate a feature matrix: 2-D, one column per slot, finite values."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise MaskMismatch(f"expected a 2-D matrix, got shape {X.shape}")
    if X.shape[1] != N_FEATURES:
        raise MaskMismatch(f"expected {N_FEATURES} feature columns, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise MaskMismatch("feature matrix contains non-finite values")
    return X


def check_labels(y, n_rows: int) -> list[str]:
    labels = [str(v) for v in y]
    if len(labels) != n_rows:
        raise MaskMismatch(f"{len(labels)} labels for {n_rows} rows")
    if len(set(labels)) < 2:
        raise DegenerateData("training data has fewer than two classes")
    return labels


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.dot(p, p))


def _best_split_block(Xs: np.ndarray, onehot: np.ndarray, weights: np.ndarray,
                      ) -> tuple[int, float, float]:
    """Best (column, threshold, weighted impurity) over a candidate-feature block.

    Xs is the node's (n, m) value block; all candidate columns are scored in
    one vectorized pass. Returns (-1, nan, inf) when nothing splits.
    """
    n, m = Xs.shape
    order = np.argsort(Xs, axis=0, kind="stable")
    v = np.take_along_axis(Xs, order, axis=0)
    w_oh = onehot * weights[:, None]
    left = np.cumsum(w_oh[order], axis=0)  # (n, m, k)
    total = left[-1]
    left_b = left[:-1]
    right_b = total[None, :, :] - left_b
    nl = left_b.sum(axis=2)
    nr = right_b.sum(axis=2)
    gl = 1.0 - (left_b ** 2).sum(axis=2) / np.maximum(nl, 1e-300) ** 2
    gr = 1.0 - (right_b ** 2).sum(axis=2) / np.maximum(nr, 1e-300) ** 2
    score = (nl * gl + nr * gr) / (nl + nr)
    score[v[1:] == v[:-1]] = math.inf  # no boundary between equal values
    flat = int(np.argmin(score))
    i, j = divmod(flat, m)
    if not math.isfinite(score[i, j]):
        return -1, math.nan, math.inf
    threshold = (v[i, j] + v[i + 1, j]) / 2.0
    return j, float(threshold), float(score[i, j])


class _TreeBuilder:
    def __init__(self, X, onehot, weights, columns, m_try, max_depth,
                 min_samples_split, rng):
        self.X = X
        self.onehot = onehot
        self.weights = weights
        self.columns = columns
        self.m_try = m_try
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.rng = rng
        self.nodes: list[dict] = []

    def run(self, idx: np.ndarray) -> list[dict]:
        # explicit preorder stack, left child expanded first
        stack: list[tuple[np.ndarray, int, int, str]] = [(idx, 0, -1, "")]
        while stack:
            node_idx, depth, parent, side = stack.pop()
            counts = (self.onehot[node_idx] * self.weights[node_idx][:, None]).sum(axis=0)
            node_id = len(self.nodes)
            node = {"f": -1, "t": 0.0, "l": -1, "r": -1,
                    "n": [float(c) for c in counts]}
            self.nodes.append(node)
            if parent >= 0:
                self.nodes[parent][side] = node_id
            depth_ok = self.max_depth is None or depth < self.max_depth
            if not (len(node_idx) >= self.min_samples_split and depth_ok
                    and np.count_nonzero(counts) > 1):
                continue
            # keep inspecting feature chunks until one admits a valid split
            perm = self.rng.permutation(self.columns)
            best_col, thr = -1, math.nan
            for at in range(0, len(perm), self.m_try):
                tried = perm[at:at + self.m_try]
                j, thr, score = _best_split_block(
                    self.X[np.ix_(node_idx, tried)], self.onehot[node_idx],
                    self.weights[node_idx])
                if j >= 0 and math.isfinite(score):
                    best_col = int(tried[j])
                    break
            if best_col < 0:
                continue
            mask = self.X[node_idx, best_col] < thr
            left_idx, right_idx = node_idx[mask], node_idx[~mask]
            if not len(left_idx) or not len(right_idx):
                continue
            node["f"] = best_col + 1  # stored as 1-based slot id
            node["t"] = float(thr)
            stack.append((right_idx, depth + 1, node_id, "r"))
            stack.append((left_idx, depth + 1, node_id, "l"))
        return self.nodes


@dataclass
class ModelArtifact:
    """Portable trained model: trees, mode mask and training metadata."""

    trees: list[list[dict]]
    n_trees: int
    mode: str
    feature_mask: list[bool]  # True = usable slot, index 0 is slot 1
    class_set: list[str]
    training_meta: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "mode": self.mode,
            "n_trees": self.n_trees,
            "feature_mask": self.feature_mask,
            "class_set": self.class_set,
            "mask_table": mask_table(),
            "training_meta": self.training_meta,
            "trees": self.trees,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_obj(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        with open(path) as fh:
            obj = json.load(fh)
        if obj.get("schema") != MODEL_SCHEMA:
            raise MaskMismatch(f"{path} is not a {MODEL_SCHEMA} file")
        return cls(trees=obj["trees"], n_trees=obj["n_trees"], mode=obj["mode"],
                   feature_mask=obj["feature_mask"], class_set=obj["class_set"],
                   training_meta=obj.get("training_meta", {}))

    def split_slots(self) -> set[int]:
        """Every slot id used by any split (static audit surface)."""
        used = set()
        for tree in self.trees:
            for node in tree:
                if node["f"] > 0:
                    used.add(node["f"])
        return used

    def feature_importances(self) -> np.ndarray:
        """Mean decrease in Gini impurity per slot, from stored node counts."""
        importances = np.zeros(N_FEATURES)
        for tree in self.trees:
            tree_imp = np.zeros(N_FEATURES)
            root_n = sum(tree[0]["n"]) if tree else 0.0
            if root_n <= 0:
                continue
            for node in tree:
                if node["f"] <= 0:
                    continue
                left, right = tree[node["l"]], tree[node["r"]]
                n_node = np.array(node["n"])
                n_l = np.array(left["n"])
                n_r = np.array(right["n"])
                drop = (n_node.sum() * _gini(n_node)
                        - n_l.sum() * _gini(n_l) - n_r.sum() * _gini(n_r))
                tree_imp[node["f"] - 1] += drop / root_n
            importances += tree_imp
        importances /= max(len(self.trees), 1)
        total = importances.sum()
        if total > 0:
            importances /= total
        return importances


def dataset_hash(X: np.ndarray, labels: list[str]) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update("\n".join(labels).encode())
    return h.hexdigest()[:16]


class PairForestClassifier(BaseEstimator, ClassifierMixin):
    """Random-forest-style classifier over 102-slot vectors with a mode mask.

    Splits only ever consider mask-active slots, so masked (absent) features
    cannot influence a prediction by construction. Deterministic for a fixed
    (data, seed, hyperparameters) triple.
    """

    def __init__(self, n_trees: int = 100, max_depth: Optional[int] = None,
                 min_samples_split: int = 2, mode: str = "http",
                 seed: int = 0, class_weight: Optional[str] = None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.mode = mode
        self.seed = seed
        self.class_weight = class_weight

    def fit(self, X, y) -> "PairForestClassifier":
        X = check_matrix(X)
        labels = check_labels(y, X.shape[0])
        self.classes_ = sorted(set(labels))
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.array([class_index[v] for v in labels])
        onehot = np.eye(len(self.classes_))[y_idx]
        if self.class_weight == "balanced":
            counts = np.bincount(y_idx, minlength=len(self.classes_))
            per_class = len(y_idx) / (len(self.classes_) * np.maximum(counts, 1))
            weights = per_class[y_idx]
        else:
            weights = np.ones(len(y_idx))
        columns = np.array([fid - 1 for fid in active_slots(self.mode)])
        m_try = max(1, int(math.sqrt(len(columns))))
        n = X.shape[0]
        trees = []
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        for seq in seeds:
            rng = np.random.default_rng(seq)
            sample = rng.integers(0, n, size=n)
            builder = _TreeBuilder(X, onehot, weights, columns, m_try,
                                   self.max_depth, self.min_samples_split, rng)
            trees.append(builder.run(sample))
        self.artifact_ = ModelArtifact(
            trees=trees, n_trees=self.n_trees, mode=self.mode,
            feature_mask=[fid not in masked_slots(self.mode)
                          for fid in range(1, N_FEATURES + 1)],
            class_set=self.classes_,
            training_meta={"seed": self.seed, "dataset_hash": dataset_hash(X, labels),
                           "date": None,
                           "hyperparams": {"n_trees": self.n_trees,
                                           "max_depth": self.max_depth,
                                           "min_samples_split": self.min_samples_split,
                                           "class_weight": self.class_weight}},
        )
        return self

    @classmethod
    def from_artifact(cls, artifact: ModelArtifact) -> "PairForestClassifier":
        meta = artifact.training_meta.get("hyperparams", {})
        clf = cls(n_trees=artifact.n_trees, mode=artifact.mode,
                  max_depth=meta.get("max_depth"),
                  min_samples_split=meta.get("min_samples_split", 2),
                  seed=artifact.training_meta.get("seed", 0),
                  class_weight=meta.get("class_weight"))
        clf.artifact_ = artifact
        clf.classes_ = list(artifact.class_set)
        return clf

    def _tree_proba(self, tree: list[dict], X: np.ndarray) -> np.ndarray:
        feats = np.array([node["f"] for node in tree])
        thresh = np.array([node["t"] for node in tree])
        left = np.array([node["l"] for node in tree])
        right = np.array([node["r"] for node in tree])
        counts = np.array([node["n"] for node in tree], dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        dist = np.where(totals > 0, counts / np.maximum(totals, 1e-300),
                        1.0 / counts.shape[1])
        pos = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            active = feats[pos] > 0
            if not active.any():
                break
            arows = rows[active]
            apos = pos[active]
            go_left = X[arows, feats[apos] - 1] < thresh[apos]
            pos[arows] = np.where(go_left, left[apos], right[apos])
        return dist[pos]

    def predict_proba(self, X) -> np.ndarray:
        X = check_matrix(X)
        acc = np.zeros((X.shape[0], len(self.classes_)))
        for tree in self.artifact_.trees:
            acc += self._tree_proba(tree, X)
        return acc / len(self.artifact_.trees)

    def predict(self, X) -> list[str]:
        proba = self.predict_proba(X)
        return [self.classes_[i] for i in np.argmax(proba, axis=1)]


def train(X, y, mode: str = "http", hyperparams: Optional[dict] = None,
          seed: int = 0) -> ModelArtifact:
    """Train an ensemble and return its portable artifact."""
    params = dict(hyperparams or {})
    clf = PairForestClassifier(mode=mode, seed=seed, **params)
    clf.fit(X, y)
    return clf.artifact_


def predict(model: ModelArtifact, X) -> tuple[list[str], np.ndarray]:
    """(labels, per-class scores) for a batch; scores sum to 1 per row."""
    clf = PairForestClassifier.from_artifact(model)
    proba = clf.predict_proba(X)
    labels = [model.class_set[i] for i in np.argmax(proba, axis=1)]
    return labels, proba

"""CART decision trees and random forests over custody-level cohorts.

Greedy Gini induction with midpoint thresholds, bootstrap resampling, a
random feature subset per node, majority-vote prediction and
mean-decrease-in-impurity feature importance.  All tie-breaking is fixed:
equal-gain splits resolve to the earlier schema feature and then the lower
threshold, and equal vote counts resolve to the lower custody level, so a
given seed always reproduces the same model and predictions.
"""

from __future__ import annotations

import json
import math
import weakref
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Cohort, ValidationError, feature_matrix, level_vector
from .rng import substream

N_LEVELS = 5


def gini(class_counts) -> float:
    """Gini impurity 1 - sum(p_i^2); 0 for an empty or pure node."""
    counts = list(class_counts.values()) if hasattr(class_counts, "values") else list(class_counts)
    n = sum(counts)
    if n == 0:
        return 0.0
    if any(c < 0 for c in counts):
        raise ValidationError("class counts must be >= 0")
    sumsq = sum(c * c for c in counts)
    return 1.0 - sumsq / (n * n)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: int | str = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValidationError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        fps = self.features_per_split
        if not (fps == "sqrt" or (isinstance(fps, int) and fps >= 1)):
            raise ValidationError("features_per_split must be a positive count or 'sqrt'")

    def resolve_features_per_split(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        return min(self.features_per_split, n_features)


class TreeNode:
    """Internal node (variable, threshold, children) or leaf (class counts)."""

    __slots__ = ("variable", "threshold", "left", "right",
                 "n_samples", "impurity", "class_counts", "majority")

    def __init__(self, *, n_samples, impurity, variable=None, threshold=None,
                 left=None, right=None, class_counts=None, majority=None):
        self.variable = variable
        self.threshold = threshold
        self.left = left
        self.right = right
        self.n_samples = n_samples
        self.impurity = impurity
        self.class_counts = class_counts
        self.majority = majority

    @property
    def is_leaf(self) -> bool:
        return self.variable is None


@dataclass(frozen=True)
class DecisionTree:
    root: TreeNode
    feature_order: tuple


@dataclass(frozen=True)
class RandomForest:
    trees: tuple
    params: ForestParams
    feature_order: tuple
    schema_fingerprint: str


def _leaf(counts: np.ndarray) -> TreeNode:
    n = int(counts.sum())
    sumsq = int((counts.astype(np.int64) ** 2).sum())
    impurity = 0.0 if n == 0 else 1.0 - sumsq / (n * n)
    # ties toward the lower custody level: argmax returns the first maximum
    majority = int(np.argmax(counts)) + 1
    class_counts = {lvl + 1: int(c) for lvl, c in enumerate(counts) if c}
    return TreeNode(n_samples=n, impurity=impurity,
                    class_counts=class_counts, majority=majority)


def _best_split(X, onehot, idx, feature_order, k_budget, counts, constant):
    """Best (feature, threshold) by Gini decrease.

    Features are examined in feature_order until k_budget non-constant ones
    have been evaluated; constant columns do not count against the budget and
    are reported back so descendants can skip them.  Candidates are midpoints
    between consecutive distinct sorted values.  Ranking maximizes
    S = sumsq_left/n_left + sumsq_right/n_right, which orders identically to
    the weighted-Gini decrease; ties resolve to the earliest feature in
    schema order, then the lowest threshold.  Admissibility (the split
    strictly decreases weighted impurity) is decided in exact integer
    arithmetic, safe for node sizes up to ~3e4.
    """
    n = idx.size
    parent_sumsq = int((counts ** 2).sum())
    evaluated = 0
    best = None  # (score, feature, threshold)
    newly_constant = []
    for f in feature_order:
        if constant[f]:
            continue
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        if sv[0] == sv[-1]:
            newly_constant.append(f)
            continue
        evaluated += 1
        boundaries = np.nonzero(sv[1:] != sv[:-1])[0] + 1
        cum = np.cumsum(onehot[idx[order]], axis=0)
        left = cum[boundaries - 1]
        right = counts[np.newaxis, :] - left
        n_l = boundaries.astype(np.int64)
        n_r = n - n_l
        sumsq_l = np.einsum("ij,ij->i", left, left)
        sumsq_r = np.einsum("ij,ij->i", right, right)
        weighted = sumsq_l * n_r + sumsq_r * n_l
        admissible = weighted * n > parent_sumsq * (n_l * n_r)
        if admissible.any():
            score = np.where(admissible, sumsq_l / n_l + sumsq_r / n_r, -np.inf)
            j = int(np.argmax(score))  # first max: lowest threshold wins ties
            b = boundaries[j]
            candidate = (float(score[j]), int(f), float((sv[b - 1] + sv[b]) / 2.0))
            if best is None or (candidate[0] > best[0]) or (
                    candidate[0] == best[0] and candidate[1:] < best[1:]):
                best = candidate
        if evaluated >= k_budget:
            break
    return (None if best is None else (best[1], best[2])), newly_constant


def _grow(X, y, root_idx, params, rng, k_features, feature_names):
    """Grow a tree iteratively (preorder, left child first, matching the rng
    consumption order of a left-first recursive build)."""
    d = X.shape[1]
    onehot = np.zeros((X.shape[0], N_LEVELS), dtype=np.int64)
    onehot[np.arange(X.shape[0]), y] = 1
    holder: dict = {}
    stack = [(root_idx, 0, holder, "root", np.zeros(d, dtype=bool))]
    while stack:
        idx, depth, parent, side, constant = stack.pop()
        counts = np.bincount(y[idx], minlength=N_LEVELS).astype(np.int64)
        n = idx.size
        sumsq = int((counts ** 2).sum())
        pure = sumsq == n * n
        split = None
        if not (pure or n < params.min_samples_split
                or (params.max_depth is not None and depth >= params.max_depth)):
            # examine features in random order when subsetting, schema order
            # otherwise; known-constant columns never count against the budget
            order = rng.permutation(d) if k_features < d else range(d)
            split, newly_constant = _best_split(X, onehot, idx, order,
                                                k_features, counts, constant)
            if newly_constant:
                constant = constant.copy()
                constant[newly_constant] = True
        if split is None:
            node = _leaf(counts)
        else:
            f, threshold = split
            node = TreeNode(variable=feature_names[f], threshold=threshold,
                            n_samples=n, impurity=1.0 - sumsq / (n * n))
            mask = X[idx, f] <= threshold
            # push right first so the left subtree is built first
            stack.append((idx[~mask], depth + 1, node, "right", constant))
            stack.append((idx[mask], depth + 1, node, "left", constant))
        if side == "root":
            parent["root"] = node
        else:
            setattr(parent, side, node)
    return holder["root"]


def _train_tree_arrays(X, y, params, rng, feature_names) -> DecisionTree:
    if len(y) == 0:
        raise ValidationError("cannot train a tree on an empty cohort")
    k = params.resolve_features_per_split(X.shape[1])
    root = _grow(X, y, np.arange(len(y)), params, rng, k, feature_names)
    return DecisionTree(root=root, feature_order=tuple(feature_names))


def train_tree(cohort: Cohort, params: ForestParams, rng=None) -> DecisionTree:
    """Grow one CART tree on the full cohort (no bootstrap)."""
    if len(cohort) == 0:
        raise ValidationError("cannot train on an empty cohort")
    X = feature_matrix(cohort)
    y = (level_vector(cohort) - 1).astype(np.int64)
    if rng is None:
        rng = substream(params.seed, "tree", 0)
    return _train_tree_arrays(X, y, params, rng, cohort.schema.names)


def _build_one_tree(X, y, params, names, index: int) -> DecisionTree:
    rng = substream(params.seed, "tree", index)
    if params.bootstrap:
        sample = rng.integers(0, len(y), size=len(y))
        return _train_tree_arrays(X[sample], y[sample], params, rng, names)
    return _train_tree_arrays(X, y, params, rng, names)


def _build_tree_range(args) -> list:
    """Worker: build trees [lo, hi) and return them as serializable dicts."""
    X, y, params, names, lo, hi = args
    return [_node_to_dict(_build_one_tree(X, y, params, names, i).root)
            for i in range(lo, hi)]


def train_forest(cohort: Cohort, params: ForestParams, jobs: int = 1) -> RandomForest:
    """Train n_trees trees on bootstrap resamples (when params.bootstrap).

    Each tree draws from its own stream keyed by (seed, tree index), so the
    result is identical for any worker count (jobs > 1 fans the tree indices
    out over a process pool).
    """
    if len(cohort) == 0:
        raise ValidationError("cannot train on an empty cohort")
    X = feature_matrix(cohort)
    y = (level_vector(cohort) - 1).astype(np.int64)
    names = cohort.schema.names

    workers = max(1, min(jobs, params.n_trees))
    if workers > 1:
        bounds = np.linspace(0, params.n_trees, workers + 1).astype(int)
        chunks = [(X, y, params, names, int(lo), int(hi))
                  for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_build_tree_range, chunks))
        trees = tuple(DecisionTree(root=_node_from_dict(d), feature_order=tuple(names))
                      for part in parts for d in part)
    else:
        trees = tuple(_build_one_tree(X, y, params, names, i)
                      for i in range(params.n_trees))
    return RandomForest(trees=trees, params=params, feature_order=tuple(names),
                        schema_fingerprint=cohort.schema.fingerprint())


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


_COMPILED = weakref.WeakKeyDictionary()


def _compile_tree(tree: DecisionTree):
    """Flatten a tree into parallel arrays for vectorized routing."""
    index = {name: i for i, name in enumerate(tree.feature_order)}
    nodes = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        if not node.is_leaf:
            stack.append(node.right)
            stack.append(node.left)
    position = {id(node): i for i, node in enumerate(nodes)}
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.zeros(n, dtype=np.float64)
    left = np.zeros(n, dtype=np.int64)
    right = np.zeros(n, dtype=np.int64)
    value = np.zeros(n, dtype=np.int64)
    for i, node in enumerate(nodes):
        if node.is_leaf:
            value[i] = node.majority
        else:
            feature[i] = index[node.variable]
            threshold[i] = node.threshold
            left[i] = position[id(node.left)]
            right[i] = position[id(node.right)]
    return feature, threshold, left, right, value


def _tree_apply(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    compiled = _COMPILED.get(tree)
    if compiled is None:
        compiled = _compile_tree(tree)
        _COMPILED[tree] = compiled
    feature, threshold, left, right, value = compiled
    nodes = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        feats = feature[nodes]
        active = np.nonzero(feats >= 0)[0]
        if active.size == 0:
            break
        current = nodes[active]
        go_left = X[active, feats[active]] <= threshold[current]
        nodes[active] = np.where(go_left, left[current], right[current])
    return value[nodes]


def predict_matrix(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """Modal per-tree vote for each row; vote ties go to the lower level."""
    votes = np.zeros((X.shape[0], N_LEVELS), dtype=np.int64)
    for tree in forest.trees:
        levels = _tree_apply(tree, X)
        votes[np.arange(X.shape[0]), levels - 1] += 1
    return np.argmax(votes, axis=1) + 1


def record_vector(forest: RandomForest, record) -> np.ndarray:
    try:
        return np.asarray([record.values[n] for n in forest.feature_order], dtype=np.float64)
    except KeyError as exc:
        raise ValidationError(
            f"record lacks forest feature {exc.args[0]!r} (schema mismatch)"
        ) from None


def predict(forest: RandomForest, record) -> int:
    return int(predict_matrix(forest, record_vector(forest, record)[np.newaxis, :])[0])


def predict_cohort(forest: RandomForest, cohort: Cohort) -> np.ndarray:
    missing = [n for n in forest.feature_order if n not in cohort.schema.by_name]
    if missing:
        raise ValidationError(f"cohort lacks forest features {missing} (schema mismatch)")
    return predict_matrix(forest, feature_matrix(cohort, forest.feature_order))


def accuracy(forest: RandomForest, cohort: Cohort) -> float:
    if len(cohort) == 0:
        raise ValidationError("cannot evaluate accuracy on an empty cohort")
    return float(np.mean(predict_cohort(forest, cohort) == level_vector(cohort)))


# ---------------------------------------------------------------------------
# Feature importance
# ---------------------------------------------------------------------------


def _node_impurity(node: TreeNode) -> float:
    return node.impurity


def mdi_importance(forest: RandomForest) -> dict:
    """Mean decrease in impurity per variable, normalized to sum 1.

    Each internal node contributes its weighted impurity decrease
    (n*imp - n_left*imp_left - n_right*imp_right) / n_root to its split
    variable; contributions are averaged over trees.  A forest with no splits
    yields the all-zero (unnormalized) map.
    """
    totals = {name: 0.0 for name in forest.feature_order}
    for tree in forest.trees:
        n_root = tree.root.n_samples
        stack = [tree.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            decrease = (
                node.n_samples * node.impurity
                - node.left.n_samples * _node_impurity(node.left)
                - node.right.n_samples * _node_impurity(node.right)
            ) / n_root
            totals[node.variable] += decrease
            stack.append(node.left)
            stack.append(node.right)
    n_trees = len(forest.trees)
    averaged = {name: total / n_trees for name, total in totals.items()}
    grand = sum(averaged.values())
    if grand > 0:
        return {name: v / grand for name, v in averaged.items()}
    return averaged


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FOREST_FORMAT = "custodyaudit-forest"
_FOREST_VERSION = 1


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"counts": {str(k): v for k, v in node.class_counts.items()}}
    return {
        "var": node.variable,
        "thr": node.threshold,
        "n": node.n_samples,
        "imp": node.impurity,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "counts" in d:
        counts = np.zeros(N_LEVELS, dtype=np.int64)
        for k, v in d["counts"].items():
            counts[int(k) - 1] = v
        return _leaf(counts)
    return TreeNode(
        variable=d["var"], threshold=d["thr"], n_samples=d["n"], impurity=d["imp"],
        left=_node_from_dict(d["left"]), right=_node_from_dict(d["right"]),
    )


def forest_to_dict(forest: RandomForest) -> dict:
    p = forest.params
    return {
        "format": _FOREST_FORMAT,
        "version": _FOREST_VERSION,
        "params": {
            "n_trees": p.n_trees,
            "max_depth": p.max_depth,
            "min_samples_split": p.min_samples_split,
            "features_per_split": p.features_per_split,
            "bootstrap": p.bootstrap,
            "seed": p.seed,
        },
        "schema_fingerprint": forest.schema_fingerprint,
        "feature_order": list(forest.feature_order),
        "trees": [_node_to_dict(t.root) for t in forest.trees],
    }


def forest_from_dict(doc: dict) -> RandomForest:
    if doc.get("format") != _FOREST_FORMAT:
        raise ValidationError("not a serialized forest document")
    params = ForestParams(**doc["params"])
    order = tuple(doc["feature_order"])
    trees = tuple(DecisionTree(root=_node_from_dict(t), feature_order=order)
                  for t in doc["trees"])
    return RandomForest(trees=trees, params=params, feature_order=order,
                        schema_fingerprint=doc["schema_fingerprint"])


def save_forest(forest: RandomForest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh, sort_keys=True)


def load_forest(path, expected_fingerprint: str | None = None) -> RandomForest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    forest = forest_from_dict(doc)
    if expected_fingerprint is not None and forest.schema_fingerprint != expected_fingerprint:
        raise ValidationError(
            f"forest was trained on schema {forest.schema_fingerprint}, "
            f"expected {expected_fingerprint}"
        )
    return forest


# ---------------------------------------------------------------------------
# Train/test protocol
# ---------------------------------------------------------------------------


def stratified_split(cohort: Cohort, test_fraction: float = 0.2, seed: int = 0):
    """Split by custody level; returns (train, test) preserving record order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must be in (0, 1)")
    levels = level_vector(cohort)
    test_idx = []
    for level in sorted(set(levels.tolist())):
        rows = np.nonzero(levels == level)[0]
        rng = substream(seed, "split", int(level))
        perm = rng.permutation(rows.size)
        n_test = int(round(test_fraction * rows.size))
        test_idx.extend(rows[perm[:n_test]].tolist())
    test_set = set(test_idx)
    train_records = tuple(r for i, r in enumerate(cohort.records) if i not in test_set)
    test_records = tuple(r for i, r in enumerate(cohort.records) if i in test_set)
    return (Cohort(schema=cohort.schema, records=train_records),
            Cohort(schema=cohort.schema, records=test_records))

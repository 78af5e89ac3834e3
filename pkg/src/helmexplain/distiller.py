"""CART-style decision tree distillation of (state, behaviour) pairs.

The tree only ever sees feature vectors and behaviour labels; nothing about
the autonomy that produced them. Numeric features split on ``value < cutoff``
(cutoffs at midpoints between consecutive distinct training values); boolean
and categorical features split one-vs-rest on ``value == category``. The
left child always holds the records that satisfy the condition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .telemetry import (
    LABEL_INDEX,
    LABELS,
    BehaviourLabel,
    FeatureSchema,
    FeatureVector,
    TraceRecord,
    featurize,
)

TREE_FORMAT_VERSION = 1
THRESHOLD, EQUALITY = "threshold", "equality"

# Decreases closer than this are treated as ties so that the tie-break rule,
# not float noise, decides between equivalent splits.
_TIE_EPS = 1e-12


class SchemaMismatchError(ValueError):
    pass


class TreeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SplitCondition:
    feature: int
    kind: str
    value: float | str

    def __post_init__(self):
        if self.kind not in (THRESHOLD, EQUALITY):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.kind == THRESHOLD and not (isinstance(self.value, float) and math.isfinite(self.value)):
            raise ValueError("threshold cutoff must be a finite float")

    def goes_left(self, value) -> bool:
        if self.kind == THRESHOLD:
            return value < self.value
        return value == self.value


@dataclass(frozen=True)
class FitParams:
    max_depth: int | None = 12
    min_samples_leaf: int = 5
    min_impurity_decrease: float = 1e-7

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class Node:
    counts: tuple[int, ...]
    split: SplitCondition | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def label(self) -> BehaviourLabel:
        # ties resolve to the earlier label in enumeration order
        return LABELS[int(np.argmax(self.counts))]

    @property
    def confidence(self) -> float:
        return max(self.counts) / self.total


@dataclass(frozen=True)
class DecisionTree:
    nodes: tuple[Node, ...]
    schema: FeatureSchema
    root: int = 0

    def __post_init__(self):
        _check_structure(self)

    @property
    def fingerprint(self) -> str:
        return self.schema.fingerprint

    @property
    def depth(self) -> int:
        def walk(i):
            node = self.nodes[i]
            return 0 if node.is_leaf else 1 + max(walk(node.left), walk(node.right))
        return walk(self.root)

    @property
    def n_leaves(self) -> int:
        return sum(node.is_leaf for node in self.nodes)

    def leaf_for(self, fv: FeatureVector) -> int:
        check_fingerprint(self, fv)
        i = self.root
        node = self.nodes[i]
        while not node.is_leaf:
            i = node.left if node.split.goes_left(fv.values[node.split.feature]) else node.right
            node = self.nodes[i]
        return i


def _check_structure(tree: DecisionTree) -> None:
    n = len(tree.nodes)
    if n == 0:
        raise TreeFormatError("tree has no nodes")
    if not 0 <= tree.root < n:
        raise TreeFormatError(f"root index {tree.root} out of range")
    parents = [0] * n
    for i, node in enumerate(tree.nodes):
        if len(node.counts) != len(LABELS) or any(c < 0 for c in node.counts):
            raise TreeFormatError(f"node {i}: malformed label counts")
        if node.is_leaf:
            if node.left is not None or node.right is not None:
                raise TreeFormatError(f"node {i}: leaf with children")
            if sum(node.counts) == 0:
                raise TreeFormatError(f"node {i}: empty leaf distribution")
            continue
        if not 0 <= node.split.feature < len(tree.schema):
            raise TreeFormatError(f"node {i}: feature index out of schema bounds")
        spec = tree.schema[node.split.feature]
        if (node.split.kind == EQUALITY) != spec.is_equality:
            raise TreeFormatError(f"node {i}: split kind does not match feature {spec.name!r}")
        for child in (node.left, node.right):
            if child is None or not 0 <= child < n:
                raise TreeFormatError(f"node {i}: child index {child} out of range")
            parents[child] += 1
    if parents[tree.root] != 0:
        raise TreeFormatError("root has a parent (cycle)")
    for i in range(n):
        if i != tree.root and parents[i] != 1:
            raise TreeFormatError(f"node {i} has {parents[i]} parents (orphan or shared node)")
    # with single parents everywhere, reachability rules out detached cycles
    seen, stack = set(), [tree.root]
    while stack:
        i = stack.pop()
        seen.add(i)
        node = tree.nodes[i]
        if not node.is_leaf:
            stack.extend((node.left, node.right))
    if len(seen) != n:
        raise TreeFormatError("tree contains nodes unreachable from the root")


def check_fingerprint(tree: DecisionTree, fv: FeatureVector) -> None:
    if fv.fingerprint != tree.fingerprint:
        raise SchemaMismatchError(
            f"feature schema {fv.fingerprint} does not match tree schema {tree.fingerprint}"
        )


# -- impurity and split search ------------------------------------------------

def gini(counts) -> float:
    """Gini impurity ``1 - sum_k p_k**2`` of a label count vector or mapping."""
    if isinstance(counts, dict):
        counts = list(counts.values())
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if counts.size == 0 or total <= 0:
        raise ValueError("gini of an empty count vector")
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass
class Dataset:
    """Encoded training matrix.

    Categorical columns are stored as integer codes into ``categories[j]``,
    which is sorted so code order matches category order for tie-breaking.
    """

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    categories: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[FeatureVector, BehaviourLabel]]) -> "Dataset":
        if not samples:
            raise ValueError("no training samples")
        schema = samples[0][0].schema
        fp = schema.fingerprint
        for fv, _ in samples:
            if fv.fingerprint != fp:
                raise SchemaMismatchError("training samples do not share one feature schema")
        n, f = len(samples), len(schema)
        X = np.empty((n, f), dtype=float)
        categories = {}
        for j, spec in enumerate(schema):
            column = [fv.values[j] for fv, _ in samples]
            if spec.kind == "categorical":
                cats = tuple(sorted(set(column)))
                lookup = {c: k for k, c in enumerate(cats)}
                X[:, j] = [lookup[c] for c in column]
                categories[j] = cats
            else:
                X[:, j] = column
        y = np.array([LABEL_INDEX[BehaviourLabel(label)] for _, label in samples], dtype=np.intp)
        return cls(X, y, schema, categories)

    def decode(self, j: int, code: float):
        """Category value (or boolean float) for an encoded equality operand."""
        if j in self.categories:
            return self.categories[j][int(code)]
        return float(code)


def _class_counts(y: np.ndarray) -> np.ndarray:
    return np.bincount(y, minlength=len(LABELS))


def _weighted_child_impurity(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Sum of n_child * gini(child) for rows of left/right class-count arrays."""
    nl = left.sum(axis=-1)
    nr = right.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = nl - np.where(nl > 0, (left * left).sum(axis=-1) / nl, 0.0)
        gr = nr - np.where(nr > 0, (right * right).sum(axis=-1) / nr, 0.0)
    return gl + gr


@dataclass(frozen=True)
class SplitCandidate:
    condition: SplitCondition
    decrease: float
    code: float  # encoded operand (cutoff or category code) used on the matrix


def best_split(data: Dataset, params: FitParams = FitParams(), rows: np.ndarray | None = None):
    """Exhaustive search for the split with the largest weighted Gini decrease.

    Returns a ``SplitCandidate`` or None when no admissible split reaches
    ``params.min_impurity_decrease``. Ties go to the lowest feature index,
    then the smallest cutoff or category.
    """
    if rows is None:
        rows = np.arange(len(data))
    n = len(rows)
    if n < 2:
        return None
    y = data.y[rows]
    parent_counts = _class_counts(y).astype(float)
    parent_weighted = n - float(parent_counts @ parent_counts) / n
    if parent_weighted <= 0.0:
        return None
    min_leaf = params.min_samples_leaf
    n_classes = len(LABELS)

    best = None
    best_weighted = math.inf
    for j, spec in enumerate(data.schema):
        col = data.X[rows, j]
        if spec.is_equality:
            values = np.unique(col)
            if len(values) < 2:
                continue
            onehot = np.zeros((len(values), n_classes))
            idx = np.searchsorted(values, col)
            np.add.at(onehot, (idx, y), 1.0)
            right = parent_counts - onehot
            sizes = onehot.sum(axis=1)
            ok = (sizes >= min_leaf) & (n - sizes >= min_leaf)
            if not ok.any():
                continue
            weighted = _weighted_child_impurity(onehot, right)
            weighted[~ok] = math.inf
            k = int(np.argmin(weighted))
            operand = float(values[k])
            cond = SplitCondition(j, EQUALITY, data.decode(j, operand))
        else:
            order = np.argsort(col, kind="stable")
            sorted_col = col[order]
            onehot = np.zeros((n, n_classes))
            onehot[np.arange(n), y[order]] = 1.0
            left = np.cumsum(onehot, axis=0)[:-1]
            change = np.nonzero(sorted_col[:-1] != sorted_col[1:])[0]
            if change.size == 0:
                continue
            sizes = change + 1
            ok = (sizes >= min_leaf) & (n - sizes >= min_leaf)
            if not ok.any():
                continue
            change = change[ok]
            lc = left[change]
            weighted = _weighted_child_impurity(lc, parent_counts - lc)
            k = int(np.argmin(weighted))
            lo, hi = sorted_col[change[k]], sorted_col[change[k] + 1]
            operand = _midpoint(float(lo), float(hi))
            cond = SplitCondition(j, THRESHOLD, operand)
        # argmin returns the first minimum, i.e. the smallest cutoff/category
        w = float(weighted[k])
        if w < best_weighted - _TIE_EPS * max(1.0, n):
            best_weighted = w
            best = SplitCandidate(cond, (parent_weighted - w) / n, operand)
    if best is None or best.decrease < params.min_impurity_decrease:
        return None
    return best


def _midpoint(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2.0
    # adjacent floats: the midpoint can round onto lo, which would send lo right
    return mid if lo < mid <= hi else hi


def _partition(data: Dataset, rows: np.ndarray, cand: SplitCandidate):
    col = data.X[rows, cand.condition.feature]
    if cand.condition.kind == THRESHOLD:
        mask = col < cand.code
    else:
        mask = col == cand.code
    return rows[mask], rows[~mask]


def fit_tree(samples: Sequence[tuple[FeatureVector, BehaviourLabel]], params: FitParams = FitParams()) -> DecisionTree:
    """Grow a tree by recursive partitioning until no split qualifies."""
    data = samples if isinstance(samples, Dataset) else Dataset.from_samples(list(samples))
    nodes: list[Node | None] = []

    def build(rows: np.ndarray, depth: int) -> int:
        i = len(nodes)
        nodes.append(None)
        counts = tuple(int(c) for c in _class_counts(data.y[rows]))
        cand = None
        if params.max_depth is None or depth < params.max_depth:
            cand = best_split(data, params, rows)
        if cand is None:
            nodes[i] = Node(counts)
            return i
        left_rows, right_rows = _partition(data, rows, cand)
        left = build(left_rows, depth + 1)
        right = build(right_rows, depth + 1)
        nodes[i] = Node(counts, cand.condition, left, right)
        return i

    build(np.arange(len(data)), 0)
    return DecisionTree(tuple(nodes), data.schema, 0)


def predict(tree: DecisionTree, fv: FeatureVector) -> tuple[BehaviourLabel, float]:
    node = tree.nodes[tree.leaf_for(fv)]
    return node.label, node.confidence


def labelled_samples(records: Iterable[TraceRecord], schema: FeatureSchema) -> list[tuple[FeatureVector, BehaviourLabel]]:
    out = []
    for r in records:
        if r.behaviour is None:
            raise ValueError(f"record at t={r.state.t} carries no behaviour label")
        out.append((featurize(r.state, schema), r.behaviour))
    return out


def fidelity(tree: DecisionTree, samples: Sequence[tuple[FeatureVector, BehaviourLabel]]) -> float:
    """Fraction of samples whose predicted label equals the recorded one."""
    if not samples:
        raise ValueError("fidelity of an empty trace")
    hits = sum(predict(tree, fv)[0] == label for fv, label in samples)
    return hits / len(samples)


# -- serialization ------------------------------------------------------------

def tree_to_json(tree: DecisionTree) -> dict:
    nodes = []
    for i, node in enumerate(tree.nodes):
        entry = {"id": i, "counts": {l.value: c for l, c in zip(LABELS, node.counts) if c}}
        if node.is_leaf:
            entry["label"] = node.label.value
        else:
            entry.update(
                feature=node.split.feature,
                kind=node.split.kind,
                value=node.split.value,
                left=node.left,
                right=node.right,
            )
        nodes.append(entry)
    return {
        "version": TREE_FORMAT_VERSION,
        "schema": tree.schema.to_json(),
        "fingerprint": tree.fingerprint,
        "root": tree.root,
        "nodes": nodes,
    }


def serialize_tree(tree: DecisionTree) -> str:
    # json emits floats via repr, the shortest round-trip decimal form
    return json.dumps(tree_to_json(tree), indent=1, allow_nan=False)


def deserialize_tree(text: str) -> DecisionTree:
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise TreeFormatError(f"tree file is not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise TreeFormatError("tree file must hold a JSON object")
    if obj.get("version") != TREE_FORMAT_VERSION:
        raise TreeFormatError(f"unsupported tree format version {obj.get('version')!r}")
    try:
        schema = FeatureSchema.from_json(obj["schema"])
        if "fingerprint" in obj and obj["fingerprint"] != schema.fingerprint:
            raise TreeFormatError("schema fingerprint does not match schema")
        raw_nodes = sorted(obj["nodes"], key=lambda d: d["id"])
        if [d["id"] for d in raw_nodes] != list(range(len(raw_nodes))):
            raise TreeFormatError("node ids must be 0..n-1")
        nodes = []
        for d in raw_nodes:
            unknown = set(d["counts"]) - {l.value for l in LABELS}
            if unknown:
                raise TreeFormatError(f"unknown label in counts: {sorted(unknown)}")
            counts = tuple(int(d["counts"].get(l.value, 0)) for l in LABELS)
            if "feature" in d:
                value = d["value"]
                if d["kind"] == THRESHOLD:
                    value = float(value)
                split = SplitCondition(int(d["feature"]), d["kind"], value)
                nodes.append(Node(counts, split, int(d["left"]), int(d["right"])))
            else:
                node = Node(counts)
                if "label" in d and d["label"] != node.label.value:
                    raise TreeFormatError(f"node {d['id']}: stored label is not the majority label")
                nodes.append(node)
        return DecisionTree(tuple(nodes), schema, int(obj["root"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, TreeFormatError):
            raise
        raise TreeFormatError(f"malformed tree: {exc!r}") from None

"""Dataset ingestion, cost files, ensemble JSON, and a small Gini tree grower."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, SchemaError
from .forest import Dataset, Ensemble, Tree, TreeNode, finalize_tree

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "TrainParams",
    "load_dataset",
    "load_costs",
    "train_greedy_tree",
    "train_ensemble",
    "ensemble_to_dict",
    "ensemble_from_dict",
    "save_ensemble",
    "load_ensemble",
]


def load_dataset(path, label_col: int = -1, header: bool = False, delimiter: str = ",") -> Dataset:
    """Read a numeric CSV; labels are remapped to 0..M-1 in sorted order.

    The original-to-dense mapping is kept on ``Dataset.label_map``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    start = 1 if header else 0
    body = [(lineno + 1, r) for lineno, r in enumerate(rows) if lineno >= start and any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    width = len(body[0][1])
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    lc = label_col if label_col >= 0 else width + label_col
    if not 0 <= lc < width:
        raise DataError(f"{path}: label column {label_col} outside 0..{width - 1}")

    X = np.empty((len(body), width - 1))
    raw_labels = []
    for r, (lineno, row) in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
        j = 0
        for col, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise DataError(f"{path}:{lineno}: missing value in column {col}")
            if col == lc:
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: label {cell!r} in column {col} is not numeric") from None
                if value != int(value):
                    raise DataError(f"{path}:{lineno}: label {cell!r} in column {col} is not an integer")
                raw_labels.append(int(value))
                continue
            try:
                X[r, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} in column {col}") from None
            if not np.isfinite(X[r, j]):
                raise DataError(f"{path}:{lineno}: non-finite value in column {col}")
            j += 1

    classes = sorted(set(raw_labels))
    label_map = {c: m for m, c in enumerate(classes)}
    y = np.array([label_map[v] for v in raw_labels], dtype=np.int64)
    log.info("loaded %s: N=%d K=%d M=%d labels=%s", path, X.shape[0], X.shape[1], len(classes), label_map)
    return Dataset(X, y, len(classes), label_map)


def load_costs(path, n_features: int) -> np.ndarray:
    """One nonnegative decimal per line; a missing path means unit costs."""
    if path is None:
        return np.ones(n_features)
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    try:
        costs = np.array([float(v) for v in lines])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(costs) != n_features:
        raise DataError(f"{path}: {len(costs)} costs for {n_features} features")
    if np.any(costs < 0) or not np.all(np.isfinite(costs)):
        raise DataError(f"{path}: costs must be finite and nonnegative")
    return costs


@dataclass(frozen=True)
class TrainParams:
    max_depth: int = 4
    min_leaf: int = 1
    subsample_fraction: float = 1.0
    rng_seed: int = 0
    max_features: int | None = None

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")


def _gini(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
    return np.where(n > 0, 1.0 - (p * p).sum(axis=-1), 0.0)


def _best_split(X, y, n_classes, features, min_leaf):
    """Lowest weighted Gini split over ``features``; ties keep the earliest."""
    n = len(y)
    best = None
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    for k in features:
        order = np.argsort(X[:, k], kind="stable")
        xs = X[order, k]
        cum = np.cumsum(onehot[order], axis=0)
        left = cum[:-1]
        right = cum[-1] - left
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        score = (nl * _gini(left) + (n - nl) * _gini(right)) / n
        score = np.where(valid, score, np.inf)
        j = int(np.argmin(score))
        if best is None or score[j] < best[0] - 1e-12:
            best = (float(score[j]), k, 0.5 * (xs[j] + xs[j + 1]))
    return best


def train_greedy_tree(data: Dataset, params: TrainParams) -> Tree:
    """Grow one Gini tree on a seeded subsample (no cost weighting)."""
    if params.min_leaf > data.n_examples:
        raise DataError(f"min_leaf={params.min_leaf} exceeds N={data.n_examples}")
    rng = np.random.default_rng(params.rng_seed)
    n_sub = max(params.min_leaf, int(round(params.subsample_fraction * data.n_examples)))
    idx = np.sort(rng.choice(data.n_examples, size=n_sub, replace=False))
    X, y = data.X[idx], data.y[idx]
    M = data.n_classes

    nodes: list[TreeNode] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        h = len(nodes)
        counts = tuple(int(c) for c in np.bincount(y[rows], minlength=M))
        nodes.append(TreeNode(id=h, class_counts=counts))
        if depth >= params.max_depth or len(rows) < 2 * params.min_leaf or max(counts) == len(rows):
            return h
        feats = rng.permutation(data.n_features)
        if params.max_features is not None:
            feats = feats[: params.max_features]
        split = _best_split(X[rows], y[rows], M, feats, params.min_leaf)
        if split is None or split[0] >= _gini(np.array(counts))[()] - 1e-12:
            return h
        _, k, tau = split
        go_left = X[rows, k] <= tau
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        nodes[h] = TreeNode(id=h, feature=int(k), thresholds=(float(tau),), children=(left, right), class_counts=counts)
        return h

    grow(np.arange(len(y)), 0)
    return finalize_tree(nodes, M)


def train_ensemble(data: Dataset, n_trees: int, params: TrainParams, feature_costs=None) -> Ensemble:
    """Independent trees; tree ``t`` is seeded with ``params.rng_seed + t``."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    trees = []
    for t in range(n_trees):
        p = TrainParams(params.max_depth, params.min_leaf, params.subsample_fraction, params.rng_seed + t, params.max_features)
        trees.append(train_greedy_tree(data, p))
    costs = np.ones(data.n_features) if feature_costs is None else feature_costs
    return Ensemble(trees, costs, data.n_classes)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        thr = None
    elif len(node.thresholds) == 1:
        thr = node.thresholds[0]
    else:
        thr = list(node.thresholds)
    return {
        "id": node.id,
        "feature": node.feature,
        "threshold": thr,
        "children": list(node.children),
        "class_counts": list(node.class_counts),
    }


def ensemble_to_dict(ens: Ensemble, source_ids: Sequence[Sequence[int]] | None = None) -> dict:
    trees = []
    for t, tree in enumerate(ens.trees):
        doc = {"nodes": [_node_to_dict(n) for n in tree.nodes]}
        if source_ids is not None:
            doc["source_ids"] = [int(v) for v in source_ids[t]]
        trees.append(doc)
    return {"feature_costs": [float(c) for c in ens.feature_costs], "n_classes": ens.n_classes, "trees": trees}


def _parse_node(t: int, pos: int, raw) -> TreeNode:
    where = f"tree {t} node {pos}"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: expected an object")
    try:
        nid = raw["id"]
        feature = raw.get("feature")
        thr = raw.get("threshold")
        children = raw.get("children", [])
        counts = raw.get("class_counts", [])
    except KeyError as exc:
        raise SchemaError(f"{where}: missing field {exc}") from None
    if not isinstance(nid, int) or isinstance(nid, bool):
        raise SchemaError(f"{where}: id must be an integer")
    if not isinstance(children, list) or not all(isinstance(c, int) for c in children):
        raise SchemaError(f"{where} (id {nid}): children must be a list of integers")
    for c in children:
        if c <= nid:
            raise SchemaError(f"{where} (id {nid}): child id {c} is not greater than parent id")
    if feature is not None and (not isinstance(feature, int) or isinstance(feature, bool)):
        raise SchemaError(f"{where} (id {nid}): feature must be an integer or null")
    if thr is None:
        thresholds: tuple[float, ...] = ()
    elif isinstance(thr, (int, float)):
        thresholds = (float(thr),)
    elif isinstance(thr, list):
        thresholds = tuple(float(v) for v in thr)
    else:
        raise SchemaError(f"{where} (id {nid}): bad threshold {thr!r}")
    if not all(isinstance(c, int) and c >= 0 for c in counts):
        raise SchemaError(f"{where} (id {nid}): class_counts must be nonnegative integers")
    return TreeNode(id=nid, feature=feature, thresholds=thresholds, children=tuple(children), class_counts=tuple(counts))


def ensemble_from_dict(doc: dict) -> Ensemble:
    if not isinstance(doc, dict) or "trees" not in doc:
        raise SchemaError("ensemble document needs a 'trees' list")
    raw_trees = doc["trees"]
    if not isinstance(raw_trees, list) or not raw_trees:
        raise SchemaError("ensemble must contain at least one tree")
    n_classes = doc.get("n_classes")
    if n_classes is None:
        n_classes = max(
            [len(n.get("class_counts", [])) for tr in raw_trees for n in tr.get("nodes", [])] + [1]
        )
    trees = []
    for t, raw in enumerate(raw_trees):
        nodes_raw = raw.get("nodes") if isinstance(raw, dict) else None
        if not isinstance(nodes_raw, list) or not nodes_raw:
            raise SchemaError(f"tree {t}: needs a nonempty 'nodes' list")
        nodes = [_parse_node(t, pos, n) for pos, n in enumerate(nodes_raw)]
        n_nodes = len(nodes)
        for n in nodes:
            for c in n.children:
                if c >= n_nodes:
                    raise SchemaError(f"tree {t} node {n.id}: dangling child reference {c}")
        try:
            trees.append(finalize_tree(nodes, n_classes))
        except SchemaError as exc:
            raise SchemaError(f"tree {t}: {exc}") from None
    costs = doc.get("feature_costs")
    if costs is None:
        costs = np.ones(1 + max(tree.max_feature for tree in trees))
    return Ensemble(trees, costs, n_classes)


def save_ensemble(ens: Ensemble, path, source_ids=None) -> None:
    text = json.dumps(ensemble_to_dict(ens, source_ids), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_ensemble(path) -> Ensemble:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return ensemble_from_dict(doc)

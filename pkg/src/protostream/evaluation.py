"""Clustering-accuracy evaluation: optimal assignment, Strict and Greedy
protocols with top-k cluster retention, and a sign-quantization hash
baseline for category-explosion comparison.

Predicted cluster ids are opaque labels; accuracies are invariant under any
bijective relabeling. Retention keeps the |Y_Q| largest clusters and treats
everything else as permanently misclassified, counted in all denominators.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import EngineError

DISCARDED = -1  # cluster id assigned to samples dropped by retention


class EmptyMatrix(EngineError):
    pass


@dataclass
class EvalReport:
    acc_all: float
    acc_old: float | None
    acc_new: float | None
    protocol: str  # "strict" or "greedy"
    num_clusters_raw: int
    num_clusters_retained: int
    ndc: int


def hungarian(profit: np.ndarray):
    """Maximum-profit one-to-one assignment on a (possibly rectangular) matrix.

    Returns (row_indices, col_indices, total_profit). Unmatched rows or
    columns of the longer side are simply left out, which is equivalent to
    padding with zero-profit entries.
    """
    profit = np.asarray(profit)
    if profit.size == 0:
        raise EmptyMatrix("hungarian on an empty profit matrix")
    rows, cols = linear_sum_assignment(profit, maximize=True)
    return rows, cols, profit[rows, cols].sum()


def retain_top_clusters(cluster_ids: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest clusters (ties to the lower id); mark the rest DISCARDED."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cluster_ids = np.asarray(cluster_ids)
    sizes = Counter(cluster_ids.tolist())
    kept = {cid for cid, _ in sorted(sizes.items(), key=lambda it: (-it[1], it[0]))[:k]}
    return np.where(np.isin(cluster_ids, list(kept)), cluster_ids, DISCARDED)


def _contingency(labels: np.ndarray, clusters: np.ndarray):
    """Co-occurrence counts over retained samples; returns (counts, classes, cluster_ids)."""
    keep = clusters != DISCARDED
    classes = np.unique(labels)
    cluster_ids = np.unique(clusters[keep])
    if cluster_ids.size == 0:
        return np.zeros((classes.size, 0), dtype=np.int64), classes, cluster_ids
    class_pos = {c: i for i, c in enumerate(classes.tolist())}
    cluster_pos = {c: i for i, c in enumerate(cluster_ids.tolist())}
    counts = np.zeros((classes.size, cluster_ids.size), dtype=np.int64)
    for y, c in zip(labels[keep].tolist(), clusters[keep].tolist()):
        counts[class_pos[y], cluster_pos[c]] += 1
    return counts, classes, cluster_ids


def _match_map(labels: np.ndarray, clusters: np.ndarray) -> dict:
    """Optimal cluster -> class map by Hungarian matching on the contingency table."""
    counts, classes, cluster_ids = _contingency(labels, clusters)
    if counts.size == 0:
        return {}
    rows, cols, _ = hungarian(counts)
    return {int(cluster_ids[c]): int(classes[r]) for r, c in zip(rows, cols)}


def _subset_acc(correct: np.ndarray, mask: np.ndarray) -> float | None:
    n = int(mask.sum())
    if n == 0:
        return None
    return float(correct[mask].sum() / n)


def strict_accuracy(cluster_ids, labels, known_classes, ndc: int = 0) -> EvalReport:
    """One global Hungarian matching over the whole query set.

    Old and New accuracies reuse the global matching, so a cluster can
    serve at most one true class across the subsets.
    """
    clusters = np.asarray(cluster_ids)
    labels = np.asarray(labels)
    known = set(int(c) for c in known_classes)
    k = np.unique(labels).size
    raw = np.unique(clusters).size
    retained_ids = retain_top_clusters(clusters, k)
    mapping = _match_map(labels, retained_ids)
    matched = np.array([mapping.get(int(c), None) == int(y)
                        for c, y in zip(retained_ids, labels)])
    old_mask = np.isin(labels, list(known))
    return EvalReport(
        acc_all=float(matched.mean()),
        acc_old=_subset_acc(matched, old_mask),
        acc_new=_subset_acc(matched, ~old_mask),
        protocol="strict",
        num_clusters_raw=raw,
        num_clusters_retained=np.unique(retained_ids[retained_ids != DISCARDED]).size,
        ndc=ndc,
    )


def greedy_accuracy(cluster_ids, labels, known_classes, ndc: int = 0) -> EvalReport:
    """Independent Hungarian matchings on the Old and New subsets.

    Retention runs first on global cluster sizes; a cluster may then be
    claimed by both subset matchings. The All accuracy is the
    sample-weighted combination of the two.
    """
    clusters = np.asarray(cluster_ids)
    labels = np.asarray(labels)
    known = set(int(c) for c in known_classes)
    k = np.unique(labels).size
    raw = np.unique(clusters).size
    retained_ids = retain_top_clusters(clusters, k)
    old_mask = np.isin(labels, list(known))

    matched = np.zeros(labels.size, dtype=bool)
    for mask in (old_mask, ~old_mask):
        if mask.sum() == 0:
            continue
        mapping = _match_map(labels[mask], retained_ids[mask])
        matched[mask] = [mapping.get(int(c), None) == int(y)
                         for c, y in zip(retained_ids[mask], labels[mask])]
    return EvalReport(
        acc_all=float(matched.mean()),
        acc_old=_subset_acc(matched, old_mask),
        acc_new=_subset_acc(matched, ~old_mask),
        protocol="greedy",
        num_clusters_raw=raw,
        num_clusters_retained=np.unique(retained_ids[retained_ids != DISCARDED]).size,
        ndc=ndc,
    )


def hash_baseline(features: np.ndarray, code_length: int) -> np.ndarray:
    """Sign-quantization clustering: the cluster id is the bit pattern of the
    first ``code_length`` coordinates (bit set iff coordinate >= 0)."""
    features = np.atleast_2d(np.asarray(features))
    if code_length > features.shape[1]:
        raise ValueError(f"code length {code_length} exceeds dimension {features.shape[1]}")
    if code_length > 62:
        raise ValueError("code length above 62 does not fit an int64 cluster id")
    bits = (features[:, :code_length] >= 0).astype(np.int64)
    weights = (1 << np.arange(code_length, dtype=np.int64))
    return bits @ weights

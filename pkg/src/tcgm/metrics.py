"""Accuracy, rank-statistic AUC and class-permutation alignment."""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

BRUTE_FORCE_MAX_CLASSES = 10


def confusion(predictions, labels, n_classes: int) -> np.ndarray:
    """counts[k, c] = number of records predicted k with true label c."""
    pred = np.asarray(predictions, dtype=np.int64)
    lab = np.asarray(labels, dtype=np.int64)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (pred, lab), 1)
    return counts


def _align_bruteforce(counts: np.ndarray) -> np.ndarray:
    k = counts.shape[0]
    best, best_score = None, -1
    rows = np.arange(k)
    perms = itertools.permutations(range(k))
    while True:
        chunk = np.array(list(itertools.islice(perms, 50000)), dtype=np.int64)
        if chunk.size == 0:
            break
        scores = counts[rows, chunk].sum(axis=1)
        j = int(np.argmax(scores))
        if scores[j] > best_score:
            best_score, best = int(scores[j]), chunk[j]
    return best


def _align_hungarian(counts: np.ndarray) -> np.ndarray:
    rows, cols = linear_sum_assignment(counts, maximize=True)
    perm = np.empty(counts.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def align_permutation(predictions, labels, n_classes: int, method: str = "auto") -> np.ndarray:
    """Permutation ``perm`` maximizing ``sum(perm[predictions] == labels)``.

    ``perm[k]`` is the true class matched to predicted class k. Exhaustive
    search (first maximizer in lexicographic order, so the identity wins ties)
    is used up to 10 classes, the Hungarian method beyond.
    """
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.size == 0 or lab.size == 0:
        raise ValueError("need non-empty predictions and labels")
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in length")
    counts = confusion(pred, lab, n_classes)
    if method == "auto":
        method = "bruteforce" if n_classes <= BRUTE_FORCE_MAX_CLASSES else "hungarian"
    if method == "bruteforce":
        return _align_bruteforce(counts)
    if method == "hungarian":
        return _align_hungarian(counts)
    raise ValueError(f"unknown method {method!r}")


def accuracy(predictions, labels) -> float:
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.size == 0:
        raise ValueError("empty inputs")
    return float(np.mean(pred == lab))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC of binary ``labels`` (1 = positive); ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise ValueError("AUC needs binary labels with both classes present")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(predictions, scores, labels, n_classes: Optional[int] = None):
    """Accuracy, plus AUC when the task is binary (``scores`` = positive-class score)."""
    acc = accuracy(predictions, labels)
    auc = None
    if n_classes == 2 and scores is not None:
        auc = roc_auc(scores, labels)
    return acc, auc

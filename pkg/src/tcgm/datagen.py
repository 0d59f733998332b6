"""Synthetic conditionally independent multi-modal data and a k-means++ baseline.

Dataset file format (one directory per dataset):

``data.jsonl``
    One record per line: ``{"x": [[...], ...], "y": int or null, "split": "train"|"val"|"test"}``.
    ``x`` holds one feature list per modality.
``manifest.json``
    ``{"format", "n", "n_modalities", "n_classes", "dims", "label_rate", "seed", "generator"}``.

Both files are written with a fixed key order and Python's shortest
round-trip float repr, so a given (generator, n, seed, label_rate) always
produces byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import softmax

from .probcore import DiscreteJointTable, check_simplex
from .seeding import rng_for

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)
FORMAT = "tcgm-dataset/1"


@dataclass
class GaussianModalitySpec:
    """Class-conditional diagonal Gaussians for each modality.

    ``means[m]`` and ``variances[m]`` have shape (n_classes, dims[m]).
    """

    means: List[np.ndarray]
    variances: List[np.ndarray]
    prior: np.ndarray

    def __post_init__(self):
        self.prior = check_simplex(self.prior, atol=1e-9)
        self.means = [np.asarray(m, dtype=np.float64) for m in self.means]
        self.variances = [np.asarray(v, dtype=np.float64) for v in self.variances]
        if not self.means or len(self.means) != len(self.variances):
            raise ValueError("need matching, non-empty mean and variance lists")
        k = self.prior.size
        for mu, var in zip(self.means, self.variances):
            if mu.ndim != 2 or mu.shape[0] != k or var.shape != mu.shape:
                raise ValueError("means/variances must be (n_classes, dim) per modality")
            if np.any(var <= 0) or not np.all(np.isfinite(mu)):
                raise ValueError("variances must be positive and means finite")

    @property
    def n_modalities(self) -> int:
        return len(self.means)

    @property
    def n_classes(self) -> int:
        return self.prior.size

    @property
    def dims(self) -> List[int]:
        return [mu.shape[1] for mu in self.means]

    def to_dict(self) -> dict:
        return {
            "means": [m.tolist() for m in self.means],
            "variances": [v.tolist() for v in self.variances],
            "prior": self.prior.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GaussianModalitySpec":
        return cls(obj["means"], obj["variances"], obj["prior"])


def gaussian_preset(name: str = "gaussian3", radius: float = 2.5, n_classes: int = 3,
                    n_modalities: int = 3, dim: int = 2, sigma: float = 1.0) -> GaussianModalitySpec:
    """Class means evenly spaced on a circle of ``radius`` in every modality.

    Each modality rotates the circle by a different angle so the modalities
    are not copies of each other. Extra dimensions beyond 2 carry no signal.
    """
    if name != "gaussian3":
        raise ValueError(f"unknown preset {name!r}")
    if dim < 2:
        raise ValueError("preset needs dim >= 2")
    means, variances = [], []
    for m in range(n_modalities):
        angles = 2 * np.pi * np.arange(n_classes) / n_classes + m * np.pi / 7
        mu = np.zeros((n_classes, dim))
        mu[:, 0] = radius * np.cos(angles)
        mu[:, 1] = radius * np.sin(angles)
        means.append(mu)
        variances.append(np.full((n_classes, dim), sigma ** 2))
    return GaussianModalitySpec(means, variances, np.full(n_classes, 1.0 / n_classes))


@dataclass
class MultiModalDataset:
    """Records with M feature vectors each; ``labels`` uses -1 for "no label"."""

    features: List[np.ndarray]
    labels: np.ndarray
    splits: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = [np.asarray(f, dtype=np.float64) for f in self.features]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        n = self.labels.shape[0]
        if any(f.ndim != 2 or f.shape[0] != n for f in self.features):
            raise ValueError("every modality needs an (n, dim) feature array")
        if self.splits.shape != (n,) or not set(self.splits) <= set(SPLITS):
            raise ValueError("splits must tag every record with train/val/test")
        if np.any(self.labels >= self.n_classes) or np.any(self.labels < -1):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    @property
    def dims(self) -> List[int]:
        return [f.shape[1] for f in self.features]

    def select(self, mask) -> "MultiModalDataset":
        mask = np.asarray(mask)
        return MultiModalDataset([f[mask] for f in self.features], self.labels[mask],
                                 self.splits[mask], self.n_classes, dict(self.meta))

    def split(self, name: str) -> "MultiModalDataset":
        return self.select(self.splits == name)

    def labeled(self) -> "MultiModalDataset":
        return self.select(self.labels >= 0)

    def labeled_fraction(self, split: str = "train") -> float:
        part = self.labels[self.splits == split]
        return float(np.mean(part >= 0)) if part.size else 0.0

    # -- file format --------------------------------------------------------

    def to_jsonl(self) -> str:
        lines = []
        for i in range(len(self)):
            rec = {
                "x": [f[i].tolist() for f in self.features],
                "y": None if self.labels[i] < 0 else int(self.labels[i]),
                "split": str(self.splits[i]),
            }
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")

    def manifest(self) -> dict:
        return {
            "format": FORMAT,
            "n": len(self),
            "n_modalities": self.n_modalities,
            "n_classes": self.n_classes,
            "dims": self.dims,
            "label_rate": self.meta.get("label_rate"),
            "seed": self.meta.get("seed"),
            "generator": self.meta.get("generator"),
        }

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "data.jsonl"), "w") as fh:
            fh.write(self.to_jsonl())
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "MultiModalDataset":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        if manifest.get("format") != FORMAT:
            raise ValueError(f"unsupported dataset format {manifest.get('format')!r}")
        m, dims = manifest["n_modalities"], manifest["dims"]
        feats = [[] for _ in range(m)]
        labels, splits = [], []
        with open(os.path.join(directory, "data.jsonl")) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if len(rec["x"]) != m or any(len(v) != d for v, d in zip(rec["x"], dims)):
                    raise ValueError(f"record {lineno} does not match the manifest dims")
                for j, v in enumerate(rec["x"]):
                    feats[j].append(v)
                labels.append(-1 if rec["y"] is None else rec["y"])
                splits.append(rec["split"])
        feats = [np.array(f, dtype=np.float64).reshape(len(labels), d) for f, d in zip(feats, dims)]
        meta = {k: manifest.get(k) for k in ("label_rate", "seed", "generator")}
        return cls(feats, np.array(labels, dtype=np.int64), np.array(splits, dtype=object),
                   manifest["n_classes"], meta)


def assign_splits(n: int, rng: np.random.Generator,
                  fractions: Sequence[float] = DEFAULT_FRACTIONS) -> np.ndarray:
    """Random disjoint train/val/test tags with sizes floor(f * n) (rest to train)."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n_val = int(math.floor(fractions[1] * n))
    n_test = int(math.floor(fractions[2] * n))
    tags = np.array(["train"] * n, dtype=object)
    order = rng.permutation(n)
    tags[order[:n_val]] = "val"
    tags[order[n_val:n_val + n_test]] = "test"
    return tags


def mask_labels(labels: np.ndarray, splits: np.ndarray, label_rate: float,
                rng: np.random.Generator) -> np.ndarray:
    """Hide labels of training records, keeping round(label_rate * n_train) of them."""
    if not 0 < label_rate <= 1:
        raise ValueError("label_rate must be in (0, 1]")
    out = np.array(labels, dtype=np.int64)
    train = np.flatnonzero(splits == "train")
    keep = int(round(label_rate * train.size))
    hidden = rng.permutation(train)[keep:]
    out[hidden] = -1
    return out


def _finish(features, labels, n_classes, n, seed, label_rate, fractions, stream, generator):
    splits = assign_splits(n, rng_for(seed, stream, "splits"), fractions)
    observed = mask_labels(labels, splits, label_rate, rng_for(seed, stream, "mask"))
    meta = {"label_rate": label_rate, "seed": seed, "generator": generator}
    return MultiModalDataset(features, observed, splits, n_classes, meta)


def generate_gaussian(spec: GaussianModalitySpec, n: int, seed: int, label_rate: float = 1.0,
                      fractions: Sequence[float] = DEFAULT_FRACTIONS) -> MultiModalDataset:
    """Draw Y from the prior, then every modality independently given Y."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(seed, "gaussian", "draws")
    y = rng.choice(spec.n_classes, size=n, p=spec.prior)
    feats = []
    for mu, var in zip(spec.means, spec.variances):
        noise = rng.standard_normal(size=(n, mu.shape[1]))
        feats.append(mu[y] + np.sqrt(var[y]) * noise)
    generator = {"kind": "gaussian", "spec": spec.to_dict()}
    return _finish(feats, y, spec.n_classes, n, seed, label_rate, fractions, "gaussian", generator)


def _modality_loglik(spec: GaussianModalitySpec, m: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    mu, var = spec.means[m], spec.variances[m]
    diff = x[:, None, :] - mu[None]
    return -0.5 * np.sum(diff * diff / var[None] + np.log(2 * np.pi * var[None]), axis=2)


def bayes_posterior_oracle(spec: GaussianModalitySpec, x_modalities: Sequence):
    """Exact P(Y | x^1..x^M) and the per-modality P(Y | x^m).

    ``x_modalities[m]`` is an (N, dims[m]) array (or one vector). Returns
    ``(joint, per_modality)`` with arrays of shape (N, n_classes).
    """
    log_prior = np.log(spec.prior)
    logliks = [_modality_loglik(spec, m, x) for m, x in enumerate(x_modalities)]
    per = [softmax(ll + log_prior, axis=1) for ll in logliks]
    joint = softmax(sum(logliks) + log_prior, axis=1)
    return joint, per


def bayes_accuracy(spec: GaussianModalitySpec, dataset: MultiModalDataset, split: Optional[str] = "test") -> float:
    """Accuracy of the exact Bayes classifier on the labeled records of ``split``."""
    part = dataset.split(split) if split else dataset
    part = part.labeled()
    if len(part) == 0:
        raise ValueError("no labeled records to score")
    joint, _ = bayes_posterior_oracle(spec, part.features)
    return float(np.mean(np.argmax(joint, axis=1) == part.labels))


def generate_discrete(table: DiscreteJointTable, n: int, seed: int, label_rate: float = 1.0,
                      fractions: Sequence[float] = DEFAULT_FRACTIONS) -> MultiModalDataset:
    """Sample cells of a labeled table; each modality state is one-hot encoded."""
    if not table.has_label:
        raise ValueError("table must include the label axis")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(seed, "discrete", "draws")
    flat = table.probs.ravel()
    cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
    coords = np.unravel_index(cells, table.probs.shape)
    feats = [np.eye(s)[coords[m]] for m, s in enumerate(table.modality_supports)]
    generator = {"kind": "discrete", "table": table.to_dict()}
    return _finish(feats, coords[-1], table.class_count, n, seed, label_rate, fractions,
                   "discrete", generator)


def discrete_states(dataset: MultiModalDataset) -> np.ndarray:
    """Recover the (n, M) state indices of a one-hot encoded dataset."""
    return np.stack([np.argmax(f, axis=1) for f in dataset.features], axis=1)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: List[float]
    n_iter: int

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(x, centers):
    return np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


def kmeans_pp(features, k: int, seed: int, max_iters: int = 300) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when assignments no longer change or after ``max_iters``. An empty
    cluster is re-seeded at the point farthest from its current center.
    ``inertia_history`` holds the inertia after every assignment step and is
    non-increasing.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be (N, D)")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(x, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(x, centers)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
        for j in range(k):
            if not np.any(labels == j):
                far = int(np.argmax(np.sum((x - centers[labels]) ** 2, axis=1)))
                centers[j] = x[far]
                labels[far] = j
    return KMeansResult(labels, centers, history, it)

"""Total correlation gain, cross entropy, the reward and the aggregator.

Every loss returns its value together with the gradient with respect to the
classifier output probabilities, so a network only has to chain through its
softmax.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .probcore import DiscreteJointTable
from .seeding import derive_seed

PROB_FLOOR = 1e-12
FULL_ENUMERATION_LIMIT = 10**6
EXPECTED_TCG_MAX_CELLS = 10**6


@dataclass
class LossDiagnostics:
    clamp_count: int = 0
    penalty_mode: Optional[str] = None
    penalty_tuples: Optional[int] = None
    penalty_std: Optional[float] = None
    agreement: Optional[float] = None
    penalty: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class LossValueWithGrad:
    value: float
    grads: object
    diagnostics: LossDiagnostics = field(default_factory=LossDiagnostics)


@dataclass(frozen=True)
class PenaltySamplingPlan:
    """How the mismatched-tuple penalty is evaluated.

    ``mode="full"`` averages over every ordered tuple of pairwise distinct
    sample indices; ``mode="sampled"`` averages over ``sample_count`` random
    such tuples (default: one per sample in the batch).
    """

    mode: str = "full"
    sample_count: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "sampled"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @classmethod
    def full(cls) -> "PenaltySamplingPlan":
        return cls("full")

    @classmethod
    def sampled(cls, sample_count: Optional[int] = None, rng_seed: int = 0) -> "PenaltySamplingPlan":
        return cls("sampled", sample_count, rng_seed)

    def check(self, n: int, m: int):
        if self.mode == "full":
            if n < m:
                raise ValueError(f"full enumeration needs batch size >= {m} modalities, got {n}")
            if math.perm(n, m) > FULL_ENUMERATION_LIMIT:
                raise ValueError(f"{n}!/({n}-{m})! tuples exceed the enumeration limit")
        else:
            if n < 2 or n < m:
                raise ValueError(f"sampled penalty needs at least max(2, {m}) samples, got {n}")

    def feasible(self, n: int, m: int) -> bool:
        try:
            self.check(n, m)
        except ValueError:
            return False
        return True

    def split(self, *names) -> "PenaltySamplingPlan":
        """Independent plan for one data partition or step."""
        return PenaltySamplingPlan(self.mode, self.sample_count, derive_seed(self.rng_seed, *names))


def _check_prior(prior, n_classes: int) -> np.ndarray:
    p = np.asarray(prior, dtype=np.float64)
    if p.shape != (n_classes,):
        raise ValueError(f"prior must have {n_classes} entries")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("prior must be strictly positive in every class")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("prior must sum to 1")
    return p


def _stack(outputs: Sequence) -> np.ndarray:
    h = np.stack([np.asarray(o, dtype=np.float64) for o in outputs])
    if h.ndim == 2:
        h = h[:, None, :]
    if h.ndim != 3:
        raise ValueError("outputs must be M arrays of shape (N, C)")
    return h


def aggregator(per_modality_posteriors: Sequence, prior) -> np.ndarray:
    """Normalize(prod_m h^m_c / p_c^(M-1)), computed in the log domain.

    Accepts M vectors of shape (C,) or M batches of shape (N, C) and returns
    the matching shape.
    """
    single = np.asarray(per_modality_posteriors[0]).ndim == 1
    h = _stack(per_modality_posteriors)
    m, _, k = h.shape
    p = _check_prior(prior, k)
    with np.errstate(divide="ignore"):
        logits = np.log(h).sum(axis=0) - (m - 1) * np.log(p)
    if np.any(np.all(np.isneginf(logits), axis=1)):
        raise ValueError("aggregator undefined: the product is zero for every class")
    out = softmax(logits, axis=1)
    return out[0] if single else out


def _clamped(h: np.ndarray):
    low = h < PROB_FLOOR
    return np.clip(h, PROB_FLOOR, 1.0), ~low & (h <= 1.0), int(low.sum())


def reward_star(per_modality_posteriors: Sequence, prior) -> np.ndarray:
    """1 + log sum_c prod_m h^m_c / p_c^(M-1).

    Probabilities are floored at 1e-12, so the reward stays finite.
    """
    single = np.asarray(per_modality_posteriors[0]).ndim == 1
    h = _stack(per_modality_posteriors)
    m, _, k = h.shape
    p = _check_prior(prior, k)
    hc, _, _ = _clamped(h)
    logits = np.log(hc).sum(axis=0) - (m - 1) * np.log(p)
    r = 1.0 + logsumexp(logits, axis=1)
    return float(r[0]) if single else r


@functools.lru_cache(maxsize=None)
def _set_partitions(m: int):
    """All set partitions of range(m) as (blocks as bitmasks, Moebius weight)."""
    out = []

    def rec(rest, blocks):
        if not rest:
            weight = 1
            for b in blocks:
                size = bin(b).count("1")
                weight *= (-1) ** (size - 1) * math.factorial(size - 1)
            out.append((tuple(blocks), weight))
            return
        first, others = rest[0], rest[1:]
        for r in range(len(others) + 1):
            for combo in itertools.combinations(others, r):
                mask = 1 << first
                for c in combo:
                    mask |= 1 << c
                rec([o for o in others if o not in combo], blocks + [mask])

    rec(list(range(m)), [])
    return tuple(out)


def _distinct_tuple_sum(a: np.ndarray):
    """sum over ordered pairwise-distinct (i_1..i_M) of prod_m a[m, i_m, c], per class.

    Uses inclusion-exclusion over set partitions of the modalities. Returns
    the per-class sums (C,) and their gradient with respect to ``a``.
    """
    m, n, k = a.shape
    full = (1 << m) - 1
    prods = np.empty((full + 1, n, k))
    prods[0] = 1.0
    for mask in range(1, full + 1):
        low = mask & -mask
        prods[mask] = prods[mask ^ low] * a[low.bit_length() - 1]
    sums = prods.sum(axis=1)

    total = np.zeros(k)
    coef = np.zeros((full + 1, k))
    for blocks, weight in _set_partitions(m):
        terms = np.stack([sums[b] for b in blocks])
        total += weight * terms.prod(axis=0)
        for j, b in enumerate(blocks):
            coef[b] += weight * np.prod(np.delete(terms, j, axis=0), axis=0)

    grad = np.zeros_like(a)
    for mask in range(1, full + 1):
        for i in range(m):
            if mask >> i & 1:
                grad[i] += coef[mask] * prods[mask ^ (1 << i)]
    return total, grad


def sample_distinct_tuples(rng: np.random.Generator, n: int, m: int, count: int) -> np.ndarray:
    """``count`` rows of m pairwise-distinct indices in [0, n), by rejection."""
    if m > n:
        raise ValueError("cannot draw more distinct indices than samples")
    idx = rng.integers(0, n, size=(count, m))
    if m == 1:
        return idx
    while True:
        dup = np.any(np.diff(np.sort(idx, axis=1), axis=1) == 0, axis=1)
        if not dup.any():
            return idx
        idx[dup] = rng.integers(0, n, size=(int(dup.sum()), m))


def tcg_batch(outputs: Sequence, prior, plan: PenaltySamplingPlan = PenaltySamplingPlan()) -> LossValueWithGrad:
    """Empirical total correlation gain of a batch and its gradient.

    value = 1 + mean_i log sum_c prod_m h^m(x_i)_c / p_c^(M-1)
              - mean over distinct (i_1..i_M) of sum_c prod_m h^m(x_{i_m})_c / p_c^(M-1)

    ``grads[m][i, c]`` is d value / d h^m(x_i)_c. The trainer minimizes
    ``-value``.
    """
    h = _stack(outputs)
    m, n, k = h.shape
    p = _check_prior(prior, k)
    plan.check(n, m)
    hc, live, clamps = _clamped(h)
    log_h = np.log(hc)
    log_w = -(m - 1) * np.log(p)

    logits = log_h.sum(axis=0) + log_w
    agreement = float(logsumexp(logits, axis=1).mean())
    grads = softmax(logits, axis=1)[None] / hc / n

    diag = LossDiagnostics(clamp_count=clamps, penalty_mode=plan.mode)
    if plan.mode == "full":
        per_class, dgrad = _distinct_tuple_sum(hc)
        count = math.perm(n, m)
        w = np.exp(log_w)
        penalty = float(per_class @ w) / count
        grads -= dgrad * w / count
        diag.penalty_tuples = count
    else:
        count = plan.sample_count or n
        rng = np.random.default_rng(plan.rng_seed)
        idx = sample_distinct_tuples(rng, n, m, count)
        picked = log_h[np.arange(m)[None, :], idx]  # (S, M, C)
        terms = np.exp(picked.sum(axis=1) + log_w)  # (S, C)
        per_draw = terms.sum(axis=1)
        penalty = float(per_draw.mean())
        for j in range(m):
            np.add.at(grads[j], idx[:, j], -terms / np.exp(picked[:, j]) / count)
        diag.penalty_tuples = count
        diag.penalty_std = float(per_draw.std(ddof=1)) if count > 1 else 0.0

    grads *= live
    diag.agreement = agreement
    diag.penalty = penalty
    return LossValueWithGrad(1.0 + agreement - penalty, list(grads), diag)


def cross_entropy(outputs, labels) -> LossValueWithGrad:
    """mean_i -log h(x_i)_{y_i}, with probabilities floored at 1e-12."""
    h = np.asarray(outputs, dtype=np.float64)
    y = np.asarray(labels)
    if h.ndim != 2 or y.shape != (h.shape[0],):
        raise ValueError("outputs must be (N, C) and labels (N,)")
    n, k = h.shape
    if n == 0:
        raise ValueError("empty batch")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError("label out of range")
    picked = h[np.arange(n), y]
    clamped = picked < PROB_FLOOR
    value = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    grads = np.zeros_like(h)
    grads[np.arange(n), y] = np.where(clamped, 0.0, -1.0 / (n * np.maximum(picked, PROB_FLOOR)))
    return LossValueWithGrad(value, grads, LossDiagnostics(clamp_count=int(clamped.sum())))


def expected_tcg(table: DiscreteJointTable, classifiers: Sequence, prior) -> float:
    """Population TCg: 1 + E_joint[agreement] - E_product[penalty], by enumeration.

    ``classifiers[m]`` is an array of shape (|X^m|, C) giving h^m at every state.
    """
    m = table.n_modalities
    cells = math.prod(table.modality_supports)
    hs = [np.asarray(c, dtype=np.float64) for c in classifiers]
    if len(hs) != m:
        raise ValueError(f"need {m} classifiers, got {len(hs)}")
    k = hs[0].shape[1]
    if cells * k > EXPECTED_TCG_MAX_CELLS:
        raise ValueError("support too large for exact enumeration")
    for s, hm in zip(table.modality_supports, hs):
        if hm.shape != (s, k):
            raise ValueError(f"classifier shape {hm.shape} does not match ({s}, {k})")
    p = _check_prior(prior, k)
    u = table.x_joint()
    v = table.product_of_marginals()
    logits = np.zeros(table.modality_supports + (k,))
    with np.errstate(divide="ignore"):
        for i, hm in enumerate(hs):
            shape = [1] * m + [k]
            shape[i] = hm.shape[0]
            logits = logits + np.log(hm).reshape(shape)
        logits = logits - (m - 1) * np.log(p)
    on = u > 0
    agreement = float(np.sum(u[on] * logsumexp(logits[on], axis=-1)))
    penalty = float(np.sum(v * np.exp(logits).sum(axis=-1)))
    return 1.0 + agreement - penalty

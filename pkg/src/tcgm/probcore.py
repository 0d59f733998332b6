"""Exact probability tables and information measures on small discrete supports.

Everything here works by full enumeration over dense arrays, so it is only
meant for small supports. These functions are the ground truth the losses and
the trainer are checked against. All logarithms are natural (nats).
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import logsumexp

LABEL = "y"
MAX_CELLS = 10**7
SUM_ATOL = 1e-12
LOAD_RENORM_ATOL = 1e-9
ASSUMPTION_TOL = 1e-9


class AssumptionWarning(UserWarning):
    """Raised (as a warning) when conditional independence does not hold."""


class UndefinedPointError(ValueError):
    pass


def check_simplex(weights, atol: float = SUM_ATOL) -> np.ndarray:
    """Validate a probability vector over classes and return it as float64."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("simplex vector must be a non-empty 1-d array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("simplex weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"simplex weights sum to {w.sum()!r}, expected 1")
    return w


def entropy(p) -> float:
    """Shannon entropy in nats with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


@dataclass(frozen=True)
class DiscreteJointTable:
    """Dense joint distribution over X^1 x ... x X^M (x Y).

    ``probs`` has shape ``modality_supports + (class_count,)`` when the table
    carries a label axis, and ``modality_supports`` when ``class_count`` is
    None.
    """

    modality_supports: tuple
    class_count: Union[int, None]
    probs: np.ndarray

    def __post_init__(self):
        supports = tuple(int(s) for s in self.modality_supports)
        if len(supports) < 1:
            raise ValueError("a table needs at least one modality axis")
        if any(s < 1 for s in supports):
            raise ValueError("every support size must be >= 1")
        if self.class_count is not None and int(self.class_count) < 1:
            raise ValueError("class_count must be >= 1")
        shape = supports + (() if self.class_count is None else (int(self.class_count),))
        if math.prod(shape) > MAX_CELLS:
            raise ValueError(f"table has more than {MAX_CELLS} cells")
        probs = np.array(self.probs, dtype=np.float64)
        if probs.shape != shape:
            if probs.size == math.prod(shape):
                probs = probs.reshape(shape)
            else:
                raise ValueError(f"probs shape {probs.shape} does not match {shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and non-negative")
        total = probs.sum()
        if total <= 0:
            raise ValueError("table has zero total mass")
        if abs(total - 1.0) > SUM_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "modality_supports", supports)
        if self.class_count is not None:
            object.__setattr__(self, "class_count", int(self.class_count))
        object.__setattr__(self, "probs", probs)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_supports)

    @property
    def has_label(self) -> bool:
        return self.class_count is not None

    def x_joint(self) -> np.ndarray:
        """Joint over the modalities only (label summed out)."""
        if self.has_label:
            return self.probs.sum(axis=-1)
        return self.probs

    def modality_marginals(self) -> list:
        joint = self.x_joint()
        axes = range(joint.ndim)
        return [joint.sum(axis=tuple(a for a in axes if a != m)) for m in axes]

    def label_marginal(self) -> np.ndarray:
        self._require_label()
        return self.probs.sum(axis=tuple(range(self.n_modalities)))

    def product_of_marginals(self) -> np.ndarray:
        q = np.ones(())
        for marg in self.modality_marginals():
            q = np.multiply.outer(q, marg)
        return q

    def _require_label(self):
        if not self.has_label:
            raise ValueError("table has no label axis")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_array(cls, probs, has_label: bool = True) -> "DiscreteJointTable":
        probs = np.asarray(probs, dtype=np.float64)
        if has_label:
            return cls(probs.shape[:-1], probs.shape[-1], probs)
        return cls(probs.shape, None, probs)

    @classmethod
    def from_factors(cls, prior, conditionals: Sequence) -> "DiscreteJointTable":
        """Build P(Y) * prod_m P(X^m | Y) exactly.

        ``conditionals[m]`` has shape (class_count, |X^m|); row c is P(X^m | Y=c).
        """
        prior = check_simplex(prior, atol=1e-9)
        k = prior.size
        probs = np.ones(k) * prior
        supports = []
        for m, cond in enumerate(conditionals):
            cond = np.asarray(cond, dtype=np.float64)
            if cond.ndim != 2 or cond.shape[0] != k:
                raise ValueError(f"conditional {m} must have shape (class_count, support)")
            if np.any(cond < 0) or not np.allclose(cond.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError(f"conditional {m} rows must be distributions")
            cond = cond / cond.sum(axis=1, keepdims=True)
            supports.append(cond.shape[1])
            # move label to the end while growing the modality axes
            probs = probs[..., None, :] * cond.T.reshape((1,) * (probs.ndim - 1) + cond.T.shape)
        probs = probs / probs.sum()
        return cls(tuple(supports), k, probs)

    @classmethod
    def random(cls, rng: np.random.Generator, supports: Sequence[int],
               class_count: Union[int, None] = None, concentration: float = 1.0) -> "DiscreteJointTable":
        """Dirichlet-distributed table with full support."""
        shape = tuple(supports) + (() if class_count is None else (class_count,))
        w = rng.gamma(concentration, size=shape) + 1e-3
        return cls(tuple(supports), class_count, w / w.sum())

    @classmethod
    def random_factored(cls, rng: np.random.Generator, supports: Sequence[int],
                        class_count: int, concentration: float = 1.0) -> "DiscreteJointTable":
        """Random conditionally independent table (label as common cause)."""
        prior = rng.dirichlet(np.full(class_count, concentration)) + 1e-3
        prior /= prior.sum()
        conds = []
        for s in supports:
            c = rng.dirichlet(np.full(s, concentration), size=class_count) + 1e-3
            conds.append(c / c.sum(axis=1, keepdims=True))
        return cls.from_factors(prior, conds)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "modality_supports": list(self.modality_supports),
            "class_count": self.class_count,
            "probs": [float(v) for v in self.probs.ravel(order="C")],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DiscreteJointTable":
        supports = tuple(int(s) for s in obj["modality_supports"])
        class_count = obj.get("class_count")
        probs = np.array([float(v) for v in obj["probs"]], dtype=np.float64)
        total = probs.sum()
        if abs(total - 1.0) > LOAD_RENORM_ATOL:
            raise ValueError(f"stored probabilities sum to {total!r}; refusing to renormalize")
        return cls(supports, class_count, probs / total)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteJointTable":
        return cls.from_dict(json.loads(text))


AxisSpec = Union[int, str]


def marginal(table: DiscreteJointTable, axes: Iterable[AxisSpec]) -> DiscreteJointTable:
    """Keep the listed axes (0-based modality indices and/or ``LABEL``) and sum out the rest."""
    axes = set(axes)
    if not axes:
        raise ValueError("axes must be non-empty")
    keep_label = LABEL in axes
    if keep_label:
        table._require_label()
    mods = axes - {LABEL}
    for a in mods:
        if not isinstance(a, (int, np.integer)) or not 0 <= a < table.n_modalities:
            raise ValueError(f"axis {a!r} out of range for {table.n_modalities} modalities")
    if not mods:
        raise ValueError("at least one modality axis must be kept")
    kept = sorted(int(a) for a in mods)
    drop = [a for a in range(table.n_modalities) if a not in kept]
    if table.has_label and not keep_label:
        drop.append(table.n_modalities)
    probs = table.probs.sum(axis=tuple(drop)) if drop else table.probs
    supports = tuple(table.modality_supports[a] for a in kept)
    return DiscreteJointTable(supports, table.class_count if keep_label else None, probs)


def _tc_entropy(joint: np.ndarray) -> float:
    axes = range(joint.ndim)
    h_parts = sum(entropy(joint.sum(axis=tuple(a for a in axes if a != i))) for i in axes)
    return h_parts - entropy(joint)


def _tc_kl(joint: np.ndarray) -> float:
    q = np.ones(())
    axes = range(joint.ndim)
    for i in axes:
        q = np.multiply.outer(q, joint.sum(axis=tuple(a for a in axes if a != i)))
    mask = joint > 0
    return float(np.sum(joint[mask] * (np.log(joint[mask]) - np.log(q[mask]))))


def total_correlation(table: DiscreteJointTable, *, include_label: bool = False,
                      method: str = "entropy") -> float:
    """Sum of marginal entropies minus joint entropy, in nats.

    By default the label axis is summed out first. ``method="kl"`` computes
    KL(joint || product of marginals) instead; the two agree to rounding.
    """
    joint = table.probs if include_label and table.has_label else table.x_joint()
    if joint.sum() <= 0:
        raise ValueError("table has zero total mass")
    if method == "entropy":
        value = _tc_entropy(joint)
    elif method == "kl":
        value = _tc_kl(joint)
    else:
        raise ValueError(f"unknown method {method!r}")
    return max(value, 0.0)


def conditional_total_correlation(table: DiscreteJointTable) -> float:
    """sum_i H(X^i | Y) - H(X^1..X^M | Y)."""
    if not table.has_label:
        raise ValueError("conditional total correlation needs a label axis")
    probs = table.probs
    m = table.n_modalities
    h_y = entropy(table.label_marginal())
    h_parts = 0.0
    for i in range(m):
        pair = probs.sum(axis=tuple(a for a in range(m) if a != i))
        h_parts += entropy(pair) - h_y
    h_joint = entropy(probs) - h_y
    return max(h_parts - h_joint, 0.0)


def log_ratio_array(table: DiscreteJointTable) -> np.ndarray:
    """log(joint / product of marginals) on every cell.

    Cells where the joint is zero but marginals are positive give ``-inf``;
    cells with a zero marginal give NaN (undefined).
    """
    joint = table.x_joint()
    q = table.product_of_marginals()
    out = np.full(joint.shape, np.nan)
    defined = q > 0
    with np.errstate(divide="ignore"):
        out[defined] = np.log(joint[defined]) - np.log(q[defined])
    return out


def pointwise_tc(table: DiscreteJointTable, x: Sequence[int]) -> float:
    """log p(x^1..x^M) / prod_m p(x^m) at one point.

    Raises UndefinedPointError if some marginal is zero at x; returns -inf
    when the joint is zero but every marginal is positive.
    """
    x = _check_point(table, x)
    margs = table.modality_marginals()
    if any(margs[m][x[m]] <= 0 for m in range(table.n_modalities)):
        raise UndefinedPointError(f"a marginal is zero at {x}")
    joint = table.x_joint()[x]
    if joint <= 0:
        return -math.inf
    return float(math.log(joint) - sum(math.log(margs[m][x[m]]) for m in range(len(x))))


def joint_marginal_ratio(table: DiscreteJointTable, x: Sequence[int]) -> float:
    x = _check_point(table, x)
    margs = table.modality_marginals()
    q = math.prod(margs[m][x[m]] for m in range(len(x)))
    if q <= 0:
        raise UndefinedPointError(f"a marginal is zero at {x}")
    return float(table.x_joint()[x] / q)


def _check_point(table, x) -> tuple:
    x = tuple(int(v) for v in x)
    if len(x) != table.n_modalities:
        raise ValueError(f"point needs {table.n_modalities} coordinates, got {len(x)}")
    for m, (v, s) in enumerate(zip(x, table.modality_supports)):
        if not 0 <= v < s:
            raise ValueError(f"coordinate {m} = {v} outside support of size {s}")
    return x


def bayes_posteriors(table: DiscreteJointTable) -> list:
    """Per-modality P(Y | X^m) as arrays of shape (|X^m|, class_count).

    Rows for states with zero marginal probability are filled with the label
    prior; they carry no mass.
    """
    table._require_label()
    m = table.n_modalities
    prior = table.label_marginal()
    out = []
    for i in range(m):
        pair = table.probs.sum(axis=tuple(a for a in range(m) if a != i))
        mass = pair.sum(axis=1, keepdims=True)
        post = np.where(mass > 0, pair / np.where(mass > 0, mass, 1.0), prior)
        out.append(post)
    return out


def joint_posterior(table: DiscreteJointTable) -> np.ndarray:
    """P(Y | X^1..X^M) on every cell, shape supports + (class_count,)."""
    table._require_label()
    mass = table.probs.sum(axis=-1, keepdims=True)
    return np.where(mass > 0, table.probs / np.where(mass > 0, mass, 1.0),
                    table.label_marginal())


def ratio_via_posteriors(table: DiscreteJointTable, x: Sequence[int],
                         tol: float = ASSUMPTION_TOL) -> float:
    """sum_c prod_m P(Y=c | x^m) / P(Y=c)^(M-1).

    Equals the joint-marginal ratio at x when the modalities are
    conditionally independent given Y. If the table's conditional total
    correlation exceeds ``tol`` an AssumptionWarning is issued and the value
    is returned anyway.
    """
    table._require_label()
    x = _check_point(table, x)
    ctc = conditional_total_correlation(table)
    if ctc > tol:
        warnings.warn(f"conditional total correlation {ctc:.3g} > {tol:g}; "
                      "the posterior form of the ratio is not guaranteed",
                      AssumptionWarning, stacklevel=2)
    m = table.n_modalities
    margs = table.modality_marginals()
    if any(margs[i][x[i]] <= 0 for i in range(m)):
        raise UndefinedPointError(f"a marginal is zero at {x}")
    prior = table.label_marginal()
    live = prior > 0
    posts = bayes_posteriors(table)
    with np.errstate(divide="ignore"):
        logs = sum(np.log(posts[i][x[i]][live]) for i in range(m))
        logs = logs - (m - 1) * np.log(prior[live])
    return float(np.exp(logsumexp(logs)))


def _critic_array(table: DiscreteJointTable, g) -> np.ndarray:
    shape = table.modality_supports
    if callable(g):
        vals = np.empty(shape)
        for x in itertools.product(*(range(s) for s in shape)):
            vals[x] = g(x)
        return vals
    vals = np.asarray(g, dtype=np.float64)
    if vals.shape != shape:
        raise ValueError(f"critic array shape {vals.shape} does not match {shape}")
    return vals


def _expectations(table, g):
    p = table.x_joint()
    q = table.product_of_marginals()
    vals = _critic_array(table, g)
    support = q > 0
    bad = support & ~np.isfinite(vals) & ~((vals == -np.inf) & (p == 0))
    if np.any(bad):
        raise ValueError("critic must be finite on the support (-inf allowed only where the joint is zero)")
    return p[support], q[support], vals[support]


def dual_bound_value(table: DiscreteJointTable, g) -> float:
    """E_p[g] - E_q[exp(g - 1)] by enumeration; p is the X-joint, q the product of marginals.

    ``g`` is either a callable on state tuples or an array over the X supports.
    The result never exceeds the total correlation and reaches it at
    g = 1 + pointwise TC.
    """
    p, q, g = _expectations(table, g)
    fin = p > 0
    return float(np.sum(p[fin] * g[fin]) - np.sum(q * np.exp(g - 1.0)))


class FDivergenceKind(enum.Enum):
    KL = "kl"
    REVERSE_KL = "reverse_kl"
    PEARSON_CHI2 = "pearson_chi2"

    @classmethod
    def parse(cls, value) -> "FDivergenceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unsupported f-divergence kind {value!r}") from None


def f_generator(kind, t):
    """The convex generator f(t) of each supported divergence."""
    kind = FDivergenceKind.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is FDivergenceKind.KL:
            return np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)
        if kind is FDivergenceKind.REVERSE_KL:
            return -np.log(t)
        return (t - 1.0) ** 2


def f_prime(kind, t):
    kind = FDivergenceKind.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore"):
        if kind is FDivergenceKind.KL:
            return 1.0 + np.log(t)
        if kind is FDivergenceKind.REVERSE_KL:
            return -1.0 / t
        return 2.0 * (t - 1.0)


def f_conjugate(kind, s):
    """Fenchel conjugate f*(s); +inf outside the domain."""
    kind = FDivergenceKind.parse(kind)
    s = np.asarray(s, dtype=np.float64)
    if kind is FDivergenceKind.KL:
        return np.exp(s - 1.0)
    if kind is FDivergenceKind.REVERSE_KL:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s < 0, -1.0 - np.log(np.where(s < 0, -s, 1.0)), np.inf)
    return s + s * s / 4.0


def f_divergence(table: DiscreteJointTable, kind) -> float:
    """D_f(joint || product of marginals) = sum_x q f(p/q), summed directly."""
    kind = FDivergenceKind.parse(kind)
    p = table.x_joint()
    q = table.product_of_marginals()
    s = q > 0
    p, q = p[s], q[s]
    if kind is FDivergenceKind.KL:
        nz = p > 0
        return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))
    if kind is FDivergenceKind.REVERSE_KL:
        if np.any(p == 0):
            return math.inf
        return float(np.sum(q * -np.log(p / q)))
    return float(np.sum((p - q) ** 2 / q))


def optimal_critic(table: DiscreteJointTable, kind) -> np.ndarray:
    """f'(joint / product of marginals) over the X supports."""
    p = table.x_joint()
    q = table.product_of_marginals()
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(q > 0, p / np.where(q > 0, q, 1.0), 1.0)
    return f_prime(kind, t)


def f_dual_bound(table: DiscreteJointTable, kind, g) -> float:
    """E_p[g] - E_q[f*(g)], a lower bound on D_f(p || q)."""
    kind = FDivergenceKind.parse(kind)
    p = table.x_joint()
    q = table.product_of_marginals()
    vals = _critic_array(table, g)
    s = q > 0
    p, q, vals = p[s], q[s], vals[s]
    if np.any(np.isnan(vals)) or np.any(vals == np.inf):
        raise ValueError("critic must not be NaN or +inf on the support")
    fin = p > 0
    first = float(np.sum(p[fin] * vals[fin]))
    with np.errstate(invalid="ignore"):
        conj = f_conjugate(kind, vals)
    if np.any(np.isinf(conj) & (conj > 0) & (q > 0)):
        return -math.inf
    live = q > 0
    return first - float(np.sum(q[live] * conj[live]))

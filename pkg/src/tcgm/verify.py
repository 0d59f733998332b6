"""Exact-enumeration checks of the information identities behind TCGM.

Each check draws seeded random tables, evaluates one identity or inequality
on every table and reports the worst error against its tolerance.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import probcore as pc
from .datagen import bayes_posterior_oracle, gaussian_preset
from .losses import aggregator, expected_tcg
from .seeding import rng_for


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    cases: int
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.max_error = float(self.max_error)

    def to_dict(self) -> dict:
        return asdict(self)


def random_shape(rng, max_modalities=4, max_support=5, max_classes=4, min_modalities=2):
    m = int(rng.integers(min_modalities, max_modalities + 1))
    supports = tuple(int(s) for s in rng.integers(2, max_support + 1, size=m))
    k = int(rng.integers(2, max_classes + 1))
    return supports, k


def _tables(seed, name, count, factored, **shape_kw):
    rng = rng_for(seed, "verify", name)
    out = []
    for _ in range(count):
        supports, k = random_shape(rng, **shape_kw)
        if factored:
            out.append(pc.DiscreteJointTable.random_factored(rng, supports, k))
        else:
            out.append(pc.DiscreteJointTable.random(rng, supports, k))
    return out


def check_tc(seed=0, count=50, tol=1e-10) -> CheckResult:
    err = 0.0
    for t in _tables(seed, "tc", count, factored=False):
        err = max(err, abs(pc.total_correlation(t) - pc.total_correlation(t, method="kl")))
        err = max(err, abs(pc.total_correlation(t, include_label=True)
                           - pc.total_correlation(t, include_label=True, method="kl")))
    return CheckResult("tc", err <= tol, err, tol, count, "entropy form vs KL form")


def check_ctc(seed=0, count=50, tol=1e-10) -> CheckResult:
    err = max(pc.conditional_total_correlation(t) for t in _tables(seed, "ctc", count, factored=True))
    return CheckResult("ctc", err <= tol, err, tol, count, "CTC of factored tables")


def check_ptc(seed=0, count=20, tol=1e-10) -> CheckResult:
    err = 0.0
    cases = 0
    for t in _tables(seed, "ptc", count, factored=True):
        for x in itertools.product(*(range(s) for s in t.modality_supports)):
            r = pc.ratio_via_posteriors(t, x)
            err = max(err, abs(r - np.exp(pc.pointwise_tc(t, x))))
            cases += 1
    return CheckResult("ptc", err <= tol, err, tol, cases, "posterior ratio vs exp(PTC)")


def check_dual(seed=0, count=20, critics=100, tol=1e-9) -> CheckResult:
    rng = rng_for(seed, "verify", "dual-critics")
    worst_violation = 0.0
    gap = 0.0
    for t in _tables(seed, "dual", count, factored=False):
        tc = pc.total_correlation(t)
        for _ in range(critics):
            g = rng.uniform(-3, 3, size=t.modality_supports)
            worst_violation = max(worst_violation, pc.dual_bound_value(t, g) - tc)
        gap = max(gap, abs(pc.dual_bound_value(t, 1.0 + pc.log_ratio_array(t)) - tc))
    err = max(worst_violation, gap)
    return CheckResult("dual", err <= tol, err, tol, count * (critics + 1),
                       f"max bound excess {worst_violation:.3g}, optimal-critic gap {gap:.3g}")


def check_fdual(seed=0, count=20, tol=1e-9) -> CheckResult:
    err = 0.0
    for t in _tables(seed, "fdual", count, factored=False):
        for kind in pc.FDivergenceKind:
            bound = pc.f_dual_bound(t, kind, pc.optimal_critic(t, kind))
            err = max(err, abs(bound - pc.f_divergence(t, kind)))
    return CheckResult("fdual", err <= tol, err, tol, count * 3, "optimal critic vs direct sum")


def check_maximum(seed=0, count=20, tol=1e-9) -> CheckResult:
    err = 0.0
    for t in _tables(seed, "maximum", count, factored=True):
        val = expected_tcg(t, pc.bayes_posteriors(t), t.label_marginal())
        err = max(err, abs(val - pc.total_correlation(t)))
    return CheckResult("maximum", err <= tol, err, tol, count,
                       "expected TCg at Bayes posteriors vs TC")


def _perturb(rng, h, scale):
    noisy = h * np.exp(rng.normal(scale=scale, size=h.shape))
    return noisy / noisy.sum(axis=-1, keepdims=True)


def check_perturb(seed=0, count=20, draws=200, tol=1e-9) -> CheckResult:
    rng = rng_for(seed, "verify", "perturb-draws")
    excess = 0.0
    perm_err = 0.0
    for t in _tables(seed, "perturb", count, factored=True):
        posts = pc.bayes_posteriors(t)
        prior = t.label_marginal()
        best = expected_tcg(t, posts, prior)
        for _ in range(draws):
            scale = rng.uniform(0.01, 1.0)
            hs = [_perturb(rng, h, scale) for h in posts]
            p = _perturb(rng, prior, scale)
            excess = max(excess, expected_tcg(t, hs, p) - best)
        for perm in itertools.permutations(range(t.class_count)):
            perm = list(perm)
            val = expected_tcg(t, [h[:, perm] for h in posts], prior[perm])
            perm_err = max(perm_err, abs(val - best))
    err = max(excess, perm_err)
    return CheckResult("perturb", err <= tol, err, tol, count * draws,
                       f"max excess over optimum {excess:.3g}, permuted-optimum gap {perm_err:.3g}")


def check_aggregator(seed=0, count=20, points=1000, tol=1e-10) -> CheckResult:
    err = 0.0
    for t in _tables(seed, "aggregator", count, factored=True):
        posts = pc.bayes_posteriors(t)
        joint = pc.joint_posterior(t)
        prior = t.label_marginal()
        cells = list(itertools.product(*(range(s) for s in t.modality_supports)))
        batch = [posts[m][[c[m] for c in cells]] for m in range(t.n_modalities)]
        agg = aggregator(batch, prior)
        err = max(err, float(np.max(np.abs(agg - np.array([joint[c] for c in cells])))))
    spec = gaussian_preset()
    rng = rng_for(seed, "verify", "gaussian-points")
    xs = [rng.normal(scale=3.0, size=(points, d)) for d in spec.dims]
    joint, per = bayes_posterior_oracle(spec, xs)
    gerr = float(np.max(np.abs(aggregator(per, spec.prior) - joint)))
    err = max(err, gerr)
    return CheckResult("aggregator", err <= tol, err, tol, count + points,
                       f"discrete and Gaussian oracle (Gaussian max error {gerr:.3g})")


CHECKS = {
    "tc": check_tc,
    "ctc": check_ctc,
    "ptc": check_ptc,
    "dual": check_dual,
    "fdual": check_fdual,
    "maximum": check_maximum,
    "aggregator": check_aggregator,
    "perturb": check_perturb,
}
DEFAULT_CHECKS = ("tc", "ctc", "ptc", "dual", "fdual", "maximum", "aggregator")


def run_checks(names: Optional[Sequence[str]] = None, seed: int = 0) -> List[CheckResult]:
    names = list(names) if names else list(DEFAULT_CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    return [CHECKS[n](seed=seed) for n in names]


def summarize(results: List[CheckResult]) -> Dict:
    return {
        "passed": all(r.passed for r in results),
        "max_error": max((r.max_error for r in results), default=0.0),
        "checks": [r.to_dict() for r in results],
    }

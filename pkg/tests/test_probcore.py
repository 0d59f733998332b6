import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcgm import probcore as pc
from tcgm.probcore import DiscreteJointTable, FDivergenceKind

from conftest import copies_table, product_table, support_points


def _random_table(seed, supports=(3, 3), k=2, factored=False):
    rng = np.random.default_rng(seed)
    if factored:
        return DiscreteJointTable.random_factored(rng, supports, k)
    return DiscreteJointTable.random(rng, supports, k)


# -- construction and serialization -----------------------------------------

def test_table_rejects_bad_mass():
    with pytest.raises(ValueError):
        DiscreteJointTable.from_array(np.full((2, 2), 0.3), has_label=False)
    with pytest.raises(ValueError):
        DiscreteJointTable.from_array(np.array([[1.5, -0.5], [0, 0]]), has_label=False)


def test_table_probs_read_only():
    t = _random_table(0)
    with pytest.raises(ValueError):
        t.probs[0, 0, 0] = 1.0


def test_json_roundtrip_and_row_major_order():
    t = _random_table(1, (2, 3), 2)
    obj = json.loads(t.to_json())
    assert obj["modality_supports"] == [2, 3] and obj["class_count"] == 2
    assert obj["probs"] == t.probs.ravel(order="C").tolist()
    back = DiscreteJointTable.from_json(t.to_json())
    np.testing.assert_array_equal(back.probs, t.probs)


def test_loader_accepts_strings_and_renormalizes_small_drift():
    obj = {"modality_supports": [2], "class_count": None,
           "probs": ["0.5", str(0.5 + 5e-10)]}
    t = DiscreteJointTable.from_dict(obj)
    assert t.probs.sum() == pytest.approx(1.0, abs=1e-15)
    obj["probs"] = [0.5, 0.51]
    with pytest.raises(ValueError):
        DiscreteJointTable.from_dict(obj)


# -- marginal -----------------------------------------------------------------

def test_marginal_uniform_cube():
    t = DiscreteJointTable.from_array(np.full((2, 2, 2), 1 / 8), has_label=False)
    np.testing.assert_allclose(pc.marginal(t, {0}).probs, [0.5, 0.5], atol=1e-15)


def test_marginal_of_product_recovers_factor():
    p, q = np.array([0.2, 0.8]), np.array([0.1, 0.3, 0.6])
    np.testing.assert_allclose(pc.marginal(product_table(p, q), {0}).probs, p, atol=1e-15)


def test_marginal_matches_nested_loops():
    t = _random_table(7, (3, 3), 2)  # 3 x 3 x 2
    got = pc.marginal(t, {0, 1}).probs
    want = np.zeros((3, 3))
    for a in range(3):
        for b in range(3):
            for y in range(2):
                want[a, b] += t.probs[a, b, y]
    np.testing.assert_allclose(got, want, atol=1e-15)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_marginal_keep_label():
    t = _random_table(8, (2, 3), 4)
    got = pc.marginal(t, {1, pc.LABEL})
    np.testing.assert_allclose(got.probs, t.probs.sum(axis=0), atol=1e-15)
    assert got.class_count == 4


def test_marginal_errors():
    t = _random_table(2)
    with pytest.raises(ValueError):
        pc.marginal(t, set())
    with pytest.raises(ValueError):
        pc.marginal(t, {5})


def test_marginal_order_independent():
    t = DiscreteJointTable.random(np.random.default_rng(3), (2, 3, 4), None)
    once = pc.marginal(t, {0}).probs
    two_step = pc.marginal(pc.marginal(t, {0, 1}), {0}).probs
    other = pc.marginal(pc.marginal(t, {0, 2}), {0}).probs
    np.testing.assert_allclose(once, two_step, atol=1e-15)
    np.testing.assert_allclose(once, other, atol=1e-15)


# -- total correlation ---------------------------------------------------------

def test_tc_of_product_is_zero():
    t = product_table(np.array([0.3, 0.7]), np.array([0.2, 0.5, 0.3]), np.array([0.9, 0.1]))
    assert pc.total_correlation(t) == pytest.approx(0.0, abs=1e-12)
    assert pc.total_correlation(t, method="kl") == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_tc_of_copies(m):
    assert pc.total_correlation(copies_table(m)) == pytest.approx((m - 1) * math.log(2), abs=1e-12)


def test_tc_entropy_and_kl_agree_on_three_variable_table():
    t = DiscreteJointTable.random(np.random.default_rng(11), (3, 2, 4), None)
    a = pc.total_correlation(t)
    b = pc.total_correlation(t, method="kl")
    assert a > 0
    assert abs(a - b) < 1e-10


def test_tc_ignores_label_by_default():
    t = _random_table(4, (2, 3), 3)
    x_only = DiscreteJointTable.from_array(t.x_joint(), has_label=False)
    assert pc.total_correlation(t) == pytest.approx(pc.total_correlation(x_only), abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4), k=st.integers(1, 4))
def test_tc_forms_agree_property(seed, m, k):
    rng = np.random.default_rng(seed)
    supports = tuple(int(s) for s in rng.integers(1, 5, size=m))
    t = DiscreteJointTable.random(rng, supports, k)
    for lab in (False, True):
        a = pc.total_correlation(t, include_label=lab)
        b = pc.total_correlation(t, include_label=lab, method="kl")
        assert a >= 0
        assert abs(a - b) < 1e-10
    assert pc.conditional_total_correlation(t) >= 0


# -- conditional total correlation ----------------------------------------------

def test_ctc_zero_for_factored_table():
    t = DiscreteJointTable.from_factors([0.3, 0.7], [[[0.9, 0.1], [0.2, 0.8]],
                                                     [[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]]])
    assert pc.conditional_total_correlation(t) <= 1e-10


def test_ctc_equals_tc_when_label_independent():
    x = copies_table(3).probs
    y = np.array([0.4, 0.6])
    t = DiscreteJointTable.from_array(np.multiply.outer(x, y))
    assert pc.conditional_total_correlation(t) == pytest.approx(pc.total_correlation(t), abs=1e-12)


def test_ctc_matches_per_slice_sum():
    t = _random_table(21, (3, 2, 2), 3)
    want = 0.0
    for y in range(3):
        sl = t.probs[..., y]
        py = sl.sum()
        want += py * pc.total_correlation(DiscreteJointTable.from_array(sl / py, has_label=False))
    assert pc.conditional_total_correlation(t) == pytest.approx(want, abs=1e-12)


def test_ctc_requires_label():
    with pytest.raises(ValueError):
        pc.conditional_total_correlation(copies_table(2))


# -- pointwise TC and ratio ----------------------------------------------------

def test_ptc_independent_is_zero():
    t = product_table(np.array([0.3, 0.7]), np.array([0.6, 0.4]))
    for x in support_points(t):
        assert pc.pointwise_tc(t, x) == pytest.approx(0.0, abs=1e-14)


def test_ptc_copies_at_origin():
    assert pc.pointwise_tc(copies_table(2), (0, 0)) == pytest.approx(math.log(2), abs=1e-15)


def test_ptc_sentinel_and_undefined_point():
    t = copies_table(2)
    assert pc.pointwise_tc(t, (0, 1)) == -math.inf
    probs = np.array([[0.5, 0.5], [0.0, 0.0]])
    z = DiscreteJointTable.from_array(probs, has_label=False)
    with pytest.raises(pc.UndefinedPointError):
        pc.pointwise_tc(z, (1, 0))


def test_ptc_matches_table_lookup():
    t = DiscreteJointTable.random(np.random.default_rng(5), (3, 2, 2), None)
    margs = t.modality_marginals()
    for x in support_points(t):
        want = math.log(t.probs[x] / np.prod([margs[m][x[m]] for m in range(3)]))
        assert pc.pointwise_tc(t, x) == pytest.approx(want, abs=1e-12)
        assert pc.joint_marginal_ratio(t, x) == pytest.approx(math.exp(want), rel=1e-12)


def test_expected_ptc_is_tc():
    t = _random_table(6, (3, 4), 2)
    u = t.x_joint()
    e = sum(u[x] * pc.pointwise_tc(t, x) for x in support_points(t))
    assert e == pytest.approx(pc.total_correlation(t), abs=1e-10)


def test_ratio_via_posteriors_binary_table():
    prior = np.array([0.4, 0.6])
    c1 = np.array([[0.7, 0.3], [0.2, 0.8]])
    c2 = np.array([[0.9, 0.1], [0.35, 0.65]])
    t = DiscreteJointTable.from_factors(prior, [c1, c2])
    # direct joint / marginal-product at (0, 0)
    joint = sum(prior[c] * c1[c, 0] * c2[c, 0] for c in range(2))
    m1 = sum(prior[c] * c1[c, 0] for c in range(2))
    m2 = sum(prior[c] * c2[c, 0] for c in range(2))
    assert pc.ratio_via_posteriors(t, (0, 0)) == pytest.approx(joint / (m1 * m2), abs=1e-12)


def test_ratio_via_posteriors_trivial_cases():
    rng = np.random.default_rng(9)
    one_class = DiscreteJointTable.random_factored(rng, (2, 3), 1)
    single = DiscreteJointTable.random(rng, (4,), 3)
    for x in support_points(one_class):
        assert pc.ratio_via_posteriors(one_class, x) == pytest.approx(1.0, abs=1e-12)
    for x in support_points(single):
        assert pc.ratio_via_posteriors(single, x) == pytest.approx(1.0, abs=1e-12)


def test_ratio_via_posteriors_warns_when_dependent():
    t = DiscreteJointTable.from_array(np.multiply.outer(copies_table(2).probs, [0.5, 0.5]))
    with pytest.warns(pc.AssumptionWarning):
        pc.ratio_via_posteriors(t, (0, 0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ratio_identity_property(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    t = DiscreteJointTable.random_factored(rng, tuple(int(s) for s in rng.integers(2, 4, m)),
                                           int(rng.integers(1, 4)))
    with warnings.catch_warnings():
        warnings.simplefilter("error", pc.AssumptionWarning)
        for x in support_points(t):
            assert pc.ratio_via_posteriors(t, x) == pytest.approx(math.exp(pc.pointwise_tc(t, x)), abs=1e-10)


# -- dual bounds ---------------------------------------------------------------

def test_dual_constant_critic_is_zero():
    t = _random_table(10)
    assert pc.dual_bound_value(t, lambda x: 1.0) == pytest.approx(0.0, abs=1e-15)
    assert pc.dual_bound_value(t, np.ones(t.modality_supports)) == pytest.approx(0.0, abs=1e-15)


def test_dual_optimal_critic_attains_tc():
    t = _random_table(12, (3, 4, 2), 3)
    val = pc.dual_bound_value(t, lambda x: 1.0 + pc.pointwise_tc(t, x))
    assert val == pytest.approx(pc.total_correlation(t), abs=1e-9)


def test_dual_random_critics_bounded():
    t = _random_table(13, (3, 3), 2)
    tc = pc.total_correlation(t)
    rng = np.random.default_rng(0)
    for _ in range(100):
        g = rng.uniform(-3, 3, size=t.modality_supports)
        assert pc.dual_bound_value(t, g) <= tc + 1e-9


def test_dual_rejects_non_finite_critic():
    t = _random_table(14)
    g = np.zeros(t.modality_supports)
    g[0, 0] = np.nan
    with pytest.raises(ValueError):
        pc.dual_bound_value(t, g)


# -- f-divergences ---------------------------------------------------------------

@pytest.mark.parametrize("kind,expected", [
    (FDivergenceKind.KL, lambda t: t),
    (FDivergenceKind.REVERSE_KL, lambda t: np.log(t) - 1),
    (FDivergenceKind.PEARSON_CHI2, lambda t: t ** 2 - 1),
])
def test_conjugate_of_derivative_matches_reference_table(kind, expected):
    t = np.linspace(0.05, 4.0, 50)
    np.testing.assert_allclose(pc.f_conjugate(kind, pc.f_prime(kind, t)), expected(t), rtol=1e-12, atol=1e-12)


def test_kl_fdual_recovers_tc():
    t = _random_table(15, (2, 3, 2), 2)
    g = pc.optimal_critic(t, FDivergenceKind.KL)
    assert pc.f_dual_bound(t, FDivergenceKind.KL, g) == pytest.approx(pc.total_correlation(t), abs=1e-10)


def test_pearson_fdual_on_independent_table_is_zero():
    t = product_table(np.array([0.3, 0.7]), np.array([0.25, 0.75]))
    g = pc.optimal_critic(t, "pearson_chi2")
    assert pc.f_dual_bound(t, FDivergenceKind.PEARSON_CHI2, g) == pytest.approx(0.0, abs=1e-12)


def test_reverse_kl_fdual_matches_direct_sum():
    t = _random_table(16, (3, 3), 2)
    p = t.x_joint()
    q = t.product_of_marginals()
    direct = float(np.sum(q * -np.log(p / q)))
    g = pc.optimal_critic(t, FDivergenceKind.REVERSE_KL)
    assert pc.f_dual_bound(t, FDivergenceKind.REVERSE_KL, g) == pytest.approx(direct, abs=1e-10)
    assert pc.f_divergence(t, FDivergenceKind.REVERSE_KL) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("kind", list(FDivergenceKind))
def test_fdual_random_critics_bounded(kind):
    t = _random_table(17, (3, 2), 2)
    d = pc.f_divergence(t, kind)
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = rng.uniform(-3, 3, size=t.modality_supports)
        if kind is FDivergenceKind.REVERSE_KL:
            g = -np.abs(g) - 1e-3  # conjugate domain is s < 0
        assert pc.f_dual_bound(t, kind, g) <= d + 1e-9


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        FDivergenceKind.parse("hellinger")

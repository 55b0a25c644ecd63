import math

import numpy as np
import pytest

from crossdiff.hypotheses import (
    CLASS_H5_DP_A0,
    CLASS_H5_DP_AII,
    CLASS_H5_PRIME,
    CLASS_NONE,
    WegscheiderError,
    classify_coefficients,
    classify_hypotheses,
    derive_entropy,
    detailed_balance_measure,
    find_detailed_balance,
    lambda_from_mass_action,
    verify_dissipativity,
    verify_hA_positive,
    verify_quasi_positivity,
    weak_cross_diffusion_alpha,
)
from crossdiff.model import EntropyParams, ModelError, Reaction, ReactionSpec, SystemSpec

DB3 = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 3.0], [1.0, 2.0, 1.0]])


def test_alpha_symmetric_is_min_diagonal():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = rng.uniform(0, 3, (4, 4))
        a = m + m.T
        assert weak_cross_diffusion_alpha(a) == np.min(np.diag(a))


def test_alpha_hand_values():
    assert weak_cross_diffusion_alpha([[1, 4], [1, 1]]) == pytest.approx(0.75, abs=1e-15)
    assert weak_cross_diffusion_alpha([[1, 9], [1, 1]]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ModelError):
        weak_cross_diffusion_alpha([[1, -1], [1, 1]])


def test_alpha_invariant_under_transposition():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 2, (3, 3))
    assert weak_cross_diffusion_alpha(a) == pytest.approx(weak_cross_diffusion_alpha(a.T), rel=1e-14)


def test_detailed_balance_examples():
    np.testing.assert_allclose(detailed_balance_measure([[1, 2], [1, 1]]), [1, 2], rtol=1e-12)
    pi = detailed_balance_measure(DB3)
    np.testing.assert_allclose(pi, [1, 2, 3], rtol=1e-12)
    lhs = pi[:, None] * DB3
    np.testing.assert_allclose(lhs, lhs.T, rtol=1e-12)
    # scale equivariance
    np.testing.assert_allclose(detailed_balance_measure(7.5 * DB3), pi, rtol=1e-12)


def test_kolmogorov_violation_names_cycle():
    a = np.ones((3, 3))
    a[0, 2] = 2.0
    db = find_detailed_balance(a)
    assert db.pi is None
    assert len(db.cycle) == 4 and db.cycle[0] == db.cycle[-1]
    assert set(db.cycle) == {0, 1, 2}
    assert db.cycle_ratio in (pytest.approx(0.5), pytest.approx(2.0))
    assert "Kolmogorov" in db.reason and "->" in db.reason


def test_detailed_balance_needs_positive_off_diagonal():
    db = find_detailed_balance([[1, 0], [1, 1]])
    assert db.pi is None and "a[0][1]" in db.reason


def test_lambda_from_mass_action():
    r = ReactionSpec.mass_action([Reaction(np.array([1, 0]), np.array([0, 1]), 2.0, 1.0)])
    lam = lambda_from_mass_action(r)
    np.testing.assert_allclose(lam, [0.5 * math.log(2), -0.5 * math.log(2)], rtol=1e-12)
    eq = ReactionSpec.mass_action([Reaction(np.array([1, 0]), np.array([0, 1]), 3.0, 3.0)])
    np.testing.assert_allclose(lambda_from_mass_action(eq), 0.0, atol=1e-15)


def test_wegscheider_violation():
    r = ReactionSpec.mass_action([
        Reaction(np.array([1, 0]), np.array([0, 1]), 2.0, 1.0),
        Reaction(np.array([1, 0]), np.array([0, 1]), 1.0, 2.0),
    ])
    with pytest.raises(WegscheiderError) as info:
        lambda_from_mass_action(r)
    assert {k for k, _ in info.value.cycle} == {0, 1}


def _ma2(kf=2.0, kb=1.0):
    r = ReactionSpec.mass_action([Reaction(np.array([1, 0]), np.array([0, 1]), kf, kb)])
    ent = derive_entropy([1, 1], [[1, 0.5], [0.5, 1]], r)
    return SystemSpec.simple([1, 1], [[1, 0.5], [0.5, 1]], reaction=r, entropy=ent)


def test_dissipativity_mass_action_certified():
    rep = verify_dissipativity(_ma2(), seed=3, count=10_000)
    assert rep.certified
    assert rep.witness is None


def test_dissipativity_counterexample():
    spec = SystemSpec.simple([1.0], [[0.0]], reaction=ReactionSpec.custom(1, lambda u: np.ones_like(u)))
    rep = verify_dissipativity(spec, seed=0, count=500)
    assert not rep.certified
    assert rep.margin > 0 and rep.witness[0] > 1.0


def test_zero_reaction_margin_zero():
    rep = verify_dissipativity(SystemSpec.simple([1.0], [[1.0]]), count=100)
    assert rep.margin == 0.0 and rep.certified


def test_quasi_positivity():
    lv = SystemSpec.simple([1, 1], [[1, 0], [0, 1]],
                           reaction=ReactionSpec.lotka_volterra([1.0, -1.0], [[-1, -1], [1, -1]]))
    assert verify_quasi_positivity(lv).holds
    bad = SystemSpec.simple([1.0], [[1.0]], reaction=ReactionSpec.custom(1, lambda u: u - 1.0))
    rep = verify_quasi_positivity(bad, count=50)
    assert not rep.holds and rep.min_value == pytest.approx(-1.0) and rep.species == 0


def test_hA_positive_and_bound():
    spec = SystemSpec.simple([0.1] * 3, DB3, entropy=EntropyParams(np.array([1.0, 2.0, 3.0]), np.zeros(3)))
    rep = verify_hA_positive(spec, seed=2, count=1000)
    assert rep.negatives == 0
    assert rep.min_rayleigh > 0 and rep.eta == pytest.approx(0.5 * rep.min_rayleigh)
    # the recorded lower bound never exceeds the quadratic form
    assert rep.bound_gap is not None and rep.bound_gap >= -1e-12


def test_classification_order():
    # single species with a_10 > 0 is the heat equation
    assert classify_coefficients([1], [[0.0]])[0] == CLASS_H5_DP_A0
    cls, alpha, _ = classify_coefficients([0.1, 0.1], [[1, 4], [1, 1]])
    assert cls == CLASS_H5_PRIME and alpha == pytest.approx(0.75)
    # zero diagonal with detailed balance and positive a_i0
    assert classify_coefficients([1, 1], [[0, 2], [1, 0]])[0] == CLASS_H5_DP_A0
    assert classify_coefficients([1, 1], [[1, 9], [1, 1]])[0] == CLASS_H5_DP_AII
    assert classify_coefficients([0, 0], [[0, 2], [1, 0]])[0] == CLASS_NONE


def test_classify_hypotheses_reports():
    spec = SystemSpec.simple([0.1, 0.1], [[1, 4], [1, 1]])
    rep = classify_hypotheses(spec, seed=5, count=1000)
    assert rep.classification == CLASS_H5_PRIME and rep.entropy_consistent
    assert rep.seed == 5 and rep.sample_count == 1000
    assert rep.to_dict()["alpha"] == pytest.approx(0.75)
    # detailed-balance weights in use take precedence when both structures hold
    db = SystemSpec.simple([0.1] * 3, DB3, entropy=EntropyParams(np.array([1.0, 2.0, 3.0]), np.zeros(3)))
    rep = classify_hypotheses(db, count=500)
    assert rep.classification == CLASS_H5_DP_AII and rep.entropy_consistent
    np.testing.assert_allclose(rep.db_measure, [1, 2, 3])


def test_derive_entropy():
    ent = derive_entropy([0.1] * 3, DB3, ReactionSpec.zero(3))
    np.testing.assert_allclose(ent.pi, [1, 2, 3])
    a = np.ones((3, 3))
    a[0, 2] = 2.0
    np.fill_diagonal(a, 0.0)
    with pytest.raises(ModelError, match="->"):
        derive_entropy([1] * 3, a, ReactionSpec.zero(3))

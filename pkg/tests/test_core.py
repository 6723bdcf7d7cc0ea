"""Exact-value and finite-difference oracles for the design objective."""

import math

import numpy as np
import pytest

from activedesign.core import (
    MAX_DIMENSION,
    CovariateSet,
    DesignProblem,
    NoiseSpec,
    SimplexWeights,
    gradient,
    gram_cofactors,
    info_matrix,
    lambda_min_lower_bound,
    loss,
    loss_closed_form,
    negative_regret_clamps,
    ols_fit,
    optimal_weights_closed_form,
    problem_constants,
    regret,
)
from activedesign.environment import make_hard_instance, make_random_instance


def canonical_problem(sigma2, beta=None):
    d = len(sigma2)
    return DesignProblem(
        CovariateSet(np.eye(d)), NoiseSpec(np.array(sigma2, dtype=float)), beta=beta
    )


def rotated_problem(sigma2, seed):
    """Canonical instance pushed through a random orthogonal map."""
    d = len(sigma2)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return DesignProblem(CovariateSet(q), NoiseSpec(np.array(sigma2, dtype=float)))


# --------------------------------------------------------------------
# containers


def test_covariates_are_renormalized():
    cols = np.array([[3.0, 0.0], [0.0, 0.5]])
    cs = CovariateSet(cols)
    np.testing.assert_allclose(np.linalg.norm(cs.columns, axis=0), [1.0, 1.0], rtol=1e-15)


def test_zero_covariate_rejected():
    with pytest.raises(ValueError, match="zero"):
        CovariateSet(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_too_few_arms_rejected():
    with pytest.raises(ValueError, match="cannot span"):
        CovariateSet(np.array([[1.0], [0.0]]))


def test_rank_deficient_set_rejected():
    cols = np.array([[1.0, 1.0], [0.0, 0.0]])  # two copies of e1 in R^2
    with pytest.raises(ValueError, match="cannot span"):
        CovariateSet(cols)


def test_dimension_cap():
    d = MAX_DIMENSION + 1
    with pytest.raises(ValueError, match="dimension"):
        CovariateSet(np.eye(d))


def test_noise_spec_rejects_proxy_below_variance():
    with pytest.raises(ValueError, match="dominate"):
        NoiseSpec(np.array([1.0]), np.array([0.5]))


def test_noise_spec_defaults_proxy_to_variance():
    spec = NoiseSpec(np.array([2.0, 3.0]))
    np.testing.assert_allclose(spec.kappa2, [2.0, 3.0])
    np.testing.assert_allclose(spec.sigma, np.sqrt([2.0, 3.0]))


def test_problem_arm_count_mismatch():
    with pytest.raises(ValueError, match="arm count"):
        DesignProblem(CovariateSet(np.eye(2)), NoiseSpec(np.ones(3)))


def test_problem_beta_dimension():
    with pytest.raises(ValueError, match="dimension"):
        canonical_problem([1.0, 1.0], beta=np.ones(3))


def test_simplex_weights_clamp_and_renormalize():
    w = SimplexWeights(np.array([0.5, 0.5, -1e-13]))
    assert w[2] == 0.0
    assert math.isclose(float(np.asarray(w).sum()), 1.0, rel_tol=0, abs_tol=1e-15)
    with pytest.raises(ValueError, match="nonnegative"):
        SimplexWeights(np.array([1.1, -0.1]))
    with pytest.raises(ValueError, match="sum"):
        SimplexWeights(np.array([0.6, 0.6]))


def test_simplex_uniform():
    w = SimplexWeights.uniform(4)
    assert len(w) == 4
    np.testing.assert_allclose(np.asarray(w), 0.25)


# --------------------------------------------------------------------
# loss values pinned by hand


def test_loss_canonical_equal_variance():
    prob = canonical_problem([1.0, 1.0])
    assert loss(prob, [0.5, 0.5]) == pytest.approx(4.0, rel=1e-14)


def test_loss_canonical_unequal_variance():
    prob = canonical_problem([1.0, 4.0])
    # Omega = diag(p1, p2/4); trace inverse = 1/p1 + 4/p2
    assert loss(prob, [1.0 / 3.0, 2.0 / 3.0]) == pytest.approx(9.0, rel=1e-14)


def test_loss_three_arm_pins():
    assert loss(canonical_problem([1.0, 1.0, 1.0]), SimplexWeights.uniform(3)) == pytest.approx(
        9.0, rel=1e-14
    )
    prob = canonical_problem([1.0, 4.0, 9.0])
    p_star = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]
    assert loss(prob, p_star) == pytest.approx(36.0, rel=1e-14)
    assert np.asarray(optimal_weights_closed_form(prob)) == pytest.approx(p_star, rel=1e-14)


def test_loss_invariant_under_rotation():
    rng = np.random.default_rng(7)
    for trial in range(10):
        sigma2 = rng.uniform(0.5, 3.0, 3)
        p = rng.dirichlet(np.ones(3))
        canon = canonical_problem(sigma2)
        rot = rotated_problem(sigma2, seed=100 + trial)
        assert loss(rot, p) == pytest.approx(loss(canon, p), rel=1e-11)


def test_loss_boundary_is_infinite():
    prob = canonical_problem([1.0, 1.0])
    assert loss(prob, [1.0, 0.0]) == math.inf
    assert loss_closed_form(prob, [1.0, 0.0]) == math.inf


def test_closed_form_matches_eigenvalue_loss():
    rng = np.random.default_rng(11)
    for trial in range(20):
        prob = make_random_instance(3, 3, seed=trial)
        p = rng.dirichlet(np.ones(3))
        assert loss_closed_form(prob, p) == pytest.approx(loss(prob, p), rel=1e-11)


# --------------------------------------------------------------------
# gradient against central finite differences


def fd_directional(prob, p, i, j, h=1e-6):
    e = np.zeros(len(p))
    e[i] += 1.0
    e[j] -= 1.0
    return (loss(prob, p + h * e) - loss(prob, p - h * e)) / (2.0 * h)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for trial in range(20):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(d, d + 3))
        prob = make_random_instance(d, k, seed=200 + trial)
        p = rng.dirichlet(np.full(k, 5.0))  # concentrated away from the boundary
        g = gradient(prob, p)
        assert np.all(g < 0.0)
        for _ in range(3):
            i, j = rng.choice(k, size=2, replace=False)
            want = fd_directional(prob, p, int(i), int(j))
            assert g[i] - g[j] == pytest.approx(want, rel=1e-5, abs=1e-8)


def test_gradient_rejects_singular_point():
    prob = canonical_problem([1.0, 1.0])
    with pytest.raises(ValueError, match="identifiable"):
        gradient(prob, [1.0, 0.0])


# --------------------------------------------------------------------
# cofactors and the closed-form optimum


def test_cofactors_match_explicit_minors():
    rng = np.random.default_rng(5)
    for trial in range(10):
        k = int(rng.integers(2, 6))
        a = rng.standard_normal((k, k))
        gram = a @ a.T + 0.5 * np.eye(k)
        det, cof = gram_cofactors(gram)
        assert det == pytest.approx(np.linalg.det(gram), rel=1e-10)
        for i in range(k):
            minor = np.delete(np.delete(gram, i, axis=0), i, axis=1)
            want = np.linalg.det(minor) if k > 1 else 1.0
            assert cof[i] == pytest.approx(want, rel=1e-9)


def test_cofactors_singular_fallback():
    gram = np.array([[1.0, 1.0], [1.0, 1.0]])  # det exactly 0, uses the minor path
    det, cof = gram_cofactors(gram)
    assert det == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(cof, [1.0, 1.0], rtol=1e-14)


def test_closed_form_optimum_against_grid_search():
    prob = canonical_problem([1.0, 4.0])
    grid = np.linspace(1e-3, 1.0 - 1e-3, 2001)
    values = [loss(prob, [p1, 1.0 - p1]) for p1 in grid]
    best = grid[int(np.argmin(values))]
    p_star = optimal_weights_closed_form(prob)
    assert p_star[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert abs(best - p_star[0]) < 1e-3
    assert loss(prob, p_star) <= min(values) + 1e-12


def test_closed_form_optimum_grid_three_arms():
    prob = rotated_problem([1.0, 2.0, 0.7], seed=42)
    p_star = np.asarray(optimal_weights_closed_form(prob))
    step = 0.005
    best, best_val = None, math.inf
    for a in np.arange(step, 1.0, step):
        for b in np.arange(step, 1.0 - a, step):
            val = loss_closed_form(prob, np.array([a, b, 1.0 - a - b]))
            if val < best_val:
                best, best_val = np.array([a, b, 1.0 - a - b]), val
    assert np.max(np.abs(best - p_star)) < step
    assert loss(prob, p_star) <= best_val


def test_closed_form_optimum_requires_square():
    prob = make_random_instance(2, 4, seed=0)
    with pytest.raises(ValueError, match="square|as many arms"):
        optimal_weights_closed_form(prob)


# --------------------------------------------------------------------
# constants


def test_constants_canonical_equal_variance():
    consts = problem_constants(canonical_problem([1.0, 1.0]))
    assert consts.det_gram == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_allclose(consts.cofactors, [1.0, 1.0], rtol=1e-14)
    assert np.asarray(consts.p_star) == pytest.approx([0.5, 0.5], rel=1e-14)
    assert consts.mu == pytest.approx(2.0, rel=1e-14)
    assert consts.eta == pytest.approx(math.sqrt(2.0) / 2.0, rel=1e-14)
    # 432 * sigma_max^2 * (sum sigma sqrt(cof))^3 / (det sigma_min^3 sqrt(min cof))
    assert consts.c_smooth == pytest.approx(432.0 * 8.0, rel=1e-14)
    # raw bound at floor p*: 16 * max(cof sigma^2 / p*^3) / det = 16 / 0.125
    assert consts.hessian_diag_bound == pytest.approx(128.0, rel=1e-14)


def test_constants_canonical_unequal_variance():
    consts = problem_constants(canonical_problem([1.0, 4.0]))
    assert consts.mu == pytest.approx(2.0, rel=1e-14)
    assert np.asarray(consts.p_star) == pytest.approx([1.0 / 3.0, 2.0 / 3.0], rel=1e-14)
    assert consts.eta == pytest.approx(math.sqrt(2.0) / 3.0, rel=1e-14)
    # sigma_max^2 = 4, sum sigma sqrt(cof) = 3, sigma_min^3 = 1
    assert consts.c_smooth == pytest.approx(432.0 * 4.0 * 27.0, rel=1e-14)
    # floor = p*: max over k of 16 cof sigma^2 / p*^3: arm1 16/(1/27)=432,
    # arm2 64/(8/27)=216
    assert consts.hessian_diag_bound == pytest.approx(432.0, rel=1e-13)


def test_constants_floor_override():
    prob = canonical_problem([1.0, 1.0])
    consts = problem_constants(prob, floor=[0.25, 0.25])
    assert consts.hessian_diag_bound == pytest.approx(16.0 / 0.25**3, rel=1e-13)
    with pytest.raises(ValueError, match="positive"):
        problem_constants(prob, floor=[0.5, 0.0])


def test_constants_rectangular_case():
    prob = make_random_instance(2, 5, seed=3)
    consts = problem_constants(prob)
    assert consts.gram.shape == (2, 2)
    assert consts.mu is None and consts.eta is None and consts.c_smooth is None
    moment = prob.covariates.second_moment()
    assert consts.det_gram == pytest.approx(np.linalg.det(moment), rel=1e-12)
    assert consts.lambda_min == pytest.approx(np.linalg.eigvalsh(moment)[0], rel=1e-12)


def test_strong_convexity_holds_along_segments():
    """L((1-s) p* + s q) >= L* + (mu/2) s^2 ||q - p*||^2 for square problems."""
    rng = np.random.default_rng(9)
    for trial in range(10):
        prob = make_random_instance(3, 3, seed=300 + trial)
        consts = problem_constants(prob)
        p_star = np.asarray(consts.p_star)
        l_star = loss(prob, p_star)
        q = rng.dirichlet(np.ones(3))
        for s in (0.1, 0.3, 0.6):
            point = (1.0 - s) * p_star + s * q
            lower = l_star + 0.5 * consts.mu * s**2 * float(np.sum((q - p_star) ** 2))
            assert loss(prob, point) >= lower - 1e-10


# --------------------------------------------------------------------
# spectral bound, regret, OLS


def test_lambda_min_bound_tight_on_canonical():
    prob = canonical_problem([1.0, 1.0])
    assert lambda_min_lower_bound(prob, [0.5, 0.5]) == pytest.approx(0.5, rel=1e-14)
    prob = canonical_problem([1.0, 4.0])
    bound = lambda_min_lower_bound(prob, [0.5, 0.5])
    assert bound == pytest.approx(0.125, rel=1e-14)
    actual = np.linalg.eigvalsh(info_matrix(prob, [0.5, 0.5]))[0]
    assert actual == pytest.approx(0.125, rel=1e-14)


def test_lambda_min_bound_never_exceeds_truth():
    rng = np.random.default_rng(13)
    for trial in range(20):
        d = int(rng.integers(2, 5))
        k = int(rng.integers(d, d + 3))
        prob = make_random_instance(d, k, seed=400 + trial)
        p = rng.dirichlet(np.ones(k))
        actual = float(np.linalg.eigvalsh(info_matrix(prob, p))[0])
        assert lambda_min_lower_bound(prob, p) <= actual + 1e-12


def test_info_matrix_definition():
    prob = make_random_instance(3, 4, seed=21)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    x = prob.covariates.columns
    want = sum(
        p[k] / prob.noise.sigma2[k] * np.outer(x[:, k], x[:, k]) for k in range(4)
    )
    np.testing.assert_allclose(info_matrix(prob, p), want, rtol=1e-13)


def test_regret_hard_instance_pin():
    prob = make_hard_instance(1.0)
    # L(p) = 2 / (1 + p1), optimum puts everything on arm 0
    assert loss(prob, [0.5, 0.5]) == pytest.approx(4.0 / 3.0, rel=1e-12)
    assert regret(prob, [0.5, 0.5], 100, 1.0) == pytest.approx(1.0 / 300.0, rel=1e-12)


def test_regret_validates_inputs():
    prob = make_hard_instance(1.0)
    with pytest.raises(ValueError, match="horizon"):
        regret(prob, [0.5, 0.5], 0, 1.0)
    with pytest.raises(ValueError, match="negative"):
        regret(prob, [1.0 - 1e-9, 1e-9], 10, 2.0)  # reference above the true loss


def test_regret_clamps_tiny_negative_gap():
    prob = make_hard_instance(1.0)
    before = negative_regret_clamps()
    value = regret(prob, [1.0 - 1e-12, 1e-12], 10, loss(prob, [1.0 - 1e-12, 1e-12]) + 1e-10)
    assert value == 0.0
    assert negative_regret_clamps() == before + 1


def test_regret_accepts_weight_reference():
    prob = canonical_problem([1.0, 4.0])
    p_star = optimal_weights_closed_form(prob)
    val = regret(prob, [0.5, 0.5], 10, p_star)
    want = (loss(prob, [0.5, 0.5]) - 9.0) / 10.0
    assert val == pytest.approx(want, rel=1e-12)


def test_ols_noiseless_recovery():
    rng = np.random.default_rng(17)
    for trial in range(5):
        beta = rng.standard_normal(3)
        prob = make_random_instance(3, 4, seed=500 + trial)
        prob = DesignProblem(prob.covariates, prob.noise, beta=beta)
        arms = rng.integers(0, 4, size=50)
        arms[:4] = np.arange(4)  # make sure every arm appears
        values = prob.covariates.columns[:, arms].T @ beta
        est = ols_fit(prob, arms, values)
        np.testing.assert_allclose(est, beta, rtol=1e-9, atol=1e-11)


def test_ols_rejects_underdetermined_sample():
    prob = make_random_instance(3, 3, seed=2)
    with pytest.raises(ValueError, match="identify"):
        ols_fit(prob, np.zeros(10, dtype=int), np.ones(10))


def test_ols_unbiased_in_distribution():
    """Mean of many noisy fits approaches the truth (sanity, not a pin)."""
    rng = np.random.default_rng(23)
    prob = canonical_problem([1.0, 1.0], beta=np.array([2.0, -1.0]))
    arms = np.tile([0, 1], 25)
    fits = []
    for _ in range(400):
        noise = rng.standard_normal(50)
        values = prob.covariates.columns[:, arms].T @ prob.beta + noise
        fits.append(ols_fit(prob, arms, values))
    err = np.mean(fits, axis=0) - prob.beta
    assert np.max(np.abs(err)) < 0.05

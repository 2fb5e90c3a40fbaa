import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from posefusion.errors import InsufficientDataError, ParameterError
from posefusion.fusion import (
    FeatureObservation,
    FeatureSet,
    GridSpec,
    ModelParams,
    beta_loglik,
    beta_loglik_grad,
    beta_logpdf,
    beta_mle,
    beta_moments,
    class_posteriors,
    e_step,
    fit_semisupervised,
    fit_supervised,
    log_likelihood_features,
    log_marginal,
    m_step,
    objective,
    posterior,
    sample_features,
)

GRID = GridSpec.uniform((-2.0, 2.0), (-2.0, 2.0))
UNIFORM = np.full(16, 1 / 16)


def params(theta=0.5, a=(1, 1), b=(1, 1), alpha=None, mu=(0, 0), sigma=(1, 1)):
    alpha = np.tile(UNIFORM, (2, 1)) if alpha is None else alpha
    return ModelParams(theta, a, b, alpha, mu, sigma, GRID)


def discriminative():
    alpha = np.tile(UNIFORM, (2, 1))
    hot = np.full(16, 0.2 / 15)
    hot[5] = 0.8
    alpha[1] = hot
    return ModelParams(0.3, (1.5, 5.0), (4.0, 1.5), alpha, (-0.2, 0.8), (0.4, 0.15), GRID)


# --- densities and posterior ------------------------------------------------


def test_standard_likelihood():
    f = FeatureObservation(0.5, (0.1, 0.1), 0.0)
    expected = np.log(1.0) + np.log(1 / 16) + np.log(1 / np.sqrt(2 * np.pi))
    assert log_likelihood_features(params(), f, 0) == pytest.approx(expected, abs=1e-12)


def test_normal_term_maximal_at_mean():
    p = params(mu=(0.3, -0.2), sigma=(0.5, 0.25))
    base = log_likelihood_features(p, FeatureObservation(0.5, (0, 0), 0.3), 0)
    # the other terms are log(1) + log(1/16)
    assert base - np.log(1 / 16) == pytest.approx(-np.log(0.5 * np.sqrt(2 * np.pi)), abs=1e-12)
    for fo in (0.2, 0.35, 0.9):
        assert log_likelihood_features(p, FeatureObservation(0.5, (0, 0), fo), 0) < base


def test_beta_closed_form():
    assert 30 * 0.3 * 0.7**4 == pytest.approx(2.16090, abs=1e-5)
    assert beta_logpdf(0.3, 2.0, 5.0) == pytest.approx(np.log(30 * 0.3 * 0.7**4), abs=1e-12)
    x = np.linspace(0.01, 0.99, 20)
    np.testing.assert_allclose(beta_logpdf(x, 2.5, 0.7), stats.beta.logpdf(x, 2.5, 0.7), rtol=1e-12)


def test_beta_logpdf_clamps_endpoints():
    assert np.isfinite(beta_logpdf(0.0, 0.5, 2.0))
    assert np.isfinite(beta_logpdf(1.0, 3.0, 0.5))


@pytest.mark.parametrize("theta", [0.5, 0.2])
def test_symmetric_model_returns_prior(theta):
    p = params(theta=theta, a=(2, 2), b=(3, 3), mu=(0.1, 0.1))
    rng = np.random.default_rng(0)
    data = FeatureSet(rng.random(50), rng.uniform(-3, 3, (50, 2)), rng.uniform(-1, 1, 50))
    np.testing.assert_allclose(posterior(p, data), theta, atol=1e-12)


def test_single_discriminative_feature_bayes_rule():
    p = params(theta=0.3, mu=(0.0, 0.5), sigma=(0.4, 0.2))
    fo = 0.35
    l0 = np.exp(-0.5 * (fo / 0.4) ** 2) / (0.4 * np.sqrt(2 * np.pi))
    l1 = np.exp(-0.5 * ((fo - 0.5) / 0.2) ** 2) / (0.2 * np.sqrt(2 * np.pi))
    expected = 0.3 * l1 / (0.3 * l1 + 0.7 * l0)
    assert posterior(p, FeatureObservation(0.7, (1.0, -1.0), fo)) == pytest.approx(expected, abs=1e-12)


def test_label_swap_symmetry():
    p = discriminative()
    data = sample_features(p, 200, np.random.default_rng(1))
    np.testing.assert_allclose(posterior(p.swap_classes(), data), 1 - posterior(p, data), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_posteriors_normalized(seed):
    rng = np.random.default_rng(seed)
    p = discriminative()
    data = FeatureSet(rng.random(20), rng.uniform(-10, 10, (20, 2)), rng.uniform(-1, 1, 20))
    P = class_posteriors(p, data)
    assert np.all((P >= 0) & (P <= 1))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


# --- types --------------------------------------------------------------------


def test_observation_validation():
    with pytest.raises(ParameterError):
        FeatureObservation(1.5, (0, 0), 0.0)
    with pytest.raises(ParameterError):
        FeatureObservation(0.5, (0, 0), -1.5)
    with pytest.raises(ParameterError):
        FeatureObservation(0.5, (0, 0), 0.0, label=2)


def test_params_validation():
    with pytest.raises(ParameterError):
        params(theta=1.0)
    with pytest.raises(ParameterError):
        params(sigma=(0.0, 1.0))
    with pytest.raises(ParameterError):
        params(alpha=np.full((2, 16), 0.1))


def test_grid_clamps_outside_positions():
    idx = GRID.bin_index([[-100, -100], [100, 100], [-1.5, 1.5], [2.0, -2.0]])
    np.testing.assert_array_equal(idx, [0, 15, 3, 12])
    with pytest.raises(ParameterError):
        GridSpec([0, 0, 1], [0, 1])


# --- supervised fit ------------------------------------------------------------


def test_two_samples_one_per_class():
    data = FeatureSet([0.3, 0.8], [[0, 0], [1, 1]], [-0.2, 0.6], [0, 1])
    p = fit_supervised(data, gain=1.0)
    assert p.theta == pytest.approx(0.5)
    np.testing.assert_allclose(p.mu, [-0.2, 0.6])


@pytest.mark.parametrize("beta_fit", ["moments", "mle"])
def test_duplication_equals_gain(beta_fit):
    data = sample_features(discriminative(), 400, np.random.default_rng(2))
    pos = data.label == 1
    dup = FeatureSet.concat(data.subset(~pos), *[data.subset(pos)] * 10)
    a = fit_supervised(data, gain=10.0, grid=GRID, beta_fit=beta_fit)
    b = fit_supervised(dup, gain=1.0, grid=GRID, beta_fit=beta_fit)
    tol = 1e-12 if beta_fit == "moments" else 1e-9
    np.testing.assert_allclose(a.vector(), b.vector(), rtol=tol, atol=tol)


def test_moments_recover_beta():
    x = np.random.default_rng(3).beta(3.0, 2.0, 100_000)
    a, b = beta_moments(x, np.ones_like(x))
    assert a == pytest.approx(3.0, rel=0.05)
    assert b == pytest.approx(2.0, rel=0.05)


def test_supervised_needs_both_classes():
    with pytest.raises(InsufficientDataError):
        fit_supervised(FeatureSet([0.3], [[0, 0]], [0.0], [1]))


# --- weighted Beta MLE -----------------------------------------------------------


def test_weighted_beta_mle_recovers_and_is_stationary():
    rng = np.random.default_rng(4)
    x = rng.beta(2.5, 4.0, 100_000)
    w = rng.uniform(0.5, 1.0, x.size)
    fit = beta_mle(x, w)
    assert fit.converged
    assert fit.a == pytest.approx(2.5, rel=0.05)
    assert fit.b == pytest.approx(4.0, rel=0.05)
    s1, s2 = np.dot(w, np.log(x)), np.dot(w, np.log1p(-x))
    g = beta_loglik_grad(fit.a, fit.b, s1, s2, w.sum())
    assert np.abs(g).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 20), st.floats(0.2, 20), st.floats(-5, -0.01), st.floats(-5, -0.01))
def test_beta_gradient_matches_finite_differences(a, b, s1, s2):
    h = 1e-6
    g = beta_loglik_grad(a, b, s1, s2, 3.0)
    fd = np.array(
        [
            (beta_loglik(a + h, b, s1, s2, 3.0) - beta_loglik(a - h, b, s1, s2, 3.0)) / (2 * h),
            (beta_loglik(a, b + h, s1, s2, 3.0) - beta_loglik(a, b - h, s1, s2, 3.0)) / (2 * h),
        ]
    )
    scale = np.maximum(np.abs(g), 1.0)
    assert np.all(np.abs(g - fd) / scale < 1e-4)


def test_beta_mle_matches_scipy_fit():
    x = np.random.default_rng(5).beta(0.7, 1.8, 5000)
    fit = beta_mle(x, np.ones_like(x))
    a, b, _, _ = stats.beta.fit(x, floc=0, fscale=1)
    assert fit.a == pytest.approx(a, rel=1e-3)
    assert fit.b == pytest.approx(b, rel=1e-3)


# --- EM -----------------------------------------------------------------------------


def split(data, n_fo, rng):
    idx = rng.permutation(len(data))
    return data.subset(np.sort(idx[:n_fo])), data.subset(np.sort(idx[n_fo:])).without_labels()


def test_e_step_uninformative():
    p = params(theta=0.37)
    data = sample_features(discriminative(), 30, np.random.default_rng(6))
    np.testing.assert_allclose(e_step(p, data), 0.37, atol=1e-12)


def test_e_step_confident_and_idempotent():
    p = discriminative()
    lo, hi = GRID.bin_bounds(5)
    f = FeatureSet([0.95], [(lo + hi) / 2], [0.8])
    assert e_step(p, f)[0] > 0.99
    data = sample_features(p, 100, np.random.default_rng(7))
    np.testing.assert_array_equal(e_step(p, data), e_step(p, data))


def test_m_step_hard_assignments_equal_supervised():
    rng = np.random.default_rng(8)
    data = sample_features(discriminative(), 600, rng)
    # hard responsibilities equal to the held-back labels
    idx = rng.permutation(len(data))
    lab, unl_full = data.subset(np.sort(idx[:100])), data.subset(np.sort(idx[100:]))
    q = unl_full.label.astype(float)
    p_em = m_step(lab, unl_full.without_labels(), q, grid=GRID)
    p_sup = fit_supervised(FeatureSet.concat(lab, unl_full), gain=1.0, grid=GRID, beta_fit="mle")
    np.testing.assert_allclose(p_em.vector(), p_sup.vector(), atol=1e-9)


def test_m_step_without_unlabeled_is_supervised():
    data = sample_features(discriminative(), 300, np.random.default_rng(9))
    p_em = m_step(data, FeatureSet.empty(), np.zeros(0), balance=True, gain=10.0, grid=GRID)
    p_sup = fit_supervised(data, gain=10.0, grid=GRID, beta_fit="mle")
    np.testing.assert_allclose(p_em.vector(), p_sup.vector(), atol=1e-12)


def test_m_step_rejects_bad_responsibilities():
    data = sample_features(discriminative(), 50, np.random.default_rng(10))
    with pytest.raises(ParameterError):
        m_step(data, data.without_labels(), np.full(50, 1.5), grid=GRID)


def test_em_without_unlabeled_stops_after_one_iteration():
    data = sample_features(discriminative(), 300, np.random.default_rng(11))
    p, trace = fit_semisupervised(data, FeatureSet.empty(), grid=GRID)
    assert len(trace) == 1
    np.testing.assert_allclose(p.vector(), fit_supervised(data, gain=10.0, grid=GRID, beta_fit="mle").vector(), atol=1e-12)


@pytest.mark.parametrize("balance,gain", [(True, 10.0), (False, 1.0), (True, 1.0)])
def test_em_trace_nondecreasing(balance, gain):
    for seed in range(5):
        rng = np.random.default_rng([12, seed])
        data = sample_features(discriminative(), 800, rng)
        lab, unl = split(data, 20, rng)
        _, trace = fit_semisupervised(lab, unl, balance=balance, gain=gain, grid=GRID)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) >= -1e-9), np.diff(trace).min()


def test_em_needs_labels_or_init():
    data = sample_features(discriminative(), 50, np.random.default_rng(13))
    with pytest.raises(InsufficientDataError):
        fit_semisupervised(data.subset(data.label == 1), data.without_labels())
    p, trace = fit_semisupervised(FeatureSet.empty(), data.without_labels(), init=discriminative())
    assert np.all(np.diff(trace) >= -1e-9)


# --- objective ---------------------------------------------------------------------


def direct_log_joint(p, data, c):
    bins = p.grid.bin_index(data.f_xy)
    prior = p.theta if c == 1 else 1 - p.theta
    return (
        np.log(prior)
        + stats.beta.logpdf(data.f_g, p.a[c], p.b[c])
        + np.log(p.alpha[c, bins])
        + stats.norm.logpdf(data.f_o, p.mu[c], p.sigma[c])
    )


def test_objective_at_exact_posteriors_is_marginal_likelihood():
    p = discriminative()
    data = sample_features(p, 200, np.random.default_rng(14)).without_labels()
    q = e_step(p, data)
    marginal = np.log(np.exp(direct_log_joint(p, data, 0)) + np.exp(direct_log_joint(p, data, 1)))
    value = objective(p, q, FeatureSet.empty(), data, smoothing=0.0)
    assert value == pytest.approx(marginal.sum(), rel=1e-10)
    np.testing.assert_allclose(log_marginal(p, data), marginal, rtol=1e-10)


def test_objective_single_labeled_sample():
    p = discriminative()
    one = FeatureSet([0.4], [[0.3, -0.2]], [0.1], [1])
    expected = direct_log_joint(p, one, 1)[0]
    assert objective(p, np.zeros(0), one, FeatureSet.empty(), smoothing=0.0) == pytest.approx(expected, rel=1e-12)


def test_objective_entropy_vanishes_for_hard_q():
    p = discriminative()
    data = sample_features(p, 50, np.random.default_rng(15))
    q = data.label.astype(float)
    expected = sum(direct_log_joint(p, data.subset([i]), int(c))[0] for i, c in enumerate(data.label))
    assert objective(p, q, FeatureSet.empty(), data.without_labels(), smoothing=0.0) == pytest.approx(expected, rel=1e-12)


def test_objective_bounded_by_marginal():
    p = discriminative()
    data = sample_features(p, 100, np.random.default_rng(16)).without_labels()
    q = np.random.default_rng(17).random(100)
    assert objective(p, q, FeatureSet.empty(), data, smoothing=0.0) <= log_marginal(p, data).sum() + 1e-9


# --- sampling ---------------------------------------------------------------------


def test_truncated_orientation_stays_in_range():
    p = params(mu=(0.9, -0.9), sigma=(0.5, 0.5))
    data = sample_features(p, 2000, np.random.default_rng(18), truncate_fo=True)
    assert np.all(np.abs(data.f_o) <= 1)
    assert np.abs(data.f_o).max() < 1.0


def test_sampling_silent_and_reproducible():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = sample_features(discriminative(), 100, np.random.default_rng(19))
    b = sample_features(discriminative(), 100, np.random.default_rng(19))
    np.testing.assert_array_equal(a.f_g, b.f_g)
    np.testing.assert_array_equal(a.f_xy, b.f_xy)


def test_beta_mle_single_value_stays_bounded():
    from posefusion.fusion import BETA_CEIL

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = beta_mle(np.full(5, 0.82), np.ones(5))
    assert fit.converged
    assert np.isfinite(fit.a) and max(fit.a, fit.b) <= BETA_CEIL
    # the mode follows the data point
    assert (fit.a - 1) / (fit.a + fit.b - 2) == pytest.approx(0.82, abs=1e-3)

import numpy as np
import pytest

from gppi.errors import NumericalError
from gppi.gp import GpModel, KernelHyper, TrainingSet, posterior_predict
from gppi.moments import (GaussianBelief, moment_match, predict_increment,
                          _stacks)
from gppi.oracles import mc_increment_moments


def _random_model(rng, n=3, n_points=15, shared=False):
    X = rng.normal(size=(n_points, n))
    Y = 0.1 * rng.normal(size=(n_points, n))
    if shared:
        w = rng.uniform(0.5, 2.0, n)
        hyp = [KernelHyper.create(0.5 + 0.2 * d, 0.05 + 0.01 * d, w)
               for d in range(n)]
    else:
        hyp = [KernelHyper.create(0.5 + 0.2 * d, 0.05,
                                  rng.uniform(0.5, 2.0, n))
               for d in range(n)]
    return GpModel.from_data(TrainingSet(X, Y), hyp)


def _random_input(rng, n):
    m = 0.5 * rng.normal(size=n)
    a = 0.3 * rng.normal(size=(n, n))
    return m, a @ a.T + 0.05 * np.eye(n)


class TestPrediction:
    def test_empty_model_prior(self):
        model = GpModel.empty(2)
        pred = predict_increment(model, [0.1, 0.2], 0.3 * np.eye(2))
        assert np.allclose(pred.mu_f, 0.0)
        assert np.allclose(pred.sigma_f, np.diag([1.01, 1.01]))
        assert np.allclose(pred.cov_x_dx, 0.0)

    def test_interpolates_training_point_small_noise(self):
        X = np.linspace(-1, 1, 4)[:, None]
        Y = np.cos(2 * X)
        model = GpModel.from_data(TrainingSet(X, Y),
                                  [KernelHyper.create(1.0, 1e-6, [1.5])])
        pred = predict_increment(model, X[2], np.zeros((1, 1)))
        assert abs(pred.mu_f[0] - Y[2, 0]) < 1e-4

    def test_vanishing_input_variance_matches_point_posterior(self, rng):
        model = _random_model(rng)
        m, _ = _random_input(rng, 3)
        pred = predict_increment(model, m, 1e-12 * np.eye(3))
        mean_pt, var_pt = posterior_predict(model, m)
        assert np.allclose(pred.mu_f, mean_pt, atol=1e-8)
        assert np.allclose(np.diag(pred.sigma_f), var_pt, atol=1e-8)
        off = pred.sigma_f - np.diag(np.diag(pred.sigma_f))
        assert np.max(np.abs(off)) < 1e-8

    @pytest.mark.parametrize("shared", [False, True])
    def test_directional_derivatives_match_fd(self, rng, shared):
        model = _random_model(rng, shared=shared)
        m, S = _random_input(rng, 3)
        K = 4
        dm = rng.normal(size=(3, K))
        dS = rng.normal(size=(3, 3, K))
        dS = 0.5 * (dS + np.transpose(dS, (1, 0, 2)))
        pred = predict_increment(model, m, S, dm, dS)
        eps = 1e-6
        for k in range(K):
            hi = predict_increment(model, m + eps * dm[:, k],
                                   S + eps * dS[:, :, k])
            lo = predict_increment(model, m - eps * dm[:, k],
                                   S - eps * dS[:, :, k])
            assert np.allclose((hi.mu_f - lo.mu_f) / (2 * eps),
                               pred.jac.dmu[:, k], atol=2e-7)
            assert np.allclose((hi.sigma_f - lo.sigma_f) / (2 * eps),
                               pred.jac.dsigma[:, :, k], atol=2e-7)
            assert np.allclose((hi.cov_x_dx - lo.cov_x_dx) / (2 * eps),
                               pred.jac.dcov[:, :, k], atol=2e-7)

    def test_shared_fast_path_equals_general_path(self, rng):
        model = _random_model(rng, shared=True)
        st = _stacks(model)
        assert st.shared_w
        m, S = _random_input(rng, 3)
        dm = rng.normal(size=(3, 2))
        dS = rng.normal(size=(3, 3, 2))
        dS = 0.5 * (dS + np.transpose(dS, (1, 0, 2)))
        fast = predict_increment(model, m, S, dm, dS)
        st.shared_w = False
        try:
            general = predict_increment(model, m, S, dm, dS)
        finally:
            st.shared_w = True
        assert np.allclose(fast.mu_f, general.mu_f, atol=1e-13)
        assert np.allclose(fast.sigma_f, general.sigma_f, atol=1e-13)
        assert np.allclose(fast.cov_x_dx, general.cov_x_dx, atol=1e-13)
        assert np.allclose(fast.jac.dmu, general.jac.dmu, atol=1e-12)
        assert np.allclose(fast.jac.dsigma, general.jac.dsigma, atol=1e-12)
        assert np.allclose(fast.jac.dcov, general.jac.dcov, atol=1e-12)

    def test_monte_carlo_oracle_1d(self):
        rng = np.random.default_rng(12)
        X = rng.uniform(-1, 1, (3, 1))
        Y = np.sin(2 * X)
        model = GpModel.from_data(TrainingSet(X, Y),
                                  [KernelHyper.create(1.0, 0.1, [2.0])])
        pred = predict_increment(model, [0.3], [[0.04]])
        est = mc_increment_moments(model, [0.3], [[0.04]], 10 ** 6, rng)
        assert abs(pred.mu_f[0] - est["mean"][0]) < 3 * est["mean_se"][0]
        assert abs(pred.sigma_f[0, 0] - est["var"][0]) < 3 * est["var_se"][0]
        assert abs(pred.cov_x_dx[0, 0] - est["cov"][0, 0]) \
            < 3 * est["cov_se"][0, 0]


class TestBeliefPropagation:
    def test_prior_fallback_step(self):
        model = GpModel.empty(2)
        plant_G = lambda x: np.array([[0.0], [1.0]])
        b = GaussianBelief.observed([0.4, -0.1])
        out = moment_match(model, b, [0.0], plant_G, 0.02)
        assert np.allclose(out.mu, b.mu)
        assert np.allclose(out.sigma, np.diag([1.01, 1.01]))

    def test_observed_initial_state_has_zero_jacobians(self):
        b = GaussianBelief.observed([1.0, 2.0])
        assert b.is_observed
        assert not np.any(b.dmu_dx0) and not np.any(b.dsigma_dx0)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_chained_jacobians_match_fd(self, k, cartpole, cartpole_model):
        rng = np.random.default_rng(4)
        us = rng.uniform(-2, 2, size=(k, 1))
        x0 = np.array([0.1, -0.2, 0.4, 0.3])

        def roll(x0v, jac):
            b = GaussianBelief.observed(x0v)
            for i in range(k):
                b = moment_match(cartpole_model, b, us[i],
                                 cartpole.control_matrix, 0.02,
                                 plant_G_jac=cartpole.control_matrix_jac,
                                 compute_jac=jac)
            return b

        b = roll(x0, True)
        eps = 1e-4
        fd_mu = np.zeros((4, 4))
        fd_sig = np.zeros((4, 4, 4))
        for j in range(4):
            d = np.zeros(4)
            d[j] = eps
            hi, lo = roll(x0 + d, False), roll(x0 - d, False)
            fd_mu[:, j] = (hi.mu - lo.mu) / (2 * eps)
            fd_sig[:, :, j] = (hi.sigma - lo.sigma) / (2 * eps)
        assert np.max(np.abs(b.dmu_dx0 - fd_mu)) \
            <= 1e-4 * max(np.max(np.abs(fd_mu)), 1e-12)
        assert np.max(np.abs(b.dsigma_dx0 - fd_sig)) \
            <= 1e-4 * max(np.max(np.abs(fd_sig)), 1e-12)

    def test_psd_preserved_over_rollout(self, cartpole, cartpole_model, rng):
        b = GaussianBelief.observed([0.0, 0.0, 0.1, 0.0])
        for t in range(60):
            b = moment_match(cartpole_model, b, rng.uniform(-3, 3, 1),
                             cartpole.control_matrix, 0.02,
                             compute_jac=False)
            b.validate()
            eig = np.linalg.eigvalsh(b.sigma)
            assert eig[0] >= -1e-12 * np.trace(b.sigma)

    def test_invalid_covariance_rejected(self):
        model = GpModel.empty(2)
        bad = GaussianBelief(np.zeros(2), np.array([[1.0, 0.0], [0.0, -0.5]]),
                             np.zeros((2, 2)), np.zeros((2, 2, 2)))
        with pytest.raises(NumericalError):
            moment_match(model, bad, [0.0], lambda x: np.eye(2)[:, :1], 0.02)

import numpy as np
import pytest

from gppi.errors import ConfigError
from gppi.gp import (GpModel, KernelHyper, TrainingSet, chol_with_jitter,
                     fit_hyperparameters, incorporate_sample, kernel_eval,
                     kernel_matrix, load_model, log_marginal_likelihood,
                     posterior_predict, save_model)


class TestKernel:
    def test_zero_distance_with_noise(self):
        h = KernelHyper.create(1.0, 0.1, [1.0])
        assert kernel_eval([0.3], [0.3], h, same_index=True) == pytest.approx(1.01)

    def test_decay_to_zero(self):
        h = KernelHyper.create(1.0, 0.1, [1.0])
        assert kernel_eval([0.0], [40.0], h) < 1e-200

    def test_unit_distance_value(self):
        h = KernelHyper.create(1.0, 0.1, [1.0])
        assert kernel_eval([0.0], [1.0], h) == pytest.approx(np.exp(-0.5),
                                                             rel=1e-12)

    def test_symmetry(self, rng):
        h = KernelHyper.create(0.7, 0.05, [2.0, 0.5])
        a, b = rng.normal(size=2), rng.normal(size=2)
        assert kernel_eval(a, b, h) == pytest.approx(kernel_eval(b, a, h))

    def test_nonfinite_rejected(self):
        h = KernelHyper.create(1.0, 0.1, [1.0])
        with pytest.raises(ConfigError):
            kernel_eval([np.nan], [0.0], h)

    def test_invalid_hyper_rejected(self):
        with pytest.raises(ConfigError):
            KernelHyper.create(-1.0, 0.1, [1.0])
        with pytest.raises(ConfigError):
            KernelHyper.create(1.0, 0.1, [0.0])


class TestMarginalLikelihood:
    def test_single_pair_zero_output(self):
        train = TrainingSet([[0.5]], [[0.0]])
        h = KernelHyper.create(1.0, 0.1, [1.0])
        lml, _ = log_marginal_likelihood(train, h, 0)
        expected = -0.5 * np.log(1.01) - 0.5 * np.log(2 * np.pi)
        assert lml == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        train = TrainingSet(rng.normal(size=(12, 3)), rng.normal(size=(12, 3)))
        h = KernelHyper.create(0.8, 0.2, [1.3, 0.5, 2.0])
        _, g = log_marginal_likelihood(train, h, 1)
        v = h.as_vector()
        for k in range(v.size):
            vp, vm = v.copy(), v.copy()
            vp[k] += 1e-6
            vm[k] -= 1e-6
            fp, _ = log_marginal_likelihood(train, KernelHyper.from_vector(vp), 1)
            fm, _ = log_marginal_likelihood(train, KernelHyper.from_vector(vm), 1)
            fd = (fp - fm) / 2e-6
            assert abs(g[k] - fd) <= 1e-5 * max(abs(fd), 1.0)

    def test_noisy_duplicate_large_negative_not_crash(self):
        train = TrainingSet([[0.5], [0.5]], [[0.3], [0.1]])
        h = KernelHyper.create(1.0, 1e-9, [1.0])
        lml, _ = log_marginal_likelihood(train, h, 0)
        assert np.isfinite(lml) or lml == -1e18
        assert lml < -1e4


class TestFit:
    def test_recovers_known_hyperparameters(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-2, 2, size=(30, 1))
        K = kernel_matrix(X, KernelHyper.create(1.0, 1e-9, [4.0]),
                          with_noise=True)
        L = np.linalg.cholesky(K + 1e-12 * np.eye(30))
        y = L @ rng.standard_normal(30) + 0.05 * rng.standard_normal(30)
        hypers, status = fit_hyperparameters(
            TrainingSet(X, y[:, None]), rng=np.random.default_rng(1))
        assert status == "ok"
        truth = np.array([0.0, np.log(0.05), np.log(4.0)])
        got = hypers[0].as_vector()
        assert np.all(np.abs(got - truth) <= 0.7)

    def test_monotone_vs_default_init(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-2, 2, size=(25, 1))
        y = np.sin(3 * X[:, 0]) + 0.05 * rng.standard_normal(25)
        train = TrainingSet(X, y[:, None])
        hypers, _ = fit_hyperparameters(train, rng=np.random.default_rng(2))
        f_default, _ = log_marginal_likelihood(
            train, KernelHyper.create(1.0, 0.1, [1.0]), 0)
        f_fit, _ = log_marginal_likelihood(train, hypers[0], 0)
        assert f_fit >= f_default

    def test_no_signal_shrinks_sigma_s(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(20, 1))
        y = 1e-4 * rng.standard_normal(20)
        hypers, _ = fit_hyperparameters(TrainingSet(X, y[:, None]),
                                        rng=np.random.default_rng(0))
        assert hypers[0].sigma_s < 0.05

    def test_shared_lengthscales_are_tied(self, rng):
        X = rng.normal(size=(20, 2))
        Y = rng.normal(size=(20, 2))
        hypers, _ = fit_hyperparameters(TrainingSet(X, Y), rng=rng,
                                        share_lengthscales=True,
                                        n_restarts=1, max_iters=40)
        assert np.array_equal(hypers[0].log_w, hypers[1].log_w)

    def test_requires_two_pairs(self):
        with pytest.raises(ConfigError):
            fit_hyperparameters(TrainingSet([[0.0]], [[0.0]]))


class TestIncorporate:
    def test_empty_to_one(self):
        model = GpModel.empty(2)
        G = lambda x: np.array([[0.0], [1.0]])
        model, status = incorporate_sample(model, [0.0, 0.0], [0.5],
                                           [0.1, 0.2], G, 0.02)
        assert status == "ok" and model.n_points == 1

    def test_zero_control_stores_raw_increment(self):
        model = GpModel.empty(2)
        G = lambda x: np.array([[0.0], [1.0]])
        model, _ = incorporate_sample(model, [0.0, 0.0], [0.0],
                                      [0.3, 0.4], G, 0.02)
        assert np.allclose(model.train.outputs[0], [0.3, 0.4])

    def test_linear_plant_control_subtraction_exact(self):
        a, g, dt = -0.7, 1.3, 0.02
        G = lambda x: np.array([[g]])
        x, u = np.array([0.9]), np.array([0.4])
        x_next = x + a * x * dt + g * u * dt
        model = GpModel.empty(1)
        model, _ = incorporate_sample(model, x, u, x_next, G, dt)
        assert model.train.outputs[0, 0] == pytest.approx(a * x[0] * dt,
                                                          abs=1e-15)

    def test_nonfinite_rejected_with_warning(self):
        model = GpModel.empty(1)
        G = lambda x: np.array([[1.0]])
        model2, status = incorporate_sample(model, [0.0], [0.0],
                                            [np.nan], G, 0.02)
        assert status == "rejected" and model2.n_points == 0

    def test_rank1_extension_matches_refactorization(self, rng):
        model = GpModel.empty(2)
        G = lambda x: np.array([[0.0], [1.0]])
        for _ in range(7):
            x = rng.normal(size=2)
            xn = x + 0.05 * rng.normal(size=2)
            model, _ = incorporate_sample(model, x, rng.normal(size=1),
                                          xn, G, 0.02)
        full = GpModel.from_data(model.train, model.hyper)
        for dim in range(2):
            assert np.allclose(model.alphas[dim], full.alphas[dim],
                               atol=1e-11)
            assert np.allclose(model.inv_grams[dim], full.inv_grams[dim],
                               atol=1e-10)

    def test_max_points_eviction(self, rng):
        model = GpModel.empty(1, max_points=5)
        G = lambda x: np.array([[1.0]])
        for i in range(9):
            model, _ = incorporate_sample(model, [float(i)], [0.0],
                                          [float(i) + 0.1], G, 0.02)
        assert model.n_points == 5


class TestPosterior:
    def test_empty_model_prior(self):
        model = GpModel.empty(2)
        mean, var = posterior_predict(model, [0.4, -0.2])
        assert np.allclose(mean, 0.0)
        assert np.allclose(var, 1.0 + 0.01)

    def test_reproduces_training_outputs_at_small_noise(self, rng):
        X = np.linspace(-1, 1, 5)[:, None]
        Y = np.sin(2 * X)
        model = GpModel.from_data(TrainingSet(X, Y),
                                  [KernelHyper.create(1.0, 1e-6, [1.0])])
        for i in range(5):
            mean, _ = posterior_predict(model, X[i])
            assert abs(mean[0] - Y[i, 0]) <= 1e-4 * max(abs(Y[i, 0]), 1e-3)

    def test_permutation_invariance(self, rng):
        X = rng.normal(size=(12, 2))
        Y = rng.normal(size=(12, 2))
        h = [KernelHyper.create(1.0, 0.1, [1.0, 1.0])] * 2
        m1 = GpModel.from_data(TrainingSet(X, Y), h)
        perm = rng.permutation(12)
        m2 = GpModel.from_data(TrainingSet(X[perm], Y[perm]), h)
        x = rng.normal(size=2)
        p1, v1 = posterior_predict(m1, x)
        p2, v2 = posterior_predict(m2, x)
        assert np.allclose(p1, p2, rtol=1e-12, atol=1e-12)
        assert np.allclose(v1, v2, rtol=1e-12, atol=1e-12)


class TestJitterAndPersistence:
    def test_jitter_ladder_recovers(self):
        X = np.array([[0.0], [1e-9]])
        h = KernelHyper.create(1.0, 1e-8, [1.0])
        K = kernel_matrix(X, h)
        L, jitter = chol_with_jitter(K)
        assert L.shape == (2, 2)

    def test_roundtrip(self, tmp_path, rng):
        X = rng.normal(size=(6, 2))
        Y = rng.normal(size=(6, 2))
        model = GpModel.from_data(
            TrainingSet(X, Y),
            [KernelHyper.create(0.9, 0.1, [1.0, 2.0])] * 2)
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        assert np.array_equal(back.train.inputs, model.train.inputs)
        x = rng.normal(size=2)
        assert np.allclose(posterior_predict(back, x)[0],
                           posterior_predict(model, x)[0], rtol=1e-13)

    def test_malformed_document(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"state_dim": 2}')
        with pytest.raises(ConfigError):
            load_model(p)

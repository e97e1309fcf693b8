"""Built-in oracle suite behind the `check` CLI subcommand.

Each check prints one pass/fail line; the full pytest suite covers far more,
but this gives a quick self-contained verification of the core numerics on
an installed package.
"""

from __future__ import annotations

import time

import numpy as np

from .control import (ControlSequence, CostSpec, backward_desirability,
                      desirability_gradient, forward_rollout, phi_step)
from .gp import (GpModel, KernelHyper, TrainingSet, fit_hyperparameters,
                 incorporate_sample, log_marginal_likelihood)
from .baselines import lqg_solve, riccati_residual
from .moments import GaussianBelief, predict_increment
from .oracles import (linear_chain_log_integral, mc_increment_moments,
                      path_integral_quadrature, quadrature_phi)
from .plants import make_plant


def _check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
    return bool(ok)


def check_phi_quadrature(rng, n_cases=40) -> bool:
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(1, 3))
        mu = rng.normal(size=n)
        a = rng.normal(size=(n, n)) * 0.6
        sigma = a @ a.T + 0.05 * np.eye(n)
        qd = rng.uniform(0.1, 3.0, size=n)
        x_d = rng.normal(size=n)
        lam = float(rng.uniform(0.3, 3.0))
        w = float(rng.uniform(0.02, 1.0))
        cost = CostSpec(np.diag(qd), x_d, lam, 0.02, 1)
        belief = GaussianBelief(mu, sigma, np.zeros((n, n)),
                                np.zeros((n, n, n)))
        phi, _, _ = phi_step(belief, cost, w)
        ref = quadrature_phi(mu, sigma, np.diag(qd), x_d, lam, w)
        worst = max(worst, abs(phi - ref) / abs(ref))
    return _check("phi vs adaptive quadrature", worst < 1e-6,
                  f"worst rel {worst:.2e}")


def check_moment_matching_mc(rng, n_cases=3) -> bool:
    ok = True
    for _ in range(n_cases):
        X = rng.uniform(-1, 1, (6, 1))
        Y = np.sin(2 * X) + 0.05 * rng.standard_normal((6, 1))
        model = GpModel.from_data(TrainingSet(X, Y),
                                  [KernelHyper.create(1.0, 0.1, [2.0])])
        mu = rng.uniform(-0.5, 0.5)
        var = rng.uniform(0.01, 0.1)
        pred = predict_increment(model, [mu], [[var]])
        est = mc_increment_moments(model, [mu], [[var]], 200_000, rng)
        ok &= abs(pred.mu_f[0] - est["mean"][0]) < 4 * est["mean_se"][0]
        ok &= abs(pred.sigma_f[0, 0] - est["var"][0]) < 4 * est["var_se"][0]
    return _check("moment matching vs Monte Carlo", ok)


def check_desirability_gradient(rng) -> bool:
    cp = make_plant("cartpole")
    model = GpModel.empty(4)
    x = np.zeros(4)
    for _ in range(50):
        u = rng.uniform(-8, 8, 1)
        xn = cp.step(x, u, rng)
        model, _ = incorporate_sample(model, x, u, xn, cp.control_matrix, 0.02)
        x = xn if np.linalg.norm(xn) < 20 else np.zeros(4)
    hy, _ = fit_hyperparameters(model.train, rng=rng, n_restarts=1,
                                max_iters=60, share_lengthscales=True)
    model = GpModel.from_data(model.train, hy)
    cost = CostSpec(np.diag([0.5, 0.05, 2.0, 0.05]), [0, 0, np.pi, 0],
                    1.0, 0.02, 15)
    us = ControlSequence(rng.uniform(-2, 2, (15, 1)))
    x0 = np.array([0.0, 0.1, 0.3, -0.2])
    traj = forward_rollout(model, x0, us, cp, cost)
    trace = desirability_gradient(traj, backward_desirability(traj, cost), cost)

    def logpsi(x0v, j):
        tr = forward_rollout(model, x0v, us, cp, cost, compute_jac=False)
        return backward_desirability(tr, cost).log_psi[j]

    worst = 0.0
    for j in (0, 7, 15):
        fd = np.zeros(4)
        for k in range(4):
            d = np.zeros(4)
            d[k] = 1e-5
            fd[k] = (logpsi(x0 + d, j) - logpsi(x0 - d, j)) / 2e-5
        denom = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, np.max(np.abs(trace.grad_psi_over_psi[j] - fd)) / denom)
    return _check("desirability gradient vs finite differences", worst < 1e-4,
                  f"worst rel {worst:.2e}")


def check_lml_gradient(rng) -> bool:
    X = rng.normal(size=(10, 2))
    Y = rng.normal(size=(10, 2))
    train = TrainingSet(X, Y)
    h = KernelHyper.create(0.8, 0.15, [1.0, 2.0])
    _, g = log_marginal_likelihood(train, h, 0)
    v = h.as_vector()
    worst = 0.0
    for k in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[k] += 1e-6
        vm[k] -= 1e-6
        fp, _ = log_marginal_likelihood(train, KernelHyper.from_vector(vp), 0)
        fm, _ = log_marginal_likelihood(train, KernelHyper.from_vector(vm), 0)
        fd = (fp - fm) / 2e-6
        worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-8))
    return _check("marginal likelihood gradient vs finite differences",
                  worst < 1e-5, f"worst rel {worst:.2e}")


def check_riccati(rng) -> bool:
    A = np.array([[1.0, 0.02], [0.0, 1.0]])
    B = np.array([[0.0], [0.02]])
    sol = lqg_solve(A, B, 0.1 * np.eye(2), np.array([[0.5]]),
                    np.eye(2), 60, x0=[1.0, 0.0])
    res = riccati_residual(sol, A, B, 0.1 * np.eye(2), np.array([[0.5]]))
    return _check("Riccati fixed point", res < 1e-10, f"residual {res:.2e}")


def check_path_integral(rng, fast=False) -> bool:
    lin = make_plant("linear", params=dict(A=[[-0.4]], Bc=[[1.0]],
                                           B=[[0.12]], sigma_omega=[[1.0]]))
    model = GpModel.empty(1)
    x = np.array([0.6])
    for _ in range(160):
        u = rng.uniform(-1.5, 1.5, 1)
        xn = lin.step(x, u, rng)
        model, _ = incorporate_sample(model, x, u, xn, lin.control_matrix, 0.02)
        x = xn if abs(xn[0]) < 2.4 else np.array([0.6])
    hy, _ = fit_hyperparameters(model.train, rng=rng, n_restarts=1, max_iters=60)
    model = GpModel.from_data(model.train, hy)
    cost = CostSpec([[0.8]], [0.25], 1.3, 0.02, 5)
    us = ControlSequence(rng.uniform(-0.5, 0.5, (5, 1)))
    traj = forward_rollout(model, [0.55], us, lin, cost, compute_jac=False)
    lp = backward_desirability(traj, cost).log_psi[0]
    ref = path_integral_quadrature(model, [0.55], us.u, lin, cost,
                                   nodes_per_dim=10 if fast else 14)
    rel = abs(lp - ref) / abs(ref)
    return _check("recursion vs tensor path quadrature (1-D)", rel < 1e-4,
                  f"rel {rel:.2e}")


def run_checks(fast: bool = False) -> bool:
    rng = np.random.default_rng(20240817)
    t0 = time.time()
    results = [
        check_phi_quadrature(rng, n_cases=15 if fast else 40),
        check_lml_gradient(rng),
        check_riccati(rng),
        check_desirability_gradient(rng),
        check_path_integral(rng, fast=fast),
    ]
    if not fast:
        results.append(check_moment_matching_mc(rng))
    print(f"{sum(results)}/{len(results)} checks passed "
          f"({time.time() - t0:.1f}s)")
    return all(results)

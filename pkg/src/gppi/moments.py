"""Gaussian-input moments of the GP increment model, with derivatives.

Given an input belief N(m, S), the exact squared-exponential moments of the
posterior increment are computed per output dimension: predictive mean,
predictive covariance (including the noise floor) and the input-increment
cross covariance.  The same routine evaluates directional derivatives of all
three along caller-supplied directions (dm, dS) in input-moment space; the
belief propagation step uses this to advance d{mu,Sigma}/dx0 carriers by the
chain rule without any numerical differentiation.  Feeding the canonical
basis directions recovers the full partial-derivative tensors.

All inner loops over output dimensions and dimension pairs are batched
through numpy's stacked linalg; this routine sits on the hot path of every
rollout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .gp import GpModel

# the general path loops over dimension pairs; when every output dimension
# shares one set of length scales all pair matrices are scalar multiples of a
# single N x N matrix and a much cheaper path applies

SYM_TOL = 1e-10
PSD_TOL = 1e-12


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class GaussianBelief:
    """State belief at one horizon step plus sensitivities to the rollout start.

    dmu_dx0[i, k]       = d mu[i] / d x0[k]
    dsigma_dx0[i, j, k] = d sigma[i, j] / d x0[k]

    An observed (deterministic) initial state carries zero covariance and
    all-zero Jacobian fields; the first propagation step seeds the chain rule
    with the identity in that case.
    """

    mu: np.ndarray
    sigma: np.ndarray
    dmu_dx0: np.ndarray
    dsigma_dx0: np.ndarray

    @staticmethod
    def observed(x) -> "GaussianBelief":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.shape[0]
        return GaussianBelief(x, np.zeros((n, n)), np.zeros((n, n)),
                              np.zeros((n, n, n)))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def is_observed(self) -> bool:
        return not np.any(self.sigma)

    def validate(self) -> None:
        s = self.sigma
        scale = max(float(np.max(np.abs(s))), 1.0)
        if np.max(np.abs(s - s.T)) > SYM_TOL * scale:
            raise NumericalError("belief covariance not symmetric")
        eig = np.linalg.eigvalsh(0.5 * (s + s.T))
        floor = -PSD_TOL * max(float(np.trace(s)), 1e-300)
        if eig.size and eig[0] < floor:
            raise NumericalError(
                f"belief covariance not PSD (min eig {eig[0]:.3e})")


@dataclass
class IncrementJacobian:
    """Directional derivatives of the increment moments.

    Columns index the K supplied directions; with canonical basis directions
    these are the raw partials with respect to (mu_in, sigma_in).
    """

    dmu: np.ndarray     # (n_out, K)
    dsigma: np.ndarray  # (n_out, n_out, K)
    dcov: np.ndarray    # (n_in, n_out, K)


@dataclass
class IncrementPrediction:
    """One-step increment moments under a Gaussian input belief."""

    mu_f: np.ndarray        # (n,)
    sigma_f: np.ndarray     # (n, n)
    cov_x_dx: np.ndarray    # (n, n); rows input state, cols increment dim
    jac: IncrementJacobian | None = None


class _ModelStacks:
    """Per-model arrays stacked over output dimensions, cached on the model."""

    def __init__(self, model: GpModel):
        n = model.state_dim
        self.w = np.stack([h.w for h in model.hyper])                  # (E, n)
        self.inv_w = 1.0 / self.w
        self.two_log_ss = np.array([2.0 * h.log_sigma_s for h in model.hyper])
        self.prior_var = np.array([h.sigma_s ** 2 + h.sigma_w ** 2
                                   for h in model.hyper])
        self.sig_s2 = np.array([h.sigma_s ** 2 for h in model.hyper])
        if model.n_points:
            self.alphas = np.stack(model.alphas)                       # (E, N)
            self.inv_grams = np.stack(model.inv_grams)                 # (E, N, N)
        else:
            self.alphas = np.zeros((n, 0))
            self.inv_grams = np.zeros((n, 0, 0))
        ai, bi = np.triu_indices(n)
        self.pair_a = ai
        self.pair_b = bi
        self.diag_mask = ai == bi
        self.shared_w = bool(np.all(self.w == self.w[0]))


def _stacks(model: GpModel) -> _ModelStacks:
    cache = model.__dict__.get("_stacks_cache")
    if cache is None:
        cache = _ModelStacks(model)
        model.__dict__["_stacks_cache"] = cache
    return cache


# ---------------------------------------------------------------------------
# Core computation
# ---------------------------------------------------------------------------

def predict_increment(model: GpModel, mu_in, sigma_in, dmu_dirs=None,
                      dsigma_dirs=None) -> IncrementPrediction:
    """Exact SE-kernel moments of the increment under N(mu_in, sigma_in).

    dmu_dirs (n, K) and dsigma_dirs (n, n, K) optionally request directional
    derivatives of all outputs along K directions of the input moments.
    """
    m = np.atleast_1d(np.asarray(mu_in, dtype=float))
    S = np.atleast_2d(np.asarray(sigma_in, dtype=float))
    n = model.state_dim
    want_jac = dmu_dirs is not None
    if want_jac:
        dm = np.asarray(dmu_dirs, dtype=float).reshape(n, -1)
        Kd = dm.shape[1]
        dS = (np.zeros((n, n, Kd)) if dsigma_dirs is None
              else np.asarray(dsigma_dirs, dtype=float).reshape(n, n, Kd))

    if model.n_points == 0:
        sig = np.diag([h.sigma_s ** 2 + h.sigma_w ** 2 for h in model.hyper])
        jac = None
        if want_jac:
            jac = IncrementJacobian(np.zeros((n, Kd)), np.zeros((n, n, Kd)),
                                    np.zeros((n, n, Kd)))
        return IncrementPrediction(np.zeros(n), sig, np.zeros((n, n)), jac)

    st = _stacks(model)
    X = model.train.inputs
    N = X.shape[0]
    E = n
    zeta = X - m                                                  # (N, n)
    eye = np.eye(n)

    if st.shared_w:
        if not want_jac:
            return _predict_shared(model, st, zeta, S, None, None)
        return _predict_shared(model, st, zeta, S, dm, dS)

    # --- per-dimension: mean and input-output covariance ------------------
    A = S[None, :, :] + st.inv_w[:, None, :] * eye[None, :, :]   # (E, n, n)
    sign_a, logdet_a = np.linalg.slogdet(A)
    if np.any(sign_a <= 0):
        raise NumericalError("input covariance plus length scales not PD")
    Ta = np.linalg.solve(A, np.broadcast_to(zeta.T, (E, n, N)))  # (E, n, N)
    Ta = Ta.transpose(0, 2, 1)                                   # (E, N, n)
    half_ratio = 0.5 * (logdet_a + np.sum(np.log(st.w), axis=1)) # (E,)
    logq = st.two_log_ss[:, None] - half_ratio[:, None] \
        - 0.5 * np.einsum("enj,nj->en", Ta, zeta)                # (E, N)
    q = np.exp(logq)
    lq = st.alphas * q                                           # (E, N)
    mu_f = lq.sum(axis=1)                                        # (E,)
    v = np.einsum("enj,en->ej", Ta, lq)                          # (E, n)
    cov = (S @ v.T)                                              # (n, E)

    # --- pairs: predictive covariance --------------------------------------
    ai, bi = st.pair_a, st.pair_b
    P = ai.shape[0]
    eta = zeta[None, :, :] * st.w[:, None, :]                    # (E, N, n)
    logk = st.two_log_ss[:, None] \
        - 0.5 * np.einsum("enj,nj->en", eta, zeta)               # (E, N)
    g = st.w[ai] + st.w[bi]                                      # (P, n)
    R = S[None, :, :] * g[:, None, :] + eye[None, :, :]          # (P, n, n)
    sign_r, logdet_r = np.linalg.slogdet(R)
    if np.any(sign_r <= 0):
        raise NumericalError("pair normalization matrix not PD")
    Y = np.linalg.solve(R, np.broadcast_to(S, (P, n, n)))        # (P, n, n)
    Y = 0.5 * (Y + Y.transpose(0, 2, 1))
    eta_a, eta_b = eta[ai], eta[bi]                              # (P, N, n)
    ua = np.matmul(eta_a, Y)                                     # (P, N, n)
    row_a = logk[ai] + 0.5 * np.einsum("pnj,pnj->pn", ua, eta_a)
    ub = np.matmul(eta_b, Y)
    row_b = logk[bi] + 0.5 * np.einsum("pnj,pnj->pn", ub, eta_b)
    n2 = np.matmul(ua, eta_b.transpose(0, 2, 1))                 # (P, N, N)
    n2 += row_a[:, :, None]
    n2 += row_b[:, None, :]
    n2 -= 0.5 * logdet_r[:, None, None]
    Q = np.exp(n2, out=n2)
    alpha_a, alpha_b = st.alphas[ai], st.alphas[bi]              # (P, N)
    e2 = np.einsum("pn,pnm,pm->p", alpha_a, Q, alpha_b)

    vals = e2 - mu_f[ai] * mu_f[bi]
    tr = np.einsum("knm,knm->k", st.inv_grams, Q[st.diag_mask])
    model_var = np.maximum(st.sig_s2 - tr, 0.0) + st.prior_var - st.sig_s2
    sigma_f = np.zeros((n, n))
    sigma_f[ai, bi] = vals
    sigma_f[bi, ai] = vals
    sigma_f[np.arange(n), np.arange(n)] += model_var

    if not np.all(np.isfinite(sigma_f)) or not np.all(np.isfinite(mu_f)):
        raise NumericalError("moment computation overflowed")

    jac = None
    if want_jac:
        # --- per-dimension directional derivatives -------------------------
        dS_flat = dS.reshape(n, n * Kd)
        AinvdS = np.linalg.solve(A, np.broadcast_to(dS_flat, (E, n, n * Kd)))
        AinvdS = AinvdS.reshape(E, n, n, Kd)
        trA = np.einsum("eiik->ek", AinvdS)                      # (E, K)
        TdS = np.matmul(Ta, dS_flat).reshape(E, N, n, Kd)
        dlogq = -0.5 * trA[:, None, :] + np.matmul(Ta, dm)[:, :, :] \
            + 0.5 * np.einsum("enjk,enj->enk", TdS, Ta)          # (E, N, K)
        dmu = np.einsum("en,enk->ek", lq, dlogq)                 # (E, K)
        rhs = np.einsum("ijk,ej->eik", dS, v) \
            + lq.sum(axis=1)[:, None, None] * dm[None, :, :]     # (E, n, K)
        dva = np.einsum("enj,enk->ejk", Ta, lq[:, :, None] * dlogq) \
            - np.linalg.solve(A, rhs.reshape(E, n, Kd))
        dcov_en = np.einsum("ijk,ej->eik", dS, v) \
            + np.einsum("ij,ejk->eik", S, dva)                   # (E, n, K)
        dcov = dcov_en.transpose(1, 0, 2)                        # (n, E, K)

        # --- pair directional derivatives ----------------------------------
        B = alpha_a[:, :, None] * alpha_b[:, None, :] * Q        # (P, N, N)
        de2 = _pair_directional_batch(B, eta_a, eta_b, g, Y, R, dm, dS)
        dvals = de2 - dmu[ai] * mu_f[bi, None] - mu_f[ai, None] * dmu[bi]
        Bt = st.inv_grams * Q[st.diag_mask]
        dtr = _pair_directional_batch(
            Bt, eta, eta, g[st.diag_mask], Y[st.diag_mask], R[st.diag_mask],
            dm, dS)
        active = (st.sig_s2 - tr) > 0.0
        dsig = np.zeros((n, n, Kd))
        dsig[ai, bi, :] = dvals
        dsig[bi, ai, :] = dvals
        dsig[np.arange(n), np.arange(n), :] -= np.where(
            active[:, None], dtr, 0.0)
        jac = IncrementJacobian(dmu, dsig, dcov)

    return IncrementPrediction(mu_f, 0.5 * (sigma_f + sigma_f.T), cov, jac)


def _predict_shared(model: GpModel, st: "_ModelStacks", zeta, S, dm, dS):
    """Fast path for one shared set of length scales across output dims.

    Every pair matrix Q_ab equals sigma_s_a^2 sigma_s_b^2 Qbar for a single
    shared Qbar, so the whole covariance block costs one N x N exponential.
    Returns the same IncrementPrediction as the general path.
    """
    want_jac = dm is not None
    N, n = zeta.shape
    E = n
    w = st.w[0]
    sig2 = st.sig_s2                                             # (E,)
    eye = np.eye(n)

    A = S + np.diag(1.0 / w)
    sign_a, logdet_a = np.linalg.slogdet(A)
    if sign_a <= 0:
        raise NumericalError("input covariance plus length scales not PD")
    T = np.linalg.solve(A, zeta.T).T                             # (N, n)
    half_ratio = 0.5 * (logdet_a + float(np.sum(np.log(w))))
    logq0 = -half_ratio - 0.5 * np.einsum("nj,nj->n", T, zeta)   # (N,)
    qbar = np.exp(logq0)
    lq = sig2[:, None] * st.alphas * qbar[None, :]               # (E, N)
    mu_f = lq.sum(axis=1)
    v = lq @ T                                                   # (E, n)
    cov = S @ v.T                                                # (n, E)

    g = 2.0 * w
    R = S * g[None, :] + eye
    sign_r, logdet_r = np.linalg.slogdet(R)
    if sign_r <= 0:
        raise NumericalError("pair normalization matrix not PD")
    Y = np.linalg.solve(R, S)
    Y = 0.5 * (Y + Y.T)
    eta = zeta * w                                               # (N, n)
    u = eta @ Y                                                  # (N, n)
    r_row = -0.5 * np.einsum("nj,nj->n", eta, zeta) \
        + 0.5 * np.einsum("nj,nj->n", u, eta)                    # (N,)
    Kbar = u @ eta.T
    Kbar += r_row[:, None]
    Kbar += r_row[None, :]
    Kbar -= 0.5 * logdet_r
    Qbar = np.exp(Kbar, out=Kbar)                                # (N, N)

    QA = Qbar @ st.alphas.T                                      # (N, E)
    M2 = st.alphas @ QA                                          # (E, E)
    e2 = np.outer(sig2, sig2) * M2
    tr_base = np.einsum("enm,nm->e", st.inv_grams, Qbar)         # (E,)
    tr = sig2 ** 2 * tr_base
    model_var = np.maximum(st.sig_s2 - tr, 0.0) + st.prior_var - st.sig_s2
    sigma_f = e2 - np.outer(mu_f, mu_f)
    sigma_f[np.arange(n), np.arange(n)] += model_var
    sigma_f = 0.5 * (sigma_f + sigma_f.T)
    if not np.all(np.isfinite(sigma_f)) or not np.all(np.isfinite(mu_f)):
        raise NumericalError("moment computation overflowed")

    if not want_jac:
        return IncrementPrediction(mu_f, sigma_f, cov, None)

    Kd = dm.shape[1]
    dS_flat = dS.reshape(n, n * Kd)
    # mean and cross-covariance directions (shared d log q across dims)
    AinvdS = np.linalg.solve(A, dS_flat).reshape(n, n, Kd)
    trA = np.einsum("iik->k", AinvdS)
    TdS = (T @ dS_flat).reshape(N, n, Kd)
    dlogq = -0.5 * trA[None, :] + T @ dm \
        + 0.5 * np.einsum("njk,nj->nk", TdS, T)                  # (N, K)
    dmu = lq @ dlogq                                             # (E, K)
    rhs = np.einsum("ijk,ej->eik", dS, v) \
        + lq.sum(axis=1)[:, None, None] * dm[None, :, :]         # (E, n, K)
    dva = np.einsum("nj,enk->ejk", T, lq[:, :, None] * dlogq[None, :, :]) \
        - np.linalg.solve(A, rhs)
    dcov_en = np.einsum("ijk,ej->eik", dS, v) \
        + np.einsum("ij,ejk->eik", S, dva)
    dcov = dcov_en.transpose(1, 0, 2)                            # (n, E, K)

    # pair directions; per-pair weight sums reuse the shared Qbar products
    ai, bi = st.pair_a, st.pair_b
    scale = sig2[ai] * sig2[bi]                                  # (P,)
    s_row = st.alphas[ai] * QA[:, bi].T + st.alphas[bi] * QA[:, ai].T
    s_row *= scale[:, None]                                      # (P, N) = s1+s2
    sumB = scale * M2[ai, bi]
    s_z = np.einsum("pn,ni->pi", s_row, eta)                     # (P, n)
    c_dims = st.alphas[:, :, None] * eta[None, :, :]             # (E, N, n)
    QC = np.matmul(Qbar[None, :, :], c_dims)                     # (E, N, n)
    crossZ = np.einsum("pni,pnj->pij",
                       c_dims[ai], QC[bi]) * scale[:, None, None]
    diag_w = st.alphas[ai] * QA[:, bi].T * scale[:, None]        # s1 (P, N)
    diag_w2 = st.alphas[bi] * QA[:, ai].T * scale[:, None]       # s2 (P, N)
    Za = np.einsum("pn,ni,nj->pij", diag_w, eta, eta)
    Zb = np.einsum("pn,ni,nj->pij", diag_w2, eta, eta)
    Z = Za + Zb + crossZ + crossZ.transpose(0, 2, 1)

    de2 = _coeff_contract(Z, s_z, sumB, g, Y, R, dm, dS)
    dvals = de2 - dmu[ai] * mu_f[bi, None] - mu_f[ai, None] * dmu[bi]

    # model-variance trace term per dimension
    Wt = st.inv_grams * Qbar[None, :, :]                         # (E, N, N)
    st1 = Wt.sum(axis=2)
    st2 = Wt.sum(axis=1)
    sz_t = np.einsum("en,ni->ei", st1 + st2, eta)
    WH = np.matmul(Wt, eta)                                      # (E, N, n)
    crossT = np.matmul(eta.T[None, :, :], WH)                    # (E, n, n)
    Zt = np.einsum("en,ni,nj->eij", st1 + st2, eta, eta) \
        + crossT + crossT.transpose(0, 2, 1)
    dtr = _coeff_contract(Zt, sz_t, tr_base, g, Y, R, dm, dS)
    dtr *= sig2[:, None] ** 2
    active = (st.sig_s2 - tr) > 0.0

    dsig = np.zeros((n, n, Kd))
    dsig[ai, bi, :] = dvals
    dsig[bi, ai, :] = dvals
    dsig[np.arange(n), np.arange(n), :] -= np.where(active[:, None], dtr, 0.0)
    jac = IncrementJacobian(dmu, dsig, dcov)
    return IncrementPrediction(mu_f, sigma_f, cov, jac)


def _coeff_contract(Z, s_z, sumB, g, Y, R, dm, dS):
    """Shared-scale analogue of the per-pair directional contraction.

    Z (P, n, n), s_z (P, n), sumB (P,) with one common (g, Y, R).
    """
    P, n, _ = Z.shape
    mvec = s_z - g[None, :] * (s_z @ Y)
    out = mvec @ dm
    GY = g[:, None] * Y
    Pm = (np.eye(n) - GY) @ Z.transpose(0, 2, 1)                 # (P, n, n)
    Rt = R.T
    Pm = np.linalg.solve(Rt[None, :, :], Pm.transpose(0, 2, 1)).transpose(0, 2, 1)
    D = np.linalg.solve(Rt, np.diag(g))
    coeff = 0.5 * Pm.transpose(0, 2, 1) - 0.5 * sumB[:, None, None] * D[None]
    out = out + np.einsum("pij,ijk->pk", coeff, dS)
    return out


def _pair_directional_batch(B, eta_a, eta_b, g, Y, R, dm, dS):
    """Directional derivatives of sum_ij B_ij Q_ij for stacked pairs.

    B already carries the Q factor.  Returns (P, K).
    """
    P, N, n = eta_a.shape
    Kd = dm.shape[1]
    s1 = B.sum(axis=2)                                           # (P, N)
    s2 = B.sum(axis=1)
    sumB = s1.sum(axis=1)                                        # (P,)
    s_z = np.einsum("pn,pni->pi", s1, eta_a) \
        + np.einsum("pn,pni->pi", s2, eta_b)                     # (P, n)
    t = np.matmul(B, eta_b)                                      # (P, N, n)
    cross = np.matmul(eta_a.transpose(0, 2, 1), t)               # (P, n, n)
    Za = np.matmul((eta_a * s1[:, :, None]).transpose(0, 2, 1), eta_a)
    Zb = np.matmul((eta_b * s2[:, :, None]).transpose(0, 2, 1), eta_b)
    Z = Za + Zb + cross + cross.transpose(0, 2, 1)               # (P, n, n)

    mvec = s_z - g * np.einsum("pij,pj->pi", Y, s_z)             # (P, n)
    out = mvec @ dm                                              # (P, K)

    GY = g[:, :, None] * Y
    Pm = np.matmul(np.eye(n)[None, :, :] - GY, Z.transpose(0, 2, 1))
    Rt = R.transpose(0, 2, 1)
    Pm = np.linalg.solve(Rt, Pm.transpose(0, 2, 1)).transpose(0, 2, 1)
    D = np.linalg.solve(Rt, np.broadcast_to(np.eye(n), (P, n, n)) * g[:, :, None])
    coeff = 0.5 * Pm.transpose(0, 2, 1) - 0.5 * sumB[:, None, None] * D
    out = out + np.einsum("pij,ijk->pk", coeff, dS)
    return out


# ---------------------------------------------------------------------------
# Belief propagation
# ---------------------------------------------------------------------------

@dataclass
class StepMap:
    """Linearization of one belief-propagation step around its input.

    Written on the flattened (mu, vec Sigma) pair:
        d mu'    = mu_mu  d mu + mu_sig  d vec(Sigma)
        d Sigma' = sig_mu d mu + sig_sig d vec(Sigma)
    Used forward to advance d/dx0 carriers and backward (transposed) by the
    adjoint pass of the desirability gradient.
    """

    mu_mu: np.ndarray     # (n, n)
    mu_sig: np.ndarray    # (n, n^2)
    sig_mu: np.ndarray    # (n^2, n)
    sig_sig: np.ndarray   # (n^2, n^2)


def _canonical_directions(n: int):
    K = n + n * n
    dm = np.zeros((n, K))
    dm[:, :n] = np.eye(n)
    dS = np.zeros((n, n, K))
    idx = np.arange(n * n)
    dS.reshape(n * n, K)[idx, n + idx] = 1.0
    return dm, dS


def _assemble_step_map(pred: IncrementPrediction, dGu, dt: float,
                       n: int) -> StepMap:
    """Combine the canonical moment partials into the one-step linear map."""
    jac = pred.jac
    full_dsig = jac.dsigma + jac.dcov + np.transpose(jac.dcov, (1, 0, 2))
    mu_mu = np.eye(n) + jac.dmu[:, :n]
    if dGu is not None:
        mu_mu = mu_mu + dt * dGu
    mu_sig = jac.dmu[:, n:]
    sig_mu = full_dsig[:, :, :n].reshape(n * n, n)
    sig_sig = full_dsig[:, :, n:].reshape(n * n, n * n) + np.eye(n * n)
    return StepMap(mu_mu, mu_sig, sig_mu, sig_sig)


def moment_match(model: GpModel, belief_in: GaussianBelief, delta_u, plant_G,
                 dt: float, *, plant_G_jac=None, compute_jac: bool = True,
                 prediction_out: list | None = None,
                 step_map_out: list | None = None) -> GaussianBelief:
    """Propagate a Gaussian state belief one step.

    mu'    = mu + mu_f + G(mu) delta_u dt
    sigma' = sigma + sigma_f + cov + cov'

    The Jacobian carriers d{mu, sigma}/dx0 advance by the chain rule through
    the analytic moment partials; the control term contributes
    dt * d(G(mu) u)/dmu via the plant's analytic G Jacobian when supplied.
    `prediction_out` / `step_map_out` collect the per-step increment moments
    and the linearized step map (the latter feeds the adjoint gradient pass).
    """
    belief_in.validate()
    u = np.atleast_1d(np.asarray(delta_u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite control in moment_match")
    n = belief_in.dim

    if compute_jac:
        dm_dirs, dS_dirs = _canonical_directions(n)
        pred = predict_increment(model, belief_in.mu, belief_in.sigma,
                                 dm_dirs, dS_dirs)
    else:
        pred = predict_increment(model, belief_in.mu, belief_in.sigma)

    G = plant_G(belief_in.mu)
    mu_out = belief_in.mu + pred.mu_f + (G @ u) * dt
    sigma_out = belief_in.sigma + pred.sigma_f + pred.cov_x_dx + pred.cov_x_dx.T
    sigma_out = 0.5 * (sigma_out + sigma_out.T)
    if not np.all(np.isfinite(mu_out)):
        raise NumericalError("belief mean overflowed")

    if compute_jac:
        dGu = None
        if plant_G_jac is not None and np.any(u):
            dGu = np.einsum("ijk,j->ik", plant_G_jac(belief_in.mu), u)
        smap = _assemble_step_map(pred, dGu, dt, n)
        if belief_in.is_observed and not np.any(belief_in.dmu_dx0):
            dm_in = np.eye(n)
        else:
            dm_in = belief_in.dmu_dx0
        dS_in_flat = belief_in.dsigma_dx0.reshape(n * n, n)
        dmu_out = smap.mu_mu @ dm_in + smap.mu_sig @ dS_in_flat
        dsig_out = (smap.sig_mu @ dm_in
                    + smap.sig_sig @ dS_in_flat).reshape(n, n, n)
        dsig_out = 0.5 * (dsig_out + np.transpose(dsig_out, (1, 0, 2)))
        if step_map_out is not None:
            step_map_out.append(smap)
    else:
        dmu_out = np.zeros((n, n))
        dsig_out = np.zeros((n, n, n))

    out = GaussianBelief(mu_out, sigma_out, dmu_out, dsig_out)
    if prediction_out is not None:
        prediction_out.append(pred)
    return out

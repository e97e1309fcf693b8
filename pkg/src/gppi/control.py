"""Forward-backward path integral control on GP belief trajectories.

Forward: propagate the state belief under the current control sequence,
carrying d{mu, Sigma}/dx0 sensitivities.  Backward: accumulate the
desirability recursion and its gradient in log domain.  Update: the analytic
control correction delta_u = G^+ Sigma_f (grad Psi / Psi), damped by a
backtracking acceptance rule on log Psi_0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .gp import GpModel, incorporate_sample, refit
from .moments import GaussianBelief, IncrementPrediction, moment_match
from .rng import RngHub

logger = logging.getLogger(__name__)

LOG_PHI_FLOOR = -700.0
DAMPING_LADDER = tuple(0.5 ** k for k in range(7))  # 1 .. 1/64
EXPANSION_MAX = 256.0


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostSpec:
    """Quadratic state cost, temperature and horizon."""

    Q: np.ndarray              # (n, n) PSD
    x_d: np.ndarray            # (n,) or (T+1, n) desired state
    lam: float                 # temperature
    dt: float
    horizon_steps: int
    Q_terminal: np.ndarray | None = None  # defaults to Q

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", q)
        qt = self.Q_terminal if self.Q_terminal is not None else q
        object.__setattr__(self, "Q_terminal",
                           np.atleast_2d(np.asarray(qt, dtype=float)))
        object.__setattr__(self, "x_d", np.asarray(self.x_d, dtype=float))
        if self.lam <= 0 or self.dt <= 0 or self.horizon_steps < 1:
            raise ConfigError("require lam > 0, dt > 0, horizon_steps >= 1")
        for mat in (self.Q, self.Q_terminal):
            if np.max(np.abs(mat - mat.T)) > 1e-12 * max(1.0, np.max(np.abs(mat))):
                raise ConfigError("cost matrices must be symmetric")
            if np.any(np.linalg.eigvalsh(mat) < -1e-10):
                raise ConfigError("cost matrices must be PSD")

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def target_at(self, step: int) -> np.ndarray:
        if self.x_d.ndim == 1:
            return self.x_d
        return self.x_d[min(step, self.x_d.shape[0] - 1)]

    def state_cost(self, x, step: int | None = None) -> float:
        d = np.asarray(x, dtype=float) - self.target_at(
            self.horizon_steps if step is None else step)
        return float(d @ self.Q @ d)

    def terminal_cost(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.target_at(self.horizon_steps)
        return float(d @ self.Q_terminal @ d)

    def tail(self, start: int) -> "CostSpec":
        """Cost over the remaining horizon starting at absolute step `start`."""
        if start < 0 or start >= self.horizon_steps:
            raise ConfigError("tail start out of range")
        x_d = self.x_d if self.x_d.ndim == 1 else self.x_d[start:]
        return CostSpec(self.Q, x_d, self.lam, self.dt,
                        self.horizon_steps - start, self.Q_terminal)


@dataclass
class ControlSequence:
    """Open-loop control plan with optional saturation bounds."""

    u: np.ndarray                       # (T, m)
    R: list = field(default_factory=list)   # per-step implied control weight
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    flagged_steps: list = field(default_factory=list)

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if not np.all(np.isfinite(self.u)):
            raise ConfigError("control sequence must be finite")

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    def clamp(self, u: np.ndarray) -> np.ndarray:
        if self.u_min is not None:
            u = np.maximum(u, self.u_min)
        if self.u_max is not None:
            u = np.minimum(u, self.u_max)
        return u

    @staticmethod
    def zeros(horizon: int, m: int, u_min=None, u_max=None) -> "ControlSequence":
        return ControlSequence(np.zeros((horizon, m)), u_min=u_min, u_max=u_max)


@dataclass
class BeliefTrajectory:
    beliefs: list                       # T+1 GaussianBelief
    controls_old: ControlSequence
    predictions: list                   # T IncrementPrediction
    step_maps: list = field(default_factory=list)  # T StepMap when jacobians on
    has_jacobians: bool = True


@dataclass
class DesirabilityTrace:
    """log Psi_t and grad Psi_t / Psi_t along the horizon.

    Entry t holds the tail beyond step t; grad_psi_over_psi ratios are
    gradients with respect to the rollout's initial state, stored as
    grad Psi / Psi for numerical stability.  grad_psi_local holds the
    adjoint (co-state) gradient of the same tail with respect to the state
    at the entry's own step; the two coincide at t = 0.
    """

    log_psi: np.ndarray                 # (T+1,)
    grad_psi_over_psi: np.ndarray       # (T+1, n)
    grad_psi_local: np.ndarray | None = None
    saturated: bool = False
    has_gradient: bool = False
    _phi_mu: list = field(default_factory=list, repr=False)
    _phi_sigma: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# Phi: the Gaussian-times-exponentiated-quadratic integral
# ---------------------------------------------------------------------------

def log_phi_step(belief: GaussianBelief, cost: CostSpec, step_weight: float,
                 terminal: bool = False, step_index: int | None = None):
    """log Phi with analytic partials d log Phi / d{mu, Sigma}.

    Phi = |I + Sigma M|^{-1/2} exp(-0.5 delta' M (I + Sigma M)^{-1} delta)
    with M = (step_weight / lambda) Q and delta = mu - x_d.
    """
    q = cost.Q_terminal if terminal else cost.Q
    n = cost.dim
    M = (step_weight / cost.lam) * q
    target = cost.target_at(cost.horizon_steps if step_index is None
                            else step_index)
    delta = belief.mu - target
    J = np.eye(n) + M @ belief.sigma
    try:
        W = np.linalg.solve(J, M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("phi normalization matrix singular",
                             step=step_index) from exc
    W = 0.5 * (W + W.T)
    sign, logdet = np.linalg.slogdet(J)
    if sign <= 0:
        raise NumericalError("phi determinant non-positive", step=step_index)
    y = W @ delta
    log_phi = -0.5 * logdet - 0.5 * float(delta @ y)
    if not np.isfinite(log_phi):
        raise NumericalError("phi overflowed", step=step_index)
    dlog_dmu = -y
    dlog_dsigma = 0.5 * (np.outer(y, y) - W)
    return log_phi, dlog_dmu, dlog_dsigma


def phi_step(belief: GaussianBelief, cost: CostSpec, step_weight: float,
             terminal: bool = False, step_index: int | None = None):
    """Phi and its partials dPhi/dmu, dPhi/dSigma."""
    log_phi, dmu, dsig = log_phi_step(belief, cost, step_weight, terminal,
                                      step_index)
    phi = np.exp(log_phi)
    return phi, phi * dmu, phi * dsig


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def forward_rollout(model: GpModel, x0, controls: ControlSequence, plant,
                    cost: CostSpec, compute_jac: bool = True) -> BeliefTrajectory:
    """Propagate beliefs over the horizon under the current controls.

    beliefs[0] is the observed state; step t applies controls.u[t] through
    the known control matrix.
    """
    if controls.horizon != cost.horizon_steps:
        raise ConfigError("controls length must equal horizon_steps")
    belief = GaussianBelief.observed(x0)
    beliefs = [belief]
    preds: list[IncrementPrediction] = []
    maps: list = []
    for t in range(cost.horizon_steps):
        try:
            belief = moment_match(
                model, belief, controls.u[t], plant.control_matrix, cost.dt,
                plant_G_jac=plant.control_matrix_jac,
                compute_jac=compute_jac, prediction_out=preds,
                step_map_out=maps)
        except NumericalError as exc:
            raise NumericalError(f"forward rollout failed at step {t}: {exc}",
                                 jitter=exc.jitter, step=t) from exc
        beliefs.append(belief)
    return BeliefTrajectory(beliefs, controls, preds, maps, compute_jac)


# ---------------------------------------------------------------------------
# Backward passes
# ---------------------------------------------------------------------------

def backward_desirability(traj: BeliefTrajectory, cost: CostSpec) -> DesirabilityTrace:
    """Accumulate the desirability recursion in log domain.

    The terminal boundary is integrated with unit weight against the
    terminal belief; interior steps carry weight dt.  log_psi[t] is the tail
    beyond step t, so log_psi[T-1] equals log_psi[T].
    """
    T = cost.horizon_steps
    if len(traj.beliefs) != T + 1:
        raise ConfigError("trajectory length does not match horizon")
    log_psi = np.zeros(T + 1)
    phi_mu = [None] * (T + 1)
    phi_sigma = [None] * (T + 1)
    saturated = False

    lp, dmu, dsig = log_phi_step(traj.beliefs[T], cost, 1.0, terminal=True,
                                 step_index=T)
    if lp < LOG_PHI_FLOOR:
        lp, saturated = LOG_PHI_FLOOR, True
    log_psi[T] = lp
    phi_mu[T], phi_sigma[T] = dmu, dsig
    if T >= 1:
        log_psi[T - 1] = log_psi[T]
    for t in range(T - 2, -1, -1):
        lp, dmu, dsig = log_phi_step(traj.beliefs[t + 1], cost, cost.dt,
                                     step_index=t + 1)
        if lp < LOG_PHI_FLOOR:
            lp, saturated = LOG_PHI_FLOOR, True
        phi_mu[t + 1], phi_sigma[t + 1] = dmu, dsig
        log_psi[t] = lp + log_psi[t + 1]
    if saturated:
        logger.warning("desirability trace saturated at the log floor")
    return DesirabilityTrace(log_psi, np.zeros((T + 1, cost.dim)),
                             saturated=saturated, _phi_mu=phi_mu,
                             _phi_sigma=phi_sigma)


def desirability_gradient(traj: BeliefTrajectory, trace: DesirabilityTrace,
                          cost: CostSpec) -> DesirabilityTrace:
    """Fill both gradient views by one backward product-rule pass.

    A co-state (adjoint of the linearized step maps, seeded with the per-step
    log-phi partials) is propagated backward.  Contracting the co-state with
    the stored d{mu, Sigma}/dx0 carriers yields grad_psi_over_psi, the
    gradient of each tail with respect to the rollout's initial state; the
    co-state's mean component is grad_psi_local, the same tail differentiated
    at the step's own state.  Everything is analytic.
    """
    if not traj.has_jacobians:
        raise ConfigError("trajectory was built without Jacobian carriers")
    T = cost.horizon_steps
    n = cost.dim
    grad = np.zeros((T + 1, n))
    local = np.zeros((T + 1, n))

    def contract(chi_mu, chi_sig, belief):
        return chi_mu @ belief.dmu_dx0 \
            + chi_sig @ belief.dsigma_dx0.reshape(n * n, n)

    # co-state at step T carries the terminal integral's partials
    chi_mu = trace._phi_mu[T].copy()
    chi_sig = trace._phi_sigma[T].reshape(-1).copy()
    grad[T] = contract(chi_mu, chi_sig, traj.beliefs[T])
    local[T] = chi_mu
    if T >= 1:
        # pull the terminal co-state through step T's map
        smap = traj.step_maps[T - 1]
        chi_mu, chi_sig = (smap.mu_mu.T @ chi_mu + smap.sig_mu.T @ chi_sig,
                           smap.mu_sig.T @ chi_mu + smap.sig_sig.T @ chi_sig)
        grad[T - 1] = grad[T]
        local[T - 1] = chi_mu
    for t in range(T - 2, -1, -1):
        # absorb the interior log-phi at step t+1, then pull back one step
        chi_mu = chi_mu + trace._phi_mu[t + 1]
        chi_sig = chi_sig + trace._phi_sigma[t + 1].reshape(-1)
        grad[t] = contract(chi_mu, chi_sig, traj.beliefs[t + 1])
        smap = traj.step_maps[t]
        chi_mu, chi_sig = (smap.mu_mu.T @ chi_mu + smap.sig_mu.T @ chi_sig,
                           smap.mu_sig.T @ chi_mu + smap.sig_sig.T @ chi_sig)
        local[t] = chi_mu
    trace.grad_psi_over_psi = grad
    trace.grad_psi_local = local
    trace.has_gradient = True
    return trace


# ---------------------------------------------------------------------------
# Control update
# ---------------------------------------------------------------------------

def control_update(trace: DesirabilityTrace, traj: BeliefTrajectory,
                   controls_old: ControlSequence, plant,
                   lam: float = 1.0) -> ControlSequence:
    """delta_u_t = G_t^+ Sigma_ft (grad Psi_t / Psi_t), applied per step.

    Records the implied control-cost weight R_t = lam (G^+ Sigma_f G^+')^-1,
    which satisfies the structural constraint exactly on range(G) and reduces
    to lam G' Sigma_f^-1 G for square invertible G.  Steps where the gradient
    pushes outside the controllable subspace are flagged and resolved by the
    least-squares projection the pseudoinverse provides.

    Each step consumes the tail gradient at its own state (the adjoint view);
    at the current step the two stored gradient views coincide.
    """
    if not trace.has_gradient:
        raise ConfigError("desirability gradient has not been computed")
    grads = trace.grad_psi_local if trace.grad_psi_local is not None \
        else trace.grad_psi_over_psi
    T = controls_old.horizon
    new_u = np.empty_like(controls_old.u)
    weights = []
    flagged = []
    for t in range(T):
        G = plant.control_matrix(traj.beliefs[t].mu)
        Gp = np.linalg.pinv(G)
        sf = traj.predictions[t].sigma_f
        target_vec = sf @ grads[t]
        du = Gp @ target_vec
        resid = np.linalg.norm(G @ du - target_vec)
        if resid > 1e-8 * max(np.linalg.norm(target_vec), 1e-300):
            flagged.append(t)
        new_u[t] = controls_old.clamp(controls_old.u[t] + du)
        try:
            weights.append(lam * np.linalg.inv(Gp @ sf @ Gp.T))
        except np.linalg.LinAlgError:
            weights.append(np.full((G.shape[1], G.shape[1]), np.nan))
    return ControlSequence(new_u, weights, controls_old.u_min,
                           controls_old.u_max, flagged)


# ---------------------------------------------------------------------------
# Inner optimization loop
# ---------------------------------------------------------------------------

@dataclass
class InnerOptResult:
    controls: ControlSequence
    trace: DesirabilityTrace
    trajectory: BeliefTrajectory
    log_psi0: float
    accepted_log_psi: list
    status: str                         # converged | max-iters | no-progress
    n_iters: int


def _evaluate_log_psi0(model, x0, controls, plant, cost) -> float:
    traj = forward_rollout(model, x0, controls, plant, cost, compute_jac=False)
    return float(backward_desirability(traj, cost).log_psi[0])


def inner_optimize(model: GpModel, x0, controls_init: ControlSequence,
                   cost: CostSpec, plant, max_iters: int = 50,
                   tol: float = 1e-3,
                   expansion_max: float = EXPANSION_MAX) -> InnerOptResult:
    """Alternate forward / backward / update with damped acceptance.

    A proposed update u_old + alpha delta_u is accepted only if it does not
    decrease log Psi_0, halving alpha down the ladder otherwise; the
    best-Psi_0 iterate is returned.  Exactly one update is attempted per
    iteration, so tol = inf returns after a single update.

    The returned trace is the gradient pass that generated the returned
    controls (one update behind them); log_psi0 is evaluated at the returned
    controls themselves.
    """
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    u_cur = controls_init
    traj = forward_rollout(model, x0, u_cur, plant, cost, compute_jac=True)
    trace = desirability_gradient(traj, backward_desirability(traj, cost), cost)
    log_psi0 = float(trace.log_psi[0])
    initial_log_psi0 = log_psi0
    # (value at controls, controls, generating trace, generating trajectory)
    best = (log_psi0, u_cur, trace, traj)
    accepted = [log_psi0]
    status = "max-iters"
    n_done = 0

    for it in range(max_iters):
        n_done += 1
        proposal = control_update(trace, traj, u_cur, plant, cost.lam)
        du = proposal.u - u_cur.u
        du_norm = float(np.max(np.abs(du))) if du.size else 0.0
        stepped = False
        chosen = None
        for alpha in DAMPING_LADDER:
            cand = replace(proposal, u=u_cur.clamp(u_cur.u + alpha * du))
            try:
                cand_val = _evaluate_log_psi0(model, x0, cand, plant, cost)
            except NumericalError:
                continue
            if cand_val >= log_psi0:
                chosen = (cand_val, cand)
                break
        if chosen is not None and alpha == DAMPING_LADDER[0]:
            # the raw uncertainty-scaled step is often very conservative when
            # the model is confident; expand while the value keeps improving
            scale = 2.0
            while scale <= expansion_max:
                cand = replace(proposal, u=u_cur.clamp(u_cur.u + scale * du))
                try:
                    cand_val = _evaluate_log_psi0(model, x0, cand, plant, cost)
                except NumericalError:
                    break
                if cand_val < chosen[0]:
                    break
                chosen = (cand_val, cand)
                scale *= 2.0
        if chosen is not None:
            cand_val, cand = chosen
            if cand_val >= best[0]:
                best = (cand_val, cand, trace, traj)
            u_cur, log_psi0, stepped = cand, cand_val, True
            accepted.append(cand_val)
        if not stepped:
            status = "no-progress" if log_psi0 <= initial_log_psi0 else "stalled"
            break
        if du_norm < tol:
            status = "converged"
            break
        if it + 1 < max_iters:
            traj = forward_rollout(model, x0, u_cur, plant, cost,
                                   compute_jac=True)
            trace = desirability_gradient(
                traj, backward_desirability(traj, cost), cost)
            log_psi0 = float(trace.log_psi[0])

    if status == "no-progress":
        logger.warning("inner optimization made no progress")
        return InnerOptResult(controls_init, trace, traj, initial_log_psi0,
                              accepted, status, n_done)
    return InnerOptResult(best[1], best[2], best[3], best[0], accepted,
                          status, n_done)


# ---------------------------------------------------------------------------
# Receding-horizon learning loop
# ---------------------------------------------------------------------------

@dataclass
class TrialMetrics:
    trial: int
    terminal_log_psi: float
    terminal_cost: float
    wall_seconds: float
    aborted: bool = False
    states: np.ndarray | None = None    # visited states of the trial's rollout


@dataclass
class LearnResult:
    model: GpModel
    metrics: list
    controls: np.ndarray               # executed controls of last full trial
    log_psi: np.ndarray                # per-step log Psi at the visited states
    grad_psi_over_psi: np.ndarray
    states: np.ndarray                 # visited states of last full trial
    cost: CostSpec


def terminal_log_desirability(cost: CostSpec, x_terminal) -> float:
    """Point evaluation of the terminal desirability at a reached state."""
    belief = GaussianBelief.observed(x_terminal)
    lp, _, _ = log_phi_step(belief, cost, 1.0, terminal=True,
                            step_index=cost.horizon_steps)
    return lp


def mpc_learning_loop(plant, cost: CostSpec, trials: int, seed: int, *,
                      init_rollouts: int = 2, rollouts_per_trial: int = 1,
                      u_max: float = 10.0, inner_max_iters: int = 2,
                      inner_tol: float = 1e-3, max_points: int | None = 250,
                      x0=None, fit_restarts: int = 4, fit_max_iters: int = 150,
                      refit_max_iters: int = 60, share_lengthscales: bool = True,
                      clamp_controls: bool = True,
                      inner_max_iters_first=None, expansion_max=EXPANSION_MAX,
                      early_stop=None, on_trial=None) -> LearnResult:
    """Model learning and receding-horizon control, one plant rollout per trial.

    Random-control initialization rollouts seed the GP; each trial then runs
    the full horizon, re-optimizing the remaining control tail at every step
    from the warm-started previous solution and incorporating every observed
    transition.  Hyperparameters are refit after initialization and after
    each completed trial.
    """
    import time as _time

    if trials < 1:
        raise ConfigError("trials must be >= 1")
    hub = RngHub(seed)
    n, m = plant.spec.n, plant.spec.m
    T = cost.horizon_steps
    if x0 is None:
        x0 = np.zeros(n)
    x0 = np.asarray(x0, dtype=float)

    model = GpModel.empty(n, max_points=max_points)
    u_plan = np.zeros((T, m))
    for r in range(init_rollouts):
        u_rng = hub.spawn("init-controls", r)
        w_rng = hub.spawn("init-noise", r)
        u_seq = u_rng.uniform(-u_max, u_max, size=(T, m))
        # Algorithm-style bootstrap: the last random sequence becomes the
        # first trial's u_old, so early beliefs traverse uncertain regions
        # and the uncertainty-scaled updates have something to work with.
        u_plan = u_seq.copy()
        x = x0
        for t in range(T):
            try:
                x_next = plant.step(x, u_seq[t], w_rng)
            except NumericalError:
                logger.warning("initialization rollout %d diverged at %d", r, t)
                break
            model, _ = incorporate_sample(model, x, u_seq[t], x_next,
                                          plant.control_matrix, cost.dt)
            x = x_next
    model = refit(model, rng=hub.stream("hyper-fit"), n_restarts=fit_restarts,
                  max_iters=fit_max_iters, share_lengthscales=share_lengthscales)

    metrics: list[TrialMetrics] = []
    last_full = None
    best_terminal = -np.inf
    bounds = (np.full(m, -u_max), np.full(m, u_max)) if clamp_controls else (None, None)

    for trial in range(trials):
        t_start = _time.perf_counter()
        aborted = False
        for rep in range(rollouts_per_trial):
            w_rng = hub.spawn("plant-noise", trial * 1000 + rep)
            x = x0
            trial_u = u_plan.copy()
            states = [x]
            step_logpsi, step_grad = [], []
            try:
                for t in range(T):
                    tail_cost = cost.tail(t)
                    if t > 0 or inner_max_iters_first is None:
                        iters = inner_max_iters
                    elif np.ndim(inner_max_iters_first) == 0:
                        iters = int(inner_max_iters_first)
                    else:
                        sched = inner_max_iters_first
                        iters = int(sched[min(trial, len(sched) - 1)])
                    if np.ndim(expansion_max) == 0:
                        cap = float(expansion_max)
                    else:
                        cap = float(expansion_max[min(trial,
                                                      len(expansion_max) - 1)])
                    res = inner_optimize(
                        model, x,
                        ControlSequence(trial_u[t:].copy(), u_min=bounds[0],
                                        u_max=bounds[1]),
                        tail_cost, plant, max_iters=iters,
                        tol=inner_tol, expansion_max=cap)
                    trial_u[t:] = res.controls.u
                    x_next = plant.step(x, trial_u[t], w_rng)
                    model, _ = incorporate_sample(
                        model, x, trial_u[t], x_next, plant.control_matrix,
                        cost.dt)
                    step_logpsi.append(float(res.trace.log_psi[0]))
                    step_grad.append(res.trace.grad_psi_over_psi[0])
                    states.append(x_next)
                    x = x_next
            except NumericalError as exc:
                logger.warning("trial %d aborted: %s", trial, exc)
                aborted = True
            if not aborted:
                # Adopt the replanned sequence as the next warm start only if
                # it improved the terminal outcome; otherwise restart from the
                # incumbent so plateau noise does not random-walk the plan.
                terminal = terminal_log_desirability(cost, states[-1])
                if terminal >= best_terminal:
                    best_terminal = terminal
                    u_plan = trial_u
                last_full = (trial_u.copy(), np.array(step_logpsi),
                             np.array(step_grad), np.array(states))

        if aborted or last_full is None:
            metrics.append(TrialMetrics(trial, float("nan"), float("nan"),
                                        _time.perf_counter() - t_start, True))
        else:
            x_term = last_full[3][-1]
            metrics.append(TrialMetrics(
                trial, terminal_log_desirability(cost, x_term),
                cost.terminal_cost(x_term),
                _time.perf_counter() - t_start, states=last_full[3]))
        model = refit(model, rng=hub.spawn("hyper-refit", trial),
                      n_restarts=0, max_iters=refit_max_iters,
                      share_lengthscales=share_lengthscales)
        if on_trial is not None:
            on_trial(metrics[-1])
        if early_stop is not None and early_stop(metrics):
            break

    if last_full is None:
        raise NumericalError("every trial aborted; no controller learned")
    controls, log_psi, grads, states = last_full
    term = np.concatenate([log_psi, [terminal_log_desirability(cost, states[-1])]])
    grads_full = np.vstack([grads, np.zeros((1, n))])
    return LearnResult(model, metrics, controls, term, grads_full, states, cost)

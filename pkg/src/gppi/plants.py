"""Simulated benchmark systems: dx = (f(x) + G(x) u) dt + B dw.

Each plant exposes the passive drift f, the control matrix G, the analytic
Jacobian of G (needed by the belief-propagation gradient chain, since the
control contribution G(mu) u dt depends on the state), and a stochastic
integrator.  The deterministic part of a step is integrated with RK4
sub-steps; the Brownian term is added per sub-step as B * sqrt(h) * L_w xi.
Plain explicit-Euler sub-stepping cannot hold the noise-free energy drift
inside the tolerance the invariant suite demands, so RK4 is used for the
drift while the noise handling stays Euler-Maruyama.

Angles are raw (unwrapped); "hanging down" is 0 and "upright" is pi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

DIVERGENCE_NORM = 1e6


@dataclass
class PlantSpec:
    """Physical and integration parameters of a simulated system."""

    name: str
    n: int
    m: int
    params: dict
    B: np.ndarray              # diffusion matrix, n x p
    sigma_omega: np.ndarray    # Brownian increment variance, p x p
    dt: float = 0.02
    substeps: int = 10

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.sigma_omega = np.atleast_2d(np.asarray(self.sigma_omega, dtype=float))
        if self.n < 1 or self.m < 1:
            raise ConfigError("state and control dimensions must be >= 1")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        w = self.sigma_omega
        if not np.allclose(w, w.T) or np.any(np.linalg.eigvalsh(w) < -1e-12):
            raise ConfigError("sigma_omega must be symmetric PSD")


class Plant:
    """Base class: stateless dynamics bundle plus a caller-owned rng."""

    spec: PlantSpec

    def __init__(self, spec: PlantSpec):
        self.spec = spec
        self._noise_chol = _psd_sqrt(spec.sigma_omega)

    # --- dynamics interface -------------------------------------------------
    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def control_matrix(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def control_matrix_jac(self, x: np.ndarray) -> np.ndarray:
        """d G[i, j] / d x[k], shape (n, m, n)."""
        raise NotImplementedError

    def energy(self, x: np.ndarray) -> float:
        raise NotImplementedError(f"{self.spec.name} has no energy function")

    # --- integration --------------------------------------------------------
    def _controlled_rate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.drift(x) + self.control_matrix(x) @ u

    def step_with_noise(self, x, u, rng: np.random.Generator | None):
        """One control step; returns (x_next, brownian_increment).

        The returned increment is the accumulated L_w-correlated Brownian
        increment over the step (p-vector), as consumed by the sampling
        baseline's noise-averaging update.
        """
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(u)):
            raise NumericalError("non-finite state or control in plant step")
        if u.shape[0] != self.spec.m:
            raise ConfigError(
                f"control dimension {u.shape[0]} != plant m={self.spec.m}")
        h = self.spec.dt / self.spec.substeps
        sq = np.sqrt(h)
        p = self.spec.B.shape[1]
        total_dw = np.zeros(p)
        for _ in range(self.spec.substeps):
            x = _rk4(self._controlled_rate, x, u, h)
            if rng is not None:
                dw = sq * (self._noise_chol @ rng.standard_normal(p))
                x = x + self.spec.B @ dw
                total_dw += dw
            if np.linalg.norm(x) > DIVERGENCE_NORM:
                raise NumericalError("plant state diverged", step=None)
        return x, total_dw

    def step(self, x, u, rng: np.random.Generator | None = None) -> np.ndarray:
        x_next, _ = self.step_with_noise(x, u, rng)
        return x_next


def _rk4(rate, x, u, h):
    k1 = rate(x, u)
    k2 = rate(x + 0.5 * h * k1, u)
    k3 = rate(x + 0.5 * h * k2, u)
    k4 = rate(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _psd_sqrt(w: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(w)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def _solve_inertia(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(h, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular inertia matrix") from exc


# ---------------------------------------------------------------------------
# Linear test plant
# ---------------------------------------------------------------------------

class LinearPlant(Plant):
    """dx = (A x + Bc u) dt + B dw; the workhorse of the oracle suites."""

    def __init__(self, spec: PlantSpec):
        super().__init__(spec)
        self.A = np.atleast_2d(np.asarray(spec.params["A"], dtype=float))
        self.Bc = np.atleast_2d(np.asarray(spec.params["Bc"], dtype=float))
        if self.Bc.shape != (spec.n, spec.m):
            raise ConfigError("Bc must be n x m")

    def drift(self, x):
        return self.A @ np.asarray(x, dtype=float)

    def control_matrix(self, x):
        return self.Bc

    def control_matrix_jac(self, x):
        return np.zeros((self.spec.n, self.spec.m, self.spec.n))


# ---------------------------------------------------------------------------
# Cart-pole
# ---------------------------------------------------------------------------

class CartPole(Plant):
    """Cart with a uniform-rod pole.  State (x, xdot, theta, thetadot)."""

    def __init__(self, spec: PlantSpec):
        super().__init__(spec)
        p = spec.params
        self.M = p["cart_mass"]
        self.m = p["pole_mass"]
        self.L = p["pole_length"]
        self.g = p["gravity"]
        self.b = p["friction"]

    def _inertia(self, theta):
        c = np.cos(theta)
        return np.array([
            [self.M + self.m, 0.5 * self.m * self.L * c],
            [0.5 * self.m * self.L * c, self.m * self.L ** 2 / 3.0],
        ])

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        _, xd, th, thd = x
        s = np.sin(th)
        rhs = np.array([
            -self.b * xd + 0.5 * self.m * self.L * thd ** 2 * s,
            -0.5 * self.m * self.g * self.L * s,
        ])
        acc = _solve_inertia(self._inertia(th), rhs)
        return np.array([xd, acc[0], thd, acc[1]])

    def control_matrix(self, x):
        col = _solve_inertia(self._inertia(x[2]), np.array([1.0, 0.0]))
        g = np.zeros((4, 1))
        g[1, 0] = col[0]
        g[3, 0] = col[1]
        return g

    def control_matrix_jac(self, x):
        th = x[2]
        h = self._inertia(th)
        dh = np.zeros((2, 2))
        dh[0, 1] = dh[1, 0] = -0.5 * self.m * self.L * np.sin(th)
        col = _solve_inertia(h, np.array([1.0, 0.0]))
        dcol = _solve_inertia(h, -dh @ col)
        jac = np.zeros((4, 1, 4))
        jac[1, 0, 2] = dcol[0]
        jac[3, 0, 2] = dcol[1]
        return jac

    def energy(self, x):
        _, xd, th, thd = np.asarray(x, dtype=float)
        m, L = self.m, self.L
        # cart + pole CoM translation + pole rotation about CoM
        vx = xd + 0.5 * L * thd * np.cos(th)
        vy = 0.5 * L * thd * np.sin(th)
        kin = 0.5 * self.M * xd ** 2 + 0.5 * m * (vx ** 2 + vy ** 2) \
            + 0.5 * (m * L ** 2 / 12.0) * thd ** 2
        pot = -0.5 * m * self.g * L * np.cos(th)
        return kin + pot


# ---------------------------------------------------------------------------
# Double pendulum on a cart
# ---------------------------------------------------------------------------

class DoublePendulumCart(Plant):
    """Cart with two uniform-rod links, absolute link angles.

    State (x, xdot, theta1, theta1dot, theta2, theta2dot); one force on the
    cart.
    """

    def __init__(self, spec: PlantSpec):
        super().__init__(spec)
        p = spec.params
        self.M = p["cart_mass"]
        self.m1 = p["link1_mass"]
        self.m2 = p["link2_mass"]
        self.l1 = p["link1_length"]
        self.l2 = p["link2_length"]
        self.g = p["gravity"]
        self.b = p["friction"]

    def _inertia(self, th1, th2):
        m1, m2, l1, l2 = self.m1, self.m2, self.l1, self.l2
        c1, c2, c12 = np.cos(th1), np.cos(th2), np.cos(th1 - th2)
        h = np.empty((3, 3))
        h[0, 0] = self.M + m1 + m2
        h[0, 1] = h[1, 0] = (0.5 * m1 + m2) * l1 * c1
        h[0, 2] = h[2, 0] = 0.5 * m2 * l2 * c2
        h[1, 1] = (m1 / 3.0 + m2) * l1 ** 2
        h[1, 2] = h[2, 1] = 0.5 * m2 * l1 * l2 * c12
        h[2, 2] = m2 * l2 ** 2 / 3.0
        return h

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        _, xd, th1, th1d, th2, th2d = x
        m1, m2, l1, l2, g = self.m1, self.m2, self.l1, self.l2, self.g
        s1, s2, s12 = np.sin(th1), np.sin(th2), np.sin(th1 - th2)
        rhs = np.array([
            -self.b * xd + (0.5 * m1 + m2) * l1 * s1 * th1d ** 2
            + 0.5 * m2 * l2 * s2 * th2d ** 2,
            -0.5 * m2 * l1 * l2 * s12 * th2d ** 2 - (0.5 * m1 + m2) * g * l1 * s1,
            0.5 * m2 * l1 * l2 * s12 * th1d ** 2 - 0.5 * m2 * g * l2 * s2,
        ])
        acc = _solve_inertia(self._inertia(th1, th2), rhs)
        return np.array([xd, acc[0], th1d, acc[1], th2d, acc[2]])

    def control_matrix(self, x):
        col = _solve_inertia(self._inertia(x[2], x[4]), np.array([1.0, 0.0, 0.0]))
        g = np.zeros((6, 1))
        g[1, 0], g[3, 0], g[5, 0] = col
        return g

    def control_matrix_jac(self, x):
        th1, th2 = x[2], x[4]
        m1, m2, l1, l2 = self.m1, self.m2, self.l1, self.l2
        s1, s2, s12 = np.sin(th1), np.sin(th2), np.sin(th1 - th2)
        h = self._inertia(th1, th2)
        col = _solve_inertia(h, np.array([1.0, 0.0, 0.0]))

        dh1 = np.zeros((3, 3))
        dh1[0, 1] = dh1[1, 0] = -(0.5 * m1 + m2) * l1 * s1
        dh1[1, 2] = dh1[2, 1] = -0.5 * m2 * l1 * l2 * s12
        dh2 = np.zeros((3, 3))
        dh2[0, 2] = dh2[2, 0] = -0.5 * m2 * l2 * s2
        dh2[1, 2] = dh2[2, 1] = 0.5 * m2 * l1 * l2 * s12

        jac = np.zeros((6, 1, 6))
        for state_idx, dh in ((2, dh1), (4, dh2)):
            dcol = _solve_inertia(h, -dh @ col)
            jac[1, 0, state_idx] = dcol[0]
            jac[3, 0, state_idx] = dcol[1]
            jac[5, 0, state_idx] = dcol[2]
        return jac

    def energy(self, x):
        _, xd, th1, th1d, th2, th2d = np.asarray(x, dtype=float)
        m1, m2, l1, l2, g = self.m1, self.m2, self.l1, self.l2, self.g
        c1, c2 = np.cos(th1), np.cos(th2)
        v1x = xd + 0.5 * l1 * th1d * c1
        v1y = 0.5 * l1 * th1d * np.sin(th1)
        v2x = xd + l1 * th1d * c1 + 0.5 * l2 * th2d * c2
        v2y = l1 * th1d * np.sin(th1) + 0.5 * l2 * th2d * np.sin(th2)
        kin = 0.5 * self.M * xd ** 2 \
            + 0.5 * m1 * (v1x ** 2 + v1y ** 2) + 0.5 * (m1 * l1 ** 2 / 12.0) * th1d ** 2 \
            + 0.5 * m2 * (v2x ** 2 + v2y ** 2) + 0.5 * (m2 * l2 ** 2 / 12.0) * th2d ** 2
        pot = -(0.5 * m1 + m2) * g * l1 * c1 - 0.5 * m2 * g * l2 * c2
        return kin + pot


# ---------------------------------------------------------------------------
# Planar two-link arm
# ---------------------------------------------------------------------------

class TwoLinkArm(Plant):
    """Two-link manipulator in the horizontal plane (no gravity).

    State (theta1, theta2, omega1, omega2); theta2 is the relative elbow
    angle; controls are the two joint torques.
    """

    def __init__(self, spec: PlantSpec):
        super().__init__(spec)
        p = spec.params
        self.m1 = p["link1_mass"]
        self.m2 = p["link2_mass"]
        self.l1 = p["link1_length"]
        self.l2 = p["link2_length"]
        self.b = p["friction"]
        self.lc1 = 0.5 * self.l1
        self.lc2 = 0.5 * self.l2
        self.I1 = self.m1 * self.l1 ** 2 / 12.0
        self.I2 = self.m2 * self.l2 ** 2 / 12.0

    def _inertia(self, th2):
        c2 = np.cos(th2)
        m11 = self.m1 * self.lc1 ** 2 + self.I1 + self.I2 \
            + self.m2 * (self.l1 ** 2 + self.lc2 ** 2 + 2 * self.l1 * self.lc2 * c2)
        m12 = self.m2 * (self.lc2 ** 2 + self.l1 * self.lc2 * c2) + self.I2
        m22 = self.m2 * self.lc2 ** 2 + self.I2
        return np.array([[m11, m12], [m12, m22]])

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        th2, w1, w2 = x[1], x[2], x[3]
        h = self.m2 * self.l1 * self.lc2 * np.sin(th2)
        bias = np.array([-h * w2 * (2 * w1 + w2), h * w1 ** 2])
        acc = _solve_inertia(self._inertia(th2),
                             -bias - self.b * np.array([w1, w2]))
        return np.array([w1, w2, acc[0], acc[1]])

    def control_matrix(self, x):
        minv = np.linalg.inv(self._inertia(x[1]))
        g = np.zeros((4, 2))
        g[2:, :] = minv
        return g

    def control_matrix_jac(self, x):
        th2 = x[1]
        m = self._inertia(th2)
        d = -self.m2 * self.l1 * self.lc2 * np.sin(th2)
        dm = np.array([[2 * d, d], [d, 0.0]])
        minv = np.linalg.inv(m)
        dminv = -minv @ dm @ minv
        jac = np.zeros((4, 2, 4))
        jac[2:, :, 1] = dminv
        return jac

    def energy(self, x):
        qd = np.asarray(x, dtype=float)[2:]
        return 0.5 * qd @ self._inertia(x[1]) @ qd


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_CARTPOLE_PARAMS = dict(cart_mass=0.5, pole_mass=0.5, pole_length=0.5,
                        gravity=9.81, friction=0.1)
_DPC_PARAMS = dict(cart_mass=0.5, link1_mass=0.5, link2_mass=0.5,
                   link1_length=0.5, link2_length=0.5, gravity=9.81,
                   friction=0.1)
_ARM_PARAMS = dict(link1_mass=0.5, link2_mass=0.5, link1_length=0.5,
                   link2_length=0.5, friction=0.1)

_NOISE_STD_DEFAULT = 0.01


def _velocity_rows_B(n: int, vel_rows: list[int]) -> np.ndarray:
    b = np.zeros((n, len(vel_rows)))
    for j, r in enumerate(vel_rows):
        b[r, j] = 1.0
    return b


def make_plant(name: str, *, dt: float = 0.02, substeps: int = 10,
               params: dict | None = None, noise_std: float | None = None,
               **extra) -> Plant:
    """Build a plant by name with optional parameter overrides."""
    key = name.lower().replace("_", "-")
    std = _NOISE_STD_DEFAULT if noise_std is None else noise_std
    if key in ("cartpole", "cart-pole", "cp"):
        p = {**_CARTPOLE_PARAMS, **(params or {})}
        vel = [1, 3]
        spec = PlantSpec("cartpole", 4, 1, p, _velocity_rows_B(4, vel),
                         std ** 2 * np.eye(len(vel)), dt, substeps)
        return CartPole(spec)
    if key in ("double-pendulum-cart", "dpc", "cart-double-pendulum"):
        p = {**_DPC_PARAMS, **(params or {})}
        vel = [1, 3, 5]
        spec = PlantSpec("double-pendulum-cart", 6, 1, p,
                         _velocity_rows_B(6, vel),
                         std ** 2 * np.eye(len(vel)), dt, substeps)
        return DoublePendulumCart(spec)
    if key in ("two-link-arm", "arm", "twolink"):
        p = {**_ARM_PARAMS, **(params or {})}
        vel = [2, 3]
        spec = PlantSpec("two-link-arm", 4, 2, p, _velocity_rows_B(4, vel),
                         std ** 2 * np.eye(len(vel)), dt, substeps)
        return TwoLinkArm(spec)
    if key == "linear":
        p = dict(params or {})
        if "A" not in p or "Bc" not in p:
            raise ConfigError("linear plant requires params A and Bc")
        a = np.atleast_2d(np.asarray(p["A"], dtype=float))
        bc = np.atleast_2d(np.asarray(p["Bc"], dtype=float))
        n, m = a.shape[0], bc.shape[1]
        bdiff = np.asarray(p.get("B", np.eye(n)), dtype=float)
        bdiff = np.atleast_2d(bdiff)
        sw = np.asarray(p.get("sigma_omega", std ** 2 * np.eye(bdiff.shape[1])),
                        dtype=float)
        spec = PlantSpec("linear", n, m, p, bdiff, sw, dt, substeps)
        return LinearPlant(spec)
    raise ConfigError(f"unknown plant '{name}'")

"""State-space model abstraction and the concrete benchmark models.

Two systems are provided: the discretized Lorenz attractor (chaotic, used for
the synthetic benchmarks) and a block-diagonal Wiener-velocity tracking model
(used for odometry-style trajectory data). Models are immutable containers of
pure functions, so they can be shared freely across concurrent filter runs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError

_PSD_TOL = 1e-12


def _check_psd(M, name):
    if not np.allclose(M, M.T, atol=1e-10):
        raise InvalidArgumentError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(M)
    if w.min() < -_PSD_TOL * max(np.trace(M), 1.0):
        raise InvalidArgumentError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class StateSpaceModel:
    """Nonlinear state-space model: x' = f(x) + w,  y = h(x) + v.

    ``jac_f`` and ``jac_h`` evaluate the Jacobians of ``f`` and ``h`` at a
    point. ``Q`` and ``R`` are the process and measurement noise covariances.
    """

    state_dim: int
    meas_dim: int
    f: callable
    h: callable
    jac_f: callable
    jac_h: callable
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        if self.state_dim < 1 or self.meas_dim < 1:
            raise InvalidArgumentError("dimensions must be positive")
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if self.Q.shape != (self.state_dim, self.state_dim):
            raise InvalidArgumentError("Q shape mismatch")
        if self.R.shape != (self.meas_dim, self.meas_dim):
            raise InvalidArgumentError("R shape mismatch")
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R")

    def replace(self, **kwargs):
        from dataclasses import replace

        return replace(self, **kwargs)


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.02
    taylor_order: int = 5

    def __post_init__(self):
        if self.dt < 0:
            raise InvalidArgumentError("dt must be nonnegative")
        if self.taylor_order < 1:
            raise InvalidArgumentError("taylor_order must be >= 1")


@dataclass(frozen=True)
class WienerVelocityParams:
    dt: float = 1.0
    q2: float = 1.0
    axes: int = 2

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        if self.q2 < 0:
            raise InvalidArgumentError("q2 must be nonnegative")
        if self.axes < 1:
            raise InvalidArgumentError("axes must be positive")


def lorenz_jacobian(x, params=LorenzParams()):
    """Jacobian of the continuous-time Lorenz dynamics at state x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x must be a finite 3-vector")
    s, r, b = params.sigma, params.rho, params.beta
    return np.array(
        [
            [-s, s, 0.0],
            [r - x[2], -1.0, -x[0]],
            [x[1], x[0], -b],
        ]
    )


def taylor_transition(x, dt, order, jac):
    """Truncated Taylor approximation of exp(J(x)*dt).

    ``jac`` maps a state to the dynamics Jacobian. The series starts at j=1,
    so ``order=0`` is rejected; dt=0 returns the identity exactly.
    """
    if order < 1:
        raise InvalidArgumentError("order must be >= 1 (0 is reserved)")
    if dt < 0:
        raise InvalidArgumentError("dt must be nonnegative")
    J = np.asarray(jac(x), dtype=float)
    m = J.shape[0]
    F = np.eye(m)
    term = np.eye(m)
    A = J * dt
    for j in range(1, order + 1):
        term = term @ A / j
        F = F + term
    return F


def lorenz_step(x, params=LorenzParams()):
    """One step of the discretized Lorenz dynamics: F(x) @ x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x must be a finite 3-vector")
    F = taylor_transition(
        x, params.dt, params.taylor_order, lambda z: lorenz_jacobian(z, params)
    )
    return F @ x


def jacobian_fd(fn, x, eps=1e-6):
    """Central-difference Jacobian of ``fn`` at ``x``.

    Step per coordinate is eps*(1+|x_i|). Used as the oracle for analytic
    Jacobians and as the fallback for the exact product-rule transition
    Jacobian.
    """
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    x = np.asarray(x, dtype=float)
    y0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    J = np.empty((y0.size, x.size))
    for i in range(x.size):
        step = eps * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        yp = np.atleast_1d(np.asarray(fn(xp), dtype=float))
        ym = np.atleast_1d(np.asarray(fn(xm), dtype=float))
        J[:, i] = (yp - ym) / (2.0 * step)
    if not np.all(np.isfinite(J)):
        raise NumericError("non-finite values in finite-difference Jacobian")
    return J


def lorenz_model(params=LorenzParams(), q2=1e-3, r2=0.1, exact_jacobian=False):
    """Lorenz attractor model with identity measurement of all 3 states.

    The transition Jacobian handed to filters is the truncated-series matrix
    F(x) itself; set ``exact_jacobian`` to use the full derivative of
    F(x) @ x (finite differences of f), for sensitivity studies.
    """

    def f(x):
        return lorenz_step(x, params)

    def jac_f(x):
        if exact_jacobian:
            return jacobian_fd(f, x)
        return taylor_transition(
            x, params.dt, params.taylor_order, lambda z: lorenz_jacobian(z, params)
        )

    def h(x):
        return np.asarray(x, dtype=float)

    def jac_h(x):
        return np.eye(3)

    return StateSpaceModel(
        state_dim=3,
        meas_dim=3,
        f=f,
        h=h,
        jac_f=jac_f,
        jac_h=jac_h,
        Q=q2 * np.eye(3),
        R=r2 * np.eye(3),
    )


def wiener_velocity_model(params=WienerVelocityParams(), r2=1.0):
    """Block-diagonal Wiener-velocity model; velocity-only measurements.

    Per axis the state is (position, velocity, acceleration); the measurement
    row is H = [0, 1, 0]. Multi-axis models stack blocks diagonally.
    """
    dt = params.dt
    F1 = np.array([[1.0, dt, 0.5 * dt**2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    Q1 = params.q2 * np.array(
        [
            [dt**4 / 4.0, dt**3 / 2.0, dt**2 / 2.0],
            [dt**3 / 2.0, dt**2, dt],
            [dt**2 / 2.0, dt, 1.0],
        ]
    )
    H1 = np.array([[0.0, 1.0, 0.0]])
    k = params.axes
    F = np.kron(np.eye(k), F1)
    Q = np.kron(np.eye(k), Q1)
    H = np.kron(np.eye(k), H1)
    R = np.atleast_2d(r2) if np.ndim(r2) == 2 else r2 * np.eye(k)

    def f(x):
        return F @ np.asarray(x, dtype=float)

    def h(x):
        return H @ np.asarray(x, dtype=float)

    return StateSpaceModel(
        state_dim=3 * k,
        meas_dim=k,
        f=f,
        h=h,
        jac_f=lambda x: F,
        jac_h=lambda x: H,
        Q=Q,
        R=np.asarray(R, dtype=float),
    )


def rotation_about_z(theta_deg):
    """3-D rotation matrix about the third coordinate axis."""
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_dynamics(model, theta_deg):
    """Mismatch decorator: f'(x) = R f(x) with R a rotation about axis 3."""
    if model.state_dim != 3:
        raise InvalidArgumentError("dynamics rotation requires a 3-D state")
    Rm = rotation_about_z(theta_deg)
    f0, jf0 = model.f, model.jac_f
    return model.replace(f=lambda x: Rm @ f0(x), jac_f=lambda x: Rm @ jf0(x))


def rotate_measurement(model, theta_deg):
    """Mismatch decorator: h'(x) = R h(x) with R a rotation about axis 3."""
    if model.meas_dim != 3:
        raise InvalidArgumentError("measurement rotation requires 3 features")
    Rm = rotation_about_z(theta_deg)
    h0, jh0 = model.h, model.jac_h
    return model.replace(h=lambda x: Rm @ h0(x), jac_h=lambda x: Rm @ jh0(x))

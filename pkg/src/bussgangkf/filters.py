"""EKF baseline and the Bussgang-aided 1-bit filters (full and reduced).

All steps are pure functions of (state, inputs); ``run_filter`` composes them
into the closed loop: predict, set the dither threshold to the predicted
measurement, quantize, update.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .quantizer import AdcBank, ProjectionOperator, build_projection, quantize_1bit
from .ssmodel import StateSpaceModel

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

# |correlation| beyond this counts as a real clamp rather than roundoff
_CLAMP_TOL = 1e-12


@dataclass
class Diagnostics:
    """Counters for numerical edge cases accumulated across a run."""

    arcsin_clamps: int = 0
    jitter_escalations: int = 0

    def merge(self, other):
        self.arcsin_clamps += other.arcsin_clamps
        self.jitter_escalations += other.jitter_escalations


@dataclass(frozen=True)
class FilterState:
    """Posterior mean and covariance at time t."""

    xhat: np.ndarray
    sigma: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class PriorBundle:
    """Everything one prediction step produces; shared by both 1-bit updates."""

    x_prior: np.ndarray
    sigma_prior: np.ndarray
    y_prior: np.ndarray
    P: np.ndarray
    D: np.ndarray
    B: np.ndarray
    S: np.ndarray
    H: np.ndarray
    F: np.ndarray
    t: int = 0


def symmetrize(M):
    return 0.5 * (M + M.T)


def _check_posterior(sigma, t):
    if np.abs(sigma - sigma.T).max() > 1e-10:
        raise NumericError("posterior covariance lost symmetry", step=t)
    w = np.linalg.eigvalsh(sigma)
    if w.min() < -1e-9 * max(np.trace(sigma), 1.0):
        raise NumericError("posterior covariance lost PSD", step=t)


def solve_psd(S, M, diagnostics=None, step=None):
    """Solve S X = M for symmetric S via Cholesky with escalating jitter.

    Jitter starts at 1e-9 * I and grows by 10x up to 1e-5 before giving up.
    """
    S = symmetrize(np.asarray(S, dtype=float))
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
            break
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-9
            else:
                jitter *= 10.0
            if diagnostics is not None:
                diagnostics.jitter_escalations += 1
            if jitter > 1e-5:
                raise NumericError(
                    "covariance not invertible even with jitter", step=step
                )
    z = np.linalg.solve(L, M)
    return np.linalg.solve(L.T, z)


def arcsin_covariance(P, diagnostics=None):
    """Sign-covariance of a zero-mean Gaussian with covariance P.

    S[i,j] = (2/pi) * arcsin(P[i,j] / sqrt(P[i,i] P[j,j])); correlations are
    clamped to [-1, 1], and clamps beyond roundoff are counted.
    """
    P = np.asarray(P, dtype=float)
    if np.any(np.isnan(P)):
        raise NumericError("NaN in measurement covariance")
    d = np.diag(P)
    if np.any(d <= 0):
        raise NumericError("nonpositive diagonal in measurement covariance")
    inv_sqrt = 1.0 / np.sqrt(d)
    C = P * np.outer(inv_sqrt, inv_sqrt)
    if diagnostics is not None:
        diagnostics.arcsin_clamps += int(np.sum(np.abs(C) > 1.0 + _CLAMP_TOL))
    return (2.0 / np.pi) * np.arcsin(np.clip(C, -1.0, 1.0))


def monte_carlo_sign_covariance(P, samples, seed):
    """Empirical E[sign(z) sign(z)^T] for z ~ N(0, P); the arcsin-law oracle."""
    P = np.asarray(P, dtype=float)
    if samples < 1:
        raise InvalidArgumentError("samples must be >= 1")
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericError("P must be positive definite") from exc
    rng = np.random.default_rng(seed)
    n = P.shape[0]
    acc = np.zeros((n, n))
    chunk = 100_000
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        z = rng.standard_normal((k, n)) @ L.T
        s = np.where(z > 0, 1.0, -1.0)
        acc += s.T @ s
        done += k
    return acc / samples


def ekf_step(state: FilterState, y, model: StateSpaceModel):
    """One EKF predict+update on an ideal observation y."""
    x, sigma, t = state.xhat, state.sigma, state.t
    F = np.atleast_2d(model.jac_f(x))
    x_prior = np.atleast_1d(np.asarray(model.f(x), dtype=float))
    sigma_prior = symmetrize(F @ sigma @ F.T + model.Q)
    H = np.atleast_2d(model.jac_h(x_prior))
    y_prior = np.atleast_1d(np.asarray(model.h(x_prior), dtype=float))
    P = symmetrize(H @ sigma_prior @ H.T + model.R)
    if np.linalg.cond(P) > 1e12:
        raise NumericError("innovation covariance is singular", step=t + 1)
    KG = np.linalg.solve(P, H @ sigma_prior).T
    xhat = x_prior + KG @ (np.asarray(y, dtype=float) - y_prior)
    sigma_post = symmetrize(sigma_prior - KG @ P @ KG.T)
    _check_posterior(sigma_post, t + 1)
    return FilterState(xhat=xhat, sigma=sigma_post, t=t + 1)


def bkf_predict(state: FilterState, model: StateSpaceModel, diagnostics=None):
    """Prediction step shared by BKF and rBKF.

    Produces the prior state/measurement moments plus the statistical
    linearization pieces: D = diag(P)^(-1/2), B = sqrt(2/pi) D, and the
    sign-observation covariance S from the arcsin law. The prior mean of the
    quantized observation is zero by the dithering construction.
    """
    x, sigma, t = state.xhat, state.sigma, state.t
    F = np.atleast_2d(model.jac_f(x))
    x_prior = np.atleast_1d(np.asarray(model.f(x), dtype=float))
    sigma_prior = symmetrize(F @ sigma @ F.T + model.Q)
    H = np.atleast_2d(model.jac_h(x_prior))
    y_prior = np.atleast_1d(np.asarray(model.h(x_prior), dtype=float))
    P = symmetrize(H @ sigma_prior @ H.T + model.R)
    d = np.diag(P)
    if np.any(d <= 0):
        raise NumericError("covariance collapse: diag(P) <= 0", step=t + 1)
    D = np.diag(1.0 / np.sqrt(d))
    B = SQRT_2_OVER_PI * D
    S = arcsin_covariance(P, diagnostics)
    return PriorBundle(
        x_prior=x_prior,
        sigma_prior=sigma_prior,
        y_prior=y_prior,
        P=P,
        D=D,
        B=B,
        S=S,
        H=H,
        F=F,
        t=t + 1,
    )


def bkf_update(prior: PriorBundle, r, diagnostics=None):
    """Bussgang-gain update from the full quantized vector r.

    BG = Sigma_prior (B H)^T S^-1; the posterior mean moves by BG r and the
    covariance shrinks by BG S BG^T.
    """
    r = np.asarray(r, dtype=float)
    BH = prior.B @ prior.H
    BG = solve_psd(
        prior.S, BH @ prior.sigma_prior, diagnostics, step=prior.t
    ).T
    xhat = prior.x_prior + BG @ r
    sigma = symmetrize(prior.sigma_prior - BG @ prior.S @ BG.T)
    _check_posterior(sigma, prior.t)
    return FilterState(xhat=xhat, sigma=sigma, t=prior.t)


def rbkf_update(prior: PriorBundle, r_star, proj: ProjectionOperator, diagnostics=None):
    """Reduced update on the projected observation r* = A r.

    B* = A B, S* = A S A^T, BG* = Sigma_prior (B* H)^T S*^-1. With a = 1 this
    is exactly ``bkf_update``.
    """
    r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
    A = proj.A
    B_star_H = A @ prior.B @ prior.H
    S_star = symmetrize(A @ prior.S @ A.T)
    BG = solve_psd(
        S_star, B_star_H @ prior.sigma_prior, diagnostics, step=prior.t
    ).T
    xhat = prior.x_prior + BG @ r_star
    sigma = symmetrize(prior.sigma_prior - BG @ S_star @ BG.T)
    _check_posterior(sigma, prior.t)
    return FilterState(xhat=xhat, sigma=sigma, t=prior.t)


VARIANTS = ("ekf_ideal", "ekf_on_bits", "bkf", "rbkf")


@dataclass
class FilterRun:
    """Trajectories produced by one closed-loop filter run."""

    xhat: np.ndarray  # T x m posterior means
    trace_sigma: np.ndarray  # T
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    covariances: np.ndarray = None  # T x m x m, optional


def initial_state(x0_true, seed=0, perturb_std=0.1, sigma0_scale=0.1):
    """Initial estimate: the true x0 plus N(0, perturb_std^2 I); Sigma0 = 0.1 I."""
    x0_true = np.asarray(x0_true, dtype=float)
    rng = np.random.default_rng(seed)
    xhat0 = x0_true + perturb_std * rng.standard_normal(x0_true.shape)
    return FilterState(
        xhat=xhat0, sigma=sigma0_scale * np.eye(x0_true.size), t=0
    )


def run_filter(
    model: StateSpaceModel,
    Y,
    variant,
    init: FilterState,
    adc_per_feature=1,
    keep_covariances=False,
):
    """Run one filter variant over a pre-quantization measurement sequence Y.

    Y is T x n (already stacked for the full ADC bank when 1/a > 1). For the
    1-bit variants the ADCs are simulated online: the threshold tracks the
    filter's own measurement prediction, so the quantized stream depends on
    the estimator and is never an input. ``ekf_on_bits`` feeds zero-threshold
    sign observations straight into an EKF (the failing baseline);
    ``ekf_ideal`` consumes Y unquantized.
    """
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        Y = Y.reshape(0, model.meas_dim)
    Y = np.atleast_2d(Y)
    T = Y.shape[0]
    m = model.state_dim
    diagnostics = Diagnostics()
    xhat = np.empty((T, m))
    trace_sigma = np.empty(T)
    covs = np.empty((T, m, m)) if keep_covariances else None
    proj = None
    if variant == "rbkf":
        proj = build_projection(1.0 / adc_per_feature, model.meas_dim)

    state = init
    for t in range(T):
        if variant == "ekf_ideal":
            state = ekf_step(state, Y[t], model)
        elif variant == "ekf_on_bits":
            r = quantize_1bit(Y[t], np.zeros(model.meas_dim))
            state = ekf_step(state, r, model)
        else:
            prior = bkf_predict(state, model, diagnostics)
            tau = prior.y_prior  # dither: threshold at the prediction
            r = quantize_1bit(Y[t], tau)
            if variant == "bkf":
                state = bkf_update(prior, r, diagnostics)
            else:
                state = rbkf_update(prior, proj(r), proj, diagnostics)
        xhat[t] = state.xhat
        trace_sigma[t] = np.trace(state.sigma)
        if keep_covariances:
            covs[t] = state.sigma
    return FilterRun(
        xhat=xhat,
        trace_sigma=trace_sigma,
        diagnostics=diagnostics,
        covariances=covs,
    )


def dump_trajectory_csv(path, X, run: FilterRun):
    """Write one run as CSV: t, x1..xm, xhat1..xhatm, trace_sigma."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(m)]
        + [f"xhat{i + 1}" for i in range(m)]
        + ["trace_sigma"]
    )
    rows = np.column_stack(
        [np.arange(1, X.shape[0] + 1), X, run.xhat, run.trace_sigma]
    )
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="")

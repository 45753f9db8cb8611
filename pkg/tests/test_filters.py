"""Filter core: EKF, arcsin law, Bussgang updates, reduced updates, closed loop.

Oracles used here:
  * batch information-form least squares for the linear-Gaussian EKF,
  * Monte-Carlo sign covariance for the arcsin law,
  * a Monte-Carlo conditional-mean experiment for the scalar Bussgang gain,
  * BKF itself for rBKF at a = 1 and under duplicated identical noise.
"""

import numpy as np
import pytest

from bussgangkf import (
    AdcBank,
    Diagnostics,
    FilterState,
    LorenzParams,
    NoiseSpec,
    NumericError,
    StateSpaceModel,
    arcsin_covariance,
    bkf_predict,
    bkf_update,
    build_projection,
    ekf_step,
    generate_lorenz_dataset,
    initial_state,
    lorenz_model,
    monte_carlo_sign_covariance,
    quantize_1bit,
    rbkf_update,
    run_filter,
    solve_psd,
    stack_measurements,
)

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _linear_model(state_dim=2, meas_dim=2, q2=0.01, r2=0.1, seed=3):
    rng = np.random.default_rng(seed)
    F0 = np.array([[0.95, 0.05], [-0.05, 0.95]])[:state_dim, :state_dim]
    H0 = rng.standard_normal((meas_dim, state_dim))
    return StateSpaceModel(
        state_dim=state_dim,
        meas_dim=meas_dim,
        f=lambda x: F0 @ x,
        h=lambda x: H0 @ x,
        jac_f=lambda x: F0,
        jac_h=lambda x: H0,
        Q=q2 * np.eye(state_dim),
        R=r2 * np.eye(meas_dim),
    ), F0, H0


# ---------------------------------------------------------------- ekf_step


def test_ekf_scalar_arithmetic():
    m = StateSpaceModel(
        state_dim=1, meas_dim=1,
        f=lambda x: x, h=lambda x: x,
        jac_f=lambda x: np.eye(1), jac_h=lambda x: np.eye(1),
        Q=np.zeros((1, 1)), R=np.eye(1),
    )
    state = FilterState(xhat=np.zeros(1), sigma=np.eye(1), t=0)
    out = ekf_step(state, np.array([2.0]), m)
    # prior sigma 1, P = 2, gain 0.5, posterior sigma 0.5
    assert out.sigma[0, 0] == pytest.approx(0.5)
    assert out.xhat[0] == pytest.approx(1.0)
    assert out.t == 1


def test_ekf_infinite_noise_keeps_prior():
    m = StateSpaceModel(
        state_dim=1, meas_dim=1,
        f=lambda x: x, h=lambda x: x,
        jac_f=lambda x: np.eye(1), jac_h=lambda x: np.eye(1),
        Q=np.zeros((1, 1)), R=1e12 * np.eye(1),
    )
    state = FilterState(xhat=np.array([3.0]), sigma=np.eye(1), t=0)
    out = ekf_step(state, np.array([100.0]), m)
    assert abs(out.xhat[0] - 3.0) < 1e-5 * 3.0


def test_ekf_matches_batch_least_squares():
    # information-form batch MAP over a 5-step linear-Gaussian instance:
    # the filtered marginal at the last step must equal the EKF posterior
    model, F0, H0 = _linear_model()
    rng = np.random.default_rng(11)
    T = 5
    x = rng.standard_normal(2)
    x0_mean = x.copy()
    sigma0 = 0.5 * np.eye(2)

    xs, ys = [], []
    for _ in range(T):
        x = F0 @ x + rng.multivariate_normal(np.zeros(2), model.Q)
        xs.append(x)
        ys.append(H0 @ x + rng.multivariate_normal(np.zeros(2), model.R))

    state = FilterState(xhat=x0_mean, sigma=sigma0, t=0)
    for y in ys:
        state = ekf_step(state, y, model)

    # batch MAP over x_0..x_T: quadratic objective, solve the normal
    # equations; its x_T block is the filtered mean
    n = 2 * (T + 1)
    Lambda = np.zeros((n, n))
    eta = np.zeros(n)
    Lambda[:2, :2] += np.linalg.inv(sigma0)
    eta[:2] += np.linalg.inv(sigma0) @ x0_mean
    Qi = np.linalg.inv(model.Q)
    Ri = np.linalg.inv(model.R)
    for t in range(T):
        a, b = 2 * t, 2 * (t + 1)
        Lambda[a:a + 2, a:a + 2] += F0.T @ Qi @ F0
        Lambda[a:a + 2, b:b + 2] += -F0.T @ Qi
        Lambda[b:b + 2, a:a + 2] += -Qi @ F0
        Lambda[b:b + 2, b:b + 2] += Qi
        Lambda[b:b + 2, b:b + 2] += H0.T @ Ri @ H0
        eta[b:b + 2] += H0.T @ Ri @ ys[t]
    mean = np.linalg.solve(Lambda, eta)
    cov_T = np.linalg.inv(Lambda)[-2:, -2:]

    np.testing.assert_allclose(state.xhat, mean[-2:], atol=1e-8)
    np.testing.assert_allclose(state.sigma, cov_T, atol=1e-8)


def test_ekf_singular_innovation_raises():
    m = StateSpaceModel(
        state_dim=1, meas_dim=1,
        f=lambda x: x, h=lambda x: 0.0 * x,
        jac_f=lambda x: np.eye(1), jac_h=lambda x: np.zeros((1, 1)),
        Q=np.zeros((1, 1)), R=np.zeros((1, 1)),
    )
    state = FilterState(xhat=np.zeros(1), sigma=np.eye(1), t=0)
    with pytest.raises(NumericError):
        ekf_step(state, np.zeros(1), m)


# ---------------------------------------------------------------- arcsin law


def test_arcsin_identity():
    np.testing.assert_allclose(arcsin_covariance(np.eye(3)), np.eye(3))


def test_arcsin_half_correlation():
    P = np.array([[1.0, 0.5], [0.5, 1.0]])
    S = arcsin_covariance(P)
    np.testing.assert_allclose(S, [[1.0, 1 / 3], [1 / 3, 1.0]], atol=1e-12)


def test_arcsin_scales_out_variance():
    # S depends only on the correlation, not the scale
    P = np.array([[4.0, 1.0], [1.0, 9.0]])
    S = arcsin_covariance(P)
    corr = 1.0 / 6.0
    np.testing.assert_allclose(S[0, 1], (2 / np.pi) * np.arcsin(corr))
    np.testing.assert_allclose(np.diag(S), [1.0, 1.0])


def test_arcsin_rank_one_gives_all_ones():
    v = np.array([1.0, 2.0, -1.0])
    S = arcsin_covariance(np.outer(v, v) + 1e-15 * np.eye(3))
    np.testing.assert_allclose(np.abs(S), np.ones((3, 3)), atol=1e-6)


def test_arcsin_clamp_counted():
    diag = Diagnostics()
    P = np.array([[1.0, 1.0 + 1e-9], [1.0 + 1e-9, 1.0]])
    arcsin_covariance(P, diag)
    assert diag.arcsin_clamps == 2


def test_arcsin_tiny_overshoot_not_counted():
    diag = Diagnostics()
    P = np.array([[1.0, 1.0 + 1e-14], [1.0 + 1e-14, 1.0]])
    arcsin_covariance(P, diag)
    assert diag.arcsin_clamps == 0


def test_arcsin_matches_monte_carlo():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4))
    P = A @ A.T + 0.5 * np.eye(4)
    S = arcsin_covariance(P)
    S_mc = monte_carlo_sign_covariance(P, samples=10**6, seed=1)
    assert np.max(np.abs(S - S_mc)) < 4 / np.sqrt(10**6)


def test_monte_carlo_single_sample():
    S = monte_carlo_sign_covariance(np.eye(2), samples=1, seed=0)
    assert set(np.unique(np.abs(S))) == {1.0}
    np.testing.assert_allclose(np.diag(S), [1.0, 1.0])


def test_monte_carlo_deterministic():
    P = np.array([[1.0, 0.3], [0.3, 1.0]])
    a = monte_carlo_sign_covariance(P, samples=10_000, seed=42)
    b = monte_carlo_sign_covariance(P, samples=10_000, seed=42)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- solve_psd


def test_solve_psd_exact():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((3, 3))
    S = A @ A.T + np.eye(3)
    M = rng.standard_normal((3, 2))
    np.testing.assert_allclose(solve_psd(S, M), np.linalg.solve(S, M), atol=1e-10)


def test_solve_psd_jitter_escalation_counted():
    diag = Diagnostics()
    S = np.zeros((2, 2))  # not PD: forces jitter
    M = np.eye(2)
    out = solve_psd(S, M, diag)
    assert diag.jitter_escalations > 0
    assert np.all(np.isfinite(out))


# ---------------------------------------------------------------- BKF update


def test_bkf_scalar_worked_example():
    m = StateSpaceModel(
        state_dim=1, meas_dim=1,
        f=lambda x: x, h=lambda x: x,
        jac_f=lambda x: np.eye(1), jac_h=lambda x: np.eye(1),
        Q=np.zeros((1, 1)), R=0.5 * np.eye(1),
    )
    state = FilterState(xhat=np.zeros(1), sigma=0.5 * np.eye(1), t=0)
    prior = bkf_predict(state, m)
    assert prior.P[0, 0] == pytest.approx(1.0)
    assert prior.B[0, 0] == pytest.approx(SQRT_2_OVER_PI)
    assert prior.S[0, 0] == pytest.approx(1.0)
    post = bkf_update(prior, np.array([1.0]))
    bg = 0.5 * SQRT_2_OVER_PI  # Sigma * B * H / S
    assert post.xhat[0] == pytest.approx(bg)
    assert post.sigma[0, 0] == pytest.approx(0.5 - bg**2)
    assert post.sigma[0, 0] == pytest.approx(0.34085, abs=5e-5)


def test_bkf_scalar_gain_is_conditional_mean_slope():
    # Monte-Carlo oracle: for scalar y ~ N(0, P), E[y | sign(y)] = sign *
    # sqrt(2P/pi). With H=1, Q=0 the posterior mean after seeing r=+1
    # should equal Sigma/P * E[y|+1], the Bussgang gain prediction.
    P = 1.0
    rng = np.random.default_rng(9)
    y = rng.standard_normal(200_000) * np.sqrt(P)
    cond_mean = y[y > 0].mean()
    assert cond_mean == pytest.approx(np.sqrt(2 * P / np.pi), rel=5e-3)


def test_bkf_update_symmetric_in_r():
    m = lorenz_model(LorenzParams(), q2=1e-3, r2=0.1)
    state = FilterState(
        xhat=np.array([1.0, 1.0, 20.0]), sigma=0.1 * np.eye(3), t=0
    )
    prior = bkf_predict(state, m)
    r = np.array([1.0, -1.0, 1.0])
    up = bkf_update(prior, r)
    dn = bkf_update(prior, -r)
    np.testing.assert_allclose(
        up.xhat - prior.x_prior, -(dn.xhat - prior.x_prior), atol=1e-12
    )


def test_bkf_update_shrinks_covariance():
    m = lorenz_model(LorenzParams(), q2=1e-3, r2=0.1)
    state = FilterState(
        xhat=np.array([1.0, 1.0, 20.0]), sigma=0.1 * np.eye(3), t=0
    )
    prior = bkf_predict(state, m)
    post = bkf_update(prior, np.ones(3))
    assert np.trace(post.sigma) < np.trace(prior.sigma_prior)


def test_bkf_predict_rejects_collapsed_covariance():
    m = StateSpaceModel(
        state_dim=1, meas_dim=1,
        f=lambda x: x, h=lambda x: x,
        jac_f=lambda x: np.eye(1), jac_h=lambda x: np.eye(1),
        Q=np.zeros((1, 1)), R=np.zeros((1, 1)),
    )
    state = FilterState(xhat=np.zeros(1), sigma=np.zeros((1, 1)), t=0)
    with pytest.raises(NumericError):
        bkf_predict(state, m)


# ---------------------------------------------------------------- rBKF


def test_rbkf_identity_projection_equals_bkf():
    m = lorenz_model(LorenzParams(), q2=1e-3, r2=0.1)
    state = FilterState(
        xhat=np.array([1.0, 1.0, 20.0]), sigma=0.1 * np.eye(3), t=0
    )
    prior = bkf_predict(state, m)
    r = np.array([1.0, -1.0, 1.0])
    full = bkf_update(prior, r)
    red = rbkf_update(prior, r, build_projection(1.0, 3))
    np.testing.assert_allclose(full.xhat, red.xhat, atol=1e-12)
    np.testing.assert_allclose(full.sigma, red.sigma, atol=1e-12)


def test_rbkf_matches_bkf_with_duplicate_adcs():
    # identical noise across 8 duplicate ADCs: the averaged update loses
    # nothing, so the posterior agrees with the full update elementwise
    base = lorenz_model(LorenzParams(), q2=1e-3, r2=0.1)
    bank = AdcBank(adc_per_feature=8, noise_variances=np.full(24, 0.1))
    model = stack_measurements(base, bank)
    state = FilterState(
        xhat=np.array([1.0, 1.0, 20.0]), sigma=0.1 * np.eye(3), t=0
    )
    prior = bkf_predict(state, model)
    rng = np.random.default_rng(4)
    y = model.h(np.array([1.1, 0.9, 20.2])) + np.sqrt(0.1) * rng.standard_normal(24)
    r = quantize_1bit(y, prior.y_prior)
    proj = build_projection(1.0 / 8.0, 24)
    full = bkf_update(prior, r)
    red = rbkf_update(prior, proj(r), proj)
    np.testing.assert_allclose(full.xhat, red.xhat, atol=1e-6)
    np.testing.assert_allclose(full.sigma, red.sigma, atol=1e-6)


def test_rbkf_scalar_reduced_space():
    # a*n = 1: the reduced innovation covariance is a scalar
    base = lorenz_model(LorenzParams(), q2=1e-3, r2=0.1)
    bank = AdcBank(adc_per_feature=2, noise_variances=np.full(6, 0.1))
    model = stack_measurements(base, bank)
    state = FilterState(
        xhat=np.array([1.0, 1.0, 20.0]), sigma=0.1 * np.eye(3), t=0
    )
    prior = bkf_predict(state, model)
    proj = build_projection(1.0 / 6.0, 6)
    out = rbkf_update(prior, proj(np.ones(6)), proj)
    assert out.xhat.shape == (3,)


# ---------------------------------------------------------------- run_filter


def test_run_filter_ekf_equals_iterated_steps():
    model, F0, H0 = _linear_model()
    rng = np.random.default_rng(8)
    Y = rng.standard_normal((20, 2))
    init = FilterState(xhat=np.zeros(2), sigma=np.eye(2), t=0)
    run = run_filter(model, Y, "ekf_ideal", init)
    state = FilterState(xhat=np.zeros(2), sigma=np.eye(2), t=0)
    for t, y in enumerate(Y):
        state = ekf_step(state, y, model)
        np.testing.assert_allclose(run.xhat[t], state.xhat, atol=1e-12)


def test_run_filter_empty_input():
    model, _, _ = _linear_model()
    init = FilterState(xhat=np.zeros(2), sigma=np.eye(2), t=0)
    run = run_filter(model, np.empty((0, 2)), "bkf", init)
    assert run.xhat.shape == (0, 2)


def test_run_filter_rbkf_a1_equals_bkf():
    noise = NoiseSpec(r2_db=-10.0, snr_db=-20.0)
    ds = generate_lorenz_dataset(
        count=1, length=200, noise=noise, lorenz=LorenzParams(),
        adc_per_feature=1, master_seed=3,
    )
    pair = ds.sequences[0]
    model = lorenz_model(LorenzParams(), q2=ds.meta["q2"], r2=0.1)
    init = initial_state(pair.X[0], seed=0)
    a = run_filter(model, pair.Y[1:], "bkf", init)
    b = run_filter(model, pair.Y[1:], "rbkf", init)
    np.testing.assert_allclose(a.xhat, b.xhat, atol=1e-10)


def test_run_filter_deterministic():
    noise = NoiseSpec(r2_db=-10.0, snr_db=-20.0)
    ds = generate_lorenz_dataset(
        count=1, length=100, noise=noise, lorenz=LorenzParams(),
        adc_per_feature=1, master_seed=5,
    )
    pair = ds.sequences[0]
    model = lorenz_model(LorenzParams(), q2=ds.meta["q2"], r2=0.1)
    runs = []
    for _ in range(2):
        init = initial_state(pair.X[0], seed=0)
        runs.append(run_filter(model, pair.Y[1:], "bkf", init))
    np.testing.assert_array_equal(runs[0].xhat, runs[1].xhat)


def test_run_filter_keep_covariances():
    model, _, _ = _linear_model()
    rng = np.random.default_rng(8)
    Y = rng.standard_normal((5, 2))
    init = FilterState(xhat=np.zeros(2), sigma=np.eye(2), t=0)
    run = run_filter(model, Y, "ekf_ideal", init, keep_covariances=True)
    assert run.covariances.shape == (5, 2, 2)
    np.testing.assert_allclose(
        run.trace_sigma, run.covariances.trace(axis1=1, axis2=2)
    )


def test_run_filter_unknown_variant():
    model, _, _ = _linear_model()
    init = FilterState(xhat=np.zeros(2), sigma=np.eye(2), t=0)
    with pytest.raises(Exception):
        run_filter(model, np.zeros((1, 2)), "ukf", init)


def test_bkf_tracks_lorenz():
    # end-to-end smoke: closed-loop BKF stays on the attractor and beats
    # the trivial "predict only from x0" baseline by a wide margin
    noise = NoiseSpec(r2_db=-10.0, snr_db=-20.0)
    ds = generate_lorenz_dataset(
        count=1, length=500, noise=noise, lorenz=LorenzParams(),
        adc_per_feature=1, master_seed=7,
    )
    pair = ds.sequences[0]
    model = lorenz_model(LorenzParams(), q2=ds.meta["q2"], r2=0.1)
    init = initial_state(pair.X[0], seed=0)
    run = run_filter(model, pair.Y[1:], "bkf", init)
    mse = np.mean((run.xhat - pair.X[1:]) ** 2)
    assert mse < 0.1  # roughly -10 dB or better per element
    assert np.all(np.isfinite(run.xhat))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specdim.iterate import (
    IterationConfig,
    NoiseConfig,
    Trajectory,
    geometric_window,
    heavy_ball_xi,
    log_grid,
    nesterov_xi,
    random_init_variance,
    richardson,
    run,
    run_avg_gd,
    run_gd,
    run_gd_noisy,
    run_gd_random_init,
    run_heavy_ball,
    run_nesterov,
    run_nesterov_noisy,
    single_mode_factors,
)
from specdim.spectral import PowerLawSpectrum, spectral_dimension

ONE_ATOM = PowerLawSpectrum(2, 2, gamma_L=0.5, n_modes=1)  # atom (0.5, 0.5)


def cfg(algorithm="gd", spec=ONE_ATOM, steps=50, **kw):
    return IterationConfig(algorithm, spec, steps, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(steps=1)
    with pytest.raises(ValueError):
        cfg("nesterov", rho=0)
    with pytest.raises(ValueError):
        cfg("sgd")
    with pytest.raises(ValueError):
        NoiseConfig(0, 1, mode="monte_carlo", replications=5)
    with pytest.raises(ValueError):
        NoiseConfig(0, 1, mode="monte_carlo", replications=0, seed=1)


def test_single_atom_gd():
    t = run_gd(cfg(), [0, 1, 2, 10])
    np.testing.assert_allclose(t.values, 0.5 * 0.25 ** np.array([0, 1, 2, 10]), rtol=1e-14)
    assert t.at(1) == pytest.approx(0.125)


def test_iterate_norm_criterion():
    spec = PowerLawSpectrum(1.5, 0.7, n_modes=30)
    t = run_gd(cfg(spec=spec, criterion="iterate_norm"), [0, 7])
    i = np.arange(1, 31)
    lam = spec.eigenvalues(i)
    ref = [math.fsum(i**-0.7 * (1 - lam) ** (2 * k)) for k in (0, 7)]
    np.testing.assert_allclose(t.values, ref, rtol=1e-13)


@given(alpha=st.floats(0.5, 3), beta=st.floats(-0.4, 4), gl=st.floats(0.05, 0.99), n=st.integers(1, 400))
@settings(max_examples=40, deadline=None)
def test_gd_non_increasing(alpha, beta, gl, n):
    if beta <= 1 - alpha:
        beta = 1 - alpha + 0.1
    t = run_gd(cfg(spec=PowerLawSpectrum(alpha, beta, gl, n_modes=n), steps=5000))
    assert np.all(t.values >= 0)
    assert np.all(np.diff(t.values) <= 1e-15 * t.values[0])


def test_gd_rate_ratio():
    spec = PowerLawSpectrum(2, 2, n_modes=10**7)
    sd = spectral_dimension(spec)
    k = np.array([10**4, 10**5])
    t = run_gd(cfg(spec=spec, steps=10**5, exact_modes=3000), k)
    ratio = t.values * (2 * k) ** sd.omega / (sd.c * math.gamma(sd.omega))
    assert abs(ratio[-1] - 1) < abs(ratio[0] - 1) + 1e-6
    assert ratio[-1] == pytest.approx(1, abs=0.01)


def test_aggregated_modes_match_full_sum():
    spec = PowerLawSpectrum(2, 0.5, n_modes=200000)
    ks = np.array([0, 10, 100, 1000])
    full = run_gd(cfg(spec=spec, steps=1000), ks)
    agg = run_gd(cfg(spec=spec, steps=1000, exact_modes=2000), ks)
    np.testing.assert_allclose(agg.values, full.values, rtol=1e-7)


def test_nesterov_zero_eigenvalue_mode():
    np.testing.assert_array_equal(single_mode_factors("nesterov", 0.0, 200), np.ones(201))
    np.testing.assert_array_equal(single_mode_factors("heavy_ball", 0.0, 200), np.ones(201))
    np.testing.assert_array_equal(single_mode_factors("nesterov", 0.0, 50, rho=2.7), np.ones(51))


@pytest.mark.parametrize("lam", [0.5, 0.1, 1e-3])
def test_nesterov_matches_xi(lam):
    K = 1000
    b = single_mode_factors("nesterov", lam, K)
    xi = nesterov_xi(lam, K + 1)
    # k b_k = xi_k up to the shift between the two initialisations
    k = np.arange(K + 1)
    np.testing.assert_allclose(k * b, xi[: K + 1], rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("lam", [0.5, 0.1, 1e-3])
def test_heavy_ball_matches_xi(lam):
    K = 1000
    b = single_mode_factors("heavy_ball", lam, K)
    k = np.arange(K + 1)
    np.testing.assert_allclose(k * b, heavy_ball_xi(lam, K), rtol=1e-8, atol=1e-10)


def test_vectorised_runner_matches_single_mode():
    spec = PowerLawSpectrum(2, 1, n_modes=5)
    lam = spec.eigenvalues(np.arange(1, 6))
    w = spec.atom_weights(np.arange(1, 6))
    for kind, runner in (("nesterov", run_nesterov), ("heavy_ball", run_heavy_ball)):
        for rho in (1.0, 2.5):
            t = runner(cfg(kind, spec=spec, steps=300, rho=rho), deactivate=False)
            ref = sum(wi * single_mode_factors(kind, li, 300, rho) ** 2 for wi, li in zip(w, lam))
            np.testing.assert_allclose(t.values, ref, rtol=1e-12)


def test_deactivation_changes_little():
    spec = PowerLawSpectrum(2, 2, n_modes=2000)
    c = cfg("nesterov", spec=spec, steps=3000)
    on, off = run_nesterov(c), run_nesterov(c, deactivate=False)
    np.testing.assert_allclose(on.values, off.values, rtol=1e-10)
    assert on.meta["frozen_modes"] > 0


def _osc_runs(K=8000):
    spec = PowerLawSpectrum(2, 2, n_modes=4000)
    omega = spectral_dimension(spec).omega
    k = np.arange(K + 1, dtype=float)

    def amp(t, lo, hi):
        r = t.values[lo : hi + 1] * k[lo : hi + 1] ** (omega + 1)
        return (r.max() - r.min()) / 2 / np.mean(r)

    nest = run_nesterov(cfg("nesterov", spec=spec, steps=K, exact_modes=1000))
    hb = run_heavy_ball(cfg("heavy_ball", spec=spec, steps=K, exact_modes=1000))
    return amp, nest, hb, K


def test_nesterov_oscillation_shrinks_heavy_ball_persists():
    amp, nest, hb, K = _osc_runs()
    early, late = amp(nest, K // 8, K // 4), amp(nest, K // 2, K)
    assert late < 0.85 * early
    assert amp(hb, K // 2, K) >= 0.8 * amp(hb, K // 8, K // 4)


@pytest.mark.xfail(strict=True, reason="relative amplitude decays roughly like k^-0.24, about 0.72x per fourfold k")
def test_nesterov_oscillation_halves_over_fourfold_window():
    amp, nest, _, K = _osc_runs()
    assert amp(nest, K // 2, K) <= 0.5 * amp(nest, K // 8, K // 4)


def test_avg_gd_edge_cases():
    spec = PowerLawSpectrum(2, 2, n_modes=3)
    t = run_avg_gd(cfg("avg_gd", spec=spec), [0, 1, 5])
    assert t.values[0] == pytest.approx(run_gd(cfg(spec=spec), [0]).values[0], rel=1e-14)
    # single atom lam = 0.5: m_1 = (1 - 0.25)/(2 * 0.5)
    t1 = run_avg_gd(cfg("avg_gd"), [1])
    assert t1.values[0] == pytest.approx(0.5 * 0.75**2, rel=1e-14)


def test_avg_gd_matches_explicit_average():
    spec = PowerLawSpectrum(1.5, 1, n_modes=20)
    i = np.arange(1, 21)
    lam, w = spec.eigenvalues(i), spec.atom_weights(i)
    t = run_avg_gd(cfg("avg_gd", spec=spec, steps=40), np.arange(41))
    powers = (1 - lam)[None, :] ** np.arange(41)[:, None]
    m = np.cumsum(powers, axis=0) / np.arange(1, 42)[:, None]
    np.testing.assert_allclose(t.values, (m**2) @ w, rtol=1e-12)


def test_noise_free_noisy_gd_is_gd():
    spec = PowerLawSpectrum(2, 1, n_modes=100)
    ks = [0, 3, 30]
    a = run_gd_noisy(cfg(spec=spec, noise=NoiseConfig(0, 0.0)), ks)
    np.testing.assert_allclose(a.values, run_gd(cfg(spec=spec), ks).values, rtol=1e-14)


def test_noisy_gd_single_atom_closed_form():
    lam, sig = 0.5, 0.3
    c = cfg(noise=NoiseConfig(0, sig), zero_init=True)
    k = np.arange(0, 20)
    t = run_gd_noisy(c, k)
    gamma = ONE_ATOM.gamma
    ref = sig**2 * lam / (2 * gamma) * (1 - (1 - lam) ** (2 * k)) / (1 - (1 - lam) ** 2)
    np.testing.assert_allclose(t.values, ref, rtol=1e-13, atol=1e-300)


def test_noisy_gd_bias_variance_split():
    spec = PowerLawSpectrum(2, 1, n_modes=60)
    noise = NoiseConfig(0.5, 0.2)
    ks = [0, 5, 50]
    full = run_gd_noisy(cfg(spec=spec, noise=noise), ks).values
    bias = run_gd(cfg(spec=spec), ks).values
    var = run_gd_noisy(cfg(spec=spec, noise=noise, zero_init=True), ks).values
    np.testing.assert_allclose(full, bias + var, rtol=1e-13)


def test_noisy_monte_carlo_unbiased():
    spec = PowerLawSpectrum(2, 1, n_modes=50)
    ks = np.arange(0, 31, 5)
    ex = run_gd_noisy(cfg(spec=spec, steps=30, noise=NoiseConfig(0, 0.5)), ks)
    mc = run_gd_noisy(cfg(spec=spec, steps=30, noise=NoiseConfig(0, 0.5, "monte_carlo", 200, seed=11)), ks)
    z = np.abs(mc.values[1:] - ex.values[1:]) / mc.stderr[1:]
    assert np.all(z < 3)
    assert mc.values[0] == pytest.approx(ex.values[0], rel=1e-12)


def test_noisy_nesterov_reduces_and_agrees_with_mc():
    spec = PowerLawSpectrum(2, 1, n_modes=50)
    quiet = run_nesterov_noisy(cfg("nesterov", spec=spec, steps=40, noise=NoiseConfig(0, 0.0)))
    np.testing.assert_allclose(quiet.values, run_nesterov(cfg("nesterov", spec=spec, steps=40)).values, rtol=1e-12)
    ex = run_nesterov_noisy(cfg("nesterov", spec=spec, steps=40, noise=NoiseConfig(0, 0.4)))
    mc = run_nesterov_noisy(cfg("nesterov", spec=spec, steps=40, noise=NoiseConfig(0, 0.4, "monte_carlo", 200, seed=5)))
    z = np.abs(mc.values[2:] - ex.values[2:]) / mc.stderr[2:]
    assert np.all(z < 3)


def test_monte_carlo_is_reproducible():
    spec = PowerLawSpectrum(2, 1, n_modes=20)
    c = cfg(spec=spec, steps=10, noise=NoiseConfig(0, 0.5, "monte_carlo", 4, seed=3))
    a, b = run_gd_noisy(c, [10]), run_gd_noisy(c, [10])
    assert a.values[0] == b.values[0]


def test_run_dispatch():
    spec = PowerLawSpectrum(2, 1, n_modes=10)
    t = run(cfg("nesterov", spec=spec, steps=20), [0, 10, 20])
    assert list(t.k) == [0, 10, 20]
    with pytest.raises(ValueError):
        run(cfg("avg_gd", spec=spec, noise=NoiseConfig(0, 1.0)))


def test_random_init_rademacher_is_deterministic():
    spec = PowerLawSpectrum(2, 2, n_modes=30)
    mean, var = run_gd_random_init(cfg(spec=spec), -2, 10, seed=1, ks=[0, 5])
    np.testing.assert_allclose(var.values, 0, atol=1e-30)
    np.testing.assert_allclose(mean.values, run_gd(cfg(spec=spec), [0, 5]).values, rtol=1e-13)


def test_random_init_closed_form_single_atom():
    v = random_init_variance(cfg(), 0.0, [0])
    assert v[0] == pytest.approx(0.25 * 2)
    v = random_init_variance(cfg(), 1.5, [0])
    assert v[0] == pytest.approx(0.25 * 3.5)
    with pytest.raises(ValueError):
        run_gd_random_init(cfg(), 1.5, 10, seed=0)


def test_random_init_gaussian_matches_closed_form():
    spec = PowerLawSpectrum(2, 2, n_modes=100)
    _, var = run_gd_random_init(cfg(spec=spec, steps=100), 0, 1000, seed=2, ks=[0, 10, 100])
    z = np.abs(var.values - np.array(var.meta["closed_form"])) / var.stderr
    assert np.all(z < 3)


def test_richardson_constant_and_exact_power():
    k = np.arange(0, 101)
    const = richardson(Trajectory(k, np.full(101, 2.5)), 1.3)
    np.testing.assert_allclose(const.values, 2.5)
    kk = np.arange(1, 201)
    seq = 0.7 + 3.0 * kk**-1.5
    b = richardson(Trajectory(kk, seq), 1.5)
    even = b.k % 2 == 0
    np.testing.assert_allclose(b.values[even], 0.7, rtol=1e-13)


def test_richardson_second_order_term():
    kk = np.arange(1, 101)
    b = richardson(Trajectory(kk, 1 + 1 / kk + 1 / kk**2), 1.0)
    assert abs(b.at(100) - 1) <= 4e-4
    assert b.at(100) == pytest.approx(2 * (1 + 0.01 + 1e-4) - (1 + 0.02 + 4e-4), rel=1e-14)
    with pytest.raises(ValueError):
        richardson(Trajectory(kk, kk * 1.0), 0)


@given(l=st.floats(-5, 5), c=st.floats(-5, 5), a=st.floats(0.2, 4))
@settings(max_examples=40, deadline=None)
def test_richardson_cancels_leading_term(l, c, a):
    kk = np.arange(2, 400, 2)
    b = richardson(Trajectory(np.concatenate([kk // 2, kk]), np.concatenate([l + c * (kk // 2) ** -a, l + c * kk**-a])), a)
    assert np.max(np.abs(b.values[np.isin(b.k, kk)] - l)) <= 1e-10 * (1 + abs(l) + abs(c))


def test_grids():
    g = log_grid(10**5)
    assert g[0] == 0 and g[-1] == 10**5 and np.all(np.diff(g) > 0)
    assert len(g) <= 5 * 60 + 3
    w = geometric_window(25000, 100000)
    assert w[0] == 25000 and w[-1] == 100000 and len(w) == 64


def test_trajectory_helpers():
    t = Trajectory([0, 2, 4], [1.0, 2.0, 3.0])
    assert t.at(2) == 2.0 and len(t.window(1, 4)) == 2
    with pytest.raises(KeyError):
        t.at(3)
    with pytest.raises(ValueError):
        Trajectory([0, 1], [1.0])

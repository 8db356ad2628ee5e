"""Closed-form asymptotic equivalents c_hat * k^-p * (log k)^q.

Negative p means growth.  Regime labels record which branch fired; boundary
cases between two power laws either switch to the log branch or raise
:class:`BoundaryError`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lms as _lms
from .iterate import single_mode_factors
from .spectral import (
    POLE_GUARD,
    GammaPoleError,
    PowerLawSpectrum,
    SpectralDimension,
    compensated_sum,
    gamma_fn,
    mode_grid,
    spectral_dimension,
)
from .ztrans import RationalZ, coefficient_rel_error, taylor_coeffs

# two exponents closer than this are treated as equal (log case)
EXACT_TIE = 1e-12


class BoundaryError(ValueError):
    """The parameters sit on (or next to) a boundary between two regimes."""


@dataclass(frozen=True)
class Equivalent:
    c_hat: float
    p: float
    q: int = 0
    regime: str = ""
    second: Optional["Equivalent"] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.q not in (0, 1):
            raise ValueError("q must be 0 or 1")
        if not math.isfinite(self.c_hat):
            raise ValueError("c_hat must be finite")

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        v = self.c_hat * k ** (-self.p)
        if self.q:
            v = v * np.log(k)
        if self.second is not None:
            v = v + self.second(k)
        return v

    def describe(self) -> str:
        s = f"{self.c_hat:.10g} * k^{-self.p:.10g}"
        if self.q:
            s += " * log(k)"
        if self.second is not None:
            s += " + " + self.second.describe()
        return s


def _G(x: float) -> float:
    try:
        return gamma_fn(x)
    except GammaPoleError as e:
        raise BoundaryError(str(e)) from None


def _sd(obj) -> SpectralDimension:
    return spectral_dimension(obj) if isinstance(obj, PowerLawSpectrum) else obj


def _spectral_sum(spec: PowerLawSpectrum, fn, n_exact: Optional[int] = 4096) -> float:
    """sum_i fn(i) over the truncated spectrum, with the tail on quadrature nodes."""
    x, q = mode_grid(spec, n_exact)
    return float(compensated_sum(q * fn(x)))


# -- gradient descent ----------------------------------------------------------

def eq_gd(sd) -> Equivalent:
    sd = _sd(sd)
    w, c = sd.omega, sd.c
    return Equivalent(c * _G(w) / 2**w, w, 0, "gd", meta={"omega": w, "c": c})


def eq_gd_norm(spec: PowerLawSpectrum) -> Equivalent:
    """||theta_k||^2 for GD; measure constant Delta^2 / (alpha (gamma L)^p) times Gamma(p)/2^p."""
    p = (spec.beta - 1) / spec.alpha
    if p <= 0:
        raise BoundaryError("beta <= 1: the iterate norm does not decay")
    c = spec.delta**2 / (spec.alpha * spec.gamma_L**p)
    return Equivalent(c * _G(p) / 2**p, p, 0, "gd_norm", meta={"omega": p, "c": c})


def eq_gd_random_init_var(spec: PowerLawSpectrum, kappa: float) -> Equivalent:
    if kappa < -2:
        raise ValueError("kurtosis must be at least -2")
    w = spectral_dimension(spec).omega
    wp = 2 * w + 1 / spec.alpha
    cp = spec.L**2 * spec.delta**4 * (kappa + 2) / (4 * spec.alpha * spec.gamma_L**wp)
    return Equivalent(cp * _G(wp) / 4**wp, wp, 0, "random_init_var", meta={"omega": wp, "c": cp})


# -- momentum --------------------------------------------------------------------

def eq_nesterov(sd, rho: float = 1.0) -> Equivalent:
    sd = _sd(sd)
    w, c = sd.omega, sd.c
    if not rho > 0:
        raise ValueError("rho must be positive")
    pre = c * (_G(2 * rho) / _G(rho)) ** 2
    meta = {"omega": w, "c": c, "rho": rho}
    if abs(w - rho) <= EXACT_TIE:
        return Equivalent(pre * 2 ** (1 - 2 * rho), 2 * rho, 1, "log", meta=meta)
    if abs(w - rho) < POLE_GUARD:
        raise BoundaryError("omega is within 1e-6 of rho: use the log case")
    if w < rho:
        v = (
            _G(rho - w) * _G(w) / _G(4 * rho - 1 - 2 * w)
            * _G(2 * rho - 0.5 - w) / _G(rho + 0.5 - w)
            * 2 ** (2 * rho - 1) / 4**w
        )
        return Equivalent(pre * v, 2 * w, 0, "omega<rho", meta=meta)
    return Equivalent(pre * 2 ** (1 - 2 * rho) * _G(w - rho), w + rho, 0, "omega>rho", meta=meta)


def eq_heavy_ball(spec: PowerLawSpectrum) -> Equivalent:
    """Heavy-ball with rho = 1.

    Below omega = 1 the Nesterov equivalent applies.  Above it the scaled
    sequence k^2 a_k keeps oscillating; the returned constant is the limit of its
    Cesaro means, 1/2 sum_i w_i / (lam_i (1 - lam_i / 4)).
    """
    sd = spectral_dimension(spec)
    w, c = sd.omega, sd.c
    meta = {"omega": w, "c": c, "rho": 1.0}
    if w < 1 - EXACT_TIE:
        return eq_nesterov(sd, 1.0)
    if abs(w - 1) <= EXACT_TIE:
        return Equivalent(c, 2.0, 1, "log", meta=meta)

    def f(x):
        lam = spec.eigenvalues(x)
        return spec.atom_weights(x) / (lam * (1 - lam / 4))

    return Equivalent(0.5 * _spectral_sum(spec, f), 2.0, 0, "cesaro", meta=meta)


# -- additive noise --------------------------------------------------------------

def noise_dimension(spec: PowerLawSpectrum, beta_prime: float, varsigma: float) -> SpectralDimension:
    wp = (beta_prime - 1) / spec.alpha + 1
    cp = spec.L * varsigma**2 / (2 * spec.alpha * spec.gamma_L**wp)
    return SpectralDimension(wp, cp)


def gd_noise_limit(spec: PowerLawSpectrum, beta_prime: float, varsigma: float) -> float:
    """lim a_k = 1/(2 gamma) sum_i varsigma^2 i^-beta' / (2 - gamma h_i) for a zero start."""
    g = spec.gamma

    def f(x):
        return varsigma**2 * x ** (-beta_prime) / (2 - spec.eigenvalues(x))

    return _spectral_sum(spec, f) / (2 * g)


def eq_gd_noise_var(spec: PowerLawSpectrum, beta_prime: float, varsigma: float) -> Equivalent:
    nd = noise_dimension(spec, beta_prime, varsigma)
    wp, cp = nd.omega, nd.c
    meta = {"omega": wp, "c": cp}
    if abs(wp - 1) < POLE_GUARD:
        raise BoundaryError("omega' = 1: logarithmic boundary, no equivalent")
    if wp < 1:
        v = cp / 2**wp * _G(wp) * _G(1 - wp) / _G(2 - wp)
        return Equivalent(v, wp - 1, 0, "growth", meta=meta)
    return Equivalent(gd_noise_limit(spec, beta_prime, varsigma), 0.0, 0, "constant", meta=meta)


def eq_nesterov_noise_var(spec: PowerLawSpectrum, beta_prime: float, varsigma: float) -> Equivalent:
    if spec.alpha <= 1:
        raise ValueError("alpha must exceed 1")
    nd = noise_dimension(spec, beta_prime, varsigma)
    wp, cp = nd.omega, nd.c
    meta = {"omega": wp, "c": cp}
    if abs(wp - 1) < POLE_GUARD or wp >= 2 - POLE_GUARD:
        raise BoundaryError("omega' must lie in (0, 1) or (1, 2)")
    if wp < 1:
        v = cp * _G(1 - wp) * _G(wp) / _G(6 - 2 * wp) * 4 ** (1 - wp)
        return Equivalent(v, -(3 - 2 * wp), 0, "growth_fast", meta=meta)
    v = cp * _G(2 - wp) / _G(5 - wp) * _G(wp) / (wp - 1)
    return Equivalent(v, -(2 - wp), 0, "growth_slow", meta=meta)


# -- averaging -------------------------------------------------------------------

def eq_avg_gd(sd, spec: Optional[PowerLawSpectrum] = None) -> Equivalent:
    if isinstance(sd, PowerLawSpectrum):
        spec, sd = sd, spectral_dimension(sd)
    w, c = sd.omega, sd.c
    meta = {"omega": w, "c": c}
    if abs(w - 2) < POLE_GUARD:
        raise BoundaryError("omega = 2 boundary")
    if w < 2:
        ratio = math.log(2) if abs(w - 1) < 1e-9 else (2 ** (1 - w) - 1) / (1 - w)
        v = 2 * c * _G(w) * _G(2 - w) / _G(3 - w) * ratio
        return Equivalent(v, w, 0, "omega<2", meta=meta)
    if spec is None:
        raise ValueError("omega > 2 needs the spectrum for <theta_0, H^-1 theta_0>")
    return Equivalent(avg_gd_limit(spec), 2.0, 0, "omega>2", meta=meta)


def avg_gd_limit(spec: PowerLawSpectrum) -> float:
    """lim k^2 a_k = 1/(2 gamma^2) <theta_0, H^-1 theta_0>."""
    g = spec.gamma
    s = _spectral_sum(spec, lambda x: spec.init_coords_sq(x) / spec.hessian_eigenvalues(x), n_exact=None)
    return s / (2 * g * g)


# -- least-mean-squares -------------------------------------------------------------

def _lms_c(cfg) -> float:
    gl = cfg.gamma * cfg.L
    return cfg.L * cfg.delta**2 / (2 * cfg.alpha * gl**cfg.omega)


def eq_lms_bias(cfg) -> Equivalent:
    u = _lms.upsilon(cfg)
    if u >= 1:
        raise _lms.StepSizeError("upsilon >= 1")
    w = cfg.omega
    edge = 2 - 1 / cfg.alpha
    meta = {"omega": w, "upsilon": u}
    c = _lms_c(cfg)
    slow = Equivalent(c / (1 - u) * _G(w) / 2**w, w, 0, "omega<2-1/alpha", meta=meta)
    tau = _lms.lms_bias_limit_constant(cfg)
    a = cfg.alpha
    vfast = tau / (1 - u) ** 2 * (2 * cfg.gamma * cfg.L) ** (1 / a) * _G(1 - 1 / a) * 0.25 * (1 - 1 / a)
    vfast /= a * cfg.gamma  # tau is a sum over coordinates, not a spectral density in lam
    fast = Equivalent(vfast, edge, 0, "omega>2-1/alpha", meta=dict(meta, tau=tau))
    if abs(w - edge) < POLE_GUARD:
        return Equivalent(slow.c_hat, slow.p, 0, "boundary", second=fast, meta=meta)
    return slow if w < edge else fast


def eq_lms_variance_limit(cfg) -> float:
    return _lms.variance_limit(cfg)


# -- generating-function identity ---------------------------------------------------

def verify_lemma_nest2(rho: int, lam: float, K: int) -> float:
    """Max relative gap between the two sides of the coefficient identity.

    Left: (j+1)(j+2)...(j+2rho-1) b_{j+1} from the Nesterov recursion.
    Right: (2rho-1)! times the Taylor coefficients of ((1-z)^2 (1-lam) + lam)^-rho.
    The factorial matches the right-hand side (2rho-1) of the differential
    equation satisfied by the generating function of b_k.
    """
    if int(rho) != rho or not 1 <= rho <= 4:
        raise ValueError("rho must be an integer in 1..4")
    if not 0 < lam < 1:
        raise BoundaryError("lam must lie in (0, 1)")
    if K > 500:
        raise ValueError("K must not exceed 500")
    rho = int(rho)
    b = single_mode_factors("nesterov", lam, K + 1, float(rho))
    j = np.arange(K + 1)
    rising = np.ones(K + 1)
    for t in range(1, 2 * rho):
        rising *= j + t
    lhs = rising * b[1 : K + 2]
    # expanding 1/P^rho through its own recurrence loses digits (rho-fold roots),
    # so take the rho-fold Cauchy power of the well-conditioned series of 1/P
    base = taylor_coeffs(RationalZ(np.array([1.0]), np.array([1.0, -2 * (1 - lam), 1 - lam])), K)
    series = base
    for _ in range(rho - 1):
        series = np.convolve(series, base)[: K + 1]
    rhs = math.factorial(2 * rho - 1) * series
    return coefficient_rel_error(lhs, rhs)

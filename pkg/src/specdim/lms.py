"""Single-pass SGD (least-mean-squares) on a diagonal streaming model.

Inputs are x = sum_i sqrt(h_i) z_i u_i with i.i.d. unit-variance z_i of excess
kurtosis kappa, so E[x x^T] = Diag(h).  Second moments of the error decouple:
the diagonal of E[theta theta^T] follows a linear recursion with a diagonal plus
rank-one operator, which :func:`evolve_expected` applies in O(d) per step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .iterate import Trajectory

MAX_T_DIM = 64
MAX_U_DIM = 32
SAMPLING_KURTOSIS = (-2.0, 0.0)


class StepSizeError(ValueError):
    pass


class DivergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LmsConfig:
    d: int
    alpha: float
    beta: float
    gamma: float
    L: float = 1.0
    delta: float = 1.0
    varsigma: float = 0.0
    kappa: float = -2.0
    replications: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("d must be a positive integer")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.varsigma < 0:
            raise ValueError("varsigma must be nonnegative")
        if self.kappa < -2:
            raise ValueError("kurtosis must be at least -2")
        if self.replications < 1:
            raise ValueError("replications must be positive")

    @property
    def h(self) -> np.ndarray:
        return self.L * np.arange(1, self.d + 1, dtype=float) ** (-self.alpha)

    @property
    def delta_sq(self) -> np.ndarray:
        return self.delta**2 * np.arange(1, self.d + 1, dtype=float) ** (-self.beta)

    @property
    def omega(self) -> float:
        return (self.beta - 1) / self.alpha + 1

    def with_gamma(self, gamma: float) -> "LmsConfig":
        from dataclasses import replace

        return replace(self, gamma=gamma)


def _denominators(cfg: LmsConfig, gamma: Optional[float] = None) -> np.ndarray:
    g = cfg.gamma if gamma is None else gamma
    den = 2 - (cfg.kappa + 2) * g * cfg.h
    if np.any(den <= 0):
        raise StepSizeError("step size too large: 2 - (kappa+2) gamma h_i must stay positive")
    return den


def upsilon(cfg: LmsConfig, gamma: Optional[float] = None) -> float:
    """sum_i gamma h_i / (2 - (kappa+2) gamma h_i)."""
    g = cfg.gamma if gamma is None else gamma
    return math.fsum(g * cfg.h / _denominators(cfg, g))


def gamma_max(cfg: LmsConfig, tol: float = 1e-15) -> float:
    """Step size at which upsilon reaches 1 (bisection)."""
    h = cfg.h
    hi = 2.0 / ((cfg.kappa + 2) * h.max()) if cfg.kappa > -2 else 4.0 / h.sum()
    lo = 0.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        try:
            u = upsilon(cfg, mid)
        except StepSizeError:
            u = math.inf
        if u < 1:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def lms_bias_limit_constant(cfg: LmsConfig) -> float:
    """tau = 1/2 sum_i delta_i^2 / (2 - (kappa+2) gamma h_i)."""
    return 0.5 * math.fsum(cfg.delta_sq / _denominators(cfg))


def variance_limit(cfg: LmsConfig) -> float:
    u = upsilon(cfg)
    if u >= 1:
        raise StepSizeError("upsilon >= 1: no stationary variance")
    return 0.5 * cfg.varsigma**2 * u / (1 - u)


def _meta(cfg: LmsConfig, **extra) -> dict:
    m = dict(
        algorithm="lms", d=cfg.d, alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma, L=cfg.L,
        delta=cfg.delta, varsigma=cfg.varsigma, kappa=cfg.kappa,
    )
    m.update(extra)
    return m


def evolve_expected(cfg: LmsConfig, K: int, return_diag: bool = False):
    """a_k = 1/2 <h, diag_k> with diag_k = (I - gamma V) diag_{k-1} + gamma^2 varsigma^2 h.

    V = Diag(2h - gamma (kappa+2) h^2) - gamma h h^T is never formed.
    """
    h = cfg.h
    g = cfg.gamma
    u = upsilon(cfg)
    if u >= 1:
        warnings.warn(f"upsilon = {u:.6g} >= 1: expected recursion diverges", DivergenceWarning, stacklevel=2)
    scale = 1 - g * (2 * h - g * (cfg.kappa + 2) * h * h)
    rank1 = g * g * h
    inject = g * g * cfg.varsigma**2 * h
    diag = cfg.delta_sq.copy()
    vals = np.empty(K + 1)
    hist = np.empty((K + 1, cfg.d)) if return_diag else None
    vals[0] = 0.5 * float(np.dot(h, diag))
    if return_diag:
        hist[0] = diag
    for k in range(1, K + 1):
        hd = float(np.dot(h, diag))
        diag = scale * diag + hd * rank1 + inject
        vals[k] = 0.5 * float(np.dot(h, diag))
        if return_diag:
            hist[k] = diag
    traj = Trajectory(np.arange(K + 1), vals, meta=_meta(cfg, upsilon=u))
    return (traj, hist) if return_diag else traj


def t_apply(cfg: LmsConfig, M) -> np.ndarray:
    """Apply the second-moment operator T to a symmetric matrix, coordinate-wise."""
    M = np.asarray(M, dtype=float)
    d = cfg.d
    if d > MAX_T_DIM:
        raise ValueError(f"t_apply is limited to d <= {MAX_T_DIM}")
    if M.shape != (d, d):
        raise ValueError("matrix shape does not match d")
    h = cfg.h
    g = cfg.gamma
    out = (h[:, None] + h[None, :] - 2 * g * np.outer(h, h)) * M
    dg = np.diag(M)
    out[np.diag_indices(d)] -= g * cfg.kappa * h * h * dg + g * h * float(np.dot(h, dg))
    return out


def evolve_full(cfg: LmsConfig, K: int) -> np.ndarray:
    """E[Theta_k] = (I - gamma T) E[Theta_{k-1}] + gamma^2 varsigma^2 H, for k = 0..K."""
    d = cfg.d
    theta0 = np.sqrt(cfg.delta_sq)
    Th = np.outer(theta0, theta0)
    H = np.diag(cfg.h)
    out = np.empty((K + 1, d, d))
    out[0] = Th
    for k in range(1, K + 1):
        Th = Th - cfg.gamma * t_apply(cfg, Th) + cfg.gamma**2 * cfg.varsigma**2 * H
        out[k] = Th
    return out


def _draw_z(rng, kappa: float, shape):
    if kappa == -2:
        # built from uniform doubles so chunked draws concatenate to the same stream
        return np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    if kappa == 0:
        return rng.standard_normal(shape)
    raise ValueError("sampling supports kappa in {-2, 0} only")


def performance_samples(cfg: LmsConfig, K: int, chunk: int = 1024) -> np.ndarray:
    """<h, theta_k o theta_k> for every replication and k = 0..K, shape (R, K+1).

    Replication r draws from its own stream spawned from ``seed``; steps are
    vectorised across replications so the schedule does not affect results.
    """
    if cfg.kappa not in SAMPLING_KURTOSIS:
        raise ValueError("sampling supports kappa in {-2, 0} only")
    if cfg.seed is None:
        raise ValueError("Monte Carlo needs a seed")
    R, d = cfg.replications, cfg.d
    # each replication gets separate input and noise streams
    streams = [ss.spawn(2) for ss in np.random.SeedSequence(cfg.seed).spawn(R)]
    rngs = [np.random.default_rng(a) for a, _ in streams]
    noise_rngs = [np.random.default_rng(b) for _, b in streams]
    h = cfg.h
    sh = np.sqrt(h)
    g = cfg.gamma
    theta = np.tile(np.sqrt(cfg.delta_sq), (R, 1))
    out = np.empty((R, K + 1))
    out[:, 0] = theta**2 @ h
    k = 1
    while k <= K:
        n = min(chunk, K - k + 1)
        Z = np.stack([_draw_z(rng, cfg.kappa, (n, d)) for rng in rngs])  # (R, n, d)
        if cfg.varsigma > 0:
            E = np.stack([rng.standard_normal(n) for rng in noise_rngs]) * cfg.varsigma
        else:
            E = np.zeros((R, n))
        X = Z * sh
        for j in range(n):
            x = X[:, j, :]
            resid = np.einsum("rd,rd->r", x, theta) - E[:, j]
            theta -= g * resid[:, None] * x
            out[:, k + j] = theta**2 @ h
        k += n
    return out


def run_lms_mc(cfg: LmsConfig, K: int) -> Trajectory:
    """Mean over replications of 1/2 <theta_k, H theta_k>, with standard errors."""
    S = 0.5 * performance_samples(cfg, K)
    R = S.shape[0]
    se = S.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(K + 1, np.nan)
    return Trajectory(np.arange(K + 1), S.mean(axis=0), se, meta=_meta(cfg, replications=R, seed=cfg.seed))


def fourth_moment_operator(cfg: LmsConfig) -> np.ndarray:
    """The d^2 x d^2 operator propagating E[(theta o theta)(theta o theta)^T] for Rademacher inputs."""
    d = cfg.d
    if d > MAX_U_DIM:
        raise ValueError(f"variance_of_performance is limited to d <= {MAX_U_DIM}")
    g = cfg.gamma
    h = cfg.h
    I = np.eye(d)
    D = np.diag(h)
    hh = np.outer(h, h)
    return (
        np.kron(I, I)
        - 2 * g * (np.kron(D, I) + np.kron(I, D))
        + 8 * g**2 * np.kron(D, D)
        + g**2 * (np.kron(I, hh) + np.kron(hh, I))
        - 6 * g**3 * (np.kron(D, hh) + np.kron(hh, D))
        + 3 * g**4 * np.kron(hh, hh)
    )


def variance_of_performance(cfg: LmsConfig, K: int):
    """b_k = vec(hh^T)^T U^k vec(s s^T) with s = theta_0 o theta_0, and var = b_k - (2 a_k)^2.

    Returns a trajectory of the variance of <h, theta_k o theta_k>; b_k is kept
    in ``meta['second_moment']``.
    """
    if cfg.kappa != -2 or cfg.varsigma != 0:
        raise ValueError("variance_of_performance needs Rademacher inputs and no additive noise")
    U = fourth_moment_operator(cfg)
    h = cfg.h
    s = cfg.delta_sq
    v = np.outer(s, s).ravel()
    left = np.outer(h, h).ravel()
    b = np.empty(K + 1)
    for k in range(K + 1):
        b[k] = float(np.dot(left, v))
        v = U @ v
    mean = 2 * evolve_expected(cfg, K).values
    return Trajectory(np.arange(K + 1), b - mean**2, meta=_meta(cfg, second_moment=b.tolist()))

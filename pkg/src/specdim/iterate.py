"""Per-eigenmode simulators of linear iterations on power-law spectra.

Every algorithm acts independently on each eigenmode, so a trajectory is a
weighted sum of squared scalar factors b_k(lam).  Gradient descent and its
averaged variant have closed forms and can be evaluated on any set of k;
momentum methods are propagated step by step for all modes at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .spectral import PowerLawSpectrum, compensated_sum, mode_grid

ALGORITHMS = ("gd", "nesterov", "heavy_ball", "avg_gd")
CRITERIA = ("function_value", "iterate_norm")
NOISE_MODES = ("exact", "monte_carlo")

# a recursion mode is frozen once its recent max falls below this fraction of its peak
DEACTIVATION_RATIO = 1e-14
DEACTIVATION_WINDOW = 64


@dataclass(frozen=True)
class NoiseConfig:
    beta_prime: float
    varsigma: float
    mode: str = "exact"
    replications: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise mode must be one of {NOISE_MODES}")
        if self.varsigma < 0:
            raise ValueError("varsigma must be nonnegative")
        if self.mode == "monte_carlo":
            if self.replications < 1:
                raise ValueError("monte_carlo needs at least one replication")
            if self.seed is None:
                raise ValueError("monte_carlo needs a seed")


@dataclass(frozen=True)
class IterationConfig:
    algorithm: str
    spectrum: PowerLawSpectrum
    steps: int
    rho: float = 1.0
    criterion: str = "function_value"
    noise: Optional[NoiseConfig] = None
    exact_modes: Optional[int] = None  # None: every mode is simulated individually
    zero_init: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if int(self.steps) < 2:
            raise ValueError("steps must be at least 2")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass
class Trajectory:
    k: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.k.shape != self.values.shape:
            raise ValueError("k and values must have the same shape")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)

    def __len__(self):
        return self.values.size

    def at(self, k: int) -> float:
        i = np.searchsorted(self.k, k)
        if i >= self.k.size or self.k[i] != k:
            raise KeyError(k)
        return float(self.values[i])

    def window(self, lo: float, hi: float) -> "Trajectory":
        m = (self.k >= lo) & (self.k <= hi)
        se = None if self.stderr is None else self.stderr[m]
        return Trajectory(self.k[m], self.values[m], se, dict(self.meta))


def log_grid(K: int, per_decade: int = 60) -> np.ndarray:
    """0, 1 and log-spaced integers up to K (at most ``per_decade`` per decade)."""
    n = max(2, int(math.ceil(math.log10(max(K, 2)) * per_decade)) + 1)
    g = np.unique(np.round(np.logspace(0, math.log10(K), n)).astype(np.int64))
    return np.unique(np.concatenate([[0], g, [K]]))


def geometric_window(lo: float, hi: float, n: int = 64) -> np.ndarray:
    return np.unique(np.round(np.geomspace(lo, hi, n)).astype(np.int64))


@dataclass
class _Modes:
    lam: np.ndarray
    h: np.ndarray
    d2: np.ndarray
    q: np.ndarray
    x: np.ndarray


def _modes(spec: PowerLawSpectrum, exact_modes: Optional[int]) -> _Modes:
    x, q = mode_grid(spec, exact_modes)
    order = np.argsort(spec.atom_weights(x) * q, kind="stable")  # ascending weight
    x, q = x[order], q[order]
    return _Modes(spec.eigenvalues(x), spec.hessian_eigenvalues(x), spec.init_coords_sq(x), q, x)


def _criterion_weights(cfg: IterationConfig, md: _Modes) -> np.ndarray:
    init = 0.0 if cfg.zero_init else 1.0
    if cfg.criterion == "function_value":
        return init * md.q * 0.5 * md.h * md.d2
    return init * md.q * md.d2


def _metric_weights(cfg: IterationConfig, md: _Modes) -> np.ndarray:
    # weight applied to E[theta_i^2] (unnormalised coordinates)
    if cfg.criterion == "function_value":
        return md.q * 0.5 * md.h
    return md.q.copy()


def _meta(cfg: IterationConfig, **extra) -> dict:
    s = cfg.spectrum
    m = {
        "algorithm": cfg.algorithm,
        "criterion": cfg.criterion,
        "rho": cfg.rho,
        "alpha": s.alpha,
        "beta": s.beta,
        "gamma_L": s.gamma_L,
        "delta": s.delta,
        "L": s.L,
        "n_modes": s.n_modes,
        "exact_modes": cfg.exact_modes,
        "steps": cfg.steps,
    }
    if cfg.noise is not None:
        m.update(beta_prime=cfg.noise.beta_prime, varsigma=cfg.noise.varsigma, noise_mode=cfg.noise.mode, seed=cfg.noise.seed)
    m.update(extra)
    return m


def _powers(lam: np.ndarray, k, factor: float = 2.0) -> np.ndarray:
    """(1 - lam)^(factor*k) as an (len(k), len(lam)) array."""
    with np.errstate(under="ignore"):
        return np.exp(np.multiply.outer(factor * np.asarray(k, dtype=float), np.log1p(-lam)))


def _closed_form_sum(w: np.ndarray, ks: np.ndarray, fn, chunk: int = 2_000_000) -> np.ndarray:
    """sum_i w_i fn(k, i) for every k, chunked over k."""
    out = np.empty(ks.size)
    step = max(1, chunk // max(1, w.size))
    for j in range(0, ks.size, step):
        block = fn(ks[j : j + step])
        out[j : j + step] = compensated_sum(block * w, axis=-1)
    return out


def _resolve_ks(cfg: IterationConfig, ks) -> np.ndarray:
    if ks is None:
        return log_grid(cfg.steps)
    ks = np.unique(np.asarray(ks, dtype=np.int64))
    if ks.size and ks[0] < 0:
        raise ValueError("k must be nonnegative")
    return ks


# -- deterministic algorithms ------------------------------------------------

def run_gd(cfg: IterationConfig, ks=None) -> Trajectory:
    """a_k = sum_i w_i (1 - lam_i)^(2k) on the requested k values."""
    if cfg.noise is not None and cfg.noise.varsigma > 0:
        raise ValueError("use run_gd_noisy for noisy runs")
    ks = _resolve_ks(cfg, ks)
    md = _modes(cfg.spectrum, cfg.exact_modes)
    w = _criterion_weights(cfg, md)
    vals = _closed_form_sum(w, ks, lambda kk: _powers(md.lam, kk))
    return Trajectory(ks, vals, meta=_meta(cfg))


def _avg_factor(lam: np.ndarray, kk) -> np.ndarray:
    kk = np.asarray(kk, dtype=float)[:, None]
    with np.errstate(under="ignore", divide="ignore", invalid="ignore"):
        num = -np.expm1((kk + 1) * np.log1p(-lam))
        m = num / ((kk + 1) * lam)
    return np.where(lam == 0, 1.0, m)


def run_avg_gd(cfg: IterationConfig, ks=None) -> Trajectory:
    """Uniformly averaged GD iterate: factor (1 - (1-lam)^(k+1)) / ((k+1) lam)."""
    ks = _resolve_ks(cfg, ks)
    md = _modes(cfg.spectrum, cfg.exact_modes)
    w = _criterion_weights(cfg, md)
    vals = _closed_form_sum(w, ks, lambda kk: _avg_factor(md.lam, kk) ** 2)
    return Trajectory(ks, vals, meta=_meta(cfg))


def nesterov_coeffs(k: int, rho: float):
    """(c1, c2) with b_{k+1} = (1 - lam) [c1 b_k - c2 b_{k-1}]."""
    d = k + 2 * rho - 1
    return 2 * (k + rho - 1) / d, (k - 1) / d


def heavy_ball_coeffs(k: int, rho: float):
    """(e, m) with theta_{k+1} = (1 + m - e lam) theta_k - m theta_{k-1}."""
    d = k + 2 * rho - 1
    return k / d, 1 - 2 * rho / d


def _momentum_run(cfg: IterationConfig, kind: str, deactivate: bool = True) -> Trajectory:
    K = int(cfg.steps)
    md = _modes(cfg.spectrum, cfg.exact_modes)
    w = _criterion_weights(cfg, md)
    lam = md.lam
    s = 1.0 - lam
    b_prev = np.ones_like(lam)
    b = np.ones_like(lam)
    vals = np.empty(K + 1)
    vals[0] = vals[1] = float(np.dot(w, b * b))
    peak = np.ones_like(lam)
    recent = np.zeros_like(lam)
    frozen = 0
    rho = cfg.rho
    tmp = np.empty_like(lam)
    for k in range(1, K):
        # momentum written as b_k + c (b_k - b_{k-1}) so a lam = 0 mode stays exactly 1
        np.subtract(b, b_prev, out=tmp)
        if kind == "nesterov":
            _, c2 = nesterov_coeffs(k, rho)
            tmp *= c2
            tmp += b
            tmp *= s
        else:
            e, m = heavy_ball_coeffs(k, rho)
            tmp *= m
            tmp += b
            tmp -= (e * lam) * b
        b_prev, b, tmp = b, tmp, b_prev
        vals[k + 1] = float(np.dot(w, b * b))
        if deactivate:
            np.maximum(recent, np.abs(b), out=recent)
            if (k + 1) % DEACTIVATION_WINDOW == 0:
                keep = recent >= DEACTIVATION_RATIO * peak
                np.maximum(peak, recent, out=peak)
                if not keep.all():
                    frozen += int((~keep).sum())
                    s, lam, w, b, b_prev, peak = (a[keep] for a in (s, lam, w, b, b_prev, peak))
                    tmp = np.empty_like(lam)
                recent = np.zeros_like(lam)
    return Trajectory(np.arange(K + 1), vals, meta=_meta(cfg, frozen_modes=frozen, deactivation=deactivate))


def run_nesterov(cfg: IterationConfig, deactivate: bool = True) -> Trajectory:
    """b_0 = b_1 = 1, b_{k+1} = (1-lam)[2(k+rho-1)/(k+2rho-1) b_k - (k-1)/(k+2rho-1) b_{k-1}]."""
    return _momentum_run(cfg, "nesterov", deactivate)


def run_heavy_ball(cfg: IterationConfig, deactivate: bool = True) -> Trajectory:
    """theta_{k+1} = (1 - k/(k+2rho-1) lam) theta_k + (1 - 2rho/(k+2rho-1))(theta_k - theta_{k-1})."""
    return _momentum_run(cfg, "heavy_ball", deactivate)


def nesterov_xi(lam: float, K: int) -> np.ndarray:
    """xi_0 = 0, xi_1 = 1, xi_{k+1} = (1-lam)(2 xi_k - xi_{k-1})."""
    xi = np.zeros(K + 1)
    if K >= 1:
        xi[1] = 1.0
    for k in range(1, K):
        xi[k + 1] = (1 - lam) * (2 * xi[k] - xi[k - 1])
    return xi


def heavy_ball_xi(lam: float, K: int) -> np.ndarray:
    """xi_0 = 0, xi_1 = 1, xi_{k+1} = (2-lam) xi_k - xi_{k-1}."""
    xi = np.zeros(K + 1)
    if K >= 1:
        xi[1] = 1.0
    for k in range(1, K):
        xi[k + 1] = (2 - lam) * xi[k] - xi[k - 1]
    return xi


def single_mode_factors(kind: str, lam: float, K: int, rho: float = 1.0) -> np.ndarray:
    """b_0..b_K for one eigenvalue, same recursion as the vectorised runners."""
    b = np.ones(K + 1)
    for k in range(1, K):
        if kind == "nesterov":
            _, c2 = nesterov_coeffs(k, rho)
            b[k + 1] = (1 - lam) * (b[k] + c2 * (b[k] - b[k - 1]))
        elif kind == "heavy_ball":
            e, m = heavy_ball_coeffs(k, rho)
            b[k + 1] = b[k] - e * lam * b[k] + m * (b[k] - b[k - 1])
        else:
            raise ValueError(kind)
    return b


def run(cfg: IterationConfig, ks=None) -> Trajectory:
    """Dispatch on algorithm and noise."""
    noisy = cfg.noise is not None
    if cfg.algorithm == "gd":
        return run_gd_noisy(cfg, ks) if noisy else run_gd(cfg, ks)
    if cfg.algorithm == "avg_gd":
        if noisy:
            raise ValueError("averaged GD has no noisy variant")
        return run_avg_gd(cfg, ks)
    if cfg.algorithm == "nesterov":
        traj = run_nesterov_noisy(cfg) if noisy else run_nesterov(cfg)
    else:
        if noisy:
            raise ValueError("heavy-ball has no noisy variant")
        traj = run_heavy_ball(cfg)
    if ks is not None:
        ks = np.asarray(ks, dtype=np.int64)
        return Trajectory(ks, traj.values[ks], None if traj.stderr is None else traj.stderr[ks], traj.meta)
    return traj


# -- additive noise -------------------------------------------------------------

def _noise_var(cfg: IterationConfig, md: _Modes) -> np.ndarray:
    n = cfg.noise
    return n.varsigma**2 * md.x ** (-n.beta_prime)


def _replication_rngs(seed: int, R: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(R)]


def run_gd_noisy(cfg: IterationConfig, ks=None) -> Trajectory:
    """theta_k = (1 - lam) theta_{k-1} + eps_k with per-mode noise variance varsigma^2 i^-beta'."""
    if cfg.noise is None:
        raise ValueError("noise configuration required")
    ks = _resolve_ks(cfg, ks)
    md = _modes(cfg.spectrum, cfg.exact_modes)
    sv = _noise_var(cfg, md)
    mw = _metric_weights(cfg, md)
    w = _criterion_weights(cfg, md)
    if cfg.noise.mode == "exact":
        bias = _closed_form_sum(w, ks, lambda kk: _powers(md.lam, kk))
        # sum_{j<k} (1-lam)^(2j) = (1 - (1-lam)^(2k)) / (lam (2 - lam))
        geo = lambda kk: -np.expm1(np.multiply.outer(2 * np.asarray(kk, float), np.log1p(-md.lam))) / (md.lam * (2 - md.lam))
        var = _closed_form_sum(mw * sv, ks, geo)
        return Trajectory(ks, bias + var, meta=_meta(cfg, bias=bias.tolist()))
    R = cfg.noise.replications
    rngs = _replication_rngs(cfg.noise.seed, R)
    s = 1 - md.lam
    sd = np.sqrt(sv)
    theta0 = np.zeros_like(s) if cfg.zero_init else np.sqrt(md.d2)
    K = int(ks.max())
    want = np.zeros(K + 1, dtype=bool)
    want[ks] = True
    samples = np.empty((R, ks.size))
    for r, rng in enumerate(rngs):
        th = theta0.copy()
        col = 0
        for k in range(K + 1):
            if k > 0:
                th = s * th + sd * rng.standard_normal(s.size)
            if want[k]:
                samples[r, col] = float(np.dot(mw, th * th))
                col += 1
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(ks.size, np.nan)
    return Trajectory(ks, mean, se, meta=_meta(cfg, replications=R))


def run_nesterov_noisy(cfg: IterationConfig) -> Trajectory:
    """Nesterov with additive noise from theta_2 on; exact mode propagates 2x2 second moments."""
    if cfg.noise is None:
        raise ValueError("noise configuration required")
    K = int(cfg.steps)
    md = _modes(cfg.spectrum, cfg.exact_modes)
    sv = _noise_var(cfg, md)
    mw = _metric_weights(cfg, md)
    s = 1 - md.lam
    rho = cfg.rho
    init2 = np.zeros_like(s) if cfg.zero_init else md.d2.copy()
    if cfg.noise.mode == "exact":
        s2 = s * s
        P = init2.copy()  # E theta_k^2
        Q = init2.copy()  # E theta_k theta_{k-1}
        Rm = init2.copy()  # E theta_{k-1}^2
        vals = np.empty(K + 1)
        vals[0] = vals[1] = float(np.dot(mw, P))
        for k in range(1, K):
            c1, c2 = nesterov_coeffs(k, rho)
            Pn = s2 * (c1 * c1 * P - 2 * c1 * c2 * Q + c2 * c2 * Rm) + sv
            Qn = s * (c1 * P - c2 * Q)
            Rm, P, Q = P, Pn, Qn
            vals[k + 1] = float(np.dot(mw, P))
        return Trajectory(np.arange(K + 1), vals, meta=_meta(cfg))
    R = cfg.noise.replications
    rngs = _replication_rngs(cfg.noise.seed, R)
    sd = np.sqrt(sv)
    samples = np.empty((R, K + 1))
    for r, rng in enumerate(rngs):
        th = np.sqrt(init2)
        prev = th.copy()
        samples[r, 0] = samples[r, 1] = float(np.dot(mw, th * th))
        for k in range(1, K):
            c1, c2 = nesterov_coeffs(k, rho)
            nxt = s * (c1 * th - c2 * prev) + sd * rng.standard_normal(s.size)
            prev, th = th, nxt
            samples[r, k + 1] = float(np.dot(mw, th * th))
    se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(K + 1, np.nan)
    return Trajectory(np.arange(K + 1), samples.mean(axis=0), se, meta=_meta(cfg, replications=R))


# -- randomized initial condition ---------------------------------------------

def random_init_variance(cfg: IterationConfig, kappa: float, ks) -> np.ndarray:
    """Closed-form var(a_k) = (kappa + 2) sum_i w_i^2 (1 - lam_i)^(4k)."""
    if kappa < -2:
        raise ValueError("kurtosis must be at least -2")
    md = _modes(cfg.spectrum, cfg.exact_modes)
    spec = cfg.spectrum
    w_unit = spec.atom_weights(md.x)
    ks = np.asarray(ks, dtype=np.int64)
    return (kappa + 2) * _closed_form_sum(md.q * w_unit**2, ks, lambda kk: _powers(md.lam, kk, 4.0))


def _draw_signs(rng, kappa: float, size):
    if kappa == -2:
        return rng.choice([-1.0, 1.0], size=size)
    if kappa == 0:
        return rng.standard_normal(size)
    raise ValueError("sampling supports kappa in {-2, 0} only")


def run_gd_random_init(cfg: IterationConfig, kappa: float, R: int, seed: int, ks=None):
    """Mean and variance over replications of GD started at r_i * <delta, u_i>.

    Returns (mean trajectory, variance trajectory); the variance trajectory
    carries the closed form in ``meta['closed_form']`` and the standard error of
    the sample variance in ``stderr``.
    """
    if R < 2:
        raise ValueError("need at least two replications")
    if cfg.exact_modes is not None and cfg.exact_modes < cfg.spectrum.n_modes:
        raise ValueError("random initialisation needs every mode simulated individually")
    ks = _resolve_ks(cfg, ks)
    md = _modes(cfg.spectrum, None)
    w = _criterion_weights(cfg, md)
    E = _powers(md.lam, ks)  # (nk, N)
    rngs = _replication_rngs(seed, R)
    A = np.empty((R, ks.size))
    for r, rng in enumerate(rngs):
        rr = _draw_signs(rng, kappa, md.lam.size)
        A[r] = E @ (w * rr * rr)
    mean = A.mean(axis=0)
    var = A.var(axis=0, ddof=1)
    cen = A - mean
    m4 = np.mean(cen**4, axis=0)
    var_se = np.sqrt(np.maximum(m4 - (R - 3) / (R - 1) * var**2, 0.0) / R)
    closed = random_init_variance(cfg, kappa, ks)
    meta = _meta(cfg, kappa=kappa, replications=R, seed=seed)
    mean_t = Trajectory(ks, mean, A.std(axis=0, ddof=1) / math.sqrt(R), dict(meta))
    var_t = Trajectory(ks, var, var_se, dict(meta, closed_form=closed.tolist()))
    return mean_t, var_t


# -- extrapolation -------------------------------------------------------------

def richardson(traj: Trajectory, alpha_exp: float) -> Trajectory:
    """b_k = (2^a a_k - a_{floor(k/2)}) / (2^a - 1) wherever a_{floor(k/2)} is available."""
    if not alpha_exp > 0:
        raise ValueError("alpha_exp must be positive")
    if traj.values.size < 2:
        raise ValueError("need at least two terms")
    lookup = {int(k): v for k, v in zip(traj.k, traj.values)}
    f = 2.0**alpha_exp
    ks, out = [], []
    for k, v in zip(traj.k, traj.values):
        half = int(k) // 2
        if half in lookup:
            ks.append(int(k))
            out.append((f * v - lookup[half]) / (f - 1))
    return Trajectory(np.array(ks), np.array(out), meta=dict(traj.meta, richardson=alpha_exp))

"""Power-law spectra, weighted spectral measures and their Stieltjes transforms.

A spectrum is described by eigenvalues ``lam_i = gamma_L * i**-alpha`` (already
multiplied by the step size) and initial-error coordinates ``delta * i**(-beta/2)``.
The associated measure puts weight ``L * delta**2 / (2 * i**(alpha + beta))`` on
``lam_i``; its small-``u`` Stieltjes behaviour is summarised by the pair
``(omega, c)`` returned by :func:`spectral_dimension`.

Very long spectra can be aggregated: the first ``n_exact`` modes are kept as
individual atoms and the remaining ones, up to the truncation ``n_modes``, are
replaced by Gauss-Legendre nodes in log-index space (midpoint-rule
correspondence between the sum over integers and the integral from
``n_exact + 1/2``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, gammasgn


class PoleError(ValueError):
    """Raised when a Stieltjes transform is evaluated on the support of the measure."""


class GammaPoleError(ValueError):
    """Raised when a Gamma argument sits on (or next to) a nonpositive integer."""


POLE_GUARD = 1e-6


def gamma_fn(x: float, guard: float = POLE_GUARD) -> float:
    """Gamma function evaluated as sign * exp(log|Gamma|)."""
    x = float(x)
    if x <= 0 and abs(x - round(x)) < guard:
        raise GammaPoleError(f"Gamma argument {x!r} is within {guard} of a pole")
    return float(gammasgn(x) * math.exp(gammaln(x)))


@dataclass(frozen=True)
class PowerLawSpectrum:
    alpha: float
    beta: float
    gamma_L: float = 0.5
    delta: float = 1.0
    L: float = 1.0
    n_modes: int = 1000

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.gamma_L <= 1:
            raise ValueError("gamma_L must lie in (0, 1]")
        if not self.beta > 1 - self.alpha:
            raise ValueError("beta must exceed 1 - alpha")
        if not self.delta > 0 or not self.L > 0:
            raise ValueError("delta and L must be positive")
        if int(self.n_modes) < 1:
            raise ValueError("n_modes must be a positive integer")

    @property
    def gamma(self) -> float:
        """Step size gamma = gamma_L / L."""
        return self.gamma_L / self.L

    @property
    def omega(self) -> float:
        return (self.beta - 1) / self.alpha + 1

    def eigenvalues(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return self.gamma_L * idx ** (-self.alpha)

    def hessian_eigenvalues(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return self.L * idx ** (-self.alpha)

    def init_coords_sq(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return self.delta**2 * idx ** (-self.beta)

    def atom_weights(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return self.L * self.delta**2 / 2 * idx ** (-(self.alpha + self.beta))

    def with_modes(self, n: int) -> "PowerLawSpectrum":
        return PowerLawSpectrum(self.alpha, self.beta, self.gamma_L, self.delta, self.L, int(n))


@dataclass(frozen=True)
class ContinuousPart:
    """Density c * lam**(omega - 1) on [0, mu]."""

    c: float
    omega: float
    mu: float

    def __post_init__(self):
        if not (self.c > 0 and self.omega > 0 and 0 < self.mu < 1):
            raise ValueError("continuous part needs c > 0, omega > 0, mu in (0, 1)")

    @property
    def mass(self) -> float:
        return self.c * self.mu**self.omega / self.omega


@dataclass(frozen=True)
class SpectralMeasure:
    weights: np.ndarray
    locations: np.ndarray
    continuous: Optional[ContinuousPart] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        x = np.asarray(self.locations, dtype=float).ravel()
        if w.shape != x.shape:
            raise ValueError("weights and locations must have the same length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(x < 0) or np.any(x >= 1):
            raise ValueError("atom locations must lie in [0, 1)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", x)

    @property
    def mass(self) -> float:
        m = compensated_sum(self.weights)
        if self.continuous is not None:
            m += self.continuous.mass
        return m

    def union(self, other: "SpectralMeasure") -> "SpectralMeasure":
        if self.continuous is not None and other.continuous is not None:
            raise ValueError("cannot merge two continuous parts")
        return SpectralMeasure(
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.locations, other.locations]),
            self.continuous or other.continuous,
        )


@dataclass(frozen=True)
class SpectralDimension:
    omega: float
    c: float

    def __post_init__(self):
        if not (self.omega > 0 and self.c > 0):
            raise ValueError("spectral dimension needs omega > 0 and c > 0")


def compensated_sum(terms, axis: int = -1, block: int = 256):
    """Sum along ``axis`` in ascending-magnitude order with Neumaier compensation.

    Terms are sorted, summed pairwise inside blocks of ``block`` entries, and the
    block partial sums are then accumulated with a compensation term.
    """
    a = np.asarray(terms, dtype=float)
    if a.ndim == 0:
        return float(a)
    a = np.moveaxis(a, axis, -1)
    order = np.argsort(np.abs(a), axis=-1, kind="stable")
    a = np.take_along_axis(a, order, axis=-1)
    n = a.shape[-1]
    nb = max(1, -(-n // block))
    pad = nb * block - n
    if pad:
        a = np.concatenate([a, np.zeros(a.shape[:-1] + (pad,))], axis=-1)
    parts = a.reshape(a.shape[:-1] + (nb, block)).sum(axis=-1)
    s = np.zeros(parts.shape[:-1])
    comp = np.zeros_like(s)
    for j in range(nb):
        x = parts[..., j]
        t = s + x
        comp += np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
        s = t
    out = s + comp
    return float(out) if out.ndim == 0 else out


# -- truncation -------------------------------------------------------------

def tail_mass_bound(spec: PowerLawSpectrum, n: int) -> float:
    """Upper bound on the measure mass carried by modes i > n."""
    e = spec.alpha + spec.beta - 1
    return spec.L * spec.delta**2 / 2 * float(n) ** (-e) / e


def modes_for_tail(spec: PowerLawSpectrum, eps: Optional[float] = None, rel: float = 1e-12) -> int:
    """Smallest N whose tail bound is at most ``eps`` (default rel * total mass)."""
    if eps is None:
        head = compensated_sum(spec.atom_weights(np.arange(1, 101)))
        eps = rel * head
    e = spec.alpha + spec.beta - 1
    n = (spec.L * spec.delta**2 / (2 * e * eps)) ** (1 / e)
    return max(1, int(math.ceil(n)))


def modes_for_steps(spec: PowerLawSpectrum, steps: int, extra_decay: float = 0.0, rel: float = 1e-6) -> int:
    """Truncation for a run of ``steps`` iterations.

    Dropped modes keep at most their initial weight, so the tail mass must also
    stay below ``rel`` times the smallest value the run reaches, taken as
    c * steps^-(omega + extra_decay).  Uses the larger of this and the default
    mass-relative rule.
    """
    sd = spectral_dimension(spec)
    floor = rel * sd.c * float(steps) ** (-(sd.omega + extra_decay))
    return max(modes_for_tail(spec), modes_for_tail(spec, eps=floor))


def default_exact_modes(spec: PowerLawSpectrum, steps: int, phase_step: float = 0.01, floor: int = 256) -> int:
    """Number of leading modes kept individually for a run of ``steps`` iterations.

    Beyond this index the per-mode factor (driven by ``steps * sqrt(lam)``) changes
    by less than ``phase_step`` between neighbouring integers, so the sum over
    modes is well approximated by an integral.
    """
    a = spec.alpha
    rate = steps * math.sqrt(spec.gamma_L) * a / 2 / phase_step
    m = int(math.ceil(rate ** (1 / (1 + a / 2))))
    return min(int(spec.n_modes), max(floor, m))


def mode_grid(spec: PowerLawSpectrum, n_exact: Optional[int] = None, panels_per_decade: int = 8, order: int = 16):
    """Mode positions x and multiplicities q.

    Integers 1..n_exact get q = 1; the range (n_exact, n_modes] is represented by
    composite Gauss-Legendre nodes on log x over [n_exact + 1/2, n_modes + 1/2].
    """
    n = int(spec.n_modes)
    if n_exact is None or n_exact >= n:
        x = np.arange(1, n + 1, dtype=float)
        return x, np.ones_like(x)
    m = max(1, int(n_exact))
    t0, t1 = math.log(m + 0.5), math.log(n + 0.5)
    npan = max(1, int(math.ceil((t1 - t0) / math.log(10) * panels_per_decade)))
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t0, t1, npan + 1)
    half = (edges[1:] - edges[:-1])[:, None] / 2
    mid = (edges[1:] + edges[:-1])[:, None] / 2
    t = (mid + half * gx).ravel()
    wt = (half * gw).ravel()
    xt = np.exp(t)
    x = np.concatenate([np.arange(1, m + 1, dtype=float), xt])
    q = np.concatenate([np.ones(m), wt * xt])
    return x, q


def spectrum_to_measure(spec: PowerLawSpectrum, n_exact: Optional[int] = None) -> SpectralMeasure:
    x, q = mode_grid(spec, n_exact)
    w = q * spec.atom_weights(x)
    return SpectralMeasure(w, spec.eigenvalues(x), meta={"n_modes": spec.n_modes, "n_exact": n_exact})


def spectral_dimension(spec: PowerLawSpectrum) -> SpectralDimension:
    if spec.beta <= 1 - spec.alpha:
        raise ValueError("beta must exceed 1 - alpha")
    w = (spec.beta - 1) / spec.alpha + 1
    c = spec.L * spec.delta**2 / (2 * spec.alpha * spec.gamma_L**w)
    return SpectralDimension(w, c)


def tau_measure(spec: PowerLawSpectrum, gamma: float, n_exact: Optional[int] = None) -> SpectralMeasure:
    """Measure with atoms of weight gamma*h_i at gamma*h_i."""
    x, q = mode_grid(spec, n_exact)
    lam = gamma * spec.hessian_eigenvalues(x)
    if np.any(lam >= 1):
        raise ValueError("step size too large: some gamma*h_i >= 1")
    return SpectralMeasure(q * lam, lam)


def tau_dimension(spec: PowerLawSpectrum, gamma: float) -> SpectralDimension:
    gl = gamma * spec.L
    return SpectralDimension(1 - 1 / spec.alpha, gl ** (1 / spec.alpha) / spec.alpha)


# -- Stieltjes transforms ---------------------------------------------------

def _continuous_stieltjes(part: ContinuousPart, u: float, m: int, order: int = 24) -> float:
    """Integral of c*lam**(omega-1)/(lam+u)**(m+1) over [0, mu].

    Substituting lam = mu * s**(2/omega) turns the density into a smooth one;
    panels in s are geometric so the (lam + u) kernel is resolved near 0.
    """
    w, mu = part.omega, part.mu
    p = 2.0 / w
    gx, gw = np.polynomial.legendre.leggauss(order)
    s_u = (abs(u) / mu) ** (w / 2) if u != 0 else 1e-300
    lo = max(min(s_u * 1e-3, 1e-3), 1e-200)
    nodes = [0.0] + list(np.geomspace(lo, 1.0, max(8, int(4 * math.log10(1 / lo)) + 8)))
    total = []
    for a, b in zip(nodes[:-1], nodes[1:]):
        s = (a + b) / 2 + (b - a) / 2 * gx
        lam = mu * s**p
        dens = part.c * mu**w * p * s  # c*lam^(w-1) dlam/ds
        total.append(np.sum((b - a) / 2 * gw * dens / (lam + u) ** (m + 1)))
    return math.fsum(total)


def stieltjes(measure: SpectralMeasure, u: float, m: int = 0) -> float:
    """m-th derivative of S(u) = integral of dsigma(lam) / (lam + u)."""
    if m < 0 or int(m) != m:
        raise ValueError("order must be a nonnegative integer")
    m = int(m)
    den = measure.locations + u
    if np.any(den == 0):
        raise PoleError(f"u={u!r} hits an atom of the measure")
    if measure.continuous is not None and -measure.continuous.mu <= u <= 0:
        raise PoleError(f"u={u!r} lies on the continuous support")
    terms = measure.weights / den ** (m + 1)
    val = compensated_sum(terms) if terms.size else 0.0
    if measure.continuous is not None:
        val += _continuous_stieltjes(measure.continuous, u, m)
    return (-1) ** m * math.factorial(m) * val


def stieltjes_equivalent(sd: SpectralDimension, u: float, m: int = 0) -> float:
    """Small-u equivalent c(-1)^m Gamma(m+1-omega) Gamma(omega) u^(omega-m-1), valid for m+1 > omega."""
    k = m + 1
    if k <= sd.omega:
        raise ValueError("the equivalent needs m + 1 > omega")
    return sd.c * (-1) ** m * gamma_fn(k - sd.omega) * gamma_fn(sd.omega) * u ** (sd.omega - k)


def stieltjes_tail_bound(spec: PowerLawSpectrum, n: int, u: float, m: int = 0) -> float:
    """Bound on |contribution of modes i > n| to the m-th derivative at u > 0."""
    return math.factorial(m) * tail_mass_bound(spec, n) / u ** (m + 1)


def modes_for_stieltjes(spec: PowerLawSpectrum, u: float, m: int = 0, rel: float = 1e-3) -> int:
    """Truncation whose Stieltjes tail bound is below ``rel`` times the small-u equivalent."""
    target = abs(stieltjes_equivalent(spectral_dimension(spec), u, m)) * rel
    eps = target * u ** (m + 1) / math.factorial(m)
    return modes_for_tail(spec, eps=eps)

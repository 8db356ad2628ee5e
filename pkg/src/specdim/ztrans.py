"""Rational z-transforms A(z) = sum_k a_k z^k and their Hadamard convolution.

Polynomials are stored as ascending coefficient arrays.  Convolution of two
rational transforms goes through partial fractions: every simple block
1/(a - u z)^(k+1) convolved with 1/(b - v z)^(l+1) is again a finite sum of
such blocks, so the result is rebuilt over a common denominator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MAX_DEGREE = 12
MERGE_GAP = 1e-8
# clusters wider than MERGE_GAP but below this are merged when the merged
# factorisation still reproduces the denominator (numerical double roots)
LOOSE_GAP = 1e-4


class SummabilityError(ValueError):
    """Coefficient sequence is not absolutely summable (pole in the closed unit disk)."""


def _trim(p, tol: float = 0.0) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p))
    if p.size == 0:
        return np.zeros(1, dtype=p.dtype if p.dtype.kind == "c" else float)
    scale = np.max(np.abs(p)) if tol > 0 else 0.0
    n = p.size
    while n > 1 and abs(p[n - 1]) <= tol * scale:
        n -= 1
    return p[:n].copy()


def poly_mul(a, b) -> np.ndarray:
    return np.convolve(np.asarray(a), np.asarray(b))


def poly_add(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    n = max(a.size, b.size)
    out = np.zeros(n, dtype=np.result_type(a, b))
    out[: a.size] += a
    out[: b.size] += b
    return out


def poly_eval(p, z):
    # Horner, ascending coefficients
    p = np.asarray(p)
    z = np.asarray(z)
    acc = np.zeros(z.shape, dtype=np.result_type(p, z, float))
    for c in np.asarray(p)[::-1]:
        acc = acc * z + c
    return acc


def poly_divmod(num, den):
    """Quotient and remainder of ascending-coefficient polynomials."""
    num = _trim(num)
    den = _trim(den)
    if num.size < den.size:
        return np.zeros(1), num
    q, r = np.polydiv(num[::-1], den[::-1])
    return q[::-1], (r[::-1] if r.size else np.zeros(1))


@dataclass(frozen=True)
class RationalZ:
    num: np.ndarray
    den: np.ndarray
    # optional (polynomial, [PoleTerm]) form of the same function; coefficient
    # extraction from it avoids the ill-conditioning of expanded denominators
    pole_form: Optional[tuple] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        num = np.atleast_1d(np.asarray(self.num, dtype=float))
        den = np.atleast_1d(np.asarray(self.den, dtype=float))
        if den.size == 0 or den[0] == 0:
            raise ValueError("denominator must not vanish at z = 0")
        num = _trim(num / den[0])
        den = _trim(den / den[0])
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def constant(cls, c: float = 1.0) -> "RationalZ":
        return cls([c], [1.0])

    @classmethod
    def monomial(cls, m: int, c: float = 1.0) -> "RationalZ":
        p = np.zeros(m + 1)
        p[m] = c
        return cls(p, [1.0])

    @property
    def degree(self) -> int:
        return max(self.num.size, self.den.size) - 1

    def __call__(self, z):
        return poly_eval(self.num, z) / poly_eval(self.den, z)

    def __add__(self, other: "RationalZ") -> "RationalZ":
        if self.den.size == other.den.size and np.array_equal(self.den, other.den):
            return RationalZ(poly_add(self.num, other.num), self.den)
        return RationalZ(
            poly_add(poly_mul(self.num, other.den), poly_mul(other.num, self.den)),
            poly_mul(self.den, other.den),
        )

    def __mul__(self, other):
        if isinstance(other, RationalZ):
            return RationalZ(poly_mul(self.num, other.num), poly_mul(self.den, other.den))
        return RationalZ(self.num * float(other), self.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, RationalZ):
            if not np.any(other.num):
                raise ZeroDivisionError("division by the zero series")
            return RationalZ(poly_mul(self.num, other.den), poly_mul(self.den, other.num))
        return RationalZ(self.num / float(other), self.den)

    def __neg__(self):
        return RationalZ(-self.num, self.den)

    def __sub__(self, other):
        return self + (-other)

    def shift(self, m: int) -> "RationalZ":
        """z^m A(z)."""
        if m == 0:
            return self
        out = RationalZ(np.concatenate([np.zeros(m), self.num]), self.den)
        if self.pole_form is None:
            return out
        poly, terms = self.pole_form
        poly = np.concatenate([np.zeros(m), np.asarray(poly, dtype=complex)])
        new_terms = []
        for t in terms:
            # z^m/(a-uz)^j with z = (a - (a-uz))/u; only the pole pieces are kept
            w = t.u / t.a
            c = t.coef / t.a**t.power / w**m
            for i in range(min(m, t.power - 1) + 1):
                ci = c * math.comb(m, i) * (-1) ** i
                new_terms.append(PoleTerm(1.0, w, t.power - i, ci))
        # the polynomial remainder has degree < m and cancels the pole pieces there,
        # since z^m A(z) has no coefficients below m; setting it this way avoids
        # expanding (1 - w z)^e, which loses digits when |w| is small
        head = np.zeros(m, dtype=complex)
        for t in new_terms:
            head -= t.coeffs(m - 1)
        poly = poly_add(poly, head)
        return RationalZ(out.num, out.den, pole_form=(np.real(poly), new_terms))

    def poles(self) -> list:
        return [p for p, _ in _pole_clusters(self.den)]


def taylor_coeffs(R: RationalZ, K: int) -> np.ndarray:
    """a_0..a_K, from the pole form when present, else from den * A = num."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    if R.pole_form is not None:
        poly, terms = R.pole_form
        out = np.zeros(K + 1, dtype=complex)
        for t in terms:
            out += t.coeffs(K)
        n = min(K + 1, len(poly))
        out[:n] += np.asarray(poly[:n])
        return np.real(out)
    num, den = R.num, R.den
    a = np.zeros(K + 1)
    for k in range(K + 1):
        acc = num[k] if k < num.size else 0.0
        j = min(k, den.size - 1)
        if j:
            acc -= np.dot(den[1 : j + 1], a[k - 1 :: -1][:j])
        a[k] = acc
    return a


def _poly_from_roots(roots: Sequence[complex], mult: Sequence[int]) -> np.ndarray:
    """prod (1 - z/p)^m, ascending complex coefficients."""
    out = np.ones(1, dtype=complex)
    for p, m in zip(roots, mult):
        for _ in range(m):
            out = poly_mul(out, [1.0, -1.0 / p])
    return out


def _pole_clusters(den) -> list:
    """Distinct roots of ``den`` with multiplicities."""
    den = _trim(np.asarray(den, dtype=float), 0.0)
    if den.size <= 1:
        return []
    roots = np.roots(den[::-1])
    # polish simple roots with a few Newton steps on the original polynomial
    dp = np.polynomial.polynomial.polyder(den)
    pol = []
    for r in roots:
        for _ in range(3):
            d = poly_eval(dp, r)
            if d == 0:
                break
            step = poly_eval(den, r) / d
            if not np.isfinite(step) or abs(step) > 1e-6 * abs(r):
                break
            r = r - step
        pol.append(complex(r))

    def cluster(gap):
        groups: list = []
        order = sorted(range(len(pol)), key=lambda i: (abs(pol[i]), pol[i].real, pol[i].imag))
        for i in order:
            r = pol[i]
            for g in groups:
                if abs(r - np.mean([pol[j] for j in g])) <= gap * max(1.0, abs(r)):
                    g.append(i)
                    break
            else:
                groups.append([i])
        # Newton only helps simple roots; a multiple root is best estimated by
        # the centroid of the raw cluster, whose perturbations largely cancel
        return [
            (pol[g[0]] if len(g) == 1 else complex(np.mean(roots[g])), len(g))
            for g in groups
        ]

    tight = cluster(MERGE_GAP)
    loose = cluster(LOOSE_GAP)
    if len(loose) < len(tight):
        ref = den / den[0]
        cand = _poly_from_roots([p for p, _ in loose], [m for _, m in loose])
        if np.max(np.abs(cand - ref)) <= 1e-10 * np.max(np.abs(ref)):
            return loose
    return tight


@dataclass(frozen=True)
class PoleTerm:
    """coef / (a - u z)^power."""

    a: complex
    u: complex
    power: int
    coef: complex = 1.0

    def __post_init__(self):
        if self.a == 0:
            raise ValueError("a must be nonzero")
        if self.power < 1:
            raise ValueError("power must be a positive integer")

    def coeffs(self, K: int) -> np.ndarray:
        k = np.arange(K + 1, dtype=float)
        r = self.u / self.a
        binom = np.ones(K + 1)
        for i in range(1, self.power):
            binom *= (k + i) / i
        with np.errstate(under="ignore"):
            return self.coef * binom * r ** np.arange(K + 1) / self.a**self.power


def _check_summable(a, u):
    if abs(u) >= abs(a):
        raise SummabilityError("need |u/a| < 1 for an absolutely summable sequence")


def convolve_basic(a, u, b, v) -> RationalZ:
    """Hadamard convolution of 1/(a - u z) and 1/(b - v z)."""
    _check_summable(a, u)
    _check_summable(b, v)
    return RationalZ([1.0], [a * b, -u * v])


def convolve_pole_powers(p: PoleTerm, q: PoleTerm) -> list:
    """Convolution of 1/(a-uz)^(k+1) with 1/(b-vz)^(l+1) as a list of pole terms."""
    _check_summable(p.a, p.u)
    _check_summable(q.a, q.u)
    k, l = p.power - 1, q.power - 1
    a, u, b, v = p.a, p.u, q.a, q.u
    out = []
    for i in range(min(k, l) + 1):
        c = (-1) ** i * math.factorial(k + l - i) / (math.factorial(i) * math.factorial(k - i) * math.factorial(l - i))
        c = c * a ** (l - i) * b ** (k - i) * p.coef * q.coef
        out.append(PoleTerm(a * b, u * v, k + l + 1 - i, c))
    return out


def convolve_quadratic(lambda_: float, mu: float) -> RationalZ:
    """Convolution of 1/((1-z)^2 + lambda) with 1/((1-z)^2 + mu)."""
    if not (0 < lambda_ < 1 and 0 < mu < 1):
        raise ValueError("lambda and mu must lie in (0, 1)")
    lm, l, m = lambda_ * mu, lambda_, mu
    num = [(l + 1) * (m + 1), 0.0, -1.0]
    base = np.array([1 + lm + l + m, -2.0, 1.0])  # (1-z)^2 + lm + l + m
    den = poly_add(poly_mul(base, base), [0.0, 0.0, -4 * lm])
    return RationalZ(num, den)


def partial_fractions(R: RationalZ):
    """Split R into (polynomial part, [PoleTerm(1, 1/p, j, c)])."""
    if R.pole_form is not None:
        poly, terms = R.pole_form
        for t in terms:
            if abs(t.u) >= abs(t.a) * (1 - 1e-12):
                raise SummabilityError("pole in the closed unit disk")
        return np.asarray(poly, dtype=float), list(terms)
    if R.degree > MAX_DEGREE:
        raise ValueError(f"degree {R.degree} exceeds the cap of {MAX_DEGREE}")
    clusters = _pole_clusters(R.den)
    for p, _ in clusters:
        if abs(p) <= 1 + 1e-12:
            raise SummabilityError(f"pole {p} lies in the closed unit disk")
    quo, rem = poly_divmod(R.num, R.den)
    if not clusters:
        return _trim(R.num), []
    den_c = _poly_from_roots([p for p, _ in clusters], [m for _, m in clusters])
    scale = R.den[-1] / den_c[-1]  # den = scale * prod(1 - z/p)^m
    n = den_c.size - 1
    cols, keys = [], []
    for p, m in clusters:
        for j in range(1, m + 1):
            basis = _poly_from_roots([q for q, _ in clusters], [mm - (j if q == p else 0) for q, mm in clusters])
            col = np.zeros(n, dtype=complex)
            col[: basis.size] = basis
            cols.append(col)
            keys.append((p, j))
    A = np.array(cols).T
    norms = np.linalg.norm(A, axis=0)
    rhs = np.zeros(n, dtype=complex)
    r = np.asarray(rem, dtype=complex) / scale
    rhs[: min(n, r.size)] = r[:n]
    sol = np.linalg.solve(A / norms, rhs) / norms
    terms = [PoleTerm(1.0, 1.0 / p, j, c) for (p, j), c in zip(keys, sol)]
    return _trim(np.asarray(quo, dtype=float)), terms


def _terms_to_rational(terms: Iterable[PoleTerm], poly=None) -> RationalZ:
    """Recombine pole terms (merging equal poles) plus a polynomial into a real RationalZ."""
    groups: list = []  # [w, maxpow, [(power, coef)]]
    for t in terms:
        w = t.u / t.a
        c = t.coef / t.a**t.power
        for g in groups:
            if abs(g[0] - w) <= MERGE_GAP * max(1.0, abs(w)):
                g[1] = max(g[1], t.power)
                g[2].append((t.power, c))
                break
        else:
            groups.append([w, t.power, [(t.power, c)]])
    den = np.ones(1, dtype=complex)
    for w, mp, _ in groups:
        for _ in range(mp):
            den = poly_mul(den, [1.0, -w])
    num = np.zeros(1, dtype=complex)
    for gi, (w, mp, items) in enumerate(groups):
        rest = np.ones(1, dtype=complex)
        for gj, (w2, mp2, _) in enumerate(groups):
            if gj != gi:
                for _ in range(mp2):
                    rest = poly_mul(rest, [1.0, -w2])
        for pw, c in items:
            part = rest
            for _ in range(mp - pw):
                part = poly_mul(part, [1.0, -w])
            num = poly_add(num, c * part)
    if poly is not None:
        num = poly_add(num, poly_mul(np.asarray(poly, dtype=complex), den))
    num_r = np.real(num)
    den_r = np.real(den)
    num_r[np.abs(num_r) < 1e-15 * max(1.0, np.max(np.abs(num_r)))] = 0.0
    poly = np.zeros(1) if poly is None else np.asarray(poly, dtype=float)
    return RationalZ(num_r, den_r, pole_form=(poly, list(terms)))


def convolve(R1: RationalZ, R2: RationalZ) -> RationalZ:
    """Hadamard convolution (pointwise coefficient product) of two rational transforms."""
    p1, f1 = partial_fractions(R1)
    p2, f2 = partial_fractions(R2)
    terms = []
    for s in f1:
        for t in f2:
            terms.extend(convolve_pole_powers(s, t))
    npoly = max(p1.size, p2.size)
    poly = np.zeros(npoly)
    if npoly and (np.any(p1) or np.any(p2)):
        # the remainder is whatever the pole terms miss in the leading coefficients;
        # taking it against the direct product keeps those entries exact even when
        # the pole terms cancel heavily there (shifted inputs)
        c1 = taylor_coeffs(R1, npoly - 1)
        c2 = taylor_coeffs(R2, npoly - 1)
        from_terms = np.zeros(npoly, dtype=complex)
        for t in terms:
            from_terms += t.coeffs(npoly - 1)
        poly = c1 * c2 - np.real(from_terms)
    return _terms_to_rational(terms, poly)


def hadamard_oracle(R1: RationalZ, R2: RationalZ, K: int) -> np.ndarray:
    return taylor_coeffs(R1, K) * taylor_coeffs(R2, K)


def coefficient_rel_error(x, ref, window: int = 3) -> float:
    """Max of |x_k - ref_k| / max(|ref_j|, |j - k| <= window).

    Oscillating coefficient sequences pass close to zero; the local envelope
    keeps the comparison meaningful there.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    mag = np.abs(ref)
    pad = np.pad(mag, window, mode="edge")
    env = np.max(np.lib.stride_tricks.sliding_window_view(pad, 2 * window + 1), axis=-1)
    env = np.where(env > 0, env, 1.0)
    return float(np.max(np.abs(x - ref) / env))


def derivative_transform(R: RationalZ) -> RationalZ:
    """z R'(z), the transform of (k a_k)."""
    P = np.polynomial.polynomial
    dn = P.polyder(R.num) if R.num.size > 1 else np.zeros(1)
    dd = P.polyder(R.den) if R.den.size > 1 else np.zeros(1)
    num = poly_add(poly_mul(dn, R.den), -poly_mul(R.num, dd))
    num = np.concatenate([[0.0], num])
    return RationalZ(num, poly_mul(R.den, R.den))


def averaging_operator(R: RationalZ) -> RationalZ:
    """(z R(z))', the transform of ((k+1) a_k)."""
    D = derivative_transform(R)
    # shares the squared denominator, so no spurious triple poles
    return RationalZ(poly_add(D.num, poly_mul(R.num, R.den)), D.den)


# -- Abel / final-value estimates --------------------------------------------

@dataclass(frozen=True)
class AbelPoint:
    z: float
    value: float
    tail_bound: float
    flagged: bool


def _abel_tail(seq: np.ndarray, z: float, alpha_exp: float) -> float:
    K = seq.size - 1
    last = np.max(np.abs(seq[-max(1, seq.size // 10) :]))
    return float(last * z ** (K + 1) / (1 - z) * (1 - z) ** alpha_exp)


def abel_estimate(seq, alpha_exp: float, z_grid: Optional[Sequence[float]] = None, flag_rel: float = 0.01, max_j: int = 60):
    """(1-z)^alpha * sum_{k<=K} a_k z^k on a grid of z in (0, 1).

    The default grid is z = 1 - 2^-j, extended while the geometric tail bound
    stays under ``flag_rel`` of the value.  Points whose tail bound exceeds that
    fraction are flagged.
    """
    a = np.asarray(seq, dtype=float)
    if z_grid is None:
        z_grid = []
        for j in range(1, max_j + 1):
            z = 1 - 2.0 ** (-j)
            val = (1 - z) ** alpha_exp * _series_at(a, z)
            if _abel_tail(a, z, alpha_exp) > flag_rel * abs(val) and z_grid:
                break
            z_grid.append(z)
    out = []
    for z in z_grid:
        if not 0 < z < 1:
            raise ValueError("z must lie in (0, 1)")
        val = (1 - z) ** alpha_exp * _series_at(a, z)
        tb = _abel_tail(a, z, alpha_exp)
        out.append(AbelPoint(float(z), float(val), tb, bool(tb > flag_rel * abs(val))))
    return out


def _series_at(a: np.ndarray, z: float) -> float:
    k = np.arange(a.size)
    with np.errstate(under="ignore"):
        zk = np.exp(k * math.log(z))
    return math.fsum(a * zk)


# -- formatting -----------------------------------------------------------------

def _fmt_num(x: float) -> str:
    s = f"{x:.12g}"
    return s


def format_poly(p, var: str = "z") -> str:
    p = np.asarray(p, dtype=float)
    parts = []
    for k, c in enumerate(p):
        if c == 0:
            continue
        mag = abs(c)
        if k == 0:
            body = _fmt_num(mag)
        elif mag == 1:
            body = var if k == 1 else f"{var}^{k}"
        else:
            body = f"{_fmt_num(mag)}{var}" if k == 1 else f"{_fmt_num(mag)}{var}^{k}"
        sign = "-" if c < 0 else "+"
        parts.append((sign, body))
    if not parts:
        return "0"
    first_sign, first = parts[0]
    s = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        s += f"{sign}{body}"
    return s


def format_rational(R: RationalZ, digits: int = 12) -> str:
    num = np.round(R.num, digits)
    den = np.round(R.den, digits)
    n = format_poly(num)
    if den.size == 1 and den[0] == 1:
        return n
    d = format_poly(den)
    if np.count_nonzero(num) > 1:
        n = f"({n})"
    return f"{n}/({d})"

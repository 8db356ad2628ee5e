"""specdim command line: simulate, predict, verify, convolve, figure.

Exit codes: 0 success, 1 a check failed, 2 usage or validation error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import asymptotics as A
from . import harness as H
from . import iterate as it
from . import lms as L
from .spectral import PowerLawSpectrum, default_exact_modes, modes_for_steps, spectral_dimension
from .ztrans import RationalZ, SummabilityError, convolve, convolve_quadratic, format_rational, taylor_coeffs

SCHEMA_VERSION = 1
OUT_ENV = "SPECDIM_OUT"

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

TOP_KEYS = {
    "schema_version", "algorithm", "spectrum", "steps", "rho", "criterion", "noise",
    "zero_init", "exact_modes", "lms", "seed", "output", "tolerance", "threads",
}
SPECTRUM_KEYS = {"alpha", "beta", "gamma_L", "delta", "L", "n_modes"}
NOISE_KEYS = {"beta_prime", "varsigma", "mode", "replications", "seed"}
LMS_KEYS = {"d", "gamma", "gamma_fraction", "varsigma", "kappa", "replications", "mode"}


class UsageError(Exception):
    pass


# -- configuration ---------------------------------------------------------------

@dataclass
class RunConfig:
    algorithm: str = "gd"
    spectrum: Optional[dict] = None
    steps: int = 1000
    rho: float = 1.0
    criterion: str = "function_value"
    noise: Optional[dict] = None
    zero_init: bool = False
    exact_modes: Optional[int] = None
    lms: Optional[dict] = None
    seed: int = 0
    output: Optional[str] = None
    tolerance: Optional[float] = None
    threads: int = 1

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["schema_version"] = SCHEMA_VERSION
        return d


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise UsageError(f"{where} must be a mapping")
    extra = set(section) - allowed
    if extra:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise UsageError(f"config is not valid YAML/JSON: {e}") from None
    _check_keys(doc, TOP_KEYS, "config")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"schema_version must be {SCHEMA_VERSION}")
    doc = dict(doc)
    doc.pop("schema_version")
    for key, allowed in (("spectrum", SPECTRUM_KEYS), ("noise", NOISE_KEYS), ("lms", LMS_KEYS)):
        if doc.get(key) is not None:
            _check_keys(doc[key], allowed, key)
    return RunConfig(**doc)


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "steps", None) is not None:
        cfg.steps = args.steps
    if getattr(args, "modes", None) is not None:
        if cfg.algorithm == "lms":
            cfg.lms = dict(cfg.lms or {}, d=args.modes)
        else:
            cfg.spectrum = dict(cfg.spectrum or {}, n_modes=args.modes)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "tolerance", None) is not None:
        cfg.tolerance = args.tolerance
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if cfg.threads < 1:
        raise UsageError("threads must be positive")
    if cfg.tolerance is not None and not cfg.tolerance > 0:
        raise UsageError("tolerance must be positive")
    return cfg


def output_dir(cfg: RunConfig, args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(cfg.output or "specdim_out")


def _extra_decay(cfg: RunConfig, omega: float) -> float:
    if cfg.algorithm in ("nesterov", "heavy_ball"):
        return min(omega, cfg.rho)
    if cfg.algorithm == "avg_gd":
        return min(omega, 2.0)
    return 0.0


def build_iteration(cfg: RunConfig) -> it.IterationConfig:
    sp = dict(cfg.spectrum or {})
    n_modes = sp.pop("n_modes", None)
    sp.setdefault("alpha", 2.0)
    sp.setdefault("beta", 2.0)
    try:
        spec = PowerLawSpectrum(**sp)
        if n_modes is None:
            n_modes = modes_for_steps(spec, cfg.steps, _extra_decay(cfg, spec.omega))
        spec = spec.with_modes(int(n_modes))
        noise = None
        if cfg.noise is not None:
            nz = dict(cfg.noise)
            if nz.get("mode") == "exact_expectation":
                nz["mode"] = "exact"
            if nz.get("mode") == "monte_carlo":
                nz.setdefault("seed", cfg.seed)
            noise = it.NoiseConfig(**nz)
        exact = cfg.exact_modes
        if exact is None and not (noise is not None and noise.mode == "monte_carlo"):
            exact = default_exact_modes(spec, cfg.steps)
        return it.IterationConfig(
            cfg.algorithm, spec, int(cfg.steps), rho=float(cfg.rho), criterion=cfg.criterion,
            noise=noise, exact_modes=exact, zero_init=bool(cfg.zero_init),
        )
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def build_lms(cfg: RunConfig, require_stable: bool) -> tuple:
    sp = dict(cfg.spectrum or {})
    lm = dict(cfg.lms or {})
    mode = lm.pop("mode", "exact")
    if mode not in ("exact", "monte_carlo"):
        raise UsageError("lms.mode must be exact or monte_carlo")
    frac = lm.pop("gamma_fraction", None)
    try:
        base = L.LmsConfig(
            d=int(lm.pop("d", 1000)), alpha=float(sp.get("alpha", 2.0)), beta=float(sp.get("beta", 2.0)),
            gamma=float(lm.pop("gamma", 1.0)), L=float(sp.get("L", 1.0)), delta=float(sp.get("delta", 1.0)),
            varsigma=float(lm.pop("varsigma", 0.0)), kappa=float(lm.pop("kappa", -2.0)),
            replications=int(lm.pop("replications", 20)), seed=cfg.seed,
        )
        if frac is not None:
            base = base.with_gamma(float(frac) * L.gamma_max(base))
        u = L.upsilon(base)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    if require_stable and u >= 1:
        raise UsageError(f"upsilon = {u:.6g} >= 1: step size above the stability limit")
    return base, mode


# -- running -----------------------------------------------------------------------

def _closed_form_ks(K: int) -> np.ndarray:
    return np.unique(np.concatenate([it.log_grid(K), H.default_window(K)]))


def simulate(cfg: RunConfig, require_stable: bool = False):
    """Returns (trajectory, run object)."""
    if cfg.algorithm == "lms":
        lc, mode = build_lms(cfg, require_stable)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", L.DivergenceWarning)
            traj = L.run_lms_mc(lc, cfg.steps) if mode == "monte_carlo" else L.evolve_expected(lc, cfg.steps)
        return traj, lc
    ic = build_iteration(cfg)
    try:
        if ic.algorithm in ("gd", "avg_gd") and not (ic.noise is not None and ic.noise.mode == "monte_carlo"):
            traj = it.run(ic, _closed_form_ks(ic.steps))
        elif ic.algorithm == "gd":
            traj = it.run_gd_noisy(ic, _closed_form_ks(ic.steps))
        else:
            traj = it.run(ic)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return traj, ic


def predict(cfg: RunConfig, run=None) -> dict:
    """Equivalents for the configuration: {'name': Equivalent or float}."""
    out = {}
    try:
        if cfg.algorithm == "lms":
            lc = run if run is not None else build_lms(cfg, True)[0]
            out["bias"] = A.eq_lms_bias(lc)
            if lc.varsigma > 0:
                out["variance_limit"] = A.eq_lms_variance_limit(lc)
            return out
        ic = run if run is not None else build_iteration(cfg)
        spec = ic.spectrum
        if ic.noise is not None:
            n = ic.noise
            fn = A.eq_nesterov_noise_var if ic.algorithm == "nesterov" else A.eq_gd_noise_var
            out["variance"] = fn(spec, n.beta_prime, n.varsigma)
            return out
        if ic.criterion == "iterate_norm":
            if ic.algorithm != "gd":
                raise UsageError("iterate_norm predictions exist for gd only")
            out["iterate_norm"] = A.eq_gd_norm(spec)
        elif ic.algorithm == "gd":
            out["function_value"] = A.eq_gd(spec)
        elif ic.algorithm == "nesterov":
            out["function_value"] = A.eq_nesterov(spec, ic.rho)
        elif ic.algorithm == "heavy_ball":
            if ic.rho != 1:
                raise UsageError("heavy-ball predictions exist for rho = 1 only")
            out["function_value"] = A.eq_heavy_ball(spec)
        else:
            out["function_value"] = A.eq_avg_gd(spec)
    except A.BoundaryError as e:
        raise UsageError(f"boundary case: {e}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    return out


def _describe(name: str, eq) -> str:
    if isinstance(eq, A.Equivalent):
        s = f"{name}: regime={eq.regime} c_hat={eq.c_hat:.17g} p={eq.p:.17g} q={eq.q}"
        if eq.second is not None:
            s += f" + second term c_hat={eq.second.c_hat:.17g} p={eq.second.p:.17g} regime={eq.second.regime}"
        return s
    return f"{name}: limit={eq:.17g}"


def plan_checks(cfg: RunConfig, traj, run, eqs: dict) -> list:
    tol = cfg.tolerance
    K = int(traj.k.max())
    checks = []
    if cfg.algorithm == "lms":
        lc = run
        mc = lc.replications > 1 and traj.stderr is not None
        if lc.varsigma > 0:
            checks.append(H.check_limit("lms variance limit", traj, eqs["variance_limit"], tol or 0.05))
        else:
            eq = eqs["bias"]
            checks.append(H.check_slope("lms bias slope", traj, eq.p, tol or (H.SLOPE_TOL_MC if mc else 0.1)))
        return checks
    ic = run
    label = "conjecture" if ic.algorithm == "nesterov" and ic.rho != 1 else "theorem"
    if ic.noise is not None:
        eq = eqs["variance"]
        if eq.regime == "constant":
            checks.append(H.check_limit("noise limit", traj, eq.c_hat, tol or 0.02))
        else:
            st = 0.1 if ic.algorithm == "nesterov" else H.SLOPE_TOL
            checks.append(H.check_slope("noise growth slope", traj, eq.p, st))
            if ic.algorithm == "nesterov":
                checks.append(H.check_ratio("noise ratio (Cesaro)", traj, eq, tol or 0.2, use_cesaro=True))
        return checks
    eq = next(iter(eqs.values()))
    rt = tol or H.RATIO_TOL
    if ic.algorithm in ("gd", "avg_gd"):
        checks.append(H.check_ratio(f"{ic.algorithm} ratio", traj, eq, rt))
        if ic.algorithm == "gd":
            checks.append(H.check_slope("gd slope", traj, eq.p, H.SLOPE_TOL, log_correction=bool(eq.q)))
    elif ic.algorithm == "nesterov":
        checks.append(H.check_ratio("nesterov ratio (Cesaro)", traj, eq, rt, use_cesaro=True, label=label))
    else:
        if eq.regime == "cesaro":
            checks.append(H.check_oscillation("heavy-ball non-convergence confirmed", traj, eq, K // 2, K, 0.2))
        checks.append(H.check_ratio("heavy-ball ratio (Cesaro)", traj, eq, rt, use_cesaro=True))
    return checks


def _prediction_column(traj, eq):
    if not isinstance(eq, A.Equivalent):
        return None
    return eq(np.maximum(traj.k, 2))


def _write(out: Path, name: str, traj, checks, pred=None, extra_meta=None):
    if extra_meta:
        traj = it.Trajectory(traj.k, traj.values, traj.stderr, dict(traj.meta, **extra_meta))
    try:
        return H.emit_csv({name: traj}, checks, out, {name: pred} if pred is not None else None)
    except OSError as e:
        raise IOError(str(e)) from None


# -- z-transform expressions --------------------------------------------------------

@dataclass(frozen=True)
class _Quad(RationalZ):
    lam: float = 0.0


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|(?P<op>conv|quad|\*\*|[-+*/^()z@∗]))")


def _tokenize(text: str) -> list:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise UsageError(f"cannot parse expression at: {text[pos:]!r}")
        out.append(("num", float(m.group("num"))) if m.group("num") else ("op", m.group("op")))
        pos = m.end()
    return out


class _Parser:
    CONV = {"conv", "@", "∗", "**"}

    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.quad_pair = None

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, want=None):
        tok = self.peek()
        if tok[0] is None or (want is not None and tok[1] != want):
            raise UsageError(f"expected {want!r} in expression")
        self.i += 1
        return tok

    def parse(self) -> RationalZ:
        v = self.expr()
        if self.i != len(self.toks):
            raise UsageError("trailing tokens in expression")
        return v

    def expr(self):
        v = self.sum()
        while self.peek()[1] in self.CONV:
            self.take()
            w = self.sum()
            if isinstance(v, _Quad) and isinstance(w, _Quad):
                self.quad_pair = (v.lam, w.lam)
                v = convolve_quadratic(v.lam, w.lam)
            else:
                v = convolve(v, w)
        return v

    def sum(self):
        v = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            w = self.term()
            v = v + w if op == "+" else v - w
        return v

    def term(self):
        v = self.unary()
        while True:
            kind, val = self.peek()
            if val in ("*", "/"):
                self.take()
                w = self.unary()
                v = v * w if val == "*" else v / w
            elif kind == "num" or val in ("z", "(", "quad"):
                v = v * self.unary()
            else:
                return v

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        return self.power()

    def power(self):
        v = self.atom()
        if self.peek()[1] == "^":
            self.take()
            kind, n = self.take()
            if kind != "num" or n != int(n) or n < 0:
                raise UsageError("exponent must be a nonnegative integer")
            out = RationalZ.constant(1.0)
            for _ in range(int(n)):
                out = out * v
            return out
        return v

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return RationalZ.constant(val)
        if val == "z":
            return RationalZ.monomial(1)
        if val == "(":
            v = self.expr()
            self.take(")")
            return v
        if val == "quad":
            self.take("(")
            kind, lam = self.take()
            if kind != "num":
                raise UsageError("quad() takes a number")
            self.take(")")
            base = RationalZ(np.array([1.0]), np.array([1.0 + lam, -2.0, 1.0]))
            return _Quad(base.num, base.den, lam=lam)
        raise UsageError(f"unexpected token {val!r}")


def run_convolve(expr: str, terms: int) -> str:
    p = _Parser(expr)
    try:
        R = p.parse()
        coeffs = taylor_coeffs(R, terms - 1)
    except (SummabilityError, ZeroDivisionError, ValueError) as e:
        raise UsageError(str(e)) from None
    lines = [format_rational(R)]
    if p.quad_pair is not None:
        lam, mu = p.quad_pair
        lines.append(
            f"quadratic form: ({(lam + 1) * (mu + 1):.12g} - z^2)/(((1-z)^2 + {lam * mu + lam + mu:.12g})^2 - {4 * lam * mu:.12g}z^2)"
        )
    lines.append("coefficients: " + " ".join("%.17g" % c for c in coeffs))
    return "\n".join(lines)


# -- entry point ----------------------------------------------------------------------

class _Parser_(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("config", nargs="?", help="YAML or JSON config file (schema_version: 1)")
    p.add_argument("--steps", type=int, help="number of iterations K")
    p.add_argument("--modes", type=int, help="spectrum truncation N (LMS: dimension d)")
    p.add_argument("--seed", type=int, help="master seed for Monte Carlo runs")
    p.add_argument("--threads", type=int, help="cap on worker threads (recorded in the manifest)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, then config, then ./specdim_out)")
    p.add_argument("--tolerance", type=float, help="override the ratio tolerance of verify checks")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser_(prog="specdim", description="Asymptotic rates of linear iterations on power-law spectra.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser_)
    for name, help_ in (
        ("simulate", "run the configured algorithm and write its trajectory CSV"),
        ("predict", "print the asymptotic equivalent for the configuration"),
        ("verify", "simulate, predict and run rate checks; exit 1 if a check fails"),
    ):
        _common(sub.add_parser(name, help=help_, description=help_))
    c = sub.add_parser("convolve", help="convolve rational z-transforms",
                       description="Evaluate an expression of rational z-transforms. Operators: + - * / ^, "
                                   "'conv' (also @ or ∗) for convolution, quad(x) for 1/((1-z)^2 + x).")
    c.add_argument("expr", help="e.g. '1/(1-0.5z) conv 1/(1-0.5z)'")
    c.add_argument("--terms", type=int, default=8, help="number of Taylor coefficients to print")
    f = sub.add_parser("figure", help="regenerate the data behind a figure")
    f.add_argument("name", help=f"one of {', '.join(H.FIGURES)}")
    f.add_argument("--steps", type=int, help="number of iterations")
    f.add_argument("--seed", type=int, default=0, help="master seed for Monte Carlo figures")
    f.add_argument("--threads", type=int, help="cap on worker threads")
    f.add_argument("--out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convolve":
            if args.terms < 1:
                raise UsageError("--terms must be positive")
            print(run_convolve(args.expr, args.terms))
            return EXIT_OK
        if args.command == "figure":
            if args.name not in H.FIGURES:
                raise UsageError(f"unknown figure {args.name!r}; choose from {', '.join(H.FIGURES)}")
            out = Path(args.out or os.environ.get(OUT_ENV) or "specdim_out")
            for p in H.figure(args.name, out, steps=args.steps, seed=args.seed):
                print(p)
            return EXIT_OK
        cfg = apply_flags(load_config(args.config), args)
        out = output_dir(cfg, args)
        meta = {"run_config": json.dumps(cfg.as_dict(), sort_keys=True), "threads": cfg.threads}
        if args.command == "predict":
            for name, eq in predict(cfg).items():
                print(_describe(name, eq))
            return EXIT_OK
        require = args.command == "verify"
        traj, run = simulate(cfg, require_stable=require)
        name = cfg.algorithm
        if args.command == "simulate":
            for p in _write(out, name, traj, [], extra_meta=meta):
                print(p)
            return EXIT_OK
        eqs = predict(cfg, run)
        for n, eq in eqs.items():
            print(_describe(n, eq))
        checks = plan_checks(cfg, traj, run, eqs)
        for c in checks:
            print(c.line())
        _write(out, name, traj, checks, _prediction_column(traj, next(iter(eqs.values()))), meta)
        return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    except UsageError as e:
        print(f"specdim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"specdim: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Compare trajectories with predicted equivalents and write figure data."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .iterate import Trajectory, geometric_window

METRICS = ("ratio_to_one", "slope", "oscillation_amplitude", "constant_limit")
FIGURES = ("nesterov", "heavyball", "nesterov_rho", "noise", "lms")

RATIO_TOL = 0.15
SLOPE_TOL = 0.05
SLOPE_TOL_MC = 0.1


@dataclass
class RateCheck:
    name: str
    window: tuple
    metric: str
    tolerance: float
    observed: float
    target: float
    passed: bool
    label: str = "theorem"  # or "conjecture"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        lo, hi = self.window
        if lo < 2 or hi < lo:
            raise ValueError("window must satisfy 2 <= k_lo <= k_hi")

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} [{self.label}] {self.name}: {self.metric} observed={self.observed:.6g} "
            f"target={self.target:.6g} tol={self.tolerance:g} window=[{self.window[0]}, {self.window[1]}]"
        )


def default_window(K: int, n: int = 64) -> np.ndarray:
    return geometric_window(K / 4, K, n)


def _subset(traj: Trajectory, ks) -> Trajectory:
    ks = np.asarray(ks, dtype=np.int64)
    idx = np.searchsorted(traj.k, ks)
    ok = (idx < traj.k.size) & (traj.k[np.minimum(idx, traj.k.size - 1)] == ks)
    if not ok.all():
        raise ValueError("window contains k values missing from the trajectory")
    se = None if traj.stderr is None else traj.stderr[idx]
    return Trajectory(ks, traj.values[idx], se, dict(traj.meta))


def ratio_curve(traj: Trajectory, eq, ks=None) -> Trajectory:
    """r_k = a_k / predicted_k on the trajectory's k values (k >= 2)."""
    t = traj if ks is None else _subset(traj, ks)
    m = t.k >= 2
    k = t.k[m]
    pred = np.asarray(eq(k), dtype=float)
    if np.any(pred == 0):
        raise ValueError("equivalent vanishes on the window")
    return Trajectory(k, t.values[m] / pred, meta=dict(t.meta, prediction=pred.tolist()))


def fit_slope(traj: Trajectory, window=None, log_correction: bool = False):
    """Least-squares fit of log a_k = log c - p log k (+ log log k); returns (p_hat, c_hat)."""
    t = traj if window is None else _subset(traj, window)
    k = t.k.astype(float)
    v = t.values
    if np.any(v <= 0):
        raise ValueError("slope fit needs positive values")
    if np.any(k < 2):
        raise ValueError("slope fit needs k >= 2")
    y = np.log(v)
    if log_correction:
        y = y - np.log(np.log(k))
    A = np.column_stack([np.ones_like(k), np.log(k)])
    (logc, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(-slope), float(math.exp(logc))


def cesaro(seq, start: int = 0) -> np.ndarray:
    """Running means s_k = mean(seq[start..k]); entries before ``start`` are NaN."""
    a = np.asarray(seq, dtype=float)
    out = np.full(a.shape, np.nan)
    tail = a[start:]
    out[start:] = np.cumsum(tail) / np.arange(1, tail.size + 1)
    return out


def oscillation_amplitude(values) -> float:
    """Half the peak-to-peak range."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / 2)


def _full_ratio(traj: Trajectory, eq, lo: int, hi: int):
    m = (traj.k >= max(lo, 2)) & (traj.k <= hi)
    k = traj.k[m]
    if k.size == 0 or np.any(np.diff(k) != 1):
        raise ValueError("Cesaro checks need every k in the window")
    return k, traj.values[m] / np.asarray(eq(k), dtype=float)


def check_ratio(name, traj: Trajectory, eq, tol: float = RATIO_TOL, window=None, use_cesaro: bool = False,
                label: str = "theorem") -> RateCheck:
    """Median over the window of the ratio (or of its running mean from the window start)."""
    K = int(traj.k.max())
    ks = default_window(K) if window is None else np.asarray(window)
    lo, hi = int(ks.min()), int(ks.max())
    if use_cesaro:
        k, r = _full_ratio(traj, eq, lo, hi)
        s = cesaro(r)
        obs = float(np.median(s[np.searchsorted(k, ks)]))
    else:
        obs = float(np.median(ratio_curve(traj, eq, ks).values))
    return RateCheck(name, (lo, hi), "ratio_to_one", tol, obs, 1.0, abs(obs - 1) <= tol, label)


def check_slope(name, traj: Trajectory, expected: float, tol: float = SLOPE_TOL, window=None,
                log_correction: bool = False, label: str = "theorem") -> RateCheck:
    K = int(traj.k.max())
    ks = default_window(K) if window is None else np.asarray(window)
    p, _ = fit_slope(traj, ks, log_correction)
    return RateCheck(name, (int(ks.min()), int(ks.max())), "slope", tol, p, expected, abs(p - expected) <= tol, label)


def check_limit(name, traj: Trajectory, limit: float, rel_tol: float, window=None, label: str = "theorem") -> RateCheck:
    """Relative gap between the last value (or window median) and ``limit``."""
    K = int(traj.k.max())
    if window is None:
        obs = float(traj.values[-1])
        lo = hi = K
    else:
        t = _subset(traj, window)
        obs = float(np.median(t.values))
        lo, hi = int(t.k.min()), int(t.k.max())
    return RateCheck(name, (max(lo, 2), hi), "constant_limit", rel_tol, obs / limit, 1.0,
                     abs(obs / limit - 1) <= rel_tol, label)


def check_oscillation(name, traj: Trajectory, eq, lo: int, hi: int, minimum: float,
                      label: str = "theorem") -> RateCheck:
    """Passes when the raw ratio keeps oscillating with at least ``minimum`` amplitude."""
    _, r = _full_ratio(traj, eq, lo, hi)
    amp = oscillation_amplitude(r)
    return RateCheck(name, (lo, hi), "oscillation_amplitude", minimum, amp, minimum, amp >= minimum, label)


# -- output ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.17g" % x


def _blob_id(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(meta: dict) -> str:
    return hashlib.sha256(_canonical(meta).encode()).hexdigest()


def trajectory_csv(traj: Optional[Trajectory], prediction=None) -> str:
    """CSV text with header k,value[,stderr][,ratio][,prediction]."""
    cols = ["k", "value"]
    has_se = traj is not None and traj.stderr is not None
    if has_se:
        cols.append("stderr")
    if prediction is not None:
        cols += ["ratio", "prediction"]
    lines = [",".join(cols)]
    if traj is None or len(traj) == 0:
        return lines[0] + "\n"
    pred = None if prediction is None else np.asarray(prediction, dtype=float)
    for i, (k, v) in enumerate(zip(traj.k, traj.values)):
        row = [str(int(k)), _fmt(v)]
        if has_se:
            row.append(_fmt(traj.stderr[i]))
        if pred is not None:
            p = pred[i]
            row += [_fmt(v / p) if p != 0 else "nan", _fmt(p)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _json_meta(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if k not in ("bias", "prediction", "closed_form", "second_moment")}


def emit_csv(trajs, checks: Sequence[RateCheck], path, predictions=None) -> list:
    """Write one CSV per trajectory under ``path`` plus manifest.json; returns written paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(trajs, Trajectory) or trajs is None:
        trajs = {"trajectory": trajs}
    predictions = predictions or {}
    written = []
    entries = []
    for name, traj in trajs.items():
        text = trajectory_csv(traj, predictions.get(name))
        data = text.encode()
        f = out / f"{name}.csv"
        f.write_bytes(data)
        written.append(f)
        meta = {} if traj is None else _json_meta(traj.meta)
        entries.append({
            "file": f.name,
            "config_hash": config_hash(meta),
            "seed": meta.get("seed"),
            "content_id": _blob_id(data),
            "config": meta,
        })
    manifest = {"trajectories": entries, "checks": [asdict(c) for c in checks]}
    mf = out / "manifest.json"
    mf.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    written.append(mf)
    return written


# -- figure reproduction ----------------------------------------------------------

def _beta_for(alpha: float, omega: float) -> float:
    return alpha * (omega - 1) + 1


PLOT_SCRIPT = '''"""Plot the CSV files written next to this script (needs matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 8), sharex=True)
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    rows = [r for r in rows if int(r["k"]) >= 1]
    if not rows:
        continue
    k = [int(r["k"]) for r in rows]
    v = [float(r["value"]) for r in rows]
    name = os.path.basename(path)[:-4]
    top.loglog(k, v, label=name)
    if "prediction" in rows[0]:
        top.loglog(k, [float(r["prediction"]) for r in rows], "--", color="gray")
        bottom.semilogx(k, [float(r["ratio"]) for r in rows], label=name)
top.set_ylabel("a_k")
bottom.set_ylabel("ratio")
bottom.set_xlabel("k")
top.legend(fontsize=7)
fig.savefig(os.path.join(here, "%s.png"), dpi=120)
'''


def figure(name: str, out_dir, steps: Optional[int] = None, seed: int = 0) -> list:
    """Regenerate the data behind one figure; returns the written paths."""
    from . import asymptotics as A
    from . import iterate as it
    from . import lms as L
    from .spectral import PowerLawSpectrum, default_exact_modes, modes_for_tail

    if name not in FIGURES:
        raise ValueError(f"unknown figure {name!r}; choose from {FIGURES}")
    alpha = 2.0
    trajs, preds = {}, {}

    def spectrum(omega, K):
        s = PowerLawSpectrum(alpha=alpha, beta=_beta_for(alpha, omega))
        s = s.with_modes(modes_for_tail(s))
        return s, default_exact_modes(s, K)

    if name in ("nesterov", "heavyball", "nesterov_rho"):
        K = steps or 10_000
        if name == "nesterov":
            grid = [(w, 1.0) for w in (0.5, 0.75, 1.0, 1.5, 2.0)]
        elif name == "heavyball":
            grid = [(w, 1.0) for w in (0.75, 1.0, 1.5, 3.0)]
        else:
            grid = [(3.0, r) for r in (1.0, 2.0, 3.0, 4.0)]
        algo = "heavy_ball" if name == "heavyball" else "nesterov"
        for w, rho in grid:
            spec, M = spectrum(w, K)
            traj = it.run(it.IterationConfig(algo, spec, K, rho=rho, exact_modes=M))
            eq = A.eq_heavy_ball(spec) if algo == "heavy_ball" and w > 1 else A.eq_nesterov(spec, rho)
            key = f"{name}_omega{w:g}_rho{rho:g}"
            trajs[key] = traj
            k = np.maximum(traj.k, 2)
            preds[key] = eq(k)
    elif name == "noise":
        K = steps or 10_000
        for bp in (0.0, alpha):
            spec = PowerLawSpectrum(alpha=alpha, beta=2.0)
            spec = spec.with_modes(modes_for_tail(spec))
            noise = it.NoiseConfig(beta_prime=bp, varsigma=1.0)
            cfg = it.IterationConfig("nesterov", spec, K, noise=noise, zero_init=True,
                                     exact_modes=default_exact_modes(spec, K))
            traj = it.run_nesterov_noisy(cfg)
            eq = A.eq_nesterov_noise_var(spec, bp, 1.0)
            key = f"noise_betaprime{bp:g}"
            trajs[key] = traj
            preds[key] = eq(np.maximum(traj.k, 2))
    else:
        K = steps or 10_000
        for w in (1.0, 1.25, 2.5):
            cfg = L.LmsConfig(d=200, alpha=alpha, beta=_beta_for(alpha, w), gamma=0.5, replications=20, seed=seed)
            cfg = L.LmsConfig(**{**cfg.__dict__, "gamma": 0.5 * L.gamma_max(cfg)})
            mc = L.run_lms_mc(cfg, K)
            ks = it.log_grid(K)
            key = f"lms_omega{w:g}"
            trajs[key] = Trajectory(ks, mc.values[ks], mc.stderr[ks], mc.meta)
            eq = A.eq_lms_bias(cfg)
            preds[key] = eq(np.maximum(ks, 2))
    out = Path(out_dir) / name
    paths = emit_csv(trajs, [], out, preds)
    script = out / f"plot_{name}.py"
    script.write_text(PLOT_SCRIPT % name)
    return paths + [script]

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specdim.asymptotics import Equivalent, eq_gd, eq_heavy_ball, eq_nesterov
from specdim.harness import (
    FIGURES,
    RateCheck,
    cesaro,
    check_limit,
    check_oscillation,
    check_ratio,
    check_slope,
    config_hash,
    default_window,
    emit_csv,
    figure,
    fit_slope,
    oscillation_amplitude,
    ratio_curve,
    trajectory_csv,
)
from specdim.iterate import IterationConfig, Trajectory, log_grid, run_gd, run_heavy_ball
from specdim.spectral import PowerLawSpectrum, default_exact_modes


def test_ratio_of_exact_power_is_one():
    k = np.arange(2, 500)
    t = Trajectory(k, 3.0 * k**-1.7)
    r = ratio_curve(t, Equivalent(3.0, 1.7))
    np.testing.assert_allclose(r.values, 1.0, rtol=1e-14)
    with pytest.raises(ValueError):
        ratio_curve(t, Equivalent(0.0, 1.0))


def test_fit_slope_exact_power():
    k = np.arange(2, 1000)
    p, c = fit_slope(Trajectory(k, 3.0 * k**-2.0))
    assert p == pytest.approx(2, abs=1e-10)
    assert c == pytest.approx(3, rel=1e-10)


def test_fit_slope_log_correction():
    k = np.arange(1000, 100001)
    t = Trajectory(k, k**-2.0 * np.log(k))
    p, _ = fit_slope(t, log_correction=True)
    assert p == pytest.approx(2, abs=1e-10)
    p_raw, _ = fit_slope(t)
    assert abs(p_raw - 2) > 0.05


def test_fit_slope_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_slope(Trajectory([2, 3], [1.0, -1.0]))
    with pytest.raises(ValueError):
        fit_slope(Trajectory([1, 3], [1.0, 1.0]))


@given(p=st.floats(-3, 5), c=st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_fit_slope_recovers_parameters(p, c):
    k = np.unique(np.geomspace(2, 1e5, 40).astype(int))
    ph, ch = fit_slope(Trajectory(k, c * k.astype(float) ** -p))
    assert ph == pytest.approx(p, abs=1e-9)
    assert ch == pytest.approx(c, rel=1e-8)


def test_cesaro_examples():
    np.testing.assert_allclose(cesaro(np.full(10, 2.5)), 2.5)
    alt = cesaro((-1.0) ** np.arange(10001))
    assert abs(alt[-1]) < 1e-3
    s = cesaro(np.arange(6.0), start=2)
    assert np.isnan(s[:2]).all() and s[-1] == pytest.approx(3.5)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=200))
@settings(max_examples=50, deadline=None)
def test_cesaro_is_running_mean(xs):
    s = cesaro(xs)
    assert s[-1] == pytest.approx(math.fsum(xs) / len(xs), abs=1e-9)
    assert min(xs) - 1e-9 <= s.min() and s.max() <= max(xs) + 1e-9


def test_oscillation_amplitude():
    assert oscillation_amplitude([0.5, 1.5, 1.0]) == 0.5


def test_rate_check_validation_and_line():
    with pytest.raises(ValueError):
        RateCheck("x", (1, 10), "slope", 0.1, 1, 1, True)
    with pytest.raises(ValueError):
        RateCheck("x", (2, 10), "slope", 0.0, 1, 1, True)
    with pytest.raises(ValueError):
        RateCheck("x", (2, 10), "median", 0.1, 1, 1, True)
    line = RateCheck("gd", (2, 10), "slope", 0.05, 1.49, 1.5, True).line()
    assert line.startswith("PASS [theorem] gd")


def test_default_window():
    w = default_window(10**5)
    assert w[0] == 25000 and w[-1] == 10**5 and w.size == 64


def test_gd_checks_pass():
    spec = PowerLawSpectrum(2, 2, n_modes=10**7)
    K = 10**5
    cfg = IterationConfig("gd", spec, K, exact_modes=default_exact_modes(spec, K))
    t = run_gd(cfg, np.union1d(log_grid(K), default_window(K)))
    eq = eq_gd(spec)
    c1 = check_ratio("gd", t, eq)
    c2 = check_slope("gd", t, eq.p)
    assert c1.passed and c2.passed
    assert c1.window == (25000, 100000)


def test_heavy_ball_oscillation_check():
    spec = PowerLawSpectrum(2, 2, n_modes=20000)
    K = 20000
    t = run_heavy_ball(IterationConfig("heavy_ball", spec, K, exact_modes=default_exact_modes(spec, K)))
    eq = eq_heavy_ball(spec)
    osc = check_oscillation("hb", t, eq, K // 2, K, 0.2)
    assert osc.passed and osc.observed >= 0.2
    ces = check_ratio("hb", t, eq, use_cesaro=True)
    assert ces.passed
    with pytest.raises(ValueError):
        check_ratio("hb", run_gd(IterationConfig("gd", spec, K), [2, 6000, 9000, K]), eq, use_cesaro=True)


def test_limit_check():
    t = Trajectory(np.arange(2, 10), np.full(8, 1.01))
    c = check_limit("lim", t, 1.0, 0.02)
    assert c.passed and c.observed == pytest.approx(1.01)
    assert not check_limit("lim", t, 1.0, 0.005).passed


def test_csv_format():
    t = Trajectory([0, 1], [0.1, 1 / 3], stderr=[0.0, 0.5])
    text = trajectory_csv(t, prediction=[0.2, 1 / 3])
    lines = text.splitlines()
    assert lines[0] == "k,value,stderr,ratio,prediction"
    assert lines[2].split(",")[1] == "0.33333333333333331"
    assert trajectory_csv(None) == "k,value\n"
    assert trajectory_csv(Trajectory([], [])) == "k,value\n"


def test_emit_csv_manifest(tmp_path):
    t = Trajectory([0, 1, 2], [1.0, 0.5, 0.25], meta={"algorithm": "gd", "seed": 4})
    chk = RateCheck("gd", (2, 2), "slope", 0.05, 1.0, 1.0, True)
    paths = emit_csv({"run": t, "empty": None}, [chk], tmp_path)
    assert (tmp_path / "empty.csv").read_text() == "k,value\n"
    man = json.loads((tmp_path / "manifest.json").read_text())
    entry = man["trajectories"][0]
    assert entry["seed"] == 4 and entry["config_hash"] == config_hash(t.meta)
    assert len(entry["content_id"]) == 40
    assert man["checks"][0]["name"] == "gd"
    assert len(paths) == 3


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


@pytest.mark.parametrize("name", FIGURES)
def test_figures_are_deterministic(name, tmp_path):
    a = figure(name, tmp_path / "a", steps=200, seed=3)
    b = figure(name, tmp_path / "b", steps=200, seed=3)
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert any(p.name.startswith("plot_") for p in a)


def test_lms_figure_has_stderr(tmp_path):
    paths = figure("lms", tmp_path, steps=100, seed=0)
    csv = [p for p in paths if p.suffix == ".csv"][0]
    assert csv.read_text().splitlines()[0] == "k,value,stderr,ratio,prediction"
    man = json.loads((tmp_path / "lms" / "manifest.json").read_text())
    assert all(e["config"]["replications"] == 20 for e in man["trajectories"])


def test_unknown_figure(tmp_path):
    with pytest.raises(ValueError):
        figure("sgd", tmp_path)

"""Acceptance criteria 1-8.

Each test prints (and records for the terminal summary) one PASS/FAIL line
with the measured quantities, then asserts the criterion at its stated
tolerance.  Criteria 3-5 are long simulation studies.
"""
import json
import time

import numpy as np
import pytest

from driftwind import cli
from driftwind.covmodel import DriftParams, correlation
from driftwind.dmwa import DmwaConfig, dmwa_scan
from driftwind.evaluate import (Table1Config, Table2Config, baseline_persistence,
                                mspe, predict_frame, run_table1, run_table2)
from driftwind.gridstore import GridGeometry, GridStack, TargetWindow
from driftwind.likelihood import loglik
from driftwind.preprocess import (fit_standardization, gaussian_weights,
                                  kernel_smooth, standardize)
from driftwind.scanner import ScanConfig, WindField, scan
from driftwind.simulator import SimConfig, WindFieldSpec, simulate_domain
from driftwind.smoother import SmoothConfig, smooth_field

from conftest import ACCEPTANCE_LINES
from oracles import (conditional_mean_var, correlation_scalar, cov_double_loop,
                     dense_loglik, window_points)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_covariance_properties():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 1000
    a1 = rng.uniform(0.1, 20, n)
    a2 = rng.uniform(0.1, 20, n)
    u = rng.uniform(-8, 8, (n, 2))
    u[np.hypot(*u.T) < 0.1] += 0.2
    d = rng.uniform(-20, 20, (n, 2))
    h = rng.uniform(-3, 3, n)
    hp = rng.uniform(0.1, 3, n)
    worst = dict(unity=0.0, symmetry=0.0, zero_drift=0.0, shift=0.0)
    strict = 0
    for k in range(n):
        p = DriftParams(a1[k], a2[k], tuple(u[k]))
        p0 = p.with_drift((0.0, 0.0))
        dk, hk = tuple(d[k]), h[k]
        worst["unity"] = max(worst["unity"], abs(correlation((0, 0), 0, p) - 1.0))
        worst["symmetry"] = max(worst["symmetry"], abs(
            correlation(dk, hk, p) - correlation((-dk[0], -dk[1]), -hk, p)))
        worst["zero_drift"] = max(worst["zero_drift"], abs(
            correlation(dk, hk, p0) - correlation(dk, -hk, p0)))
        shifted = (dk[0] - u[k, 0] * hk, dk[1] - u[k, 1] * hk)
        worst["shift"] = max(worst["shift"], abs(
            correlation(dk, hk, p) - correlation(shifted, hk, p0)))
        along = (u[k, 0] * hp[k], u[k, 1] * hp[k])
        strict += correlation(along, hp[k], p) > correlation(along, -hp[k], p)
    runtime = time.perf_counter() - start
    ok = (worst["unity"] <= 1e-12 and worst["symmetry"] <= 1e-14
          and worst["zero_drift"] == 0.0 and worst["shift"] <= 1e-14
          and strict == n and runtime < 1.0)
    record(1, ok, f"unity {worst['unity']:.1e}, symmetry {worst['symmetry']:.1e}, "
                  f"zero-drift {worst['zero_drift']:.1e}, shift {worst['shift']:.1e}, "
                  f"strict asymmetry {strict}/{n}, {runtime:.2f} s")
    assert ok


# -- 2 -------------------------------------------------------------------------

def test_criterion_2_likelihood_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    worst, sizes = 0.0, set()
    for _ in range(100):
        hw = int(rng.integers(0, 3))
        ps = float(rng.choice([1.0, 0.25, 1 / 59]))
        ts = float(rng.choice([1.0, 2.0]))
        scale = ps / ts
        p = DriftParams(rng.uniform(0.5, 5) * ps, rng.uniform(0.5, 5) * ts,
                        tuple(rng.uniform(-3, 3, 2) * scale))
        pts = window_points((2, 2), 1, hw, ps, ts)
        sigma = cov_double_loop(pts, p.alpha1, p.alpha2, p.u)
        sigma += 1e-8 * np.eye(len(pts))
        z = rng.normal(size=len(pts))
        got = loglik(z, TargetWindow((2, 2), 1, hw, ps, ts), p)
        worst = max(worst, abs(got - dense_loglik(z, sigma)))
        sizes.add(2 * hw + 1)
    runtime = time.perf_counter() - start
    ok = worst <= 1e-8 and runtime < 10
    record(2, ok, f"max |loglik - dense| {worst:.2e} over 100 draws, "
                  f"sides {sorted(sizes)}, {runtime:.2f} s")
    assert ok


# -- 3 -------------------------------------------------------------------------

def test_criterion_3_table1_trend():
    cfg = Table1Config(window_sizes=(7, 11, 15), alpha1_sqs=(1.0,), alpha2_sqs=(4.0,),
                       u0s=((1.0, 2.0),), n_reps=30, methods=("stdm",))
    report = run_table1(cfg)
    means = [report.find(window=w, method="stdm")["mean"] for w in (7, 11, 15)]
    bounds = (0.45, 0.30, 0.20)
    ok = all(m <= b for m, b in zip(means, bounds)) and means[0] > means[1] > means[2]
    record(3, ok, "STDM MVD 7/11/15 = " + " / ".join(f"{m:.3f}" for m in means)
           + " (bounds 0.45 / 0.30 / 0.20, monotone)")
    assert ok


# -- 4 -------------------------------------------------------------------------

def test_criterion_4_dmwa_search_range():
    cfg = Table1Config(window_sizes=(7,), alpha1_sqs=(2.0,), alpha2_sqs=(4.0,),
                       u0s=((3.0, 5.0),), n_reps=30, dmwa_search_radius=4)
    report = run_table1(cfg)
    dm = report.find(method="dmwa")
    st = report.find(method="stdm")
    est = np.array(dm["estimates"])
    half = np.array_equal(2 * est, np.round(2 * est))
    in_range = bool(np.all(np.abs(est) <= 4))
    ok = dm["mean"] >= 4.5 and st["mean"] < dm["mean"] and half and in_range
    record(4, ok, f"DMWA MVD {dm['mean']:.3f} (>= 4.5), STDM {st['mean']:.3f}, "
                  f"half-integer {half}, within [-4, 4] {in_range}")
    assert ok


# -- 5 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def table2_report():
    return run_table2(Table2Config())


def test_criterion_5_table2(table2_report, tmp_path):
    r = table2_report
    c = {(k, m): r.find(kind=k, method=m)["mean"]
         for k in ("constant", "rotational")
         for m in ("stdm", "dmwa", "smoothed-stdm", "smoothed-dmwa")}
    n_const = r.find(kind="constant", method="stdm")["n_reps"]
    n_rot = r.find(kind="rotational", method="stdm")["n_reps"]
    ok = (c["constant", "smoothed-stdm"] <= c["constant", "stdm"] + 0.01
          and c["constant", "stdm"] <= 0.15
          and c["rotational", "stdm"] <= c["rotational", "dmwa"]
          and n_const == 20 and n_rot == 10)
    record(5, ok, f"constant (N={n_const}): STDM {c['constant', 'stdm']:.3f}, "
                  f"smoothed-STDM {c['constant', 'smoothed-stdm']:.3f}, "
                  f"DMWA {c['constant', 'dmwa']:.3f}; rotational (N={n_rot}): "
                  f"STDM {c['rotational', 'stdm']:.3f}, "
                  f"DMWA {c['rotational', 'dmwa']:.3f} (pixels)")
    assert ok


def test_criterion_5_cli_pipeline_matches_table2(table2_report, tmp_path):
    """simulate -> estimate -> evaluate reproduces replicate 0 of the constant cell."""
    cell = table2_report.find(kind="constant", method="stdm")
    cfg = Table2Config()
    axis = ",".join(str(a) for a in cfg.centers["constant"])
    sim, est, ev = tmp_path / "sim", tmp_path / "est", tmp_path / "ev"
    assert cli.main(["simulate", "--seed", str(cell["seeds"][0]), "--out", str(sim)]) == 0
    assert cli.main(["estimate", "--input", str(sim / "data"), "--half-width",
                     str(cfg.window_sizes["constant"] // 2), "--center-axis", axis,
                     "--times", "1", "--out", str(est)]) == 0
    assert cli.main(["evaluate", "--metric", "mvd", "--estimate", str(est / "wind"),
                     "--truth", str(sim / "truth"), "--out", str(ev)]) == 0
    payload = json.loads((ev / "report.manifest.json").read_text())["payload"]
    got = payload["cells"][0]["mean"]
    want = cell["replicate_means"][0]
    ok = abs(got - want) <= 1e-12
    record(5, ok, f"CLI pipeline replicate-0 MVD {got:.6f} vs run_table2 {want:.6f}")
    assert ok


# -- 6 -------------------------------------------------------------------------

def _wind(geom, u, alpha1, alpha2):
    wf = WindField.empty(geom, {"method": "stdm"}, ("alpha1", "alpha2"))
    wf.u_map[:], wf.v_map[:] = u
    wf.var_u_map[:] = wf.var_v_map[:] = 1.0
    wf.valid_mask[:] = True
    wf.diagnostics["alpha1"][:] = alpha1
    wf.diagnostics["alpha2"][:] = alpha2
    return wf


def _dense_predict(values, t, i, j, hw, alpha1, alpha2, u, times):
    h, w = values.shape[1:]
    pts, z = [], []
    for tt in times:
        for a in range(max(0, i - hw), min(h, i + hw + 1)):
            for b in range(max(0, j - hw), min(w, j + hw + 1)):
                pts.append((b, a, tt))
                z.append(values[tt, a, b])
    sigma = np.array([[correlation_scalar((q[0] - p[0], q[1] - p[1]), q[2] - p[2],
                                          alpha1, alpha2, u) for q in pts] for p in pts])
    sigma += 1e-8 * np.eye(len(pts))
    k = np.array([correlation_scalar((x - j, y - i), tt - t, alpha1, alpha2, u)
                  for x, y, tt in pts])
    return conditional_mean_var(k, sigma, np.array(z))


def test_criterion_6_prediction():
    grid = GridGeometry(11, 11, 4)
    stack, _ = simulate_domain(WindFieldSpec("constant", u_const=(1.0, -0.5)),
                               SimConfig(grid, DriftParams(2.0, 3.0), 606))
    worst = 0.0
    var_ok = True
    for conditioning, times in (("single", [2]), ("three", [0, 1, 2])):
        for hw in (1, 2):
            wf = _wind(grid, (1.0, -0.5), 2.0, 3.0)
            pred, var = predict_frame(stack, wf, 3, hw, conditioning=conditioning)
            var_ok &= bool(np.all((var > 0) & (var <= 1)))
            for i, j in [(5, 5), (0, 0), (10, 4), (3, 9)]:
                m, v = _dense_predict(stack.values, 3, i, j, hw, 2.0, 3.0,
                                      (1.0, -0.5), times)
                worst = max(worst, abs(pred[i, j] - m), abs(var[i, j] - v))

    syn_grid = GridGeometry(20, 20, 4)
    syn, _ = simulate_domain(WindFieldSpec("constant", u_const=(1.5, 1.0)),
                             SimConfig(syn_grid, DriftParams(3.0, 6.0), 616))
    wf = scan(syn, t_range=[1], config=ScanConfig(half_width=3, stride=2))
    pred, var = predict_frame(syn, wf, 3, 3)
    var_ok &= bool(np.all((var[np.isfinite(var)] > 0) & (var[np.isfinite(var)] <= 1)))
    mask = ~np.isfinite(pred)
    model = mspe(pred, syn.values[3], mask)
    base = mspe(baseline_persistence(syn, 3), syn.values[3], mask)
    ratio = model / base
    ok = worst <= 1e-8 and var_ok and ratio < 0.7
    record(6, ok, f"max |pred - dense| {worst:.2e}, variances in (0, 1] {var_ok}, "
                  f"MSPE model/persistence {model:.3f}/{base:.3f} = {ratio:.3f}")
    assert ok


# -- 7 -------------------------------------------------------------------------

def test_criterion_7_standardization_and_smoothing():
    rng = np.random.default_rng(707)
    wsum = 0.0
    for _ in range(50):
        targets = rng.uniform(0, 40, (9, 2))
        sources = rng.uniform(0, 40, (13, 2))
        w = gaussian_weights(targets, sources, rng.uniform(0.2, 20),
                             log_scale=rng.normal(size=13))
        assert np.all(w >= 0)
        wsum = max(wsum, float(np.max(np.abs(w.sum(axis=1) - 1))))

    sd = rng.uniform(0.5, 4, (9, 10))
    sm = kernel_smooth(sd, 1.8)
    sd_bounded = sd.min() - 1e-12 <= sm.min() and sm.max() <= sd.max() + 1e-12

    geom = GridGeometry(8, 7, 1)
    u = rng.normal(size=(7, 8))
    var = rng.uniform(0.3, 3, (7, 8))
    var[3, 4] = var[0, 0] = np.inf

    def field(vals):
        wf = WindField.empty(geom, {"method": "stdm"})
        wf.u_map[0], wf.v_map[0] = vals, -vals
        wf.var_u_map[0] = wf.var_v_map[0] = var
        wf.valid_mask[:] = True
        return wf

    out = smooth_field(field(u), SmoothConfig(1.5)).u_map[0]
    finite = np.isfinite(var)
    wind_bounded = u[finite].min() - 1e-12 <= out.min() and \
        out.max() <= u[finite].max() + 1e-12
    u2 = u.copy()
    u2[3, 4], u2[0, 0] = 1e9, -1e9
    nullified = np.array_equal(out, smooth_field(field(u2), SmoothConfig(1.5)).u_map[0])

    y = 260 + rng.normal(size=(6, 9, 10)) * rng.uniform(1, 8, (9, 10))
    stack = GridStack.from_array(y)
    model = fit_standardization(stack, 2.0)
    back = model.invert(standardize(stack, model)).values
    round_trip = float(np.max(np.abs(back - y) / np.abs(y)))

    ok = (wsum <= 1e-12 and sd_bounded and wind_bounded and nullified
          and round_trip <= 1e-12)
    record(7, ok, f"weight-sum error {wsum:.1e}, bounded {sd_bounded and wind_bounded}, "
                  f"+inf variance nullified {nullified}, round trip {round_trip:.1e}")
    assert ok


# -- 8 -------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    grid = GridGeometry(13, 13, 3)
    spec = WindFieldSpec("constant", u_const=(1.0, 0.5))
    s1, _ = simulate_domain(spec, SimConfig(grid, DriftParams(2.0, 3.0), 808))
    s2, _ = simulate_domain(spec, SimConfig(grid, DriftParams(2.0, 3.0), 808))
    same_data = np.array_equal(s1.values, s2.values)
    centers = [(i, j) for i in (4, 6, 8) for j in (4, 6, 8)]
    fields = [scan(s1, t_range=[1], centers=centers,
                   config=ScanConfig(half_width=2, budget=600, workers=w))
              for w in (1, 8)]
    names = ("u_map", "v_map", "var_u_map", "var_v_map", "valid_mask")
    same_stdm = all(np.array_equal(getattr(fields[0], n), getattr(fields[1], n),
                                   equal_nan=True) for n in names) and \
        fields[0].provenance == fields[1].provenance
    dm = [dmwa_scan(s1, [1], DmwaConfig(outer_size=7, inner_size=3, search_radius=2,
                                       mode="nested"), centers=[(5, 5), (6, 7), (7, 6)])
          for _ in range(2)]
    same_dmwa = all(np.array_equal(getattr(dm[0], n), getattr(dm[1], n), equal_nan=True)
                    for n in names)
    cfg = dict(window_sizes=(7,), alpha1_sqs=(1.0, 4.0), alpha2_sqs=(4.0,),
               u0s=((1.0, 2.0),), n_reps=2, budget=600)
    reports = [run_table1(Table1Config(workers=w, **cfg)) for w in (1, 8)]
    same_report = reports[0].payload() == reports[1].payload() and \
        reports[0].to_csv() == reports[1].to_csv()
    ok = same_data and same_stdm and same_dmwa and same_report
    record(8, ok, f"workers 1 vs 8: data {same_data}, STDM field {same_stdm}, "
                  f"DMWA field (serial, rerun) {same_dmwa}, report {same_report}")
    assert ok

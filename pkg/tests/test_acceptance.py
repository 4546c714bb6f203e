"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Tolerances are pinned here and nowhere else.
"""

import json
import math
import re
import time

import numpy as np
import pytest
from scipy.stats import norm

from cbgopt import (
    bayesopt as bo,
    cli,
    devices,
    electrostatics as es,
    gp,
    objective,
    robustness as rb,
    warp,
)
from cbgopt.devices import FAB_TOLERANCES_NM, PARAM_NAMES
from cbgopt.sampling import BoxDomain, ToleranceSpec, mvn_sample

CENTER = devices.REFERENCE_DESIGNS["NIR_I"].as_array()
TOL = ToleranceSpec(np.array(FAB_TOLERANCES_NM), PARAM_NAMES)


def report(n: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {n:2d} {status}: {description}{suffix}")
    assert ok, f"criterion {n}: {description}{suffix}"


def test_criterion_01_gp_interpolation():
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pts = rng.random((64, 7))
        vals = rng.standard_normal(64)
        model = gp.fit(gp.TrainingSet(pts, vals))
        mean, _ = gp.predict_batch(model, pts)
        worst = max(worst, float(np.max(np.abs(mean - vals) / (1.0 + np.abs(vals)))))
    elapsed = time.monotonic() - t0
    report(1, "noise-free GP interpolation, 20 random 7-D sets (M=64)",
           worst < 1e-8 and elapsed < 5.0,
           f"max rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_gp_closed_forms():
    p1 = gp.KernelParams(0.0, 1.0, np.array([1.0]), 0.0)
    m1 = gp.build_model(gp.TrainingSet([[0.0]], [1.0]), p1)
    mean, var = gp.predict(m1, [0.5])
    k = gp.matern52([0.5], [0.0], p1)
    ok = abs(mean - k) < 1e-10 and abs(var - (1.0 - k * k)) < 1e-10

    p2 = gp.KernelParams(0.2, 1.7, np.array([0.8]), 0.0)
    pts = np.array([[0.0], [1.0]])
    vals = np.array([1.0, -0.5])
    m2 = gp.build_model(gp.TrainingSet(pts, vals), p2)
    x = np.array([0.3])
    k11 = gp.matern52(pts[0], pts[0], p2)
    k12 = gp.matern52(pts[0], pts[1], p2)
    kvec = np.array([gp.matern52(x, pts[0], p2), gp.matern52(x, pts[1], p2)])
    kinv = np.linalg.inv(np.array([[k11, k12], [k12, k11]]))
    mean2, var2 = gp.predict(m2, x)
    ok &= abs(mean2 - (p2.mu0 + kvec @ kinv @ (vals - p2.mu0))) < 1e-10
    ok &= abs(var2 - (p2.sigma0_sq - kvec @ kinv @ kvec)) < 1e-10
    report(2, "M=1 and M=2 predictions match hand-derived formulas (1e-10)", ok)


def test_criterion_03_likelihood_gradients():
    rng = np.random.default_rng(42)
    pts = rng.random((12, 3)) * 2.0
    vals = np.sin(pts @ [2.0, 1.0, -1.0]) + 0.1 * rng.standard_normal(12)
    training = gp.TrainingSet(pts, vals)
    worst = 0.0
    for _ in range(10):
        mu0 = float(rng.normal())
        s2 = float(np.exp(rng.normal() * 0.7))
        ls = np.exp(rng.normal(size=3) * 0.5)
        params = gp.KernelParams(mu0, s2, ls, 1e-8)
        _, grad = gp.lml_and_gradient(training, params)

        def lml(mu0=mu0, s2=s2, ls=ls):
            return gp.log_marginal_likelihood(training, gp.KernelParams(mu0, s2, ls, 1e-8))

        num = np.empty_like(grad)
        h = 1e-5 * max(1.0, abs(mu0))
        num[0] = (lml(mu0=mu0 + h) - lml(mu0=mu0 - h)) / (2 * h)
        h = 1e-5 * s2
        num[1] = (lml(s2=s2 + h) - lml(s2=s2 - h)) / (2 * h)
        for k in range(3):
            h = 1e-5 * ls[k]
            up, dn = ls.copy(), ls.copy()
            up[k] += h
            dn[k] -= h
            num[2 + k] = (lml(ls=up) - lml(ls=dn)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(grad - num) / np.maximum(1e-8, np.abs(num)))))
    report(3, "analytic likelihood gradients vs central differences (1e-4 rel)",
           worst < 1e-4, f"max rel dev {worst:.2e}")


def test_criterion_04_warp_contract():
    rng = np.random.default_rng(4)
    # a fitted two-sided warp on boundary-clustered data plus a fixed one
    x = np.linspace(0.0, 1.0, 24).reshape(-1, 1)
    vals = 1.0 - 10.0 ** (-(1.0 + 3.0 * x[:, 0]))
    fitted = warp.fit_warped_gp(x, vals, 0.0, 1.0)
    specs = [
        fitted.warp,
        warp.WarpSpec(0.0, 1.0, 0.07, 0.83,
                      warp.position_for_zero_offset(0.0, 1.0, 0.07, 0.83)),
    ]
    ok_round, ok_c1 = True, True
    for spec in specs:
        bounded = np.concatenate([
            rng.uniform(1e-10, 1 - 1e-10, 5000),
            10.0 ** rng.uniform(-10, -0.31, 2500),
            1.0 - 10.0 ** rng.uniform(-10, -0.31, 2500),
        ])
        latent = warp.transform(spec, bounded)
        again = warp.transform(spec, warp.inverse_transform(spec, latent))
        ok_round &= bool(np.max(np.abs(again - latent) / (1.0 + np.abs(latent))) <= 1e-9)
        for y_cut in (spec.y_lower_cut, spec.y_upper_cut):
            if not math.isfinite(y_cut):
                continue
            eps = 1e-12 * (1.0 + abs(y_cut))
            left = warp.inverse_transform(spec, y_cut - eps)
            right = warp.inverse_transform(spec, y_cut + eps)
            sl = warp.inverse_transform_slope(spec, y_cut - eps)
            sr = warp.inverse_transform_slope(spec, y_cut + eps)
            ok_c1 &= abs(left - right) < 1e-10
            ok_c1 &= abs(sl - sr) / max(sl, sr) < 1e-6
    queries = rng.uniform(-0.5, 1.5, (10_000, 1))
    med, p16, p84, _, _ = warp.predict_bounded_batch(fitted, queries)
    ok_bounds = bool(np.all((p16 > 0) & (p84 < 1) & (med > 0) & (med < 1)))
    report(4, "warp round-trip 1e-9 / C1 at cutoffs / bounds on 1e4 predictions",
           ok_round and ok_c1 and ok_bounds)


def test_criterion_05_expected_improvement():
    rng = np.random.default_rng(5)
    ok_mc = True
    for _ in range(20):
        mean = float(rng.normal())
        std = float(np.exp(rng.normal() * 0.5))
        f_min = float(rng.normal())
        z = (f_min - mean) / std
        closed = (f_min - mean) * norm.cdf(z) + std * norm.pdf(z)
        draws = np.maximum(0.0, f_min - rng.normal(mean, std, 100_000))
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        ok_mc &= abs(closed - draws.mean()) <= 3 * se + 1e-12
    model = gp.build_model(
        gp.TrainingSet([[0.0]], [0.3]), gp.KernelParams(0.3, 1.0, np.array([1.0]), 0.0)
    )
    exact_zero = bo.expected_improvement(model, [0.0], 0.3)
    report(5, "EI closed form vs 1e5-sample MC (3 SE, 20 settings); EI=0 at incumbent",
           ok_mc and exact_zero == 0.0, f"EI at incumbent {exact_zero!r}")


def test_criterion_06_bo_quadratic_bowl():
    domain = BoxDomain([0.0, 0.0], [4.0, 4.0])

    def bowl(p):
        return float((p[0] - 1.3) ** 2 + (p[1] - 2.7) ** 2)

    state = bo.optimize(bowl, domain, budget=60, init_count=12, seed=0)
    incumbent = np.minimum.accumulate(state.values)
    ok = state.f_min <= 1e-3 and bool(np.all(np.diff(incumbent) <= 0.0))
    report(6, "BO on 2-D bowl, budget 60: best within 1e-3, incumbent monotone",
           ok, f"best {state.f_min:.2e}")


LAM_SLOPES = np.array([0.08, -0.05, 0.3, 0.12, -0.04, 0.06, -0.1])
FP_SLOPES = np.array([0.02, 0.015, -0.05, 0.03, 0.01, -0.02, 0.025])
ETA_SLOPES = np.array([0.001, -0.0008, 0.002, 0.0015, -0.0006, 0.0009, -0.0012])


def linear_oracle(points):
    d = np.atleast_2d(points) - CENTER
    return 930.0 + d @ LAM_SLOPES, 12.0 + d @ FP_SLOPES, 0.5 + d @ ETA_SLOPES


def test_criterion_07_linear_oracle_statistics():
    t0 = time.monotonic()
    bundle = rb.train_bundle(linear_oracle, CENTER, TOL, 256, seed=1)
    report_, preds = rb.analyze(bundle, CENTER, TOL, n_samples=50_000, seed=2,
                                return_samples=True)
    z84 = norm.ppf(0.84)
    rng = np.random.default_rng(3)
    ok = True
    detail = []
    for name, slopes, offset in (
        ("lambda_c", LAM_SLOPES, 930.0),
        ("fp", FP_SLOPES, 12.0),
        ("eta_smf", ETA_SLOPES, 0.5),
    ):
        stats = report_.stats()[name]
        s = math.sqrt(float(slopes**2 @ TOL.sigma**2))
        ok &= abs(stats.p50 - offset) <= 3 * stats.mc_err
        # bootstrap standard error of the spread statistic P84 - P50
        vals = preds[name]
        idx = rng.integers(0, vals.size, size=(200, vals.size))
        res = vals[idx]
        spread = np.percentile(res, 84.0, axis=1) - np.percentile(res, 50.0, axis=1)
        se_spread = float(np.std(spread, ddof=1))
        ok &= abs(stats.sigma_plus - z84 * s) <= 3 * se_spread
        detail.append(f"{name}: P50 off {abs(stats.p50 - offset):.2e}")
    elapsed = time.monotonic() - t0
    ok &= elapsed < 120.0
    report(7, "linear-oracle P50 and P84-P50 match normal propagation (3 bootstrap SE)",
           ok, f"{elapsed:.0f}s; " + "; ".join(detail))


TRIPLE_RE = re.compile(
    r"^\(-?\d+\.\d+ ± \d+\.\d+\)_\{-\d+\.\d+\}\^\{\+\d+\.\d+\}( \S+)?$"
)


def test_criterion_08_end_to_end_toy_pipeline():
    t0 = time.monotonic()
    oracle = devices.toy_oracle()
    bundle = rb.train_bundle(oracle, CENTER, TOL, 1024, seed=8)

    # held-out accuracy of the efficiency surrogate on fresh tolerance draws
    held = mvn_sample(CENTER, TOL, 256, seed=88)
    eta_true = oracle(held)[2]
    eta_pred = warp.predict_median_batch(bundle.eta_model, held)
    rms = float(np.sqrt(np.mean((eta_pred - eta_true) ** 2)))

    analysis = rb.analyze(bundle, CENTER, TOL, n_samples=50_000, seed=9)
    spec = objective.ObjectiveSpec(lambda_des=930.3)
    robust = rb.robust_optimize(bundle, TOL, spec, budget=100, n_samples=5_000, seed=10)
    summary = rb.verify(bundle, oracle, robust.mu, TOL, count=512, seed=11)

    triples = [
        analysis.lambda_c.format_triple(unit="nm"),
        analysis.fp.format_triple(),
        analysis.eta_smf.format_triple(scale=100.0, unit="%"),
    ]
    fmt_ok = all(TRIPLE_RE.match(t) for t in triples)
    elapsed = time.monotonic() - t0
    ok = (summary.median_discrepancy["eta_smf"] < 0.02 and rms < 0.02
          and fmt_ok and elapsed < 900.0)
    report(8, "desk-scale pipeline: train 2^10, analyze 5e4, robust 100, verify 512",
           ok,
           f"eta discrepancy {summary.median_discrepancy['eta_smf']:.4f}, "
           f"held-out RMS {rms:.4f}, {elapsed:.0f}s, triple '{triples[2]}'")


def test_criterion_09_robust_prefers_broad_peak():
    cfg = devices.TwoPeakConfig()
    center = np.array([cfg.center_r, 114.0, 318.0, 261.0, 136.0, 702.0, 50.0])
    tol5 = TOL.scaled(5.0)
    oracle = devices.two_peak_oracle(cfg)

    # brute-force median-smoothed landscape over the mean's radius coordinate
    rng = np.random.default_rng(90)
    xi = rng.normal(0.0, tol5.sigma[0], 50_001)
    grid = np.linspace(cfg.center_r - 100.0, cfg.center_r + 100.0, 401)
    med = np.array([np.median(cfg.eta_of_r(g + xi)) for g in grid])
    smoothed_argmax = float(grid[np.argmax(med)])

    # the unsmoothed optimum is the narrow peak, the smoothed one the broad peak
    point_argmax = float(grid[np.argmax(cfg.eta_of_r(grid))])
    assert abs(point_argmax - cfg.narrow_r) < 2.0
    assert abs(smoothed_argmax - cfg.broad_r) < 10.0

    bundle = rb.train_bundle(oracle, center, tol5, 256, seed=21)
    spec = objective.ObjectiveSpec(lambda_des=cfg.lambda_const)
    result = rb.robust_optimize(bundle, tol5, spec, budget=40, n_samples=2_000,
                                seed=22, init_count=16)
    mu_r = float(result.mu[0])
    ok = (abs(mu_r - cfg.broad_r) < abs(mu_r - cfg.narrow_r)
          and abs(mu_r - smoothed_argmax) <= 15.0)
    report(9, "5x tolerances: robust optimum moves to the broad peak (smoothed argmax)",
           ok, f"mu_R {mu_r:.1f}, smoothed argmax {smoothed_argmax:.1f}")


def test_criterion_10_electrostatics():
    nir1 = devices.REFERENCE_DESIGNS["NIR_I"]
    analytic = es.analytic_stack_field(es.device_stack(nir1, 12.9), 1, 10.0)

    planar = es.fd_axisym_solve(nir1, radius_nm=1500.0, u_volts=10.0, planar=True,
                                grid=es.GridSpec(5.0, 25.0, 100.0))
    ok_planar = abs(planar.e_abs_probe - analytic) / analytic < 0.01

    grid = es.GridSpec(10.0, 10.0, 100.0)
    rows, u100 = es.bias_sweep(nir1, u_list=[5.0, 10.0, 20.0], grid=grid)
    ok_linear = (abs(rows[1][1] - 2 * rows[0][1]) <= 1e-12 * rows[1][1]
                 and abs(rows[2][1] - 4 * rows[0][1]) <= 1e-12 * rows[2][1])

    grated = es.fd_axisym_solve(nir1, u_volts=10.0, grid=grid)
    ok_elevated = grated.e_abs_probe > analytic
    ok_voltage = 19.9 * 0.8 <= u100 <= 19.9 * 1.2
    report(10, "electrostatics: planar 1%, exact linearity, grating elevation, U(100kV/cm)",
           ok_planar and ok_linear and ok_elevated and ok_voltage,
           f"planar diff {abs(planar.e_abs_probe - analytic) / analytic:.1e}, "
           f"E_QD {grated.e_abs_probe:.1f} vs {analytic:.1f} kV/cm, U100 {u100:.1f} V")


def test_criterion_11_cli_byte_reproducibility(tmp_path):
    cfg = {
        "seed": 11,
        "oracle": {"kind": "toy"},
        "objective": {"lambda_des": 930.3},
        "center": "NIR_I",
        "optimize": {
            "budget": 20,
            "init_count": 10,
            "domain": {
                "R": [150, 250], "W": [100, 200], "P": [300, 400],
                "t_cbg": [150, 300], "t_sio2": [100, 300], "t_hsq_gap": [50, 900],
            },
            "fixed": {"t_ito": 50},
        },
        "robustness": {"train_count": 64, "n_samples": 2000},
        "robust_optimize": {"budget": 11, "n_samples": 400, "init_count": 8},
        "verify": {"count": 32},
        "capacitor": {
            "design": "NIR_I",
            "u_list": [0, 10, 20, 30],
            "grid": {"max_dz": 20, "max_dr_cbg": 25, "max_dr_outer": 200},
            "radius_um": 3.0,
        },
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    ok = True
    details = []
    for command in ("optimize", "robustness", "robust-optimize", "verify",
                    "capacitor", "toy-eval"):
        outs = []
        for run in ("x", "y"):
            out = tmp_path / f"{command}-{run}"
            code = cli.main([command, "--config", str(cfg_path), "--out", str(out)])
            assert code == 0, (command, code)
            outs.append(out)
        files_a = sorted(p.name for p in outs[0].iterdir())
        files_b = sorted(p.name for p in outs[1].iterdir())
        same = files_a == files_b and all(
            (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in files_a
        )
        ok &= same
        details.append(f"{command}:{'=' if same else '!'}")
    report(11, "re-running every CLI command byte-reproduces all output files",
           ok, " ".join(details))

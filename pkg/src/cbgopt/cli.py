"""Command-line orchestration of the pipeline with reproducible run directories.

Subcommands: optimize | robustness | robust-optimize | verify | capacitor |
toy-eval.  Every artifact carries the effective config hash and seed;
re-running a command with identical config and seed byte-reproduces every
output file.  Exit codes: 0 success, 2 config error, 3 numerical error,
4 extrapolation error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import (
    _accel,
    bayesopt,
    devices,
    electrostatics as es,
    gp,
    objective,
    robustness as rb,
    runconfig as rc,
    store,
    warp,
)
from .devices import PARAM_NAMES, DesignPoint
from .errors import ConfigError, ExtrapolationError, NumericalError
from .sampling import BoxDomain

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_EXTRAPOLATION = 4


def _fmt(x) -> str:
    return repr(float(x))


class RunContext:
    """Effective config, its hash, and the output directory for one invocation."""

    def __init__(self, args):
        cfg = rc.load_raw_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
        self.cfg = cfg
        self.seed = rc.require_seed(cfg)
        self.hash = rc.config_hash(cfg)
        out = args.out or cfg.get("out_dir")
        if not out:
            raise ConfigError("output directory required ('out_dir' in config or --out)")
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        threads = cfg.get("threads")
        if threads is not None:
            _accel.set_num_threads(int(threads))

    def provenance(self) -> dict:
        return {"config_sha256": self.hash, "seed": self.seed}

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        doc = dict(payload)
        doc.update(self.provenance())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path

    def open_csv(self, name: str, header: list):
        path = self.out / name
        fh = open(path, "w", encoding="utf-8", newline="\n")
        fh.write(f"# config_sha256={self.hash}\n# seed={self.seed}\n")
        fh.write(",".join(header) + "\n")
        return fh


def _write_csv(ctx: RunContext, name: str, header: list, rows) -> Path:
    with ctx.open_csv(name, header) as fh:
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                              for v in row) + "\n")
    return ctx.out / name


def _stats_payload(stats: rb.QuantityStats, scale: float, unit: str, digits: int) -> dict:
    return {
        "p50": stats.p50,
        "sigma_median": stats.sigma_median,
        "sigma_plus": stats.sigma_plus,
        "sigma_minus": stats.sigma_minus,
        "mc_err": stats.mc_err,
        "pred_spread": stats.pred_spread,
        "sample_count": stats.sample_count,
        "triple": stats.format_triple(scale=scale, unit=unit, digits=digits),
    }


def _report_payload(report: rb.RobustnessReport) -> dict:
    return {
        "lambda_c": _stats_payload(report.lambda_c, 1.0, "nm", 1),
        "fp": _stats_payload(report.fp, 1.0, "", 1),
        "eta_smf": _stats_payload(report.eta_smf, 100.0, "%", 1),
        "mean": dict(zip(PARAM_NAMES, report.mean.tolist())),
    }


def _history_writer(ctx: RunContext, name: str, assemble):
    fh = ctx.open_csv(
        name,
        ["iteration", *PARAM_NAMES, "lambda_c", "fp", "eta_smf", "target", "best", "status"],
    )

    def callback(iteration, point, value, extras, best):
        design = assemble(point)
        cells = [str(iteration)] + [_fmt(v) for v in design]
        if value is None:
            cells += ["", "", "", "", _fmt(best) if np.isfinite(best) else "", "failed"]
        else:
            cells += [
                _fmt(extras.get("lambda_c", float("nan"))),
                _fmt(extras.get("fp", float("nan"))),
                _fmt(extras.get("eta_smf", float("nan"))),
                _fmt(value),
                _fmt(best),
                "ok",
            ]
        fh.write(",".join(cells) + "\n")
        fh.flush()

    return fh, callback


def _load_resume(path: Path, free_names, assemble_inverse=None):
    """Replay successful observations from a previous history.csv."""
    if not path.exists():
        return []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                continue
            rec = dict(zip(header, parts))
            if rec.get("status") != "ok":
                continue
            point = np.array([float(rec[n]) for n in free_names])
            extras = {k: float(rec[k]) for k in ("lambda_c", "fp", "eta_smf") if rec.get(k)}
            rows.append((point, float(rec["target"]), extras))
    return rows


def cmd_toy_eval(ctx: RunContext) -> int:
    center = rc.get_center(ctx.cfg)
    toy = rc.get_toy_config(ctx.cfg)
    lam, fp, eta, eta_na = devices.toy_cavity(center, toy)
    payload = {
        "design": center.as_dict(),
        "lambda_c": lam,
        "fp": fp,
        "eta_smf": eta,
        "eta_na08": eta_na,
    }
    if "objective" in ctx.cfg:
        spec = rc.get_objective_spec(ctx.cfg)
        payload["target"] = objective.target(objective.ModeResult(lam, fp, eta, eta_na), spec)
    ctx.write_json("toy_eval.json", payload)
    return 0


def cmd_optimize(ctx: RunContext, resume: bool = False) -> int:
    spec = rc.get_objective_spec(ctx.cfg)
    oracle = rc.get_oracle(ctx.cfg)
    param = rc.get_optimize_parameterization(ctx.cfg)
    opt = ctx.cfg.get("optimize", {})
    budget = int(opt.get("budget", 300))
    init_count = opt.get("init_count")
    domain = BoxDomain(param.lower, param.upper, param.free_names)

    def evaluator(vec):
        design = param.assemble(vec)
        DesignPoint.from_array(design)  # geometry invariants
        lam, fp, eta = (float(a[0]) for a in oracle(design.reshape(1, -1)))
        if not all(np.isfinite([lam, fp, eta])):
            raise RuntimeError(f"oracle returned non-finite values at {design.tolist()}")
        mode = objective.ModeResult(lam, fp, eta)
        _, value = objective.best_mode([mode], spec)
        return value, {"lambda_c": lam, "fp": fp, "eta_smf": eta}

    replay = _load_resume(ctx.out / "history.csv", PARAM_NAMES) if resume else []
    if replay:
        # history stores full designs; recover the free coordinates
        replay = [
            (np.array([dict(zip(PARAM_NAMES, pt))[n] if n != "t_hsq_gap"
                       else dict(zip(PARAM_NAMES, pt))["t_hsq"] - dict(zip(PARAM_NAMES, pt))["t_cbg"]
                       for n in param.free_names]), v, e)
            for pt, v, e in replay
        ]

    fh, callback = _history_writer(ctx, "history.csv", param.assemble)
    try:
        state = bayesopt.optimize(
            evaluator, domain, budget=budget,
            init_count=int(init_count) if init_count is not None else None,
            seed=ctx.seed, callback=callback, resume=replay,
        )
    finally:
        fh.close()

    best_vec = state.best_point
    best_design = param.assemble(best_vec)
    best_extras = state.extras[int(np.argmin(state.values))]
    ctx.write_json("best.json", {
        "design": dict(zip(PARAM_NAMES, best_design.tolist())),
        "target": state.f_min,
        "quantities": best_extras,
        "evaluations": budget,
        "failures": len(state.failures),
    })
    gp.save_model(state.surrogate, ctx.out / "surrogate.bin", ctx.provenance())
    return 0


def _get_bundle(ctx: RunContext):
    rb_cfg = ctx.cfg.get("robustness", {})
    bundle_path = rb_cfg.get("bundle")
    if bundle_path:
        p = Path(bundle_path)
        if not p.exists():
            raise ConfigError(f"bundle file not found: {p}")
        return store.load_bundle(p)
    center = rc.get_center(ctx.cfg)
    tol = rc.get_tolerances(ctx.cfg)
    oracle = rc.get_oracle(ctx.cfg)
    count = int(rb_cfg.get("train_count", 1024))
    scales = rb_cfg.get("training_scales")
    bundle = rb.train_bundle(oracle, center, tol, count, seed=ctx.seed, scales=scales)
    store.save_bundle(bundle, ctx.out / "surrogate.bin", ctx.provenance())
    return bundle


def _write_histograms(ctx: RunContext, preds: dict, report: rb.RobustnessReport) -> None:
    for name, values in preds.items():
        counts, edges = np.histogram(values, bins=64)
        density = counts / (values.size * np.diff(edges))
        stats = report.stats()[name]
        rows = [
            (edges[i], edges[i + 1], int(counts[i]), density[i])
            for i in range(counts.size)
        ]
        with ctx.open_csv(
            f"hist_{name}.csv", ["bin_left", "bin_right", "count", "density"]
        ) as fh:
            fh.write(f"# p16={_fmt(stats.p50 - stats.sigma_minus)} p50={_fmt(stats.p50)} "
                     f"p84={_fmt(stats.p50 + stats.sigma_plus)}\n")
            for row in rows:
                fh.write(",".join(_fmt(v) if not isinstance(v, int) else str(v)
                                  for v in row) + "\n")


def cmd_robustness(ctx: RunContext) -> int:
    rc.validate_sigma_rule(ctx.cfg)
    center = rc.get_center(ctx.cfg)
    tol = rc.get_tolerances(ctx.cfg)
    rb_cfg = ctx.cfg.get("robustness", {})
    n_samples = int(rb_cfg.get("n_samples", rb.DEFAULT_ANALYZE_SAMPLES))
    bundle = _get_bundle(ctx)
    report, preds = rb.analyze(bundle, center, tol, n_samples=n_samples,
                               seed=ctx.seed, return_samples=True)
    payload = _report_payload(report)
    payload["tolerances"] = dict(zip(PARAM_NAMES, tol.sigma.tolist()))
    payload["n_samples"] = n_samples
    ctx.write_json("robustness_report.json", payload)
    _write_histograms(ctx, preds, report)
    return 0


def cmd_robust_optimize(ctx: RunContext) -> int:
    rc.validate_sigma_rule(ctx.cfg)
    tol = rc.get_tolerances(ctx.cfg)
    spec = rc.get_objective_spec(ctx.cfg)
    ro = ctx.cfg.get("robust_optimize", {})
    bundle = _get_bundle(ctx)
    mu_sigma = ro.get("mu_bounds_sigma")
    budget = int(ro.get("budget", 100))
    n_samples = int(ro.get("n_samples", rb.DEFAULT_ROBUST_SAMPLES))
    init_count = ro.get("init_count")

    fh, callback = _history_writer(ctx, "robust_history.csv", lambda v: v)
    try:
        evaluator = rb.median_target_evaluator(bundle, tol, spec, n_samples, ctx.seed)
        mu_bounds = (np.asarray(mu_sigma, dtype=float) if mu_sigma is not None
                     else rb.default_mu_sigma(tol))
        half = mu_bounds * tol.sigma
        mu_domain = BoxDomain(bundle.center - half, bundle.center + half, tol.names)
        corner = ((mu_domain.lower - 3 * tol.sigma < bundle.domain.lower)
                  | (mu_domain.upper + 3 * tol.sigma > bundle.domain.upper))
        if np.any(corner):
            raise ExtrapolationError(
                "mu bounds plus 3 sigma leave the trained domain for parameters "
                f"{[tol.names[i] for i in np.flatnonzero(corner)]}"
            )
        state = bayesopt.optimize(
            evaluator, mu_domain, budget=budget,
            init_count=int(init_count) if init_count is not None else
            min(bayesopt.DEFAULT_INIT_COUNT, budget - 1),
            seed=ctx.seed, callback=callback,
        )
    finally:
        fh.close()

    best_idx = int(np.argmin(state.values))
    mu = np.asarray(state.points[best_idx])
    medians = state.extras[best_idx]
    # point-value performance of the surrogates at the found mean itself
    lam_pt = float(gp.predict_mean_batch(bundle.lambda_model, mu.reshape(1, -1))[0])
    fp_pt = float(warp.predict_median_batch(bundle.fp_model, mu.reshape(1, -1))[0])
    eta_pt = float(warp.predict_median_batch(bundle.eta_model, mu.reshape(1, -1))[0])
    point_target = float(objective.target_arrays(lam_pt, fp_pt, eta_pt, spec))
    ctx.write_json("robust_best.json", {
        "mu": dict(zip(PARAM_NAMES, mu.tolist())),
        "median_target": float(state.values[best_idx]),
        "medians": medians,
        "point_quantities": {"lambda_c": lam_pt, "fp": fp_pt, "eta_smf": eta_pt},
        "point_target": point_target,
        "mu_bounds_sigma": mu_bounds.tolist(),
        "n_samples": n_samples,
    })
    return 0


def cmd_verify(ctx: RunContext) -> int:
    rc.validate_sigma_rule(ctx.cfg)
    center = rc.get_center(ctx.cfg)
    tol = rc.get_tolerances(ctx.cfg)
    oracle = rc.get_oracle(ctx.cfg)
    count = int(ctx.cfg.get("verify", {}).get("count", 512))
    bundle = _get_bundle(ctx)
    summary = rb.verify(bundle, oracle, center, tol, count=count, seed=ctx.seed)
    ctx.write_json("verification.json", {
        "median_discrepancy": summary.median_discrepancy,
        "band_coverage": summary.band_coverage,
        "oracle_median": summary.oracle_median,
        "surrogate_median": summary.surrogate_median,
        "sample_count": summary.sample_count,
    })
    return 0


def cmd_capacitor(ctx: RunContext) -> int:
    cap = ctx.cfg.get("capacitor", {})
    design_cfg = cap.get("design", ctx.cfg.get("center"))
    if design_cfg is None:
        raise ConfigError("capacitor requires 'capacitor.design' or 'center'")
    if isinstance(design_cfg, str):
        if design_cfg not in devices.REFERENCE_DESIGNS:
            raise ConfigError(f"unknown reference design {design_cfg!r}")
        design = devices.REFERENCE_DESIGNS[design_cfg]
    else:
        design = DesignPoint.from_dict(design_cfg)
    eps_semi = cap.get("eps_semi", "GaAs")
    if isinstance(eps_semi, str):
        if eps_semi not in devices.PERMITTIVITY:
            raise ConfigError(f"unknown material {eps_semi!r}")
        eps_semi = devices.PERMITTIVITY[eps_semi]
    mats = es.CapacitorMaterials(eps_semi=float(eps_semi))
    grid_cfg = cap.get("grid", {})
    grid = es.GridSpec(
        max_dz=float(grid_cfg.get("max_dz", 10.0)),
        max_dr_cbg=float(grid_cfg.get("max_dr_cbg", 10.0)),
        max_dr_outer=float(grid_cfg.get("max_dr_outer", 100.0)),
    )
    radius_nm = float(cap.get("radius_um", 7.0)) * 1000.0
    n_rings = int(cap.get("n_rings", es.DEFAULT_N_RINGS))
    u_list = cap.get("u_list") or np.linspace(0.0, 100.0, 41).tolist()

    sol = es.fd_axisym_solve(design, mats, radius_nm=radius_nm, u_volts=10.0,
                             grid=grid, n_rings=n_rings)
    rows, u_at_100 = es.bias_sweep(design, mats, u_list=u_list, radius_nm=radius_nm,
                                   grid=grid, n_rings=n_rings)
    _write_csv(ctx, "bias_sweep.csv", ["u_volts", "e_abs_kv_cm"], rows)

    field_rows = (
        (sol.r_centers[i], sol.z_centers[j], sol.phi[i, j], sol.e_r[i, j], sol.e_z[i, j])
        for i in range(sol.r_centers.size)
        for j in range(sol.z_centers.size)
    )
    _write_csv(ctx, "field_map.csv", ["r_nm", "z_nm", "phi_v", "e_r_kv_cm", "e_z_kv_cm"],
               field_rows)

    stack = es.device_stack(design, mats.eps_semi)
    e_analytic = es.analytic_stack_field(stack, 1, sol.u_volts)
    planar = es.fd_axisym_solve(design, mats, radius_nm=radius_nm, u_volts=sol.u_volts,
                                grid=grid, n_rings=n_rings, planar=True)
    rel = abs(planar.e_abs_probe - e_analytic) / e_analytic
    ctx.write_json("capacitor_summary.json", {
        "design": design.as_dict(),
        "eps_semi": mats.eps_semi,
        "e_probe_at_10v_kv_cm": sol.e_abs_probe,
        "u_at_100kv_cm": u_at_100,
        "planar_fd_kv_cm": planar.e_abs_probe,
        "planar_analytic_kv_cm": e_analytic,
        "planar_rel_diff": rel,
        "flux_residual": sol.flux_residual,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbgopt",
        description="Surrogate-assisted robust design optimization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("optimize", "robustness", "robust-optimize", "verify",
                 "capacitor", "toy-eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None, help="compute threads")
        if name == "optimize":
            p.add_argument("--resume", action="store_true",
                           help="replay an existing history.csv before new evaluations")
    return parser


COMMANDS = {
    "optimize": cmd_optimize,
    "robustness": cmd_robustness,
    "robust-optimize": cmd_robust_optimize,
    "verify": cmd_verify,
    "capacitor": cmd_capacitor,
    "toy-eval": cmd_toy_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ctx = RunContext(args)
        if args.command == "optimize":
            code = cmd_optimize(ctx, resume=getattr(args, "resume", False))
        else:
            code = COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ExtrapolationError as exc:
        print(f"extrapolation error: {exc}", file=sys.stderr)
        return EXIT_EXTRAPOLATION
    return code


if __name__ == "__main__":
    sys.exit(main())

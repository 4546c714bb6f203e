"""Monte Carlo robustness analysis over surrogate models and robust re-optimization.

A :class:`SurrogateBundle` holds three surrogates trained on a common Sobol
set over the tolerance-scaled training box: a plain GP for the resonance
wavelength and bound-respecting warped GPs for the Purcell factor (>= 0) and
the fiber efficiency (0..1).  The analysis propagates the manufacturing
distribution through the surrogates and reports per-quantity percentile
statistics

    (P50 +- sigma_median) with offsets -sigma_minus / +sigma_plus,

where ``sigma_median`` combines, in quadrature, the bootstrap standard error
of the median and the median per-sample predictive spread on the bounded
scale.  Robust re-optimization treats the distribution mean as the free
variable and minimizes the target built from sampled medians.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import bayesopt, gp, objective, warp
from .errors import ExtrapolationError
from .sampling import (
    BoxDomain,
    ToleranceSpec,
    default_training_scales,
    mvn_sample,
    sobol,
    training_domain,
)

QUANTITIES = ("lambda_c", "fp", "eta_smf")
BOOTSTRAP_RESAMPLES = 200
DEFAULT_ANALYZE_SAMPLES = 50_000
DEFAULT_ROBUST_SAMPLES = 5_000
#: Robust-optimization bounds on the distribution mean, in tolerance units.
DEFAULT_MU_SIGMA = 2.0
PITCH_MU_SIGMA = 22.0
MAX_ORACLE_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class SurrogateBundle:
    """Three surrogates over one training domain, plus the center they surround."""

    lambda_model: gp.GPModel
    fp_model: warp.WarpedGPModel
    eta_model: warp.WarpedGPModel
    domain: BoxDomain
    center: np.ndarray
    tol: ToleranceSpec

    @property
    def dim(self) -> int:
        return self.domain.dim


@dataclass(frozen=True)
class QuantityStats:
    """Percentile summary of one propagated quantity."""

    name: str
    p50: float
    sigma_median: float
    sigma_plus: float
    sigma_minus: float
    mc_err: float
    pred_spread: float
    sample_count: int

    def format_triple(self, scale: float = 1.0, unit: str = "", digits: int = 1) -> str:
        """Render as ``(P50 +- sigma_median)_{-sigma-}^{+sigma+}`` like the reports."""
        f = f"{{:.{digits}f}}"
        core = f"({f.format(self.p50 * scale)} ± {f.format(self.sigma_median * scale)})"
        lo = f"_{{-{f.format(self.sigma_minus * scale)}}}"
        hi = f"^{{+{f.format(self.sigma_plus * scale)}}}"
        return core + lo + hi + (f" {unit}" if unit else "")


@dataclass(frozen=True)
class RobustnessReport:
    lambda_c: QuantityStats
    fp: QuantityStats
    eta_smf: QuantityStats
    mean: np.ndarray
    seed: int

    def stats(self) -> dict:
        return {"lambda_c": self.lambda_c, "fp": self.fp, "eta_smf": self.eta_smf}


def _drop_failures(points: np.ndarray, columns: tuple, context: str):
    """Oracle failures are NaN rows; tolerate a few, fail loudly past 5%."""
    bad = np.zeros(points.shape[0], dtype=bool)
    for col in columns:
        bad |= ~np.isfinite(col)
    n_bad = int(bad.sum())
    if n_bad:
        frac = n_bad / points.shape[0]
        if frac > MAX_ORACLE_FAILURE_FRACTION:
            raise RuntimeError(
                f"{context}: oracle failed at {n_bad}/{points.shape[0]} points "
                f"({frac:.1%} > {MAX_ORACLE_FAILURE_FRACTION:.0%})"
            )
        warnings.warn(f"{context}: dropping {n_bad} failed oracle evaluations")
    keep = ~bad
    return points[keep], tuple(col[keep] for col in columns)


def train_bundle(oracle, center, tol: ToleranceSpec, count: int, seed: int = 0,
                 scales=None, gp_starts: int = 8) -> SurrogateBundle:
    """Fit the three surrogates on a Sobol sample of the training box.

    ``oracle(points) -> (lambda_c, fp, eta_smf)`` arrays; failures are NaN
    entries.  ``count`` must be a power of two (>= 64) to keep the Sobol set
    balanced.  Deterministic for fixed arguments; ``seed`` is recorded for
    downstream stages.
    """
    if count < 64 or count & (count - 1):
        raise ValueError(f"training count must be a power of two >= 64, got {count}")
    center = np.asarray(center.as_array() if hasattr(center, "as_array") else center,
                        dtype=float)
    domain = training_domain(center, tol, scales)
    pts = sobol(domain.dim, count, domain)
    lam, fp, eta = (np.asarray(a, dtype=float) for a in oracle(pts))
    pts, (lam, fp, eta) = _drop_failures(pts, (lam, fp, eta), "train_bundle")
    lambda_model = gp.fit(gp.TrainingSet(pts, lam), n_starts=gp_starts)
    fp_model = warp.fit_warped_gp(pts, fp, 0.0, math.inf, n_starts=gp_starts)
    eta_model = warp.fit_warped_gp(pts, eta, 0.0, 1.0, n_starts=gp_starts)
    return SurrogateBundle(lambda_model, fp_model, eta_model, domain, center, tol)


def _check_mass_inside(domain: BoxDomain, mean: np.ndarray, tol: ToleranceSpec,
                       n_sigma: float = 3.0) -> None:
    lo = mean - n_sigma * tol.sigma
    hi = mean + n_sigma * tol.sigma
    bad = (lo < domain.lower) | (hi > domain.upper)
    if np.any(bad):
        names = tol.names or tuple(f"x{i}" for i in range(tol.dim))
        offenders = [names[i] for i in np.flatnonzero(bad)]
        raise ExtrapolationError(
            f"{n_sigma} sigma of the tolerance distribution leaves the trained "
            f"domain for parameters {offenders}"
        )


def _bundle_predictions(bundle: SurrogateBundle, samples: np.ndarray, with_spread: bool):
    """Per-sample central predictions (and half-width spreads on the bounded scale)."""
    out = {}
    spread = {}
    mu, var = gp.predict_batch(bundle.lambda_model, samples)
    out["lambda_c"] = mu
    if with_spread:
        spread["lambda_c"] = np.sqrt(var)
    for name, model in (("fp", bundle.fp_model), ("eta_smf", bundle.eta_model)):
        if with_spread:
            med, p16, p84, _, _ = warp.predict_bounded_batch(model, samples)
            out[name] = med
            spread[name] = 0.5 * (p84 - p16)
        else:
            out[name] = warp.predict_median_batch(model, samples)
    return out, spread


def _bootstrap_median_se(values: np.ndarray, seed: int) -> float:
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.integers(0, values.size, size=(BOOTSTRAP_RESAMPLES, values.size))
    medians = np.median(values[idx], axis=1)
    return float(np.std(medians, ddof=1))


def analyze(bundle: SurrogateBundle, mean, tol: ToleranceSpec,
            n_samples: int = DEFAULT_ANALYZE_SAMPLES, seed: int = 0,
            return_samples: bool = False):
    """Propagate the manufacturing distribution and summarize percentiles.

    Draws ``n_samples`` points from ``N(mean, diag(tol^2))``, evaluates each
    surrogate's central prediction, and reports P50 with the 16th/84th
    percentile offsets.  ``sigma_median`` is the quadrature sum of the seeded
    bootstrap error of the median and the median per-sample predictive spread.
    With ``return_samples`` the per-sample predictions come back too (for
    histogram exports).
    """
    mean = np.asarray(mean.as_array() if hasattr(mean, "as_array") else mean, dtype=float)
    _check_mass_inside(bundle.domain, mean, tol)
    samples = mvn_sample(mean, tol, n_samples, seed)
    preds, spreads = _bundle_predictions(bundle, samples, with_spread=True)

    stats = {}
    for i, name in enumerate(QUANTITIES):
        vals = preds[name]
        p16, p50, p84 = np.percentile(vals, [16.0, 50.0, 84.0])
        mc_err = _bootstrap_median_se(vals, seed + 7919 * (i + 1))
        pred_spread = float(np.median(spreads[name]))
        stats[name] = QuantityStats(
            name=name,
            p50=float(p50),
            sigma_median=math.hypot(mc_err, pred_spread),
            sigma_plus=float(p84 - p50),
            sigma_minus=float(p50 - p16),
            mc_err=mc_err,
            pred_spread=pred_spread,
            sample_count=int(vals.size),
        )
    report = RobustnessReport(stats["lambda_c"], stats["fp"], stats["eta_smf"],
                              mean=mean, seed=int(seed))
    if return_samples:
        return report, preds
    return report


@dataclass(frozen=True)
class VerificationSummary:
    """Oracle-vs-surrogate comparison on a fresh tolerance sample."""

    median_discrepancy: dict
    band_coverage: dict
    oracle_median: dict
    surrogate_median: dict
    sample_count: int


def verify(bundle: SurrogateBundle, oracle, mean, tol: ToleranceSpec,
           count: int = 512, seed: int = 0) -> VerificationSummary:
    """Evaluate the true oracle on MVN samples and compare against the surrogates.

    Reports the per-quantity difference of medians and the fraction of oracle
    values inside the per-point [p16, p84] surrogate band (a calibrated
    surrogate should land in roughly the 0.55-0.85 range).
    """
    mean = np.asarray(mean.as_array() if hasattr(mean, "as_array") else mean, dtype=float)
    _check_mass_inside(bundle.domain, mean, tol)
    samples = mvn_sample(mean, tol, count, seed)
    lam, fp, eta = (np.asarray(a, dtype=float) for a in oracle(samples))
    samples, (lam, fp, eta) = _drop_failures(samples, (lam, fp, eta), "verify")
    truth = {"lambda_c": lam, "fp": fp, "eta_smf": eta}

    mu, var = gp.predict_batch(bundle.lambda_model, samples)
    std = np.sqrt(var)
    bands = {"lambda_c": (mu - std, mu, mu + std)}
    for name, model in (("fp", bundle.fp_model), ("eta_smf", bundle.eta_model)):
        med, p16, p84, _, _ = warp.predict_bounded_batch(model, samples)
        bands[name] = (p16, med, p84)

    discrepancy, coverage, om, sm = {}, {}, {}, {}
    for name in QUANTITIES:
        lo, med, hi = bands[name]
        om[name] = float(np.median(truth[name]))
        sm[name] = float(np.median(med))
        discrepancy[name] = abs(om[name] - sm[name])
        coverage[name] = float(np.mean((truth[name] >= lo) & (truth[name] <= hi)))
    return VerificationSummary(discrepancy, coverage, om, sm, int(samples.shape[0]))


def default_mu_sigma(tol: ToleranceSpec) -> np.ndarray:
    out = np.full(tol.dim, DEFAULT_MU_SIGMA)
    for i, name in enumerate(tol.names):
        if name == "P":
            out[i] = PITCH_MU_SIGMA
    return out


@dataclass(frozen=True)
class RobustOptimum:
    """Best distribution mean found plus its sampled-median performance."""

    mu: np.ndarray
    value: float
    medians: dict
    state: bayesopt.BOState


def median_target_evaluator(bundle: SurrogateBundle, tol: ToleranceSpec,
                            spec: objective.ObjectiveSpec, n_samples: int, seed: int):
    """Evaluator mapping a distribution mean to the target of sampled medians.

    The same seed is reused for every evaluation (common random numbers), so
    the robust objective is a deterministic, smooth function of the mean.
    """

    def evaluate(mu_vec: np.ndarray):
        samples = mvn_sample(mu_vec, tol, n_samples, seed)
        preds, _ = _bundle_predictions(bundle, samples, with_spread=False)
        med = {name: float(np.median(preds[name])) for name in QUANTITIES}
        value = float(
            objective.target_arrays(med["lambda_c"], med["fp"], med["eta_smf"], spec)
        )
        return value, med

    return evaluate


def robust_optimize(bundle: SurrogateBundle, tol: ToleranceSpec,
                    spec: objective.ObjectiveSpec, mu_bounds_sigma=None,
                    n_samples: int = DEFAULT_ROBUST_SAMPLES, budget: int = 100,
                    seed: int = 0, init_count: int | None = None) -> RobustOptimum:
    """Optimize the tolerance-distribution mean over the trained surrogates.

    The mean may move ``mu_bounds_sigma`` standard deviations from the bundle
    center (defaults: 2, and 22 for the pitch); the bounds must keep a further
    3 sigma of the distribution inside the trained domain.
    """
    if mu_bounds_sigma is None:
        mu_bounds_sigma = default_mu_sigma(tol)
    else:
        mu_bounds_sigma = np.broadcast_to(
            np.asarray(mu_bounds_sigma, dtype=float), (tol.dim,)
        ).copy()
    half = mu_bounds_sigma * tol.sigma
    mu_domain = BoxDomain(bundle.center - half, bundle.center + half, tol.names)
    corner_lo = mu_domain.lower - 3.0 * tol.sigma
    corner_hi = mu_domain.upper + 3.0 * tol.sigma
    bad = (corner_lo < bundle.domain.lower) | (corner_hi > bundle.domain.upper)
    if np.any(bad):
        names = tol.names or tuple(f"x{i}" for i in range(tol.dim))
        raise ExtrapolationError(
            "mu bounds plus 3 sigma leave the trained domain for parameters "
            f"{[names[i] for i in np.flatnonzero(bad)]}"
        )

    evaluator = median_target_evaluator(bundle, tol, spec, n_samples, seed)
    if init_count is None:
        init_count = min(bayesopt.DEFAULT_INIT_COUNT, budget - 1)
    state = bayesopt.optimize(evaluator, mu_domain, budget=budget,
                              init_count=init_count, seed=seed)
    best_idx = int(np.argmin(state.values))
    return RobustOptimum(
        mu=np.asarray(state.points[best_idx]),
        value=float(state.values[best_idx]),
        medians=dict(state.extras[best_idx]),
        state=state,
    )

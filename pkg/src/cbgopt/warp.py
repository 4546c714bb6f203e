"""Bound-respecting output transforms and the warped-GP wrapper.

Bounded observables (efficiencies in (0, 1), enhancement factors above 0) are
mapped to an unbounded latent domain before GP training.  The inverse map is
piecewise: an exponential approach to each finite bound, joined C1 to a
central affine segment of slope one.  Both directions are analytic, so no
root finding is involved, and quantiles commute with the transform: the
back-transformed latent mean is the predictive median.

Free hyperparameters are the two cutoffs (in the bounded domain) and one
position constant; the position is the ``b``-type constant of the exponential
segment adjacent to the lowest finite bound (``b_lower`` for a finite lower
bound, else ``b_upper``) from which the affine offset ``b_linear`` and all
remaining segment constants follow by C1 matching.  The affine slope is fixed
to one; per-tail steepness would only shrink predicted variances without
adding information.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import gp
from .errors import DomainError


@dataclass(frozen=True)
class WarpSpec:
    """Bijective map between a bounded interval and the real line."""

    lower_bound: float
    upper_bound: float
    lower_cutoff: float
    upper_cutoff: float
    position: float
    # derived segment constants, filled in by __post_init__
    a_lower: float = field(init=False, default=math.nan)
    b_lower: float = field(init=False, default=math.nan)
    a_upper: float = field(init=False, default=math.nan)
    b_upper: float = field(init=False, default=math.nan)
    m_linear: float = field(init=False, default=1.0)
    b_linear: float = field(init=False, default=math.nan)
    # latent images of the cutoffs
    y_lower_cut: float = field(init=False, default=-math.inf)
    y_upper_cut: float = field(init=False, default=math.inf)

    def __post_init__(self):
        lb, ub = float(self.lower_bound), float(self.upper_bound)
        lc, uc = float(self.lower_cutoff), float(self.upper_cutoff)
        if not lb < ub:
            raise ValueError("lower_bound must be below upper_bound")
        has_lower = math.isfinite(lb)
        has_upper = math.isfinite(ub)
        if not (has_lower or has_upper):
            raise ValueError("at least one bound must be finite")
        if has_lower and not (lb < lc):
            raise ValueError("need lower_bound < lower_cutoff")
        if has_upper and not (uc < ub):
            raise ValueError("need upper_cutoff < upper_bound")
        if not lc < uc:
            raise ValueError("need lower_cutoff < upper_cutoff")
        if has_lower and not math.isfinite(lc):
            raise ValueError("lower_cutoff must be finite when lower_bound is")
        if has_upper and not math.isfinite(uc):
            raise ValueError("upper_cutoff must be finite when upper_bound is")

        set_ = object.__setattr__
        if has_lower:
            delta_l = lc - lb
            set_(self, "a_lower", 1.0 / delta_l)
            set_(self, "b_lower", float(self.position))
            y_lc = self.position + delta_l * math.log(delta_l)
            set_(self, "y_lower_cut", y_lc)
            set_(self, "b_linear", lc - y_lc)
        if has_upper:
            delta_u = ub - uc
            set_(self, "a_upper", 1.0 / delta_u)
            if has_lower:
                y_uc = uc - self.b_linear
            else:
                set_(self, "b_upper", float(self.position))
                y_uc = self.position - delta_u * math.log(delta_u)
                set_(self, "b_linear", uc - y_uc)
            set_(self, "y_upper_cut", y_uc)
            if has_lower:
                set_(self, "b_upper", y_uc + delta_u * math.log(delta_u))

    @property
    def has_lower(self) -> bool:
        return math.isfinite(self.lower_bound)

    @property
    def has_upper(self) -> bool:
        return math.isfinite(self.upper_bound)


def inverse_transform(warp: WarpSpec, y):
    """Map latent values to the bounded domain (strictly inside the bounds)."""
    y = np.asarray(y, dtype=float)
    out = y + warp.b_linear
    if warp.has_lower:
        low = y < warp.y_lower_cut
        if np.any(low):
            out = np.where(
                low,
                warp.lower_bound + np.exp(warp.a_lower * (y - warp.b_lower)),
                out,
            )
        out = np.where(
            out <= warp.lower_bound, np.nextafter(warp.lower_bound, np.inf), out
        )
    if warp.has_upper:
        high = y > warp.y_upper_cut
        if np.any(high):
            out = np.where(
                high,
                warp.upper_bound - np.exp(-warp.a_upper * (y - warp.b_upper)),
                out,
            )
        out = np.where(
            out >= warp.upper_bound, np.nextafter(warp.upper_bound, -np.inf), out
        )
    return out if out.ndim else float(out)


def inverse_transform_slope(warp: WarpSpec, y):
    """Derivative of :func:`inverse_transform` with respect to the latent value."""
    y = np.asarray(y, dtype=float)
    out = np.ones_like(y)
    if warp.has_lower:
        low = y < warp.y_lower_cut
        out = np.where(low, warp.a_lower * np.exp(warp.a_lower * (y - warp.b_lower)), out)
    if warp.has_upper:
        high = y > warp.y_upper_cut
        out = np.where(high, warp.a_upper * np.exp(-warp.a_upper * (y - warp.b_upper)), out)
    return out if out.ndim else float(out)


def _check_in_bounds(warp: WarpSpec, vals: np.ndarray) -> None:
    bad = ~((vals > warp.lower_bound) & (vals < warp.upper_bound))
    if np.any(bad):
        offenders = np.asarray(vals)[bad][:10]
        raise DomainError(
            f"values must lie strictly inside ({warp.lower_bound}, {warp.upper_bound}); "
            f"offending values: {offenders.tolist()}"
        )


def transform(warp: WarpSpec, y_bounded):
    """Exact analytic inverse of :func:`inverse_transform` (log / affine / log)."""
    vals = np.asarray(y_bounded, dtype=float)
    _check_in_bounds(warp, vals)
    out = vals - warp.b_linear
    if warp.has_lower:
        low = vals < warp.lower_cutoff
        if np.any(low):
            safe = np.where(low, vals - warp.lower_bound, 1.0)
            out = np.where(low, warp.b_lower + np.log(safe) / warp.a_lower, out)
    if warp.has_upper:
        high = vals > warp.upper_cutoff
        if np.any(high):
            safe = np.where(high, warp.upper_bound - vals, 1.0)
            out = np.where(high, warp.b_upper - np.log(safe) / warp.a_upper, out)
    return out if out.ndim else float(out)


def transform_slope(warp: WarpSpec, y_bounded):
    """Derivative of the bounded-to-latent map; the likelihood Jacobian factor."""
    vals = np.asarray(y_bounded, dtype=float)
    _check_in_bounds(warp, vals)
    out = np.ones_like(vals)
    if warp.has_lower:
        low = vals < warp.lower_cutoff
        out = np.where(low, 1.0 / (warp.a_lower * (vals - warp.lower_bound)), out)
    if warp.has_upper:
        high = vals > warp.upper_cutoff
        out = np.where(high, 1.0 / (warp.a_upper * (warp.upper_bound - vals)), out)
    return out if out.ndim else float(out)


def position_for_zero_offset(lower_bound: float, upper_bound: float,
                             lower_cutoff: float, upper_cutoff: float) -> float:
    """Position constant that makes the affine segment the identity (b_linear=0)."""
    if math.isfinite(lower_bound):
        delta_l = lower_cutoff - lower_bound
        return lower_cutoff - delta_l * math.log(delta_l)
    delta_u = upper_bound - upper_cutoff
    return upper_cutoff + delta_u * math.log(delta_u)


@dataclass(frozen=True)
class WarpedGPModel:
    """GP trained on transformed values plus the transform that bounded them."""

    warp: WarpSpec
    gp_model: gp.GPModel


def predict_bounded_batch(model: WarpedGPModel, points: np.ndarray):
    """Median and the 16th/84th-percentile band on the bounded scale.

    Quantiles map through the monotone transform, so the band is
    ``g^-1(mean -+ std)`` and the center ``g^-1(mean)`` is the predictive
    median.  Returns ``(median, p16, p84, latent_mean, latent_var)`` arrays.
    """
    mean, var = gp.predict_batch(model.gp_model, points)
    std = np.sqrt(var)
    median = inverse_transform(model.warp, mean)
    p16 = inverse_transform(model.warp, mean - std)
    p84 = inverse_transform(model.warp, mean + std)
    return median, p16, p84, mean, var


def predict_bounded(model: WarpedGPModel, p_star):
    res = predict_bounded_batch(model, np.asarray(p_star, dtype=float).reshape(1, -1))
    return tuple(float(a[0]) for a in res)


def predict_median_batch(model: WarpedGPModel, points: np.ndarray) -> np.ndarray:
    """Back-transformed predictive median only (cheap path for optimization loops)."""
    mean = gp.predict_mean_batch(model.gp_model, points)
    return inverse_transform(model.warp, mean)


def _initial_warp(values: np.ndarray, lb: float, ub: float) -> WarpSpec:
    dmin, dmax = float(values.min()), float(values.max())
    if math.isfinite(lb):
        lc = lb + 0.5 * (dmin - lb)
    else:
        lc = -math.inf
    if math.isfinite(ub):
        uc = ub - 0.5 * (ub - dmax)
    else:
        uc = math.inf
    pos = position_for_zero_offset(lb, ub, lc, uc)
    return WarpSpec(lb, ub, lc, uc, pos)


def _warp_from_u(u: np.ndarray, lb: float, ub: float) -> WarpSpec:
    """Unconstrained search vector -> ordered cutoffs + position."""

    def expit(t):
        return 1.0 / (1.0 + math.exp(-min(max(t, -500.0), 500.0)))

    if math.isfinite(lb) and math.isfinite(ub):
        span = ub - lb
        lc = lb + expit(u[0]) * span
        uc = lc + expit(u[1]) * (ub - lc)
        pos = u[2]
    elif math.isfinite(lb):
        lc = lb + math.exp(min(u[0], 500.0))
        uc = math.inf
        pos = u[1]
    else:
        uc = ub - math.exp(min(u[0], 500.0))
        lc = -math.inf
        pos = u[1]
    return WarpSpec(lb, ub, lc, uc, pos)


def _u_from_warp(w: WarpSpec) -> np.ndarray:
    def logit(t):
        t = min(max(t, 1e-12), 1.0 - 1e-12)
        return math.log(t / (1.0 - t))

    if w.has_lower and w.has_upper:
        span = w.upper_bound - w.lower_bound
        u0 = logit((w.lower_cutoff - w.lower_bound) / span)
        u1 = logit((w.upper_cutoff - w.lower_cutoff) / (w.upper_bound - w.lower_cutoff))
        return np.array([u0, u1, w.position])
    if w.has_lower:
        return np.array([math.log(w.lower_cutoff - w.lower_bound), w.position])
    return np.array([math.log(w.upper_bound - w.upper_cutoff), w.position])


def warp_objective(points, values, warp: WarpSpec, params: gp.KernelParams,
                   noise_sq: float) -> float:
    """Marginal likelihood of the transformed data plus the change-of-variables term.

    The Jacobian sum makes likelihoods comparable across warps; without it a
    transform could cheat by compressing the data.  The prior mean is profiled
    to the transformed sample mean.
    """
    y = transform(warp, values)
    if not np.all(np.isfinite(y)):
        return -np.inf
    jac = float(np.sum(np.log(transform_slope(warp, values))))
    prof = gp.KernelParams(float(np.mean(y)), params.sigma0_sq,
                           params.length_scales, noise_sq)
    try:
        lml = gp.log_marginal_likelihood(gp.TrainingSet(points, y), prof)
    except Exception:
        return -np.inf
    return lml + jac


def _search_warp(points, values, lb, ub, current: WarpSpec,
                 params: gp.KernelParams, noise_sq: float) -> WarpSpec:
    """Derivative-free local search over the warp hyperparameters."""
    dmin, dmax = float(values.min()), float(values.max())
    inits = [_u_from_warp(current)]
    q25, q75 = np.quantile(values, [0.25, 0.75])
    if math.isfinite(lb) and math.isfinite(ub):
        # cluster-on-tail configurations: most data on the upper / lower segment
        for lc, uc in (
            (lb + 0.25 * (dmin - lb), max(q25, lb + 0.75 * (dmin - lb))),
            (min(q75, ub - 0.75 * (ub - dmax)), ub - 0.25 * (ub - dmax)),
        ):
            if lb < lc < uc < ub:
                pos = position_for_zero_offset(lb, ub, lc, uc)
                inits.append(_u_from_warp(WarpSpec(lb, ub, lc, uc, pos)))
    elif math.isfinite(lb):
        for lc in (lb + 0.25 * (dmin - lb), q75):
            if lc > lb:
                pos = position_for_zero_offset(lb, ub, lc, math.inf)
                inits.append(_u_from_warp(WarpSpec(lb, ub, lc, math.inf, pos)))
    else:
        for uc in (ub - 0.25 * (ub - dmax), q25):
            if uc < ub:
                pos = position_for_zero_offset(lb, ub, -math.inf, uc)
                inits.append(_u_from_warp(WarpSpec(lb, ub, -math.inf, uc, pos)))

    def neg(u):
        try:
            w = _warp_from_u(u, lb, ub)
        except ValueError:
            return 1e25
        val = warp_objective(points, values, w, params, noise_sq)
        return -val if np.isfinite(val) else 1e25

    best_u, best_f = None, np.inf
    for u0 in inits:
        res = minimize(neg, u0, method="Nelder-Mead",
                       options={"maxiter": 120, "xatol": 1e-4, "fatol": 1e-7})
        if res.fun < best_f:
            best_f, best_u = res.fun, res.x
    if best_u is None or not np.isfinite(best_f):
        return current
    best = _warp_from_u(best_u, lb, ub)
    # A cutoff inside the data buys at most a mild reparametrization of the
    # tail; require it to earn that complexity (BIC-style, 0.5 log M per tail)
    # or fall back to exponential segments outside the data range entirely.
    snapped, n_tails = _snap_outside_data(best, dmin, dmax)
    if snapped is not None:
        f_snap = -warp_objective(points, values, snapped, params, noise_sq)
        if np.isfinite(f_snap) and f_snap <= best_f + 0.5 * math.log(len(values)) * n_tails:
            return snapped
    return best


def _snap_outside_data(w: WarpSpec, dmin: float, dmax: float):
    lc, uc = w.lower_cutoff, w.upper_cutoff
    n_tails = 0
    if w.has_lower and lc > dmin:
        lc = w.lower_bound + 0.5 * (dmin - w.lower_bound)
        n_tails += 1
    if w.has_upper and uc < dmax:
        uc = w.upper_bound - 0.5 * (w.upper_bound - dmax)
        n_tails += 1
    if n_tails == 0:
        return None, 0
    return WarpSpec(w.lower_bound, w.upper_bound, lc, uc, w.position), n_tails


def fit_warped_gp(points, values, lower_bound: float, upper_bound: float,
                  noise_sq: float = 0.0, rounds: int = 2,
                  n_starts: int = 8) -> WarpedGPModel:
    """Alternating fit of warp hyperparameters and GP hyperparameters.

    Each round runs a derivative-free search over (cutoffs, position) with the
    kernel fixed, then refits the GP on the re-transformed values warm-started
    from the previous optimum.  Both stages maximize the same Jacobian-corrected
    marginal likelihood.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 16:
        raise ValueError(f"need at least 16 values to fit a warp, got {values.size}")
    lb, ub = float(lower_bound), float(upper_bound)
    if math.isfinite(lb) or math.isfinite(ub):
        bad = ~((values > lb) & (values < ub))
        if np.any(bad):
            raise DomainError(
                f"values must lie strictly inside ({lb}, {ub}); "
                f"offending values: {values[bad][:10].tolist()}"
            )
    warp = _initial_warp(values, lb, ub)
    model = gp.fit(gp.TrainingSet(points, transform(warp, values)), noise_sq,
                   n_starts=n_starts)
    for _ in range(max(0, rounds)):
        warp = _search_warp(points, values, lb, ub, warp, model.params, noise_sq)
        model = gp.fit(gp.TrainingSet(points, transform(warp, values)), noise_sq,
                       n_starts=max(2, n_starts // 2), warm=model.params)
    return WarpedGPModel(warp, model)


def fit_warp(points, values, lower_bound: float, upper_bound: float,
             **kwargs) -> WarpSpec:
    """Fitted transform hyperparameters only (see :func:`fit_warped_gp`)."""
    return fit_warped_gp(points, values, lower_bound, upper_bound, **kwargs).warp


def fit_gp_with_warp(points, values, fixed: WarpSpec, noise_sq: float = 0.0,
                     n_starts: int = 8) -> WarpedGPModel:
    """Train the latent GP under a caller-supplied transform (no warp search)."""
    y = transform(fixed, np.asarray(values, dtype=float).ravel())
    model = gp.fit(gp.TrainingSet(points, y), noise_sq, n_starts=n_starts)
    return WarpedGPModel(fixed, model)

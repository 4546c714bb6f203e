"""Gaussian-process regression with a constant mean and Matern 5/2 kernel.

The model interpolates noise-free observations (optionally with a fixed
observation-noise variance) and exposes predictive mean/variance in closed
form:

    mean(x) = mu0 + k(x)^T K^-1 (Y - mu0)
    var(x)  = sigma0^2 - k(x)^T K^-1 k(x)

Hyperparameters ``{mu0, sigma0^2, l_1..l_N}`` are chosen by maximizing the
log marginal likelihood with analytic gradients, from several Sobol-placed
starts in log-scaled hyperparameter boxes.  Models are immutable after
fitting and safe to share across threads for prediction.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from ._accel import matern52_cross
from .errors import NumericalError
from .sampling import sobol_unit

_SQRT5 = math.sqrt(5.0)
_LOG_2PI = math.log(2.0 * math.pi)

#: Jitter ladder applied to the kernel diagonal when a Cholesky factorization
#: fails, in units of trace(K)/M.
_JITTER_START = 1e-12
_JITTER_MAX = 1e-6


@dataclass(frozen=True)
class TrainingSet:
    """Observed inputs (M, N) and one scalar observable per input (M,)."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).ravel()
        if pts.ndim != 2:
            raise ValueError("points must form a 2-D array")
        if pts.shape[0] != vals.size:
            raise ValueError(f"{pts.shape[0]} points but {vals.size} values")
        if pts.shape[0] < 1:
            raise ValueError("training set must not be empty")
        uniq = np.unique(pts, axis=0)
        if uniq.shape[0] != pts.shape[0]:
            raise ValueError("training points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class KernelParams:
    """Constant prior mean, prior variance, per-dimension length scales, noise."""

    mu0: float
    sigma0_sq: float
    length_scales: np.ndarray
    noise_sq: float = 0.0

    def __post_init__(self):
        ls = np.asarray(self.length_scales, dtype=float).ravel()
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "mu0", float(self.mu0))
        object.__setattr__(self, "sigma0_sq", float(self.sigma0_sq))
        object.__setattr__(self, "noise_sq", float(self.noise_sq))
        if not self.sigma0_sq > 0.0:
            raise ValueError("sigma0_sq must be positive")
        if not np.all(ls > 0.0):
            raise ValueError("length scales must be positive")
        if self.noise_sq < 0.0:
            raise ValueError("noise_sq must be non-negative")

    @property
    def dim(self) -> int:
        return self.length_scales.size


def matern52(p, q, params: KernelParams) -> float:
    """Matern 5/2 covariance between two points.

    ``sigma0_sq * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r)`` with
    ``r = sqrt(sum_i ((p_i - q_i) / l_i)^2)``.  The amplitude convention is
    ``sigma0_sq`` so that the predictive variance ``sigma0^2 - k^T K^-1 k``
    recovers the prior variance far from the data.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.size != q.size or p.size != params.dim:
        raise ValueError(
            f"dimension mismatch: p has {p.size}, q has {q.size}, "
            f"length_scales has {params.dim}"
        )
    d = (p - q) / params.length_scales
    r2 = float(d @ d)
    r = math.sqrt(r2)
    return params.sigma0_sq * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * math.exp(-_SQRT5 * r)


def kernel_matrix(points: np.ndarray, params: KernelParams) -> np.ndarray:
    """Gram matrix of the Matern 5/2 kernel (without noise/jitter)."""
    inv_ls = 1.0 / params.length_scales
    return params.sigma0_sq * matern52_cross(points, points, inv_ls)


def cross_kernel(xa: np.ndarray, xb: np.ndarray, params: KernelParams) -> np.ndarray:
    inv_ls = 1.0 / params.length_scales
    return params.sigma0_sq * matern52_cross(xa, xb, inv_ls)


def _cholesky_with_jitter(k_reg: np.ndarray):
    """Lower Cholesky factor of ``k_reg``, escalating diagonal jitter on failure."""
    m = k_reg.shape[0]
    scale = float(np.trace(k_reg)) / m
    try:
        return cholesky(k_reg, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START * scale
    while jitter <= _JITTER_MAX * scale * (1.0 + 1e-12):
        try:
            return cholesky(k_reg + jitter * np.eye(m), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    eigmin = float(np.linalg.eigvalsh(k_reg)[0])
    raise NumericalError(
        "kernel matrix is not positive definite even with jitter "
        f"{_JITTER_MAX * scale:.3e}; smallest eigenvalue ~ {eigmin:.6e}"
    )


@dataclass(frozen=True)
class GPModel:
    """Trained surrogate: training data, hyperparameters, factorized covariance."""

    training: TrainingSet
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_likelihood: float

    @property
    def dim(self) -> int:
        return self.training.dim


def build_model(training: TrainingSet, params: KernelParams) -> GPModel:
    """Factorize the regularized kernel matrix and precompute the solve."""
    if params.dim != training.dim:
        raise ValueError("params dimension does not match training dimension")
    k = kernel_matrix(training.points, params)
    k_reg = k + params.noise_sq * np.eye(training.count)
    chol, jitter = _cholesky_with_jitter(k_reg)
    resid = training.values - params.mu0
    alpha = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * training.count * _LOG_2PI
    )
    return GPModel(training, params, chol, alpha, jitter, lml)


def log_marginal_likelihood(training: TrainingSet, params: KernelParams) -> float:
    """Log marginal likelihood of the training values under the GP prior."""
    return build_model(training, params).log_likelihood


def lml_and_gradient(training: TrainingSet, params: KernelParams):
    """Log marginal likelihood and its gradient in natural hyperparameter space.

    Returns ``(lml, grad)`` with ``grad`` ordered ``[mu0, sigma0_sq,
    l_1, ..., l_N]``.  Used by the fit optimizer; the finite-difference
    consistency of this gradient is part of the module's test contract.
    """
    x = training.points
    m = training.count
    inv_ls = 1.0 / params.length_scales
    r2 = cdist(x * inv_ls, x * inv_ls, "sqeuclidean")
    r = np.sqrt(r2)
    sr = _SQRT5 * r
    expsr = np.exp(-sr)
    corr = (1.0 + sr + (5.0 / 3.0) * r2) * expsr
    reg = params.noise_sq
    k_reg = params.sigma0_sq * corr + reg * np.eye(m)
    chol, jitter = _cholesky_with_jitter(k_reg)
    reg = reg + jitter
    resid = training.values - params.mu0
    alpha = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * m * _LOG_2PI
    )

    kinv_tri, info = dpotri(chol, lower=1)
    if info != 0:
        raise NumericalError(f"dpotri failed with info={info}")
    kinv = np.tril(kinv_tri) + np.tril(kinv_tri, -1).T

    grad = np.empty(2 + params.dim)
    grad[0] = float(np.sum(alpha))
    # d/d sigma0_sq through K = sigma0_sq*C + reg*I
    quad_c = (float(resid @ alpha) - reg * float(alpha @ alpha)) / params.sigma0_sq
    tr_c = (m - reg * float(np.trace(kinv))) / params.sigma0_sq
    grad[1] = 0.5 * (quad_c - tr_c)
    # d/d l_k = 0.5 * sum_ij (alpha alpha^T - Kinv)_ij * G_ij * D_k_ij / l_k^3
    g = params.sigma0_sq * (5.0 / 3.0) * (1.0 + sr) * expsr
    h = (np.outer(alpha, alpha) - kinv) * g
    hx = h @ x
    hsum = h.sum(axis=1)
    quad = 2.0 * (hsum @ (x * x) - np.einsum("ij,ij->j", x, hx))
    grad[2:] = 0.5 * quad / params.length_scales**3
    return lml, grad


def predict_batch(model: GPModel, points: np.ndarray, chunk: int = 4096):
    """Predictive mean and variance at many query points.

    Returns ``(mean, var)`` arrays of shape ``(Q,)``; variance is clamped to
    ``[0, sigma0_sq]`` and snapped to exactly zero below the float noise floor
    (1e-14 of the prior variance), so noise-free interpolation reports a
    genuinely deterministic prediction.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.dim:
        raise ValueError(f"query dimension {pts.shape[1]} != model dimension {model.dim}")
    p = model.params
    inv_ls = 1.0 / p.length_scales
    q = pts.shape[0]
    mean = np.empty(q)
    var = np.empty(q)
    for lo in range(0, q, chunk):
        hi = min(lo + chunk, q)
        kx = p.sigma0_sq * matern52_cross(pts[lo:hi], model.training.points, inv_ls)
        mean[lo:hi] = p.mu0 + kx @ model.alpha
        w = solve_triangular(model.chol, kx.T, lower=True)
        var[lo:hi] = p.sigma0_sq - np.einsum("mq,mq->q", w, w)
    np.clip(var, 0.0, p.sigma0_sq, out=var)
    var[var < 1e-14 * p.sigma0_sq] = 0.0
    return mean, var


def predict_mean_batch(model: GPModel, points: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Predictive mean only; skips the triangular solve the variance needs."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.dim:
        raise ValueError(f"query dimension {pts.shape[1]} != model dimension {model.dim}")
    p = model.params
    inv_ls = 1.0 / p.length_scales
    mean = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        kx = p.sigma0_sq * matern52_cross(pts[lo:hi], model.training.points, inv_ls)
        mean[lo:hi] = p.mu0 + kx @ model.alpha
    return mean


def predict(model: GPModel, p_star) -> tuple:
    """Predictive ``(mean, variance)`` at a single point."""
    mean, var = predict_batch(model, np.asarray(p_star, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


def _fit_degenerate(training: TrainingSet, noise_sq: float) -> GPModel:
    """Single observation or constant values: prior mean recovery fallback."""
    mu0 = float(np.mean(training.values))
    widths = np.ptp(training.points, axis=0)
    scales = np.where(widths > 0, widths, 1.0)
    params = KernelParams(mu0, 1e-12, scales, noise_sq)
    return build_model(training, params)


def _objective_factory(training: TrainingSet, noise_sq: float):
    n = training.dim

    def neg_lml_and_grad(z):
        mu0 = z[0]
        sigma0_sq = math.exp(z[1])
        ls = np.exp(z[2:])
        try:
            params = KernelParams(mu0, sigma0_sq, ls, noise_sq)
            lml, grad = lml_and_gradient(training, params)
        except (NumericalError, FloatingPointError, OverflowError):
            return 1e25, np.zeros(n + 2)
        gz = np.empty(n + 2)
        gz[0] = -grad[0]
        gz[1] = -grad[1] * sigma0_sq
        gz[2:] = -grad[2:] * ls
        return -lml, gz

    return neg_lml_and_grad


def fit(
    training: TrainingSet,
    noise_sq: float = 0.0,
    n_starts: int = 8,
    warm: KernelParams | None = None,
) -> GPModel:
    """Fit hyperparameters by multi-start likelihood maximization.

    Starts are screened with a short bounded L-BFGS run and the best two are
    polished; the returned model's likelihood is at least that of every start
    point.  Fully deterministic (Sobol-placed starts, no wall-clock state).
    ``warm`` prepends a start at previously found hyperparameters, which is
    how incremental refits reuse earlier optima.
    """
    if noise_sq < 0.0:
        raise ValueError("noise_sq must be non-negative")
    if training.count == 1:
        return _fit_degenerate(training, noise_sq)
    y = training.values
    var_y = float(np.var(y))
    mean_y = float(np.mean(y))
    if var_y < 1e-20 * max(1.0, mean_y * mean_y):
        return _fit_degenerate(training, noise_sq)

    widths = np.ptp(training.points, axis=0)
    widths = np.maximum(widths, 1e-8 * (1.0 + np.abs(training.points).max(axis=0)))
    span_y = max(float(np.ptp(y)), math.sqrt(var_y))

    bounds = [(mean_y - 10.0 * span_y, mean_y + 10.0 * span_y)]
    bounds.append((math.log(1e-6 * var_y), math.log(1e3 * var_y)))
    bounds.extend((math.log(1e-3 * w), math.log(1e3 * w)) for w in widths)

    starts = []
    if warm is not None:
        mu0_w = min(max(warm.mu0, bounds[0][0]), bounds[0][1])
        z = np.concatenate(
            ([mu0_w, math.log(warm.sigma0_sq)], np.log(warm.length_scales))
        )
        z[1:] = np.clip(z[1:], [b[0] for b in bounds[1:]], [b[1] for b in bounds[1:]])
        starts.append(z)
    starts.append(np.concatenate(([mean_y, math.log(var_y)], np.log(widths))))
    n_sobol = max(0, n_starts - len(starts))
    if n_sobol:
        u = sobol_unit(training.dim + 1, n_sobol)
        lo = np.concatenate(([math.log(1e-2 * var_y)], np.log(1e-2 * widths)))
        hi = np.concatenate(([math.log(1e2 * var_y)], np.log(1e1 * widths)))
        for row in lo + u * (hi - lo):
            starts.append(np.concatenate(([mean_y], row)))

    objective = _objective_factory(training, noise_sq)
    candidates = []
    screened = []
    for z0 in starts:
        candidates.append((objective(z0)[0], z0))
        res = minimize(
            objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 15},
        )
        screened.append((res.fun, res.x))
        candidates.append((res.fun, res.x))
    screened.sort(key=lambda t: t[0])
    for f0, z0 in screened[:2]:
        res = minimize(
            objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": 120},
        )
        candidates.append((res.fun, res.x))
    best = min(candidates, key=lambda t: t[0])
    z = best[1]
    params = KernelParams(z[0], math.exp(z[1]), np.exp(z[2:]), noise_sq)
    return build_model(training, params)


MODEL_FORMAT_VERSION = 1


def model_to_arrays(model: GPModel, prefix: str = "") -> dict:
    """Flatten a model into named arrays for a versioned npz container."""
    return {
        prefix + "points": model.training.points,
        prefix + "values": model.training.values,
        prefix + "mu0": np.float64(model.params.mu0),
        prefix + "sigma0_sq": np.float64(model.params.sigma0_sq),
        prefix + "length_scales": model.params.length_scales,
        prefix + "noise_sq": np.float64(model.params.noise_sq),
        prefix + "jitter": np.float64(model.jitter),
    }


def model_from_arrays(data, prefix: str = "") -> GPModel:
    training = TrainingSet(data[prefix + "points"], data[prefix + "values"])
    params = KernelParams(
        float(data[prefix + "mu0"]),
        float(data[prefix + "sigma0_sq"]),
        data[prefix + "length_scales"],
        float(data[prefix + "noise_sq"]),
    )
    jitter = float(data[prefix + "jitter"])
    k_reg = kernel_matrix(training.points, params) + (params.noise_sq + jitter) * np.eye(
        training.count
    )
    chol = cholesky(k_reg, lower=True)
    resid = training.values - params.mu0
    alpha = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(chol))))
        - 0.5 * training.count * _LOG_2PI
    )
    return GPModel(training, params, chol, alpha, jitter, lml)


def save_model(model: GPModel, path, provenance: dict | None = None) -> None:
    """Write a versioned binary container; round-trips predictions bit-for-bit.

    ``provenance`` entries (config hash, seed) are stored alongside the data
    so every artifact records what produced it.
    """
    arrays = {"format_version": np.int64(MODEL_FORMAT_VERSION)}
    arrays.update(model_to_arrays(model))
    for key, value in (provenance or {}).items():
        arrays[f"provenance_{key}"] = np.array(str(value))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> GPModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        return model_from_arrays(data)

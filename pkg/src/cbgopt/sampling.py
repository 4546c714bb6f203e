"""Deterministic sample generation: Sobol training sets and MVN tolerance draws.

All randomness is keyed by explicit seeds; identical arguments reproduce
byte-identical sample arrays.  The Sobol sequence is the standard unscrambled
construction (Joe-Kuo direction numbers via scipy); the point at the origin of
the unit cube is dropped and points are taken from index 1 so that no training
sample sits exactly on the lower domain corner.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DomainError

MAX_SOBOL_DIM = int(qmc.Sobol.MAXDIM)

#: Default half-width of a surrogate training box, in units of the
#: per-parameter fabrication standard deviation.
DEFAULT_TRAIN_SIGMA = 5.0
#: Wider default for the grating pitch, whose tiny tolerance would otherwise
#: pin it to a sliver of parameter space during robust re-optimization.
PITCH_TRAIN_SIGMA = 25.0
PITCH_NAME = "P"


def _as_vector(x) -> np.ndarray:
    if hasattr(x, "as_array"):
        x = x.as_array()
    v = np.asarray(x, dtype=float).ravel()
    return v


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box in parameter space (units per dimension as labelled)."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", _as_vector(self.lower))
        object.__setattr__(self, "upper", _as_vector(self.upper))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper dimension mismatch")
        if not np.all(self.lower < self.upper):
            raise ValueError("domain requires lower_i < upper_i for every dimension")
        if self.names:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.lower.size:
                raise ValueError("names length does not match dimension")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lower - atol) & (pts <= self.upper + atol), axis=1)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width


@dataclass(frozen=True)
class ToleranceSpec:
    """Per-parameter fabrication standard deviations (nm); diagonal MVN model."""

    sigma: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_vector(self.sigma))
        if not np.all(self.sigma > 0.0):
            raise ValueError("every tolerance must be strictly positive")
        if self.names:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.sigma.size:
                raise ValueError("names length does not match sigma")

    @property
    def dim(self) -> int:
        return self.sigma.size

    def scaled(self, factor: float) -> "ToleranceSpec":
        return ToleranceSpec(self.sigma * float(factor), self.names)


def sobol_unit(dim: int, count: int) -> np.ndarray:
    """Unscrambled Sobol points (indices 1..count) in the open-ish unit cube."""
    if dim < 1:
        raise DomainError("sobol dimension must be >= 1")
    if dim > MAX_SOBOL_DIM:
        raise DomainError(
            f"sobol dimension {dim} exceeds the direction-number table ({MAX_SOBOL_DIM})"
        )
    if count < 1:
        raise ValueError("count must be >= 1")
    engine = qmc.Sobol(d=dim, scramble=False)
    engine.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # balance warning for non power-of-two counts
        return engine.random(count)


def sobol(dim: int, count: int, domain: BoxDomain) -> np.ndarray:
    """Deterministic low-discrepancy points scaled into ``domain``.

    Returns a ``(count, dim)`` array.  The same arguments always produce the
    identical array.
    """
    if dim != domain.dim:
        raise ValueError(f"dim {dim} does not match domain dimension {domain.dim}")
    return domain.from_unit(sobol_unit(dim, count))


def default_training_scales(tol: ToleranceSpec) -> np.ndarray:
    scales = np.full(tol.dim, DEFAULT_TRAIN_SIGMA)
    for i, name in enumerate(tol.names):
        if name == PITCH_NAME:
            scales[i] = PITCH_TRAIN_SIGMA
    return scales


def training_domain(center, tol: ToleranceSpec, scales=None) -> BoxDomain:
    """Box ``center_i +- scales_i * sigma_i`` used to train surrogates.

    ``scales`` defaults to 5 standard deviations per parameter and 25 for the
    grating pitch (identified by name ``P`` in ``tol.names``).
    """
    c = _as_vector(center)
    if c.size != tol.dim:
        raise ValueError("center dimension does not match tolerances")
    if scales is None:
        scales = default_training_scales(tol)
    else:
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (tol.dim,)).copy()
    if not np.all(scales > 0.0):
        raise ValueError("training-domain scales must be strictly positive")
    half = scales * tol.sigma
    return BoxDomain(c - half, c + half, tol.names)


def mvn_sample(mean, tol: ToleranceSpec, count: int, seed: int) -> np.ndarray:
    """Independent draws from ``N(mean, diag(sigma^2))`` as a ``(count, dim)`` array.

    Uses a counter-based Philox generator so streams are reproducible and can
    be re-keyed for parallel fills.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    mu = _as_vector(mean)
    if mu.size != tol.dim:
        raise ValueError("mean dimension does not match tolerances")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    z = rng.standard_normal((count, tol.dim))
    return mu + z * tol.sigma

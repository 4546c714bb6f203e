"""Scalar target combining fiber efficiency, Purcell factor, and wavelength.

The three summands are individually bounded and weighted:

    target = w1 * (1 - eta) + w2 * (1 - S(F_P)) + w3 * c * (lambda - lambda_des)^2

``S`` is a scaled-and-shifted logistic curve calibrated so that S(1) = 0.1 and
S(20) = 0.9 (hence the negative steepness ``a``: S must increase with the
Purcell factor).  The parabola weight defaults to 1e-3 per nm^2, i.e. a 10 nm
detuning costs 0.1.  Lower is better; zero is the ideal device limit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

#: Logistic calibration solving S(1) = 0.1, S(20) = 0.9.
DEFAULT_SIGMOID_B = 10.5
DEFAULT_SIGMOID_A = -math.log(9.0) / 9.5
DEFAULT_PARABOLA_C = 1e-3  # 1/nm^2
DEFAULT_MODE_WINDOW_NM = 50.0


@dataclass(frozen=True)
class ObjectiveSpec:
    """Target-function configuration (wavelengths in nm)."""

    lambda_des: float
    fp_des: float = 20.0
    w1: float = 2.0
    w2: float = 1.0
    w3: float = 1.0
    sigmoid_a: float = DEFAULT_SIGMOID_A
    sigmoid_b: float = DEFAULT_SIGMOID_B
    parabola_c: float = DEFAULT_PARABOLA_C
    mode_window_nm: float = DEFAULT_MODE_WINDOW_NM

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ValueError("weights must be non-negative")
        if self.sigmoid_a >= 0:
            raise ValueError("sigmoid_a must be negative so S increases with F_P")
        if self.parabola_c <= 0:
            raise ValueError("parabola_c must be positive")
        if not (self._sigmoid(20.0) > 0.8 and self._sigmoid(1.0) < 0.2):
            raise ValueError("sigmoid calibration must satisfy S(20) > 0.8 and S(1) < 0.2")

    def _sigmoid(self, x: float) -> float:
        return 1.0 / (1.0 + math.exp(self.sigmoid_a * (x - self.sigmoid_b)))


@dataclass(frozen=True)
class ModeResult:
    """One eigenmode's operating point: wavelength, Purcell factor, efficiencies."""

    lambda_c: float
    fp: float
    eta_smf: float
    eta_na08: float = float("nan")

    def __post_init__(self):
        if self.fp < 0:
            raise ValueError("Purcell factor must be non-negative")
        if not 0.0 <= self.eta_smf <= 1.0:
            raise DomainError(f"eta_smf must be in [0, 1], got {self.eta_smf}")


def f1(eta_smf: float) -> float:
    """Coupling-loss term ``1 - eta``: 0 means perfect coupling."""
    if not 0.0 <= eta_smf <= 1.0:
        raise DomainError(f"eta_smf must be in [0, 1], got {eta_smf}")
    return 1.0 - eta_smf


def f2(fp: float, spec: ObjectiveSpec) -> float:
    """Purcell shortfall ``1 - S(F_P)``; strictly decreasing in F_P."""
    return 1.0 - spec._sigmoid(fp)


def f3(lam: float, spec: ObjectiveSpec) -> float:
    """Detuning parabola; dominates the target far from the design wavelength."""
    d = lam - spec.lambda_des
    return spec.parabola_c * d * d


def target(mode: ModeResult, spec: ObjectiveSpec) -> float:
    """Weighted sum of the three terms; non-negative, 0 only in the ideal limit."""
    return (
        spec.w1 * f1(mode.eta_smf)
        + spec.w2 * f2(mode.fp, spec)
        + spec.w3 * f3(mode.lambda_c, spec)
    )


def target_arrays(lambda_c, fp, eta_smf, spec: ObjectiveSpec) -> np.ndarray:
    """Vectorized target for batch evaluation (no per-mode validation)."""
    lam = np.asarray(lambda_c, dtype=float)
    fpv = np.asarray(fp, dtype=float)
    eta = np.asarray(eta_smf, dtype=float)
    s = 1.0 / (1.0 + np.exp(spec.sigmoid_a * (fpv - spec.sigmoid_b)))
    d = lam - spec.lambda_des
    return spec.w1 * (1.0 - eta) + spec.w2 * (1.0 - s) + spec.w3 * spec.parabola_c * d * d


def best_mode(modes, spec: ObjectiveSpec):
    """Mode minimizing the target and its value.

    Modes outside the acceptance window ``|lambda - lambda_des| <= window``
    are ignored (unless that would discard every mode).  Ties break toward the
    smallest detuning, then list order.
    """
    modes = list(modes)
    if not modes:
        raise ValueError("best_mode requires a non-empty mode list")
    window = spec.mode_window_nm
    eligible = [m for m in modes if abs(m.lambda_c - spec.lambda_des) <= window]
    if not eligible:
        eligible = modes
    best = None
    best_key = None
    for i, m in enumerate(eligible):
        key = (target(m, spec), abs(m.lambda_c - spec.lambda_des), i)
        if best_key is None or key < best_key:
            best, best_key = m, key
    return best, best_key[0]

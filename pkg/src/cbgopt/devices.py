"""Device geometry, reference designs, and synthetic stand-in oracles.

The toy cavity is a deterministic, smooth, microsecond-class black box with
the qualitative structure of the real device physics: a resonance wavelength
that shifts linearly with geometry, a Purcell factor peaking on resonance and
degraded by spacer mismatch, and a bounded fiber efficiency shaped by mode
matching, contact absorption, and detuning.  Every constant is invented and
lives in :class:`ToyConfig`; no physical fidelity is claimed.  It exists so
the optimization/robustness pipeline has a cheap, nontrivial target with a
resonance, bounded outputs, and parameter couplings.
"""

from dataclasses import dataclass, replace

import numpy as np

from .sampling import ToleranceSpec

PARAM_NAMES = ("R", "W", "P", "t_cbg", "t_sio2", "t_hsq", "t_ito")

#: Assumed fabrication accuracies (nm) per parameter, in PARAM_NAMES order.
FAB_TOLERANCES_NM = (10.0, 10.0, 1.0, 5.0, 10.0, 10.0, 5.0)


@dataclass(frozen=True)
class DesignPoint:
    """One candidate device: the seven geometry parameters in nm."""

    R: float
    W: float
    P: float
    t_cbg: float
    t_sio2: float
    t_hsq: float
    t_ito: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(vals > 0):
            raise ValueError(f"all geometry parameters must be positive: {self.as_dict()}")
        if self.W >= self.P:
            raise ValueError(f"gap width W={self.W} must be below the period P={self.P}")
        if self.t_hsq < self.t_cbg:
            raise ValueError(
                f"planarization requires t_hsq >= t_cbg ({self.t_hsq} < {self.t_cbg})"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.R, self.W, self.P, self.t_cbg, self.t_sio2,
                         self.t_hsq, self.t_ito], dtype=float)

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self.as_array().tolist()))

    @classmethod
    def from_array(cls, vec) -> "DesignPoint":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} parameters, got {vec.size}")
        return cls(*vec.tolist())

    @classmethod
    def from_dict(cls, d: dict) -> "DesignPoint":
        return cls(**{k: float(d[k]) for k in PARAM_NAMES})


def fab_tolerances() -> ToleranceSpec:
    return ToleranceSpec(np.array(FAB_TOLERANCES_NM), PARAM_NAMES)


#: Optimized designs (geometry in nm) used as reference centers.
REFERENCE_DESIGNS = {
    "NIR_I": DesignPoint(201, 114, 318, 261, 136, 702, 50),
    "OB_I": DesignPoint(309, 160, 482, 272, 310, 947, 50),
    "CB_I": DesignPoint(410, 133, 593, 302, 388, 768, 50),
    "NIR_II": DesignPoint(209, 78, 309, 229, 135, 540, 64),
    "OB_II": DesignPoint(328, 102, 470, 239, 345, 499, 57),
    "CB_II": DesignPoint(418, 110, 594, 287, 418, 759, 57),
}

#: Relative permittivities of the device materials (electrostatics).
PERMITTIVITY = {"GaAs": 12.9, "InP": 12.5, "SiO2": 3.9, "HSQ": 3.0}


@dataclass(frozen=True)
class ToyConfig:
    """All constants of the synthetic cavity oracle (invented, documented here).

    The reference geometry defaults to the NIR_I design; ``lambda0`` is its
    resonance.  Wavelength sensitivities are fractional (per fractional
    parameter change), widths are in nm.
    """

    lambda0: float = 930.3
    r0: float = 201.0
    w0: float = 114.0
    p0: float = 318.0
    t_cbg0: float = 261.0
    t_sio20: float = 136.0
    hsq_gap0: float = 441.0  # t_hsq - t_cbg at the reference design
    # resonance-shift coefficients
    lam_r: float = 0.9
    lam_p: float = 0.5
    lam_t: float = 0.35
    lam_w: float = -0.1
    # Purcell resonance
    f_peak: float = 25.0
    purcell_halfwidth: float = 18.0
    sio2_width: float = 80.0
    hsq_gap_width: float = 220.0
    # efficiency factors
    eta_max: float = 0.9
    rho_r: float = 120.0
    rho_w: float = 160.0
    ito_abs_len: float = 650.0
    eta_halfwidth: float = 140.0
    na08_factor: float = 1.08

    def at_design_wavelength(self, lambda_des: float) -> "ToyConfig":
        return replace(self, lambda0=lambda_des)


def toy_cavity_batch(points: np.ndarray, config: ToyConfig = ToyConfig()):
    """Vectorized toy oracle: ``(lambda_c, fp, eta_smf, eta_na08)`` arrays."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    c = config
    r, w, per, t, ts, th, ti = (p[:, i] for i in range(7))
    lam = c.lambda0 * (
        1.0
        + c.lam_r * (r - c.r0) / c.r0
        + c.lam_p * (per - c.p0) / c.p0
        + c.lam_t * (t - c.t_cbg0) / c.t_cbg0
        + c.lam_w * (w - c.w0) / c.w0
    )
    detune = lam - c.lambda0
    lorentz_q = 1.0 / (1.0 + (detune / c.purcell_halfwidth) ** 2)
    g_sio2 = np.exp(-(((ts - c.t_sio20) / c.sio2_width) ** 2))
    g_gap = np.exp(-((((th - t) - c.hsq_gap0) / c.hsq_gap_width) ** 2))
    fp = 1.0 + c.f_peak * lorentz_q * g_sio2 * g_gap
    mode_match = np.exp(-(((r - c.r0) / c.rho_r) ** 2) - ((w - c.w0) / c.rho_w) ** 2)
    absorb = np.exp(-ti / c.ito_abs_len)
    lorentz_eta = 1.0 / (1.0 + (detune / c.eta_halfwidth) ** 2)
    eta = c.eta_max * mode_match * absorb * lorentz_eta
    eta_na = np.minimum(1.0, c.na08_factor * eta)
    return lam, fp, eta, eta_na


def toy_cavity(p, config: ToyConfig = ToyConfig()):
    """Scalar toy oracle for a single design point."""
    vec = p.as_array() if isinstance(p, DesignPoint) else np.asarray(p, dtype=float)
    lam, fp, eta, eta_na = toy_cavity_batch(vec.reshape(1, -1), config)
    return float(lam[0]), float(fp[0]), float(eta[0]), float(eta_na[0])


def toy_oracle(config: ToyConfig = ToyConfig()):
    """Batch oracle closure returning the three surrogate quantities."""

    def oracle(points: np.ndarray):
        lam, fp, eta, _ = toy_cavity_batch(points, config)
        return lam, fp, eta

    return oracle


@dataclass(frozen=True)
class TwoPeakConfig:
    """Synthetic efficiency landscape with a narrow tall peak and a broad lower one.

    Only the disc radius matters; the Purcell factor and wavelength are held
    constant so the optimization target is driven by the efficiency term alone.
    Used to demonstrate that robust optimization trades peak height for width
    once tolerances grow.
    """

    center_r: float = 300.0
    offset: float = 75.0
    narrow_amp: float = 0.93
    narrow_width: float = 14.0
    broad_amp: float = 0.63
    broad_width: float = 60.0
    baseline: float = 0.02
    fp_const: float = 25.0
    lambda_const: float = 930.0

    @property
    def narrow_r(self) -> float:
        return self.center_r - self.offset

    @property
    def broad_r(self) -> float:
        return self.center_r + self.offset

    def eta_of_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return (
            self.baseline
            + self.narrow_amp * np.exp(-(((r - self.narrow_r) / self.narrow_width) ** 2))
            + self.broad_amp * np.exp(-(((r - self.broad_r) / self.broad_width) ** 2))
        )


def two_peak_oracle(config: TwoPeakConfig = TwoPeakConfig()):
    def oracle(points: np.ndarray):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        eta = config.eta_of_r(p[:, 0])
        lam = np.full(p.shape[0], config.lambda_const)
        fp = np.full(p.shape[0], config.fp_const)
        return lam, fp, eta

    return oracle

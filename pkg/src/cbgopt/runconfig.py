"""Run-configuration parsing, validation, and oracle construction.

Configs are JSON with explicit seeds (no wall-clock defaults) and are hashed
(sha256 of the canonical effective config) so every artifact records exactly
which inputs produced it.  Validation happens before any compute: referenced
files must exist, tolerance/domain combinations must keep three standard
deviations of the manufacturing distribution inside the trained region.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import devices, objective
from .devices import PARAM_NAMES, DesignPoint, ToyConfig
from .errors import ConfigError
from .sampling import ToleranceSpec, default_training_scales

TABLE_COLUMNS = PARAM_NAMES + ("lambda_c", "fp", "eta_smf")


def load_raw_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def require_seed(cfg: dict) -> int:
    if "seed" not in cfg:
        raise ConfigError("config must declare an explicit integer 'seed'")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"'seed' must be an integer, got {seed!r}")
    return seed


def get_center(cfg: dict) -> DesignPoint:
    center = cfg.get("center")
    if center is None:
        raise ConfigError("config must declare 'center' (a design or a reference name)")
    if isinstance(center, str):
        if center not in devices.REFERENCE_DESIGNS:
            raise ConfigError(
                f"unknown reference design {center!r}; "
                f"known: {sorted(devices.REFERENCE_DESIGNS)}"
            )
        return devices.REFERENCE_DESIGNS[center]
    try:
        return DesignPoint.from_dict(center)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'center': {exc}") from exc


def get_tolerances(cfg: dict) -> ToleranceSpec:
    tol = cfg.get("tolerances")
    if tol is None:
        return devices.fab_tolerances()
    if not isinstance(tol, dict):
        raise ConfigError("'tolerances' must map parameter names to sigmas (nm)")
    missing = [n for n in PARAM_NAMES if n not in tol]
    if missing:
        raise ConfigError(f"'tolerances' missing parameters {missing}")
    try:
        return ToleranceSpec(np.array([float(tol[n]) for n in PARAM_NAMES]), PARAM_NAMES)
    except ValueError as exc:
        raise ConfigError(f"invalid tolerances: {exc}") from exc


def get_objective_spec(cfg: dict) -> objective.ObjectiveSpec:
    obj = cfg.get("objective")
    if obj is None or "lambda_des" not in obj:
        raise ConfigError("config must declare 'objective.lambda_des' (nm)")
    weights = obj.get("weights")
    if weights is not None and len(weights) != 3:
        raise ConfigError("'objective.weights' must be [w1, w2, w3]")
    try:
        spec = objective.ObjectiveSpec(
            lambda_des=float(obj["lambda_des"]),
            fp_des=float(obj.get("fp_des", 20.0)),
            w1=float(weights[0]) if weights else 2.0,
            w2=float(weights[1]) if weights else 1.0,
            w3=float(weights[2]) if weights else 1.0,
            sigmoid_a=float(obj.get("sigmoid_a", objective.DEFAULT_SIGMOID_A)),
            sigmoid_b=float(obj.get("sigmoid_b", objective.DEFAULT_SIGMOID_B)),
            parabola_c=float(obj.get("parabola_c", objective.DEFAULT_PARABOLA_C)),
            mode_window_nm=float(obj.get("mode_window_nm", objective.DEFAULT_MODE_WINDOW_NM)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid objective: {exc}") from exc
    return spec


class ExternalTable:
    """Lookup-only oracle over precomputed evaluations (exact row match)."""

    def __init__(self, path):
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"external table not found: {p}")
        rows = np.genfromtxt(p, delimiter=",", names=True, dtype=float, comments="#")
        names = rows.dtype.names or ()
        missing = [c for c in TABLE_COLUMNS if c not in names]
        if missing:
            raise ConfigError(f"external table missing columns {missing}")
        params = np.stack([rows[n] for n in PARAM_NAMES], axis=-1).reshape(-1, 7)
        outs = np.stack(
            [rows["lambda_c"], rows["fp"], rows["eta_smf"]], axis=-1
        ).reshape(-1, 3)
        keys = [tuple(row) for row in params]
        if len(set(keys)) != len(keys):
            raise ConfigError("external table contains duplicate parameter rows")
        self._map = dict(zip(keys, outs))

    def __call__(self, points: np.ndarray):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full((pts.shape[0], 3), np.nan)
        for i, row in enumerate(pts):
            hit = self._map.get(tuple(row))
            if hit is not None:
                out[i] = hit
        return out[:, 0], out[:, 1], out[:, 2]


def get_toy_config(cfg: dict) -> ToyConfig:
    oracle_cfg = cfg.get("oracle", {"kind": "toy"})
    overrides = {k: v for k, v in oracle_cfg.items() if k not in ("kind", "path")}
    try:
        return ToyConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(f"invalid toy-oracle overrides: {exc}") from exc


def get_oracle(cfg: dict):
    """Batch oracle ``points -> (lambda_c, fp, eta_smf)`` from the config."""
    oracle_cfg = cfg.get("oracle", {"kind": "toy"})
    kind = oracle_cfg.get("kind", "toy")
    if kind == "toy":
        return devices.toy_oracle(get_toy_config(cfg))
    if kind == "table":
        if "path" not in oracle_cfg:
            raise ConfigError("table oracle requires 'oracle.path'")
        return ExternalTable(oracle_cfg["path"])
    raise ConfigError(f"unknown oracle kind {kind!r} (expected 'toy' or 'table')")


@dataclass(frozen=True)
class FreeParameterization:
    """Maps a low-dimensional search vector onto full design vectors.

    Supports the gap parameterization ``t_hsq_gap = t_hsq - t_cbg`` and fixed
    parameters, so published-style optimization domains can be used verbatim.
    """

    free_names: tuple
    lower: np.ndarray
    upper: np.ndarray
    fixed: dict

    def assemble(self, vec: np.ndarray) -> np.ndarray:
        vals = dict(self.fixed)
        vals.update(zip(self.free_names, np.asarray(vec, dtype=float).tolist()))
        if "t_hsq_gap" in vals:
            vals["t_hsq"] = vals["t_cbg"] + vals.pop("t_hsq_gap")
        missing = [n for n in PARAM_NAMES if n not in vals]
        if missing:
            raise ConfigError(f"optimization domain leaves parameters {missing} undefined")
        return np.array([vals[n] for n in PARAM_NAMES])

    def assemble_batch(self, vecs: np.ndarray) -> np.ndarray:
        return np.stack([self.assemble(v) for v in np.atleast_2d(vecs)])


def get_optimize_parameterization(cfg: dict) -> FreeParameterization:
    opt = cfg.get("optimize")
    if not opt or "domain" not in opt:
        raise ConfigError("optimize requires 'optimize.domain' parameter ranges")
    domain_cfg = opt["domain"]
    fixed = {k: float(v) for k, v in opt.get("fixed", {}).items()}
    allowed = set(PARAM_NAMES) | {"t_hsq_gap"}
    names, lo, hi = [], [], []
    for name, rng in domain_cfg.items():
        if name not in allowed:
            raise ConfigError(f"unknown domain parameter {name!r}")
        if not (isinstance(rng, (list, tuple)) and len(rng) == 2 and rng[0] < rng[1]):
            raise ConfigError(f"domain for {name!r} must be [lower, upper] with lower < upper")
        names.append(name)
        lo.append(float(rng[0]))
        hi.append(float(rng[1]))
    covered = set(names) | set(fixed)
    if "t_hsq_gap" in covered:
        covered.discard("t_hsq_gap")
        covered.add("t_hsq")
    missing = [n for n in PARAM_NAMES if n not in covered]
    if missing:
        raise ConfigError(f"optimization domain must cover parameters {missing}")
    return FreeParameterization(tuple(names), np.array(lo), np.array(hi), fixed)


def validate_sigma_rule(cfg: dict) -> None:
    """Reject tolerance/domain combinations breaking the 3-sigma-inside rule."""
    tol = get_tolerances(cfg)
    rb = cfg.get("robustness", {})
    scales = rb.get("training_scales")
    if scales is not None:
        scales = np.broadcast_to(np.asarray(scales, dtype=float), (tol.dim,))
    else:
        scales = default_training_scales(tol)
    if np.any(scales < 3.0):
        raise ConfigError(
            "training_scales must be at least 3 so the analysis distribution "
            "stays inside the trained domain"
        )
    ro = cfg.get("robust_optimize", {})
    mu_sigma = ro.get("mu_bounds_sigma")
    if mu_sigma is not None:
        mu = np.broadcast_to(np.asarray(mu_sigma, dtype=float), (tol.dim,))
        if np.any(mu + 3.0 > scales):
            raise ConfigError(
                "mu_bounds_sigma + 3 exceeds the training scales; widen "
                "robustness.training_scales or tighten the bounds"
            )

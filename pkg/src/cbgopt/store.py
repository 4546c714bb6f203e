"""Versioned binary containers for surrogate models and bundles.

Containers are numpy ``npz`` archives carrying the training data and
hyperparameters; factorizations are rebuilt deterministically on load, so a
round trip reproduces predictions bit-for-bit on the writing machine.
"""

import math

import numpy as np

from . import gp, warp
from .robustness import SurrogateBundle
from .sampling import BoxDomain, ToleranceSpec

BUNDLE_FORMAT_VERSION = 1

_WARP_FIELDS = ("lower_bound", "upper_bound", "lower_cutoff", "upper_cutoff", "position")


def _warp_to_arrays(w: warp.WarpSpec, prefix: str) -> dict:
    return {prefix + f: np.float64(getattr(w, f)) for f in _WARP_FIELDS}


def _warp_from_arrays(data, prefix: str) -> warp.WarpSpec:
    return warp.WarpSpec(*(float(data[prefix + f]) for f in _WARP_FIELDS))


def save_bundle(bundle: SurrogateBundle, path, provenance: dict | None = None) -> None:
    arrays = {"format_version": np.int64(BUNDLE_FORMAT_VERSION)}
    for key, value in (provenance or {}).items():
        arrays[f"provenance_{key}"] = np.array(str(value))
    arrays.update(gp.model_to_arrays(bundle.lambda_model, "lam_"))
    arrays.update(gp.model_to_arrays(bundle.fp_model.gp_model, "fp_"))
    arrays.update(_warp_to_arrays(bundle.fp_model.warp, "fp_warp_"))
    arrays.update(gp.model_to_arrays(bundle.eta_model.gp_model, "eta_"))
    arrays.update(_warp_to_arrays(bundle.eta_model.warp, "eta_warp_"))
    arrays["domain_lower"] = bundle.domain.lower
    arrays["domain_upper"] = bundle.domain.upper
    arrays["names"] = np.array(bundle.domain.names or (), dtype="U16")
    arrays["center"] = bundle.center
    arrays["tol_sigma"] = bundle.tol.sigma
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_bundle(path) -> SurrogateBundle:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != BUNDLE_FORMAT_VERSION:
            raise ValueError(f"unsupported bundle format version {version}")
        names = tuple(str(s) for s in data["names"])
        domain = BoxDomain(data["domain_lower"], data["domain_upper"], names)
        tol = ToleranceSpec(data["tol_sigma"], names)
        return SurrogateBundle(
            lambda_model=gp.model_from_arrays(data, "lam_"),
            fp_model=warp.WarpedGPModel(
                _warp_from_arrays(data, "fp_warp_"), gp.model_from_arrays(data, "fp_")
            ),
            eta_model=warp.WarpedGPModel(
                _warp_from_arrays(data, "eta_warp_"), gp.model_from_arrays(data, "eta_")
            ),
            domain=domain,
            center=np.asarray(data["center"], dtype=float),
            tol=tol,
        )

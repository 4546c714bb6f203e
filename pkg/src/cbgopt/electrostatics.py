"""Electrostatics of the contacted device: analytic stack and axisymmetric FD solve.

The device is a cylindrical capacitor: gold plane below, transparent contact
plane above, with the SiO2 spacer, the etched grating slab (semiconductor
rings embedded in spin-on dielectric), and the planarizing dielectric in
between.  Both contacts are treated as equipotentials, all materials as
constant permittivities, so the potential solves ``div(eps grad phi) = 0`` in
cylindrical (r, z) coordinates.

The solver is a conservative cell-centered finite-volume scheme on a
non-uniform rectilinear grid whose faces are snapped to every material
boundary; face conductances use the series (harmonic) combination of the two
half-cell resistances, which reproduces planar layered stacks exactly.  The
linear system is solved with a sparse direct factorization, so discrete flux
conservation holds to solver roundoff.

Units: geometry in nm, bias in volts; fields reported in kV/cm
(1 V/nm = 1e4 kV/cm).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from .devices import PERMITTIVITY, DesignPoint
from .errors import NumericalError

V_PER_NM_TO_KV_PER_CM = 1e4
DEFAULT_RADIUS_NM = 7000.0
DEFAULT_N_RINGS = 6


@dataclass(frozen=True)
class LayerStack:
    """Series dielectric layers between two equipotential plates."""

    thicknesses: np.ndarray  # nm
    eps_r: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thicknesses, dtype=float).ravel()
        e = np.asarray(self.eps_r, dtype=float).ravel()
        if t.size == 0:
            raise ValueError("layer stack must not be empty")
        if t.size != e.size:
            raise ValueError("thicknesses and permittivities differ in length")
        if not np.all(t > 0):
            raise ValueError("layer thicknesses must be positive")
        if not np.all(e >= 1.0):
            raise ValueError("relative permittivities must be >= 1")
        object.__setattr__(self, "thicknesses", t)
        object.__setattr__(self, "eps_r", e)


def analytic_stack_field(layers: LayerStack, probe_layer: int, u_volts: float) -> float:
    """Field in one layer of an infinite plate capacitor, in kV/cm.

    ``E_probe = U / (eps_probe * sum_j t_j / eps_j)``; exactly linear in U and
    invariant under splitting any layer into equal-permittivity sublayers.
    """
    n = layers.thicknesses.size
    if not -n <= probe_layer < n:
        raise IndexError(f"probe layer {probe_layer} out of range for {n} layers")
    series = float(np.sum(layers.thicknesses / layers.eps_r))
    e_v_per_nm = u_volts / (layers.eps_r[probe_layer] * series)
    return e_v_per_nm * V_PER_NM_TO_KV_PER_CM


def device_stack(p: DesignPoint, eps_semi: float) -> LayerStack:
    """The planar-slab idealization of a device (SiO2 / slab / planarization)."""
    return LayerStack(
        np.array([p.t_sio2, p.t_cbg, p.t_hsq - p.t_cbg]),
        np.array([PERMITTIVITY["SiO2"], eps_semi, PERMITTIVITY["HSQ"]]),
    )


@dataclass(frozen=True)
class CapacitorMaterials:
    eps_semi: float = PERMITTIVITY["GaAs"]
    eps_sio2: float = PERMITTIVITY["SiO2"]
    eps_hsq: float = PERMITTIVITY["HSQ"]


@dataclass(frozen=True)
class GridSpec:
    """Target cell sizes (nm): axial, radial inside the grating, radial outside."""

    max_dz: float = 10.0
    max_dr_cbg: float = 10.0
    max_dr_outer: float = 100.0


@dataclass(frozen=True)
class FieldSolution:
    """Cell-centered potential and field grids plus the probe field."""

    r_centers: np.ndarray
    z_centers: np.ndarray
    phi: np.ndarray  # (nr, nz), volts
    e_r: np.ndarray  # kV/cm
    e_z: np.ndarray  # kV/cm
    e_abs_probe: float  # kV/cm
    probe_rz: tuple
    u_volts: float
    flux_top: float  # contact flux (per radian, eps0-scaled units)
    flux_residual: float  # worst relative mismatch across horizontal cuts


def _segment_faces(breaks, max_h: float) -> np.ndarray:
    faces = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(math.ceil((hi - lo) / max_h)))
        faces.append(np.linspace(lo, hi, n + 1)[:-1])
    faces.append([breaks[-1]])
    return np.unique(np.concatenate(faces))


def _radial_faces(p: DesignPoint, radius: float, n_rings: int, grid: GridSpec) -> np.ndarray:
    edges = [0.0, min(p.R, radius)]
    r = p.R
    for _ in range(n_rings):
        for width in (p.W, p.P - p.W):
            r += width
            if r >= radius:
                break
            edges.append(r)
        if r >= radius:
            break
    cbg_end = min(r, radius)
    inner = _segment_faces(np.unique(edges), grid.max_dr_cbg)
    if cbg_end < radius:
        outer = _segment_faces(np.array([cbg_end, radius]), grid.max_dr_outer)
        return np.unique(np.concatenate([inner, outer]))
    return inner


def _eps_grid(p: DesignPoint, mats: CapacitorMaterials, r_centers, z_centers,
              n_rings: int, planar: bool) -> np.ndarray:
    z_slab_lo = p.t_sio2
    z_slab_hi = p.t_sio2 + p.t_cbg
    eps = np.empty((r_centers.size, z_centers.size))
    in_sio2 = z_centers < z_slab_lo
    in_slab = (z_centers >= z_slab_lo) & (z_centers < z_slab_hi)
    eps[:, in_sio2] = mats.eps_sio2
    eps[:, ~in_sio2 & ~in_slab] = mats.eps_hsq
    if planar:
        eps[:, in_slab] = mats.eps_semi
        return eps
    rc = r_centers[:, None]
    cbg_end = p.R + n_rings * p.P
    frac = np.mod(rc - p.R, p.P)
    is_semi = (rc < p.R) | ((rc < cbg_end) & (frac >= p.W))
    eps[:, in_slab] = np.where(is_semi, mats.eps_semi, mats.eps_hsq)
    return eps


def fd_axisym_solve(
    p: DesignPoint,
    materials: CapacitorMaterials | None = None,
    radius_nm: float = DEFAULT_RADIUS_NM,
    u_volts: float = 10.0,
    grid: GridSpec | None = None,
    n_rings: int = DEFAULT_N_RINGS,
    planar: bool = False,
) -> FieldSolution:
    """Solve ``div(eps grad phi) = 0`` between the contact planes.

    Dirichlet: ``phi = u_volts`` at the top contact plane (bottom of the
    transparent contact, z = t_sio2 + t_hsq) and ``phi = 0`` at the gold plane
    (z = 0).  Zero normal flux on the axis and at the outer radius.  The probe
    sits at r = 0, z = t_sio2 + t_cbg/2 (the emitter position).
    """
    materials = materials or CapacitorMaterials()
    grid = grid or GridSpec()
    if not planar and grid.max_dr_cbg > p.W / 4.0:
        raise ValueError(
            f"radial spacing {grid.max_dr_cbg} nm exceeds W/4 = {p.W / 4.0} nm "
            "inside the grating region"
        )
    height = p.t_sio2 + p.t_hsq
    z_faces = _segment_faces(
        np.unique([0.0, p.t_sio2, p.t_sio2 + p.t_cbg, height]), grid.max_dz
    )
    r_faces = _radial_faces(p, radius_nm, n_rings, grid)
    rc = 0.5 * (r_faces[:-1] + r_faces[1:])
    zc = 0.5 * (z_faces[:-1] + z_faces[1:])
    hr = np.diff(r_faces)
    hz = np.diff(z_faces)
    nr, nz = rc.size, zc.size
    eps = _eps_grid(p, materials, rc, zc, n_rings, planar)

    # annulus cross-section per radian: vertical-flux face area of column i
    a_col = 0.5 * (r_faces[1:] ** 2 - r_faces[:-1] ** 2)
    # vertical conductances between (i, j) and (i, j+1): series half-cells
    gz = a_col[:, None] / (
        hz[None, :-1] / (2.0 * eps[:, :-1]) + hz[None, 1:] / (2.0 * eps[:, 1:])
    )
    # radial conductances between (i, j) and (i+1, j), face at r_faces[1:-1]
    area_r = r_faces[1:-1, None] * hz[None, :]
    gr = area_r / (
        hr[:-1, None] / (2.0 * eps[:-1, :]) + hr[1:, None] / (2.0 * eps[1:, :])
    )
    # Dirichlet half-cell conductances at the contacts
    g_bot = a_col / (hz[0] / (2.0 * eps[:, 0]))
    g_top = a_col / (hz[-1] / (2.0 * eps[:, -1]))

    def idx(i, j):
        return i * nz + j

    n_cells = nr * nz
    ii, jj, vv = [], [], []
    diag = np.zeros((nr, nz))

    def add_pair(ia, ja, ib, jb, g):
        ii.append(idx(ia, ja).ravel())
        jj.append(idx(ib, jb).ravel())
        vv.append(-g.ravel())

    iz_i, iz_j = np.meshgrid(np.arange(nr), np.arange(nz - 1), indexing="ij")
    add_pair(iz_i, iz_j, iz_i, iz_j + 1, gz)
    add_pair(iz_i, iz_j + 1, iz_i, iz_j, gz)
    diag[:, :-1] += gz
    diag[:, 1:] += gz

    ir_i, ir_j = np.meshgrid(np.arange(nr - 1), np.arange(nz), indexing="ij")
    add_pair(ir_i, ir_j, ir_i + 1, ir_j, gr)
    add_pair(ir_i + 1, ir_j, ir_i, ir_j, gr)
    diag[:-1, :] += gr
    diag[1:, :] += gr

    diag[:, 0] += g_bot
    diag[:, -1] += g_top
    rhs = np.zeros((nr, nz))
    rhs[:, -1] = g_top * u_volts

    ii.append(np.arange(n_cells))
    jj.append(np.arange(n_cells))
    vv.append(diag.ravel())
    mat = sp.csr_matrix(
        (np.concatenate(vv), (np.concatenate(ii), np.concatenate(jj))),
        shape=(n_cells, n_cells),
    )
    phi_flat = spsolve(mat, rhs.ravel())
    if not np.all(np.isfinite(phi_flat)):
        raise NumericalError("sparse solve returned non-finite potential")
    resid = float(np.linalg.norm(mat @ phi_flat - rhs.ravel()) / np.linalg.norm(rhs))
    if resid > 1e-8:
        raise NumericalError(f"linear solve residual {resid:.3e} exceeds 1e-8")
    phi = phi_flat.reshape(nr, nz)

    # flux through every horizontal cut (contacts included) must agree
    flux_bot = float(np.sum(g_bot * (phi[:, 0] - 0.0)))
    flux_top = float(np.sum(g_top * (u_volts - phi[:, -1])))
    cuts = np.sum(gz * (phi[:, 1:] - phi[:, :-1]), axis=0)
    all_fluxes = np.concatenate([[flux_bot], cuts, [flux_top]])
    flux_residual = float(np.max(np.abs(all_fluxes - flux_top)) / abs(flux_top))

    e_r = -np.gradient(phi, rc, axis=0) * V_PER_NM_TO_KV_PER_CM
    e_z = -np.gradient(phi, zc, axis=1) * V_PER_NM_TO_KV_PER_CM

    probe = (0.0, p.t_sio2 + 0.5 * p.t_cbg)
    interp_z = RegularGridInterpolator((rc, zc), e_z, bounds_error=False, fill_value=None)
    e_z_probe = float(interp_z((max(probe[0], rc[0]), probe[1])))
    e_r_probe = 0.0  # symmetry axis
    e_abs = math.hypot(e_r_probe, e_z_probe)

    return FieldSolution(
        r_centers=rc,
        z_centers=zc,
        phi=phi,
        e_r=e_r,
        e_z=e_z,
        e_abs_probe=e_abs,
        probe_rz=probe,
        u_volts=u_volts,
        flux_top=flux_top,
        flux_residual=flux_residual,
    )


def bias_sweep(
    p: DesignPoint,
    materials: CapacitorMaterials | None = None,
    u_list=(1.0,),
    target_kv_cm: float = 100.0,
    **solve_kwargs,
):
    """Probe field versus bias: one solve, scaled exactly linearly in U.

    Returns ``(rows, u_at_target)`` where ``rows`` is a list of
    ``(u, e_abs_kv_cm)`` and ``u_at_target`` the bias reaching
    ``target_kv_cm``.
    """
    u_list = [float(u) for u in u_list]
    if not u_list:
        raise ValueError("u_list must not be empty")
    base = fd_axisym_solve(p, materials, u_volts=1.0, **solve_kwargs)
    e_per_volt = base.e_abs_probe
    rows = [(u, e_per_volt * u) for u in u_list]
    u_at = math.inf if e_per_volt == 0 else target_kv_cm / e_per_volt
    return rows, u_at

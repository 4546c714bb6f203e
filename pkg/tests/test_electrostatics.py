import math

import numpy as np
import pytest

from cbgopt import electrostatics as es
from cbgopt.devices import REFERENCE_DESIGNS, DesignPoint

NIR_I = REFERENCE_DESIGNS["NIR_I"]
FAST_GRID = es.GridSpec(max_dz=15.0, max_dr_cbg=20.0, max_dr_outer=150.0)


def series_formula(thicknesses, eps, probe, u):
    """Independent evaluation of the stacked-capacitor field (kV/cm)."""
    total = sum(t / e for t, e in zip(thicknesses, eps))
    return u / (eps[probe] * total) * 1e4


class TestAnalyticStack:
    def test_vacuum_parallel_plate(self):
        stack = es.LayerStack([1000.0], [1.0])
        assert es.analytic_stack_field(stack, 0, 1.0) == pytest.approx(10.0, rel=1e-12)

    def test_equal_permittivity_layers_uniform(self):
        one = es.LayerStack([700.0], [4.0])
        two = es.LayerStack([300.0, 400.0], [4.0, 4.0])
        assert es.analytic_stack_field(one, 0, 5.0) == pytest.approx(
            es.analytic_stack_field(two, 1, 5.0), rel=1e-12
        )

    def test_published_stack_geometry(self):
        t = [136.0, 261.0, 702.0 - 261.0]
        e = [3.9, 12.9, 3.0]
        ref = series_formula(t, e, 1, 10.0)
        assert ref == pytest.approx(38.4, abs=0.1)
        stack = es.device_stack(NIR_I, 12.9)
        assert es.analytic_stack_field(stack, 1, 10.0) == pytest.approx(ref, rel=1e-12)

    def test_split_layer_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(50, 500, 3)
            e = rng.uniform(1, 13, 3)
            base = es.analytic_stack_field(es.LayerStack(t, e), 2, 7.0)
            split = es.LayerStack(
                [t[0], t[1] * 0.3, t[1] * 0.7, t[2]], [e[0], e[1], e[1], e[2]]
            )
            assert es.analytic_stack_field(split, 3, 7.0) == pytest.approx(base, rel=1e-12)

    def test_linear_in_bias(self):
        stack = es.device_stack(NIR_I, 12.9)
        assert es.analytic_stack_field(stack, 1, 20.0) == pytest.approx(
            2 * es.analytic_stack_field(stack, 1, 10.0), rel=1e-14
        )

    def test_empty_stack_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            es.LayerStack([], [])

    def test_probe_index_checked(self):
        stack = es.LayerStack([100.0], [2.0])
        with pytest.raises(IndexError):
            es.analytic_stack_field(stack, 3, 1.0)


class TestFdSolver:
    def test_uniform_medium_linear_potential(self):
        mats = es.CapacitorMaterials(1.0, 1.0, 1.0)
        sol = es.fd_axisym_solve(NIR_I, mats, radius_nm=1000.0, u_volts=1.0,
                                 grid=FAST_GRID)
        expected = 1.0 / (NIR_I.t_sio2 + NIR_I.t_hsq) * 1e4
        assert sol.e_abs_probe == pytest.approx(expected, rel=1e-10)
        # potential varies only along z
        assert np.max(np.std(sol.phi, axis=0)) < 1e-10

    def test_planar_matches_analytic_at_5nm(self):
        grid = es.GridSpec(max_dz=5.0, max_dr_cbg=25.0, max_dr_outer=100.0)
        sol = es.fd_axisym_solve(NIR_I, radius_nm=1500.0, u_volts=10.0, grid=grid,
                                 planar=True)
        ref = es.analytic_stack_field(es.device_stack(NIR_I, 12.9), 1, 10.0)
        assert abs(sol.e_abs_probe - ref) / ref < 0.01

    def test_grating_elevates_field_at_emitter(self):
        sol = es.fd_axisym_solve(NIR_I, u_volts=10.0, grid=FAST_GRID)
        ref = es.analytic_stack_field(es.device_stack(NIR_I, 12.9), 1, 10.0)
        assert sol.e_abs_probe > ref

    def test_maximum_principle(self):
        sol = es.fd_axisym_solve(NIR_I, u_volts=10.0, grid=FAST_GRID)
        assert sol.phi.min() >= -1e-12
        assert sol.phi.max() <= 10.0 + 1e-12

    def test_flux_conservation(self):
        sol = es.fd_axisym_solve(NIR_I, u_volts=10.0, grid=FAST_GRID)
        assert sol.flux_residual < 1e-3  # contract; direct solve gives ~1e-13

    def test_grid_spacing_precondition(self):
        with pytest.raises(ValueError, match="W/4"):
            es.fd_axisym_solve(NIR_I, grid=es.GridSpec(10.0, 40.0, 100.0))

    def test_second_order_convergence(self):
        fields = []
        for h in (24.0, 12.0, 6.0):
            grid = es.GridSpec(max_dz=h, max_dr_cbg=h, max_dr_outer=100.0)
            sol = es.fd_axisym_solve(NIR_I, u_volts=10.0, grid=grid, radius_nm=3000.0)
            fields.append(sol.e_abs_probe)
        coarse, mid, fine = fields
        richardson = fine + (fine - mid) / 3.0
        err_mid = abs(mid - richardson)
        err_fine = abs(fine - richardson)
        assert err_mid >= 3.0 * err_fine


class TestBiasSweep:
    def test_exactly_linear_scaling(self):
        rows, _ = es.bias_sweep(NIR_I, u_list=[1.0, 2.0, 4.0], grid=FAST_GRID)
        e1 = rows[0][1]
        assert rows[1][1] == pytest.approx(2 * e1, rel=1e-12)
        assert rows[2][1] == pytest.approx(4 * e1, rel=1e-12)

    def test_nir_design_tuning_voltage(self):
        _, u100 = es.bias_sweep(NIR_I, u_list=[10.0],
                                grid=es.GridSpec(10.0, 10.0, 100.0))
        assert 19.9 * 0.8 <= u100 <= 19.9 * 1.2

    def test_planar_limit_matches_analytic(self):
        ref = es.analytic_stack_field(es.device_stack(NIR_I, 12.9), 1, 10.0)
        _, u100 = es.bias_sweep(NIR_I, u_list=[10.0], planar=True,
                                grid=es.GridSpec(5.0, 25.0, 100.0), radius_nm=1500.0)
        assert u100 == pytest.approx(100.0 / ref * 10.0, rel=0.01)

    def test_empty_bias_list_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            es.bias_sweep(NIR_I, u_list=[], grid=FAST_GRID)

"""Unit tests for the longitudinal dynamics, fuel maps and linearization."""

from __future__ import annotations

import numpy as np
import pytest

from ecocruise.vehicle import (
    LinearizedModel,
    StepFailure,
    VehicleParams,
    accel,
    equilibrium_torque,
    fuel_per_meter,
    fuel_rate_space,
    fuel_rate_time,
    integrate_fine,
    linearize,
    load_vehicle_config,
    space_step,
)


@pytest.fixture
def params() -> VehicleParams:
    return VehicleParams()


class TestAccel:
    def test_equilibrium_torque_gives_zero_accel(self, params):
        te = equilibrium_torque(params, 30.0)
        assert te == pytest.approx(120.16126984126983, rel=1e-12)
        assert accel(params, 30.0, te, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_zero_torque_flat_road(self, params):
        a0, a1, a2, a3, a4 = params.alpha
        expected = -(a2 + a3 * 30.0 + a4 * 900.0)
        assert accel(params, 30.0, 0.0, 0.0) == pytest.approx(expected, rel=1e-15)

    def test_polynomial_oracle(self, params):
        # independent re-evaluation of the acceleration polynomial
        a = params.alpha
        v, te, phi = 20.0, 100.0, 0.05
        oracle = a[0] * te - a[1] * phi - a[2] - a[3] * v - a[4] * v**2
        assert accel(params, v, te, phi) == pytest.approx(oracle, rel=1e-15)

    def test_rejects_nonpositive_velocity(self, params):
        with pytest.raises(ValueError):
            accel(params, 0.0, 100.0, 0.0)
        with pytest.raises(ValueError):
            accel(params, -1.0, 100.0, 0.0)


class TestFuelMaps:
    def test_time_map_reference_point(self, params):
        assert fuel_rate_time(params, 30.0, 120.0) == pytest.approx(4.518732, abs=1e-9)

    def test_time_map_constant_term(self, params):
        assert fuel_rate_time(params, 0.0, 0.0) == pytest.approx(0.5352, rel=1e-15)

    def test_time_map_zero_torque(self, params):
        l = params.lam
        assert fuel_rate_time(params, 30.0, 0.0) == pytest.approx(
            l[0] + 30.0 * l[1] + 900.0 * l[5], rel=1e-14
        )

    def test_space_rate_is_flow_over_speed(self, params):
        rng = np.random.default_rng(1)
        for _ in range(20):
            v = rng.uniform(16.0, 39.0)
            te = rng.uniform(-20.0, 230.0)
            assert fuel_rate_space(params, v, te) == pytest.approx(
                fuel_rate_time(params, v, te) / v, rel=1e-12
            )

    def test_space_rate_unit_velocity(self, params):
        l = params.lam
        assert fuel_rate_space(params, 1.0, 0.0) == pytest.approx(l[0] + l[1] + l[5], rel=1e-14)

    def test_per_meter_reconciles_units(self, params):
        # kg/m accounting is the hourly flow spread over the meters per hour
        v, te = 28.0, 90.0
        assert fuel_per_meter(params, v, te) == pytest.approx(
            fuel_rate_time(params, v, te) / (v * 3600.0), rel=1e-12
        )

    def test_space_rate_monotone_in_torque(self, params):
        for v in (15.0, 25.0, 35.0):
            te = np.linspace(0.0, 240.0, 40)
            rates = fuel_rate_space(params, v, te)
            assert np.all(np.diff(rates) > 0)

    def test_space_rate_rejects_nonpositive_velocity(self, params):
        with pytest.raises(ValueError):
            fuel_rate_space(params, 0.0, 50.0)


class TestSpaceStep:
    def test_equilibrium_holds_speed(self, params):
        te = equilibrium_torque(params, 30.0)
        assert space_step(params, 30.0, te, 0.0) == pytest.approx(30.0, abs=1e-12)

    def test_downhill_max_torque_accelerates(self, params):
        v_next = space_step(params, 30.0, params.te_max, -0.05)
        hand = 30.0 + params.ds * accel(params, 30.0, params.te_max, -0.05) / 30.0
        assert v_next > 30.0
        assert v_next == pytest.approx(hand, rel=1e-15)

    def test_sign_matches_acceleration(self, params):
        rng = np.random.default_rng(2)
        for _ in range(100):
            v = rng.uniform(16.0, 39.0)
            te = rng.uniform(params.te_min, params.te_max)
            phi = rng.uniform(-0.05, 0.05)
            dv = space_step(params, v, te, phi) - v
            a = accel(params, v, te, phi)
            assert np.sign(dv) == np.sign(a) or a == 0.0

    def test_collapse_raises(self, params):
        tiny = VehicleParams(v_min=0.5, v_max=40.0)
        with pytest.raises(StepFailure):
            space_step(tiny, 0.6, tiny.te_min, 0.05)

    def test_truncation_error_halves_with_step(self, params):
        # one 30 m Euler step vs two 15 m steps, judged against a fine
        # reference integration of the same flow
        rng = np.random.default_rng(3)
        ratios = []
        for _ in range(100):
            v = rng.uniform(18.0, 38.0)
            te = rng.uniform(0.0, 220.0)
            phi = rng.uniform(-0.05, 0.05)
            exact = integrate_fine(params, v, te, phi, params.ds)
            coarse = space_step(params, v, te, phi)
            half = VehicleParams(ds=params.ds / 2)
            fine2 = space_step(half, space_step(half, v, te, phi), te, phi)
            e1 = abs(coarse - exact)
            e2 = abs(fine2 - exact)
            if e1 > 1e-10:
                ratios.append(e1 / e2)
        assert 1.6 < np.mean(ratios) < 2.6


class TestLinearize:
    def test_grade_coefficient_exact(self, params):
        lin = linearize(params, 30.0)
        assert lin.b2 == pytest.approx(-params.ds * params.alpha[1] / 30.0, rel=1e-15)

    def test_jacobians_match_central_differences(self, params):
        for v_ref in (20.0, 30.0, 35.0):
            lin = linearize(params, v_ref)
            eps = 1e-5
            fd_a = (
                space_step(params, v_ref + eps, lin.te_lin, 0.0)
                - space_step(params, v_ref - eps, lin.te_lin, 0.0)
            ) / (2 * eps)
            fd_b1 = (
                space_step(params, v_ref, lin.te_lin + eps, 0.0)
                - space_step(params, v_ref, lin.te_lin - eps, 0.0)
            ) / (2 * eps)
            fd_b2 = (
                space_step(params, v_ref, lin.te_lin, eps)
                - space_step(params, v_ref, lin.te_lin, -eps)
            ) / (2 * eps)
            assert lin.a_coef == pytest.approx(fd_a, rel=1e-6)
            assert lin.b1 == pytest.approx(fd_b1, rel=1e-6)
            assert lin.b2 == pytest.approx(fd_b2, rel=1e-6)

    def test_expansion_point_is_equilibrium(self, params):
        lin = linearize(params, 30.0)
        # zero deviations on flat road map to zero deviation
        assert lin.a_coef * 0.0 + lin.b1 * 0.0 + lin.b2 * 0.0 == 0.0
        assert space_step(params, lin.v_lin, lin.te_lin, 0.0) == pytest.approx(
            lin.v_lin, abs=1e-12
        )

    def test_fuel_affine_anchored_to_flow_map(self, params):
        lin = linearize(params, 30.0)
        assert lin.fuel_lin[0] == pytest.approx(
            fuel_rate_time(params, lin.v_lin, lin.te_lin), abs=1e-12
        )

    def test_fuel_affine_matches_finite_differences(self, params):
        lin = linearize(params, 30.0)
        eps = 1e-5
        fd_v = (
            fuel_rate_time(params, 30.0 + eps, lin.te_lin)
            - fuel_rate_time(params, 30.0 - eps, lin.te_lin)
        ) / (2 * eps)
        fd_t = (
            fuel_rate_time(params, 30.0, lin.te_lin + eps)
            - fuel_rate_time(params, 30.0, lin.te_lin - eps)
        ) / (2 * eps)
        assert lin.fuel_lin[1] == pytest.approx(fd_v, rel=1e-6)
        assert lin.fuel_lin[2] == pytest.approx(fd_t, rel=1e-6)

    def test_prediction_error_bound_over_operating_box(self, params):
        # regression pin: one-step linear-vs-nonlinear error over the
        # +/-2 m/s, +/-40 N.m, +/-5% grade box around the expansion point
        lin = linearize(params, 30.0)
        worst = 0.0
        for dv in np.linspace(-2.0, 2.0, 9):
            for dte in np.linspace(-40.0, 40.0, 9):
                for phi in np.linspace(-0.05, 0.05, 5):
                    exact = space_step(params, 30.0 + dv, lin.te_lin + dte, phi)
                    pred = 30.0 + lin.a_coef * dv + lin.b1 * dte + lin.b2 * phi
                    worst = max(worst, abs(exact - pred))
        assert worst < 0.05

    def test_out_of_range_reference_rejected(self, params):
        with pytest.raises(ValueError):
            linearize(params, params.v_max + 1.0)

    def test_equilibrium_torque_outside_actuator_rejected(self):
        weak = VehicleParams(te_max=100.0)
        with pytest.raises(ValueError):
            linearize(weak, 35.0)


class TestParams:
    def test_defaults_match_published_coefficients(self, params):
        assert params.alpha == (0.00315, 9.81, 0.05536, 0.00229, 2.8272e-4)
        assert params.lam == (0.5352, -0.03021, 0.00062, 5.503e-5, 0.00079, 0.00131)
        assert params.ds == 30.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"ds": 0.0},
            {"v_min": 0.0},
            {"v_min": 40.0, "v_max": 30.0},
            {"te_min": 250.0},
            {"alpha": (0.0, 9.81, 0.05536, 0.00229, 2.8272e-4)},
        ],
    )
    def test_invalid_params_rejected(self, kwargs):
        with pytest.raises(ValueError):
            VehicleParams(**kwargs)

    def test_config_file_roundtrip(self, tmp_path):
        cfg = tmp_path / "vehicle.cfg"
        cfg.write_text("alpha0 = 0.004\nte_max = 260  # uprated engine\nds=15\n")
        loaded = load_vehicle_config(cfg)
        assert loaded.alpha[0] == 0.004
        assert loaded.te_max == 260.0
        assert loaded.ds == 15.0
        assert loaded.lam == VehicleParams().lam

    def test_config_file_unknown_key(self, tmp_path):
        cfg = tmp_path / "vehicle.cfg"
        cfg.write_text("alpha9 = 1.0\n")
        with pytest.raises(ValueError, match="alpha9"):
            load_vehicle_config(cfg)

    def test_config_file_bad_number(self, tmp_path):
        cfg = tmp_path / "vehicle.cfg"
        cfg.write_text("alpha0 = fast\n")
        with pytest.raises(ValueError, match="bad number"):
            load_vehicle_config(cfg)

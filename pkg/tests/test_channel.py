import dataclasses

import numpy as np
import pytest

from isacfeel.channel import device_pathloss, draw_channels, steering_vector, target_pathloss
from isacfeel.config import SPEED_OF_LIGHT, SystemConfig
from isacfeel.numerics import ValidationError, make_rng


class TestSteeringVector:
    @pytest.mark.parametrize("N", [1, 2, 8, 16])
    def test_broadside_all_ones(self, N):
        np.testing.assert_allclose(steering_vector(0.0, N), np.ones(N))

    def test_endfire_half_wavelength(self):
        np.testing.assert_allclose(steering_vector(np.pi / 2, 2, 0.5), [1, -1], atol=1e-15)

    def test_unit_modulus_and_first_entry(self, rng):
        a = steering_vector(rng.uniform(-np.pi, np.pi), 8)
        np.testing.assert_allclose(np.abs(a), 1.0)
        assert a[0] == 1


class TestPathLoss:
    def test_reference_intercept(self, cfg):
        lam = SPEED_OF_LIGHT / 5e9
        assert target_pathloss(1.0, cfg) == pytest.approx(0.1 * lam**2 / (4 * np.pi) ** 3, rel=1e-12)

    def test_intercept_at_six_centimetres(self):
        cfg = SystemConfig(carrier_hz=SPEED_OF_LIGHT / 0.06)
        assert target_pathloss(1.0, cfg) == pytest.approx(1.814e-7, rel=1e-3)

    def test_doubling_distance(self, cfg):
        ratio = target_pathloss(40.0, cfg) / target_pathloss(20.0, cfg)
        assert ratio == pytest.approx(2**-4.5, rel=1e-12)

    def test_strictly_decreasing(self, cfg):
        d = np.geomspace(0.5, 5000, 50)
        assert np.all(np.diff(target_pathloss(d, cfg)) < 0)

    @pytest.mark.parametrize("d", [0.0, -3.0])
    def test_nonpositive_distance(self, cfg, d):
        with pytest.raises(ValidationError):
            target_pathloss(d, cfg)

    def test_device_pathloss_reference(self, cfg):
        assert device_pathloss(1.0, cfg) == pytest.approx((cfg.wavelength / (4 * np.pi)) ** 2)


class TestDrawChannels:
    def test_deterministic(self, cfg):
        a = draw_channels(cfg, make_rng(5))
        b = draw_channels(cfg, make_rng(5))
        np.testing.assert_array_equal(a.F, b.F)
        np.testing.assert_array_equal(a.Hdl, b.Hdl)
        np.testing.assert_array_equal(a.G, b.G)

    def test_small_scale_moment(self):
        cfg = SystemConfig(K=1)
        rng = make_rng(8)
        vals = []
        for _ in range(10_000):
            real = draw_channels(cfg, rng)
            vals.append(np.linalg.norm(real.F[:, 0]) ** 2 / device_pathloss(real.distances[0], cfg) / cfg.N)
        assert abs(np.mean(vals) - 1.0) < 0.05

    @pytest.mark.parametrize("seed", range(10))
    def test_target_response_rank_one(self, cfg, seed):
        real = draw_channels(cfg, make_rng(seed))
        s = np.linalg.svd(real.G, compute_uv=False)
        assert s[1] / s[0] <= 1e-10
        a = steering_vector(cfg.theta_target, cfg.N, cfg.antenna_spacing)
        np.testing.assert_array_equal(real.G, real.alpha * np.outer(a, a))

    def test_distances_in_ring(self, cfg, rng):
        for _ in range(50):
            d = draw_channels(cfg, rng).distances
            assert np.all((d >= cfg.D_in) & (d <= cfg.D_out))

    def test_random_phase_flag_keeps_magnitude(self, cfg):
        fixed = draw_channels(cfg, make_rng(1))
        rotated = draw_channels(dataclasses.replace(cfg, alpha_random_phase=True), make_rng(1))
        assert abs(rotated.alpha) == pytest.approx(abs(fixed.alpha))
        np.testing.assert_array_equal(rotated.F, fixed.F)

    def test_given_distances(self, cfg, rng):
        d = np.full(cfg.K, 300.0)
        np.testing.assert_array_equal(draw_channels(cfg, rng, distances=d).distances, d)
        with pytest.raises(ValidationError):
            draw_channels(cfg, rng, distances=d[:3])

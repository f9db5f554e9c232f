import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tswpm.channel import (
    ChannelImpulseResponse,
    LinkBudget,
    LinkGeometry,
    draw_cdl_a_gains,
    path_loss,
    sample_cdl_a,
    sample_shadow,
    snr_db,
    thermal_noise,
    to_sample_grid,
    truncated_cdl_a,
)
from tswpm.errors import InvalidInput


class TestPathLoss:
    def test_free_of_penetration(self):
        assert path_loss(LinkGeometry(100.0)) == pytest.approx(15.3 + 37.6 * 2, abs=1e-12)

    def test_external_wall(self):
        assert path_loss(LinkGeometry(100.0, n_external_walls=1)) == pytest.approx(110.5)

    def test_short_range_uses_free_space_branch(self):
        assert path_loss(LinkGeometry(1.0)) == pytest.approx(38.46)

    def test_floor_and_indoor_terms(self):
        base = path_loss(LinkGeometry(50.0))
        pl = path_loss(LinkGeometry(50.0, indoor_distance_2d=10.0, n_floors=1, n_internal_walls=2))
        floor = 18.3 * 1 ** ((1 + 2) / (1 + 1) - 0.46)
        assert pl - base == pytest.approx(7.0 + floor + 10.0)

    @pytest.mark.parametrize("r", [0.0, -1.0, float("inf")])
    def test_bad_distance(self, r):
        with pytest.raises(InvalidInput):
            path_loss(LinkGeometry(r))

    @settings(max_examples=80, deadline=None)
    @given(
        st.floats(0.1, 1e4), st.floats(0, 1e3), st.floats(0, 100),
        st.integers(0, 5), st.integers(0, 5), st.integers(0, 3),
    )
    def test_monotone(self, r, dr, indoor, floors, iw, ow):
        base = path_loss(LinkGeometry(r, indoor, floors, iw, ow))
        assert path_loss(LinkGeometry(r + dr, indoor, floors, iw, ow)) >= base - 1e-12
        assert path_loss(LinkGeometry(r, indoor + 1, floors, iw, ow)) >= base
        assert path_loss(LinkGeometry(r, indoor, floors + 1, iw, ow)) >= base
        assert path_loss(LinkGeometry(r, indoor, floors, iw + 1, ow)) >= base
        assert path_loss(LinkGeometry(r, indoor, floors, iw, ow + 1)) >= base


class TestNoiseAndSnr:
    @pytest.mark.parametrize("bw,expected", [(5e6, -107.0103), (1.0, -174.0), (10e6, -104.0)])
    def test_thermal_noise(self, bw, expected):
        assert thermal_noise(bw) == pytest.approx(expected, abs=1e-3)

    def test_thermal_noise_invalid(self):
        with pytest.raises(InvalidInput):
            thermal_noise(0.0)

    def test_snr_example(self):
        assert snr_db(LinkBudget(23.0), 90.5, 0.0) == pytest.approx(30.51, abs=1e-2)

    def test_snr_linear_terms(self):
        b23, b13 = LinkBudget(23.0), LinkBudget(13.0)
        assert snr_db(b23, 90.5, 0.0) - snr_db(b23, 90.5, 10.0) == pytest.approx(10.0)
        assert snr_db(b23, 90.5, 0.0) - snr_db(b13, 90.5, 0.0) == pytest.approx(10.0)

    def test_budget_validation(self):
        with pytest.raises(InvalidInput):
            LinkBudget(23.0, bandwidth=1e6)  # 300 subcarriers do not fit
        with pytest.raises(InvalidInput):
            LinkBudget(23.0, shadow_std=-1.0)
        assert LinkBudget(23.0).sample_period == pytest.approx(1 / 4.5e6)


class TestShadow:
    def test_zero_std(self):
        assert sample_shadow(np.random.default_rng(0), 0.0) == 0.0

    def test_sample_std(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_shadow(rng, 8.0) for _ in range(100_000)])
        assert draws.std() == pytest.approx(8.0, rel=0.02)

    def test_deterministic(self):
        assert sample_shadow(np.random.default_rng(7), 8.0) == sample_shadow(
            np.random.default_rng(7), 8.0
        )


class TestCdlA:
    def test_profile_truncation(self):
        delays, power = truncated_cdl_a(100e-9, 12)
        assert delays.size == 12
        assert delays[0] == 0.0
        assert np.all(np.diff(delays) >= 0)
        assert power.sum() == pytest.approx(1.0, abs=1e-15)

    def test_single_tap(self):
        cir = sample_cdl_a(np.random.default_rng(0), 100e-9, 1)
        assert len(cir) == 1
        assert cir.tap_delays[0] == 0.0
        assert abs(cir.tap_gains[0]) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 23), st.floats(1e-9, 1e-6))
    def test_unit_power_and_reproducible(self, seed, taps, spread):
        a = sample_cdl_a(np.random.default_rng(seed), spread, taps)
        b = sample_cdl_a(np.random.default_rng(seed), spread, taps)
        assert np.sum(np.abs(a.tap_gains) ** 2) == pytest.approx(1.0, abs=1e-9)
        assert np.array_equal(a.tap_gains, b.tap_gains)

    def test_raw_draw_mean_power_matches_profile(self):
        _, power = truncated_cdl_a(100e-9, 12)
        rng = np.random.default_rng(3)
        acc = np.zeros_like(power)
        n = 10_000
        for _ in range(n):
            acc += np.abs(draw_cdl_a_gains(rng, power)) ** 2
        np.testing.assert_allclose(acc / n, power, rtol=0.03)

    def test_normalized_draw_mean_power_matches_ratio_oracle(self):
        # E[p_l E_l / sum_i p_i E_i] for unit exponentials E_i, by quadrature
        _, power = truncated_cdl_a(100e-9, 12)

        def expected(l):
            others = np.delete(power, l)

            def integrand(t):
                return power[l] / (1 + power[l] * t) ** 2 / np.prod(1 + others * t)

            return integrate.quad(integrand, 0, np.inf, limit=200)[0]

        oracle = np.array([expected(l) for l in range(power.size)])
        assert oracle.sum() == pytest.approx(1.0, abs=1e-6)
        rng = np.random.default_rng(4)
        n = 10_000
        acc = np.zeros_like(power)
        for _ in range(n):
            acc += np.abs(sample_cdl_a(rng, 100e-9, 12).tap_gains) ** 2
        np.testing.assert_allclose(acc / n, oracle, rtol=0.03)

    def test_invalid(self):
        with pytest.raises(InvalidInput):
            truncated_cdl_a(0.0, 12)
        with pytest.raises(InvalidInput):
            truncated_cdl_a(1e-7, 0)


class TestCir:
    def test_unit_power_enforced(self):
        with pytest.raises(InvalidInput):
            ChannelImpulseResponse([0.0, 1e-7], [1.0, 1.0])

    def test_sorted_delays(self):
        with pytest.raises(InvalidInput):
            ChannelImpulseResponse([1e-7, 0.0], [np.sqrt(0.5), np.sqrt(0.5)])

    def test_sample_grid_binning(self):
        ts = 1.0 / 4.5e6
        g = np.array([0.6, 0.0 + 0.6j, 0.52915026])
        cir = ChannelImpulseResponse([0.0, 0.1 * ts, 2.05 * ts], g / np.linalg.norm(g))
        grid = to_sample_grid(cir, ts)
        assert len(grid) == 3
        np.testing.assert_allclose(grid.tap_delays, [0.0, ts, 2 * ts])
        assert grid.tap_gains[1] == 0
        # first two taps share a bin and add coherently
        ratio = grid.tap_gains[0] / grid.tap_gains[2]
        np.testing.assert_allclose(ratio, (g[0] + g[1]) / g[2])

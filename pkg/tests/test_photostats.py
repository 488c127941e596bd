import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats
from scipy.special import gammaln

from g2shape.core import RandomStream, TimestampSeries
from g2shape.errors import ResidualTooLarge
from g2shape.photostats import (PhotonStatistics, WeightGrid, count_photons, estimate_pn,
                                invert_statistics, linear_grid, mandel_forward, mandel_matrix,
                                nnls, parse_grid, sample_intensity, total_variation)

SIM2 = PhotonStatistics([0.1] * 6 + [0.0] * 45, [True] * 6 + [False] * 45)


def thermal(n_max=50, mean=1.0):
    n = np.arange(n_max + 1)
    return mean**n / (1 + mean) ** (n + 1)


class TestForward:
    def test_poisson(self):
        p = mandel_forward(WeightGrid([1.0], [1.0])).probs
        assert p[0] == pytest.approx(np.exp(-1), abs=1e-12)
        n = np.arange(p.size)
        np.testing.assert_allclose(p, np.exp(-1 - gammaln(n + 1)), rtol=1e-12)

    def test_vacuum(self):
        p = mandel_forward(WeightGrid([0.0], [1.0])).probs
        assert p[0] == 1.0 and np.all(p[1:] == 0)

    def test_exponential_density_gives_geometric(self):
        w = np.arange(0, 60, 0.01) + 0.005
        prob = np.exp(-w)
        grid = WeightGrid(w, prob / prob.sum())
        p = mandel_forward(grid, 30).probs
        assert np.max(np.abs(p - 0.5 ** (np.arange(31) + 1))) < 1e-3

    def test_large_n_is_finite(self):
        a = mandel_matrix([0.0, 40.0, 80.0], 200)
        assert np.all(np.isfinite(a))

    def test_column_sums(self):
        w = linear_grid()
        a = mandel_matrix(w, 50)
        tail = 1 - a.sum(axis=0)
        ok = 50 >= w + 10 * np.sqrt(w) + 20
        assert np.all(np.abs(tail[ok]) < 1e-9)


class TestNnls:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        m, n = rng.integers(3, 15), rng.integers(2, 20)
        a = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        x, res = nnls(a, b)
        _, res_ref = optimize.nnls(a, b)
        assert np.all(x >= 0)
        assert res == pytest.approx(res_ref, rel=1e-7, abs=1e-10)

    def test_kkt(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((8, 12)), rng.random(8)
        x, _ = nnls(a, b)
        grad = a.T @ (b - a @ x)
        assert np.all(grad <= 1e-10)
        assert np.all(np.abs(grad[x > 0]) < 1e-10)


class TestInvert:
    def test_thermal(self):
        n = np.arange(21)
        target = PhotonStatistics(0.5 ** (n + 1))
        grid = invert_statistics(target, 0.05 * np.arange(201))
        assert grid.residual < 1e-3
        assert abs(grid.probs.sum() - 1) < 1e-6

    def test_simulation2(self):
        grid = invert_statistics(SIM2)
        assert grid.residual < 1e-3
        assert grid.bunching == pytest.approx(1.287, abs=0.02)

    def test_simulation2_frozen_bunching(self):
        # [DERIVED] unconstrained NNLS on the default grid; matches scipy.optimize.nnls
        assert invert_statistics(SIM2).bunching == pytest.approx(1.29838, abs=1e-5)

    def test_pinned_bunching(self):
        grid = invert_statistics(SIM2, bunching=1.287)
        assert grid.bunching == pytest.approx(1.287, abs=1e-9)
        assert grid.residual < 1e-10

    def test_unreachable_bunching(self):
        with pytest.raises(ResidualTooLarge):
            invert_statistics(SIM2, bunching=1.2)

    def test_poisson_exact(self):
        target = PhotonStatistics(mandel_forward(WeightGrid([1.0], [1.0])).probs)
        grid = invert_statistics(target, linear_grid())
        assert grid.residual < 1e-10
        k = int(np.argmax(grid.probs))
        assert grid.weights[k] == pytest.approx(1.0) and grid.probs[k] > 1 - 1e-6

    def test_subpoissonian_rejected(self):
        target = PhotonStatistics([0.0, 1.0, 0.0, 0.0])
        with pytest.raises(ResidualTooLarge):
            invert_statistics(target)

    def test_forward_reproduces_target(self):
        grid = invert_statistics(SIM2)
        p = mandel_forward(grid).probs
        assert np.max(np.abs(p[:6] - 0.1)) <= 2 * grid.residual + 1e-15

    def test_scale_stable_support(self):
        a = mandel_matrix(linear_grid(), 20)
        b = thermal(20)
        x, _ = nnls(a, b)
        y, _ = nnls(a, 3.0 * b)
        assert np.array_equal(x > 0, y > 0)
        np.testing.assert_allclose(y, 3.0 * x, rtol=1e-8, atol=1e-14)

    def test_grid_needs_enough_nodes(self):
        with pytest.raises(ValueError):
            invert_statistics(SIM2, np.array([0.0, 1.0]))


class TestSampling:
    def test_degenerate(self):
        grid = WeightGrid([2.0, 3.0], [1.0, 0.0])
        assert np.all(sample_intensity(grid, 0.5, RandomStream(1), 1000) == 4.0)

    def test_bernoulli(self):
        grid = WeightGrid([1.0, 2.0], [0.5, 0.5])
        x = sample_intensity(grid, 1.0, RandomStream(2), 10**6)
        assert abs(np.mean(x == 1.0) - 0.5) < 0.0015

    def test_chi_square(self):
        grid = invert_statistics(SIM2, bunching=1.287)
        x = sample_intensity(grid, 0.05, RandomStream(3), 10**6)
        k = np.searchsorted(grid.weights / 0.05, x)
        observed = np.bincount(k, minlength=grid.weights.size)
        keep = grid.probs > 0
        assert observed[~keep].sum() == 0
        assert stats.chisquare(observed[keep], 1e6 * grid.probs[keep]).pvalue > 0.01

    def test_simulation2_bunching(self):
        grid = invert_statistics(SIM2, bunching=1.287)
        x = sample_intensity(grid, 0.05, RandomStream(4), 10**6)
        assert np.mean(x**2) / np.mean(x) ** 2 == pytest.approx(1.287, abs=0.01)


class TestCounting:
    def test_poisson_counts(self):
        g = np.random.default_rng(5)
        span, rate, window = 2e4, 40.0, 0.05
        times = np.sort(g.uniform(0, span, g.poisson(rate * span)))
        p = count_photons(TimestampSeries(times, span), window, n_max=12)
        n_win = int(span / window)
        observed = np.round(p.probs * n_win)
        expected = stats.poisson.pmf(np.arange(13), rate * window) * n_win
        observed = np.append(observed, n_win - observed.sum())
        expected = np.append(expected, n_win - expected.sum())
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_empty(self):
        p = count_photons(TimestampSeries(np.empty(0), 10.0), 0.05)
        assert p.probs[0] == 1.0

    def test_span_check(self):
        with pytest.raises(ValueError):
            count_photons(TimestampSeries(np.empty(0), 1.0), 0.05)

    def test_estimate_pn_errors(self):
        g = np.random.default_rng(6)
        times = np.sort(g.uniform(0, 1e4, g.poisson(2e5)))
        est = estimate_pn(TimestampSeries(times, 1e4), 0.05, 5, rng=RandomStream(1))
        ref = stats.poisson.pmf(np.arange(6), 1.0)
        multinomial = np.sqrt(ref * (1 - ref) / est.n_windows)
        np.testing.assert_allclose(est.stderr, multinomial, rtol=0.3)
        assert np.all(np.abs(est.probs - ref) < 4 * multinomial)


class TestFormats:
    def test_stats_json(self, tmp_path):
        SIM2.save(tmp_path / "s.json")
        back = PhotonStatistics.load(tmp_path / "s.json")
        assert np.array_equal(back.probs, SIM2.probs)
        assert np.array_equal(back.specified, SIM2.specified)

    def test_grid_json(self, tmp_path):
        grid = invert_statistics(SIM2)
        grid.save(tmp_path / "g.json")
        back = WeightGrid.load(tmp_path / "g.json")
        assert np.array_equal(back.probs, grid.probs) and back.residual == grid.residual

    def test_grid_invariants(self):
        with pytest.raises(ValueError):
            WeightGrid([1.0, 0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            WeightGrid([0.0, 1.0], [0.5, 0.6])

    def test_parse_grid(self):
        np.testing.assert_allclose(parse_grid("linear:5:2"), [0, 0.5, 1, 1.5, 2])
        with pytest.raises(ValueError):
            parse_grid("log:5:2")

    def test_total_variation(self):
        assert total_variation([0.5, 0.5], [1.0, 0.0]) == 0.5

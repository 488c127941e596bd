import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2shape.core import (AutocorrTarget, RandomStream, SampledCurve, TimestampSeries,
                          read_curve_csv, read_timestamps, resample, trapezoid_integral,
                          write_curve_csv, write_timestamps)
from g2shape.hills import builtin_hill


def gauss_curve(dt=1e-3, hw=8.0):
    return SampledCurve.from_function(lambda t: np.exp(-t**2) / np.sqrt(np.pi), -hw, hw, dt)


class TestSampledCurve:
    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            SampledCurve(0.0, 0.0, [1.0])
        with pytest.raises(ValueError):
            SampledCurve(0.0, 1.0, [])
        with pytest.raises(ValueError):
            SampledCurve(0.0, 1.0, [1.0, np.nan])

    def test_values_are_read_only(self):
        c = SampledCurve(0.0, 1.0, [1.0, 2.0])
        with pytest.raises(ValueError):
            c.values[0] = 5.0

    def test_times(self):
        c = SampledCurve(-1.0, 0.5, np.zeros(5))
        np.testing.assert_allclose(c.times, [-1, -0.5, 0, 0.5, 1])
        assert c.t_end == 1.0


class TestResample:
    def test_constant(self):
        c = SampledCurve(0.0, 0.1, np.full(11, 3.0))
        assert np.all(resample(c, 0.037).values == 3.0)

    def test_midpoint(self):
        out = resample(SampledCurve(0.0, 1.0, [0.0, 1.0]), 0.5)
        np.testing.assert_allclose(out.values, [0.0, 0.5, 1.0])

    def test_gaussian_against_analytic(self):
        c = SampledCurve.from_function(lambda t: np.exp(-t**2), -5, 5, 0.01)
        out = resample(c, 0.02)
        assert np.max(np.abs(out.values - np.exp(-out.times**2))) < 1e-4
        assert out.values[0] == c.values[0] and out.values[-1] == c.values[-1]

    def test_idempotent_at_same_dt(self):
        c = gauss_curve(0.01)
        assert np.array_equal(resample(c, c.dt).values, c.values)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            resample(gauss_curve(0.01), -1.0)


class TestTrapezoid:
    def test_rect(self):
        rect = builtin_hill("rect", dt=1e-3)
        assert abs(trapezoid_integral(rect.curve) - 1.0) < 1e-3

    def test_zero(self):
        assert trapezoid_integral(SampledCurve(0.0, 0.1, np.zeros(7))) == 0.0

    def test_gaussian(self):
        assert abs(trapezoid_integral(gauss_curve()) - 1.0) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_linear(self, a, b):
        rng = np.random.default_rng(0)
        f, g = rng.random(50), rng.random(50)
        lhs = trapezoid_integral(SampledCurve(0, 0.1, a * f + b * g))
        rhs = a * trapezoid_integral(SampledCurve(0, 0.1, f)) + \
            b * trapezoid_integral(SampledCurve(0, 0.1, g))
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestAutocorrTarget:
    def test_centered_needs_odd_symmetric(self):
        with pytest.raises(ValueError):
            AutocorrTarget(SampledCurve(-1.0, 1.0, [1.0, 2.0]))
        with pytest.raises(ValueError):
            AutocorrTarget(SampledCurve(-1.0, 1.0, [1.0, 2.0, 1.5]))

    def test_from_function(self):
        t = AutocorrTarget.from_function(lambda x: 1 + np.exp(-x), 5.0, 0.5)
        assert len(t.curve) == 21
        assert t.g0 == 2.0
        np.testing.assert_allclose(t.nonnegative().values, 1 + np.exp(-0.5 * np.arange(11)))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            AutocorrTarget(SampledCurve(0.0, 1.0, [1.0, -0.1]), centered=False)


class TestRandomStream:
    def test_determinism(self):
        a = RandomStream(42, 7).generator.random(100)
        b = RandomStream(42, 7).generator.random(100)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = RandomStream(42, 7).generator.random(100)
        b = RandomStream(42, 8).generator.random(100)
        c = RandomStream(42, 7).spawn(0).generator.random(100)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_open_closed(self):
        u = RandomStream(1).uniform_open_closed(100000)
        assert u.min() > 0 and u.max() <= 1

    def test_rejects_out_of_range_seed(self):
        with pytest.raises(ValueError):
            RandomStream(-1)
        with pytest.raises(ValueError):
            RandomStream(2**64)

    def test_identity_names_generator(self):
        ident = RandomStream(3, 4).identity
        assert ident["generator"] == "numpy.Philox" and ident["seed"] == 3


class TestFiles:
    def test_curve_round_trip(self, tmp_path):
        c = SampledCurve(-0.5, 0.25, [0.1, 0.2, 1 / 3, 0.4, 0.5])
        write_curve_csv(c, tmp_path / "c.csv")
        text = (tmp_path / "c.csv").read_bytes()
        assert text.startswith(b"t,value\n") and b"\r" not in text
        back = read_curve_csv(tmp_path / "c.csv")
        assert np.array_equal(back.values, c.values)
        assert back.t_start == c.t_start and back.dt == pytest.approx(c.dt)

    def test_nonuniform_grid_rejected(self, tmp_path):
        (tmp_path / "c.csv").write_text("t,value\n0,1\n1,1\n3,1\n")
        with pytest.raises(ValueError):
            read_curve_csv(tmp_path / "c.csv")

    def test_timestamps_round_trip(self, tmp_path):
        ts = TimestampSeries(np.array([0.1, 0.2, 0.7]), 1.0)
        write_timestamps(ts, tmp_path / "t.txt")
        assert (tmp_path / "t.txt").read_text().splitlines()[0] == "# span=1.0"
        back = read_timestamps(tmp_path / "t.txt")
        assert np.array_equal(back.times, ts.times) and back.span == 1.0

    def test_timestamp_invariants(self):
        with pytest.raises(ValueError):
            TimestampSeries(np.array([0.2, 0.1]), 1.0)
        with pytest.raises(ValueError):
            TimestampSeries(np.array([0.2, 1.1]), 1.0)

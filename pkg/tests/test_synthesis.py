import json

import numpy as np
import pytest

from g2shape.core import RandomStream
from g2shape.detection import estimate_g2_trace
from g2shape.errors import ConfigError, InvalidMixture, SupportTooWide
from g2shape.hills import builtin_hill, hill_norm
from g2shape.synthesis import (TABLE1_RATES, HillProcessSpec, load_spec, sample_event_times,
                               spec_from_json, stamp_events, synthesize_trace)


def gauss_spec(**kw):
    args = dict(hills=[(builtin_hill("gauss", dt=0.01), 1.0)], lam=1 / np.sqrt(2 * np.pi),
                duration=2000.0, dt=0.01)
    args.update(kw)
    return HillProcessSpec(**args)


class TestEvents:
    def test_poisson_mean_gap(self):
        spec = HillProcessSpec([(builtin_hill("gauss", dt=0.1), 1.0)], 1.0, 1e6, 0.1)
        t = sample_event_times(spec, RandomStream(5))
        assert np.all(np.diff(t) >= 0) and t.min() >= 0 and t.max() < 1e6
        assert np.diff(t).mean() == pytest.approx(1.0, abs=0.01)

    def test_shifted_exponential_gaps(self):
        spec = HillProcessSpec([(builtin_hill("rect", dt=0.1), 1.0)], 1.0, 1e6, 0.1,
                               min_spacing=3.0)
        gaps = np.diff(sample_event_times(spec, RandomStream(5)))
        assert gaps.min() >= 3.0
        assert gaps.mean() == pytest.approx(4.0, abs=0.02)

    def test_deterministic(self):
        spec = gauss_spec()
        a = sample_event_times(spec, RandomStream(9))
        b = sample_event_times(spec, RandomStream(9))
        assert np.array_equal(a, b)


class TestStamping:
    def test_single_event_is_the_hill(self):
        h = builtin_hill("gauss", dt=0.01)
        out = stamp_events(np.array([50.0]), np.array([0]), [h], 10000, 0.01)
        start = 5000 + int(round(h.curve.t_start / 0.01))
        np.testing.assert_allclose(out[start: start + len(h.curve)], h.values, atol=1e-15)
        assert out.sum() == pytest.approx(h.values.sum())

    def test_threads_do_not_change_the_trace(self):
        spec = gauss_spec(duration=30000.0)
        a = synthesize_trace(spec, RandomStream(3), threads=1).values
        b = synthesize_trace(spec, RandomStream(3), threads=4).values
        assert np.array_equal(a, b)

    def test_background_floor(self):
        tr = synthesize_trace(gauss_spec(background=0.25), RandomStream(1))
        assert tr.values.min() >= 0.25

    def test_mean_intensity(self):
        spec = gauss_spec(duration=1e5)
        tr = synthesize_trace(spec, RandomStream(2))
        # shot noise of a Poisson superposition: var of the mean ~ lam ||h||^2 / T
        sigma = np.sqrt(spec.lam / spec.duration)
        assert abs(tr.values.mean() - spec.mean_intensity()) < 3 * sigma

    def test_mixture_kinds(self):
        hills = [(builtin_hill("gauss", dt=0.01), 0.5), (builtin_hill("rect", dt=0.01), 0.5)]
        spec = HillProcessSpec(hills, 0.5, 2e4, 0.01)
        tr = synthesize_trace(spec, RandomStream(4))
        sigma = np.sqrt(2 * spec.lam / spec.duration)
        assert abs(tr.values.mean() - spec.mean_intensity()) < 3 * sigma


class TestSpecValidation:
    def test_probabilities(self):
        h = builtin_hill("gauss", dt=0.01)
        with pytest.raises(InvalidMixture):
            HillProcessSpec([(h, 0.5)], 1.0, 10.0, 0.01)
        with pytest.raises(InvalidMixture):
            HillProcessSpec([], 1.0, 10.0, 0.01)

    def test_support_check_uses_widest_hill(self):
        hills = [(builtin_hill("rect", dt=0.01), 0.5), (builtin_hill("gauss", dt=0.01), 0.5)]
        with pytest.raises(SupportTooWide):
            HillProcessSpec(hills, 1.0, 10.0, 0.01, min_spacing=2.0)

    def test_nonoverlap_mean_intensity(self):
        spec = HillProcessSpec([(builtin_hill("rect", dt=0.01), 1.0)], 1.0, 10.0, 0.01,
                               min_spacing=1.5)
        assert spec.mean_intensity() == pytest.approx(hill_norm(spec.hills[0][0]) / 2.5)


class TestJson:
    def test_default_rate(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps(
            {"hills": [{"builtin": "lorentz", "params": {"half_width": 50}}],
             "duration": 100, "dt": 0.01}))
        spec = load_spec(tmp_path / "s.json")
        assert spec.lam == TABLE1_RATES["lorentz"]

    def test_nonmonotone_needs_rate(self):
        with pytest.raises(ConfigError):
            spec_from_json({"hills": [{"builtin": "nonmonotone"}], "duration": 100, "dt": 0.01})
        spec = spec_from_json({"hills": [{"builtin": "nonmonotone"}], "lambda": 0.2,
                               "duration": 100, "dt": 0.01})
        assert spec.lam == 0.2

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            spec_from_json({"hills": [{"builtin": "gauss"}], "duration": 1, "dt": 0.01, "x": 1})
        with pytest.raises(ConfigError):
            spec_from_json({"hills": [{"builtin": "gauss", "shape": 2}], "duration": 1,
                            "dt": 0.01})

    def test_csv_hill(self, tmp_path):
        from g2shape.core import write_curve_csv

        write_curve_csv(builtin_hill("gauss", dt=0.01).curve, tmp_path / "h.csv")
        (tmp_path / "s.json").write_text(json.dumps(
            {"hills": [{"csv": "h.csv", "p": 1.0}], "lambda": 0.4, "duration": 10, "dt": 0.01}))
        spec = load_spec(tmp_path / "s.json")
        assert hill_norm(spec.hills[0][0]) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.slow
def test_doubling_rate_halves_excess_bunching():
    g0 = []
    for lam in (0.4, 0.8):
        spec = gauss_spec(lam=lam, duration=2e5)
        est = estimate_g2_trace(synthesize_trace(spec, RandomStream(11)), 1.0)
        g0.append((est.values[0] - 1, est.stderr[0]))
    (a, ea), (b, eb) = g0
    ratio_err = np.hypot(ea / b, a * eb / b**2)
    assert abs(a / b - 2.0) < 3 * ratio_err

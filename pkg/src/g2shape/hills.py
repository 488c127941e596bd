"""Hill functions: norms, self-correlation, inversion from a g2 target and
analytic g2 predictions for superpositions of randomly placed hills.

A hill is a non-negative pulse ``h(t)`` stamped at the points of a Poisson
process of rate ``lam``.  The normalized self-correlation

    C_norm(tau) = (1/||h||^2) * integral h(t + tau) h(t) dt

fixes the shape of g2(tau); ``lam`` fixes its height.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import fftconvolve
from scipy.special import gammaln

from .core import AutocorrTarget, SampledCurve, trapezoid_integral
from .errors import InvalidMixture, NoNonnegativeHill, SpectrumNegative, SupportTooWide

NEG_TOL = 1e-6
SPEC_TOL = 1e-6
IMAG_TOL = 1e-6
MAX_SIGN_CANDIDATES = 16


@dataclass(frozen=True)
class HillShape:
    """Non-negative pulse with finite sampled support.

    Samples in ``[-neg_tol * peak, 0)`` are clamped to zero; anything more
    negative is rejected.  Non-zero end samples get a zero sample appended so
    that the trapezoid norm equals the sample sum times ``dt``.
    """

    curve: SampledCurve
    support_width: float = field(default=None)
    neg_tol: float = NEG_TOL

    def __post_init__(self):
        v = np.array(self.curve.values, dtype=float)
        peak = v.max()
        if not peak > 0:
            raise ValueError("hill has no positive samples")
        if v.min() < -self.neg_tol * peak:
            raise ValueError(
                f"hill is negative beyond tolerance: min/peak = {v.min() / peak:.3g}")
        v = np.where(v < 0, 0.0, v)
        t_start = self.curve.t_start
        if v[0] != 0:
            v = np.concatenate([[0.0], v])
            t_start -= self.curve.dt
        if v[-1] != 0:
            v = np.concatenate([v, [0.0]])
        curve = SampledCurve(t_start, self.curve.dt, v)
        object.__setattr__(self, "curve", curve)
        nz = np.flatnonzero(v > 0)
        width = (nz[-1] - nz[0]) * curve.dt
        if self.support_width is None:
            object.__setattr__(self, "support_width", float(width))
        elif self.support_width < width - 1e-9 * curve.dt:
            raise ValueError("declared support_width is narrower than the sampled support")

    @property
    def dt(self) -> float:
        return self.curve.dt

    @property
    def values(self) -> np.ndarray:
        return self.curve.values

    @property
    def peak(self) -> float:
        return float(self.curve.values.max())

    def scaled(self, factor: float) -> "HillShape":
        return HillShape(self.curve.scaled(factor))


# ------------------------------------------------------------------ built-ins

def _cell_average_rect(t, dt, left, right):
    lo = np.maximum(t - dt / 2, left)
    hi = np.minimum(t + dt / 2, right)
    return np.clip(hi - lo, 0.0, None) / dt


def _sech_table1(t_half: float, dt: float) -> SampledCurve:
    # inverse Fourier transform of sqrt(sech(2 pi nu)), evaluated on a
    # period four times the requested half width to keep aliasing negligible
    m = int(round(t_half / dt))
    n = 8 * m + 1
    nu = np.fft.fftfreq(n, dt)
    x = np.exp(-2 * np.pi * np.abs(nu))
    spectrum = np.sqrt(2 * x / (1 + x * x))
    h = np.fft.fftshift(np.fft.ifft(spectrum).real) / dt
    mid = (n - 1) // 2
    return SampledCurve(-m * dt, dt, h[mid - m: mid + m + 1])


def builtin_hill(name: str, dt: float = 0.01, amplitude: float = 1.0, **params) -> HillShape:
    """Reference hills, normalized as in the published table of shapes.

    ``gauss``       exp(-t^2)/sqrt(pi)               (``half_width`` default 8)
    ``lorentz``     2/(pi (1 + 4 t^2))               (``half_width`` default 100)
    ``sech``        inverse FT of sqrt(sech(2 pi nu)) (``half_width`` default 30)
    ``sech_pulse``  sech(t)                          (``half_width`` default 40)
    ``rect``        unit box of ``width`` (default 1), cell-averaged at the edges
    ``nonmonotone`` 1/2 - cos(2 pi t)/2 on 0 < t < 3
    """
    name = name.lower()
    if name == "gauss":
        hw = params.pop("half_width", 8.0)
        curve = SampledCurve.from_function(lambda t: np.exp(-t**2) / np.sqrt(np.pi), -hw, hw, dt)
    elif name == "lorentz":
        hw = params.pop("half_width", 100.0)
        curve = SampledCurve.from_function(lambda t: 2 / (np.pi * (1 + 4 * t**2)), -hw, hw, dt)
    elif name == "sech":
        curve = _sech_table1(params.pop("half_width", 30.0), dt)
    elif name == "sech_pulse":
        hw = params.pop("half_width", 40.0)
        curve = SampledCurve.from_function(lambda t: 1 / np.cosh(t), -hw, hw, dt)
    elif name == "rect":
        width = params.pop("width", 1.0)
        m = int(math.ceil(width / 2 / dt)) + 1
        t = dt * np.arange(-m, m + 1)
        curve = SampledCurve(-m * dt, dt, _cell_average_rect(t, dt, -width / 2, width / 2))
    elif name == "nonmonotone":
        curve = SampledCurve.from_function(
            lambda t: np.where((t > 0) & (t < 3), 0.5 - 0.5 * np.cos(2 * np.pi * t), 0.0),
            0.0, 3.0, dt)
    else:
        raise ValueError(f"unknown built-in hill {name!r}")
    if params:
        raise ValueError(f"unexpected parameters for {name}: {sorted(params)}")
    return HillShape(curve.scaled(amplitude))


BUILTIN_NAMES = ("gauss", "lorentz", "sech", "sech_pulse", "rect", "nonmonotone")


# ------------------------------------------------------------ basic operations

def hill_norm(h: HillShape) -> float:
    return trapezoid_integral(h.curve)


def _raw_correlation(h: HillShape) -> np.ndarray:
    v = h.values
    c = fftconvolve(v, v[::-1]) * h.dt
    return 0.5 * (c + c[::-1])


def cross_correlation(h: HillShape) -> SampledCurve:
    """C_norm(tau) on lags ``-(N-1)dt .. (N-1)dt`` for an N-sample hill."""
    c = _raw_correlation(h) / hill_norm(h) ** 2
    n = len(h.curve)
    return SampledCurve(-(n - 1) * h.dt, h.dt, c)


def c_norm_at_zero(h: HillShape) -> float:
    return float(h.dt * np.sum(h.values**2) / hill_norm(h) ** 2)


# ------------------------------------------------------------------ inversion

@dataclass(frozen=True)
class SignPattern:
    """Piecewise +-1 function of |nu| applied to sqrt(C-hat) before inversion.

    ``half_sample_shift`` additionally applies the phase of a dt/2 delay; this
    is what lets a hill with an even number of samples (symmetric about a
    point between two grid nodes) come out exactly.
    """

    intervals: tuple = ((0.0, math.inf, 1),)
    half_sample_shift: bool = False

    def __post_init__(self):
        iv = tuple((float(a), float(b), int(s)) for a, b, s in self.intervals)
        for a, b, s in iv:
            if s not in (1, -1):
                raise ValueError("signs must be +1 or -1")
            if b < a:
                raise ValueError("interval with nu_max < nu_min")
        object.__setattr__(self, "intervals", iv)

    def signs(self, nu: np.ndarray) -> np.ndarray:
        anu = np.abs(np.asarray(nu, dtype=float))
        lo = np.array([a for a, _, _ in self.intervals])
        hi = np.array([b for _, b, _ in self.intervals])
        sg = np.array([s for _, _, s in self.intervals], dtype=float)
        if np.all(lo[1:] >= hi[:-1]):
            idx = np.searchsorted(lo, anu, side="right") - 1
            ok = (idx >= 0) & (anu <= hi[np.clip(idx, 0, None)])
            if not np.all(ok):
                raise ValueError("sign pattern does not cover every DFT frequency")
            return sg[idx]
        out = np.zeros(anu.shape, dtype=float)
        for a, b, s in self.intervals:
            out[(anu >= a) & (anu <= b) & (out == 0)] = s
        if np.any(out == 0):
            raise ValueError("sign pattern does not cover every DFT frequency")
        return out

    def to_json(self):
        iv = [{"nu_min": a, "nu_max": (b if math.isfinite(b) else None), "sign": s}
              for a, b, s in self.intervals]
        if self.half_sample_shift:
            return {"intervals": iv, "half_sample_shift": True}
        return iv

    @classmethod
    def from_json(cls, obj) -> "SignPattern":
        shift = False
        if isinstance(obj, dict):
            shift = bool(obj.get("half_sample_shift", False))
            obj = obj["intervals"]
        iv = [(d["nu_min"], math.inf if d.get("nu_max") is None else d["nu_max"], d["sign"])
              for d in obj]
        return cls(tuple(iv), shift)

    @classmethod
    def load(cls, path) -> "SignPattern":
        return cls.from_json(json.loads(Path(path).read_text()))


def _odd_fast_len(n: int) -> int:
    n = next_fast_len(n)
    while n % 2 == 0:
        n = next_fast_len(n + 1)
    return n


def centered_spectrum(target: AutocorrTarget, tol: float = SPEC_TOL, pad: int = 1):
    """Real spectrum of g2 - 1 sampled symmetrically around tau = 0.

    Returns ``(c_hat, nu)`` with ``c_hat[k] = DFT(c)[k] * exp(+i pi (N-1) k / N)``,
    the phase that moves the DFT origin from the first sample to tau = 0.
    ``pad`` > 1 extends g2 - 1 by zeros to ``pad`` times the length first,
    which refines the frequency grid.  Small negative values (within ``tol``
    of the maximum) are clamped to zero.
    """
    if not target.centered:
        target = AutocorrTarget.from_one_sided(target.curve)
    c = target.values - 1.0
    if pad > 1:
        n = _odd_fast_len(pad * c.size)
        c = np.pad(c, (n - c.size) // 2)
    n = c.size
    k = np.arange(n)
    spec = np.fft.fft(c) * np.exp(1j * np.pi * (n - 1) * k / n)
    c_hat = spec.real
    peak = c_hat.max()
    if not peak > 0:
        raise SpectrumNegative("target has no positive spectral content (no bunching)")
    if c_hat.min() < -tol * peak:
        raise SpectrumNegative(
            f"spectrum of g2 - 1 is negative: min/max = {c_hat.min() / peak:.3g}")
    return np.clip(c_hat, 0.0, None), np.fft.fftfreq(n, target.curve.dt)


def _zero_crossings(amp: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Frequencies |nu| where the signed spectrum passes through zero.

    At every local minimum of ``amp`` on the positive-frequency half, four
    sign hypotheses for the surrounding five samples are compared (no
    crossing, crossing just before or just after the minimum, or crossings on
    both sides) and the one with the smallest third differences wins.
    """
    half = (amp.size + 1) // 2
    a = amp[:half]
    f = np.abs(nu[:half])
    j = np.arange(2, half - 2)
    if j.size == 0:
        return np.empty(0)
    w = np.stack([a[j - 2], a[j - 1], a[j], a[j + 1], a[j + 2]], axis=1)
    is_min = (w[:, 2] <= w[:, 1]) & (w[:, 2] < w[:, 3])
    hyp = np.array([[1, 1, 1, 1, 1],      # keep
                    [1, 1, 1, -1, -1],    # crossing after j
                    [1, 1, -1, -1, -1],   # crossing before j
                    [1, 1, -1, 1, 1]])    # single sample of opposite sign
    signed = w[:, None, :] * hyp[None, :, :]
    d3 = np.diff(signed, n=3, axis=2)
    score = np.sum(d3**2, axis=2)
    choice = np.argmin(score, axis=1)
    choice[~is_min] = 0
    right = 0.5 * (f[j] + f[j + 1])
    left = 0.5 * (f[j - 1] + f[j])
    out = np.concatenate([right[choice == 1], left[choice == 2],
                          left[choice == 3], right[choice == 3]])
    return np.sort(out)


def _alternating(crossings) -> tuple:
    edges = [0.0, *crossings, math.inf]
    return tuple((edges[i], edges[i + 1], 1 if i % 2 == 0 else -1) for i in range(len(edges) - 1))


def sign_candidates(amp: np.ndarray, nu: np.ndarray) -> list:
    """Deterministic list of at most 16 sign patterns tried by ``auto``."""
    zeros = list(_zero_crossings(amp, nu))
    interval_sets = [((0.0, math.inf, 1),)]
    if zeros:
        interval_sets.append(_alternating(zeros))
        for j in range(1, len(zeros)):
            interval_sets.append(_alternating(zeros[:j]))
            if 2 * len(interval_sets) >= MAX_SIGN_CANDIDATES:
                break
    out = []
    for iv in interval_sets:
        for shift in (False, True):
            out.append(SignPattern(iv, shift))
    return out[:MAX_SIGN_CANDIDATES]


def _hill_from_spectrum(amp, nu, dt, pattern: SignPattern) -> np.ndarray:
    spec = amp * pattern.signs(nu)
    if pattern.half_sample_shift:
        spec = spec * np.exp(-1j * np.pi * nu * dt)
    h = np.fft.ifft(spec) / np.sqrt(dt)
    real = h.real
    peak = np.max(np.abs(real))
    if np.max(np.abs(h.imag)) > IMAG_TOL * peak:
        raise ValueError("sign pattern is not symmetric in nu; inverted hill is complex")
    return np.fft.fftshift(real)


def invert_hill(target: AutocorrTarget, sign="auto", *, neg_tol: float = NEG_TOL,
                spec_tol: float = SPEC_TOL, pad: int = 4, return_pattern: bool = False):
    """Recover a hill whose self-correlation reproduces ``target - 1``.

    ``sign`` is a :class:`SignPattern` or ``"auto"``; auto tries all-plus
    first, then sign alternation at the detected spectral zeros, each with and
    without a half-sample shift, and returns the first non-negative result.
    The hill is returned on the target grid, centered on t = 0; its scale is
    arbitrary.  The target is zero-padded ``pad`` times before the transform
    so that closely spaced spectral zeros can be told apart.
    """
    c_hat, nu = centered_spectrum(target, spec_tol, pad)
    amp = np.sqrt(c_hat)
    dt = target.curve.dt
    n_out = len(target.curve)
    patterns = sign_candidates(amp, nu) if sign == "auto" else [sign]
    worst = None
    for pattern in patterns:
        try:
            h = _hill_from_spectrum(amp, nu, dt, pattern)
        except ValueError:
            if sign != "auto":
                raise
            continue
        mid = (h.size - 1) // 2
        half_out = (n_out - 1) // 2
        h = h[mid - half_out: mid + half_out + 1]
        peak = h.max()
        ratio = h.min() / peak if peak > 0 else -math.inf
        if ratio >= -neg_tol:
            hill = HillShape(SampledCurve(-half_out * dt, dt, h), neg_tol=neg_tol)
            return (hill, pattern) if return_pattern else hill
        worst = ratio if worst is None else max(worst, ratio)
    raise NoNonnegativeHill(
        f"no sign pattern gave a non-negative hill (best min/peak = {worst:.3g})")


# ----------------------------------------------------------------- predictors

def _target(c_values: np.ndarray, dt: float, lam_factor: float) -> AutocorrTarget:
    m = (c_values.size - 1) // 2
    return AutocorrTarget(SampledCurve(-m * dt, dt, 1.0 + c_values * lam_factor))


def predict_g2_basic(h: HillShape, lam: float) -> AutocorrTarget:
    """g2(tau) = 1 + C_norm(tau)/lam for a Poisson superposition of hills."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    c = cross_correlation(h)
    return _target(c.values, c.dt, 1.0 / lam)


def predict_g2_mixture(hills, lam: float) -> AutocorrTarget:
    """Hills drawn i.i.d. with probabilities p_n from ``[(hill, p), ...]``.

    g2 = 1 + (1/lam) sum_n p_n C_n(tau) / (sum_n p_n ||h_n||)^2 with the
    unnormalized correlations C_n.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    hills = list(hills)
    if not hills:
        raise InvalidMixture("empty mixture")
    probs = np.array([p for _, p in hills], dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise InvalidMixture("mixture probabilities must be non-negative and sum to 1")
    dts = {h.dt for h, _ in hills}
    if len(dts) != 1:
        raise InvalidMixture("all hills of a mixture must share one sample spacing")
    dt = dts.pop()
    corrs = [_raw_correlation(h) for h, _ in hills]
    m = max((c.size - 1) // 2 for c in corrs)
    total = np.zeros(2 * m + 1)
    for (h, p), c in zip(hills, corrs):
        off = m - (c.size - 1) // 2
        total[off: off + c.size] += p * c
    mean_norm = sum(p * hill_norm(h) for h, p in hills)
    return _target(total, dt, 1.0 / (lam * mean_norm**2))


def predict_g2_background(h: HillShape, lam: float, background: float) -> AutocorrTarget:
    """Constant background ``background`` added to the hill superposition."""
    if background < 0:
        raise ValueError("background must be non-negative")
    if not lam > 0:
        raise ValueError("lam must be positive")
    c = cross_correlation(h)
    factor = 1.0 / (lam * (1.0 + background / (lam * hill_norm(h))) ** 2)
    return _target(c.values, c.dt, factor)


def optimal_rate(h: HillShape, background: float) -> float:
    """Rate maximizing g2(0) in the presence of a background."""
    return background / hill_norm(h)


def _gamma_kernel(t: np.ndarray, lam: float, k: int) -> np.ndarray:
    """lam^k t^k / k! * exp(-lam t), evaluated in log space."""
    if k == 0:
        return np.exp(-lam * t)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(k * np.log(lam * t[pos]) - gammaln(k + 1) - lam * t[pos])
    return out


def _nonoverlap_half(c_curve: SampledCurve, lam: float, t0: float, taus: np.ndarray,
                     form: str) -> np.ndarray:
    grid = c_curve.times
    cv = c_curve.values
    dt = c_curve.dt

    def cfun(x):
        return np.interp(x, grid, cv, left=0.0, right=0.0)

    def quad_grid(upper):
        return np.linspace(0.0, upper, max(1, int(round(upper / dt))) + 1)

    out = np.empty(taus.size)
    for i, tau in enumerate(taus):
        a = abs(tau)
        total = 0.0
        if form == "main":
            for k in range(int(math.floor(a / t0 + 1e-9)) + 1):
                upper = a - k * t0
                if upper <= 0:
                    continue
                t = quad_grid(upper)
                bracket = cfun(tau + t + (k + 1) * t0) + cfun(tau - t - (k + 1) * t0)
                total += (1.0 + lam * t0) * np.trapezoid(bracket * _gamma_kernel(t, lam, k), t)
        else:
            for k in range(1, int(math.floor(a / t0 + 1 + 1e-9)) + 1):
                upper = a - (k - 1) * t0
                if upper <= 0:
                    continue
                t = quad_grid(upper)
                bracket = cfun(tau + t + k * t0) + cfun(tau - t - k * t0)
                kern = lam**k * t ** (k - 1) / math.factorial(k - 1) * np.exp(-lam * t)
                total += (1.0 / lam + t0) * np.trapezoid(bracket * kern, t)
        out[i] = (1.0 / lam + t0) * cfun(tau) + total
    return out


def predict_g2_nonoverlap(h: HillShape, lam: float, t0: float, tau_max: float = None,
                          form: str = "main") -> AutocorrTarget:
    """g2 of hills whose peaks are at least ``t0`` apart.

    Peak gaps are ``t0 + Exp(lam)``.  The k-th neighbour delay is ``k t0``
    plus a gamma-distributed remainder, and only the finitely many neighbours
    with ``k t0 <= |tau|`` contribute.  ``form`` selects between two
    algebraically equal indexings of the series (``"main"`` or
    ``"appendix"``); both use trapezoid quadrature at the hill's ``dt``.
    """
    if not lam > 0 or not t0 > 0:
        raise ValueError("lam and t0 must be positive")
    if h.support_width > t0 + 1e-9 * h.dt:
        raise SupportTooWide(f"hill support {h.support_width} exceeds t0 = {t0}")
    if form not in ("main", "appendix"):
        raise ValueError("form must be 'main' or 'appendix'")
    c = cross_correlation(h)
    dt = h.dt
    if tau_max is None:
        tau_max = 5 * t0
    m = int(round(tau_max / dt))
    taus = dt * np.arange(m + 1)
    half = _nonoverlap_half(c, lam, t0, taus, form)
    full = np.concatenate([half[:0:-1], half])
    return AutocorrTarget(SampledCurve(-m * dt, dt, full))


def max_bunching(h: HillShape, dynamic_range: float) -> float:
    """Largest g2(0) reachable with peak-to-background ratio ``dynamic_range``."""
    if not dynamic_range > 0:
        raise ValueError("dynamic range must be positive")
    return 1.0 + dynamic_range * hill_norm(h) * c_norm_at_zero(h) / (4.0 * h.peak)


def eom_voltage(h: HillShape, v_pi: float) -> SampledCurve:
    """Drive voltage whose cosine transmission response reproduces ``h``.

    The hill is first rescaled to a peak of one.
    """
    x = np.clip(h.values / h.peak, 0.0, 1.0)
    return h.curve.with_values(v_pi / np.pi * np.arccos(1.0 - 2.0 * x))


def stretched(h: HillShape, factor: float) -> HillShape:
    """``h(t / factor)`` resampled on the same ``dt`` (horizontal stretch)."""
    c = h.curve
    n = int(math.floor((len(c) - 1) * factor)) + 1
    t_new = c.t_start * factor + c.dt * np.arange(n)
    vals = np.interp(t_new / factor, c.times, c.values, left=0.0, right=0.0)
    return HillShape(SampledCurve(t_new[0], c.dt, vals))

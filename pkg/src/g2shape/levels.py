"""Level-switching sources.

The intensity jumps between i.i.d. levels drawn from ``p(I)`` and holds each
level for an i.i.d. delay.  The amplitude of g2 comes from the level
statistics alone (g2(0) = <I^2>/<I>^2) and the shape from the delay law.
For a target g2 that is decreasing and convex with g2 -> 1, the delay
survival function is

    S(tau) = g2'(tau) / g2'(0),   <dt> = (1 - g2(0)) / g2'(0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AutocorrTarget, IntensityTrace, RandomStream, SampledCurve, as_stream
from .errors import NoBunching, NotConvex, NotMonotone, TailNotUnity

DEFAULT_TAIL_TOL = 1e-2
SHAPE_TOL = 1e-9


# ----------------------------------------------------------- intensity laws

@dataclass(frozen=True)
class DiscreteIntensity:
    """Finite set of intensity levels with probabilities."""

    levels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if levels.shape != probs.shape or levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels and probs must be 1-D arrays of equal length")
        if np.any(levels < 0):
            raise ValueError("intensity levels must be non-negative")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("level probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)

    @property
    def mean(self) -> float:
        return float(self.probs @ self.levels)

    @property
    def second_moment(self) -> float:
        return float(self.probs @ self.levels**2)

    def sample(self, rng: RandomStream, size: int) -> np.ndarray:
        """Smallest k with cumulative probability above a uniform draw."""
        cdf = np.cumsum(self.probs)
        r = rng.generator.random(size)
        k = np.searchsorted(cdf, r, side="right")
        return self.levels[np.minimum(k, self.levels.size - 1)]


@dataclass(frozen=True)
class ExponentialIntensity:
    """Thermal (negative-exponential) intensity law with the given mean."""

    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError("mean intensity must be positive")

    @property
    def second_moment(self) -> float:
        return 2.0 * self.mean**2

    def sample(self, rng: RandomStream, size: int) -> np.ndarray:
        return rng.generator.exponential(self.mean, size)


def bunching(law) -> float:
    """g2(0) = <I^2> / <I>^2 of an intensity law."""
    return law.second_moment / law.mean**2


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class ValidationReport:
    g0: float
    slope0: float
    mean_delay: float
    tail_deviation: float


def _one_sided(target) -> SampledCurve:
    if isinstance(target, AutocorrTarget):
        return target.nonnegative()
    return target


def slope_at_zero(curve: SampledCurve) -> float:
    """g'(0) from the one-sided three-point stencil."""
    g = curve.values
    if g.size < 3:
        raise ValueError("need at least three samples")
    return float((-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * curve.dt))


def derivative(g: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order finite-difference derivative of uniformly sampled ``g``.

    Five-point central differences inside, five-point one-sided stencils on
    the first and last two samples; falls back to second order for fewer
    than five samples.
    """
    g = np.asarray(g, dtype=float)
    if g.size < 5:
        return np.gradient(g, dt, edge_order=2)
    d = np.empty_like(g)
    d[2:-2] = (g[:-4] - 8 * g[1:-3] + 8 * g[3:-1] - g[4:]) / (12 * dt)
    fwd = np.array([-25, 48, -36, 16, -3]) / (12 * dt)
    one = np.array([-3, -10, 18, -6, 1]) / (12 * dt)
    d[0] = fwd @ g[:5]
    d[1] = one @ g[:5]
    d[-1] = -fwd @ g[-1:-6:-1]
    d[-2] = -one @ g[-1:-6:-1]
    return d


def validate_target(target, tail_tol: float = DEFAULT_TAIL_TOL) -> ValidationReport:
    """Check that a target is reachable by level switching.

    Order of checks: bunching, convexity, monotonicity, tail.  Convexity
    comes first because a convex curve that decays to one is automatically
    non-increasing.
    """
    curve = _one_sided(target)
    g = curve.values
    if g.size < 3:
        raise ValueError("target needs at least three samples on tau >= 0")
    amp = g[0] - 1.0
    if not amp > 0:
        raise NoBunching(f"g2(0) = {g[0]:.6g} is not above 1")
    tol = SHAPE_TOL * amp
    d1 = np.diff(g)
    d2 = np.diff(g, 2)
    if np.max(np.abs(d1)) <= tol:
        raise NoBunching("target is flat; the mean delay would be infinite")
    if d2.min() < -tol:
        k = int(np.argmin(d2)) + 1
        raise NotConvex(f"second difference {d2.min():.3g} < 0 at tau = {k * curve.dt:.6g}")
    if d1.max() > tol:
        k = int(np.argmax(d1))
        raise NotMonotone(f"g2 increases by {d1.max():.3g} at tau = {k * curve.dt:.6g}")
    dev = abs(g[-1] - 1.0) / amp
    if dev > tail_tol:
        raise TailNotUnity(
            f"g2 at the end of the grid is {g[-1]:.6g}; relative distance to 1 is {dev:.3g}")
    slope = slope_at_zero(curve)
    if not slope < 0:
        raise NotMonotone("g2'(0) is not negative")
    return ValidationReport(float(g[0]), slope, float((1.0 - g[0]) / slope), float(dev))


# ------------------------------------------------------------------ survival

@dataclass(frozen=True)
class Survival:
    """Tabulated survival function with an exponential tail.

    ``S`` is linear between table nodes and ``S(tau_end) exp(-rate (t - tau_end))``
    beyond the table.  ``lattice`` marks tables built for synchronized
    windows: delays are then rounded up to the next node.
    """

    tau: np.ndarray
    values: np.ndarray
    tail_rate: float
    lattice: bool = False
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        s = np.asarray(self.values, dtype=float)
        if tau.shape != s.shape or tau.size < 2:
            raise ValueError("survival table needs matching tau and S arrays")
        if tau[0] != 0.0 or np.any(np.diff(tau) <= 0):
            raise ValueError("tau must start at 0 and increase")
        if s[0] != 1.0 or np.any(np.diff(s) > 0) or np.any(s < 0):
            raise ValueError("S must start at 1 and be non-increasing and non-negative")
        if s[-1] > 0 and not self.tail_rate > 0:
            raise ValueError("a positive tail needs a positive tail rate")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", s)
        seg = 0.5 * (s[1:] + s[:-1]) * np.diff(tau)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def tail_mass(self) -> float:
        return self.values[-1] / self.tail_rate if self.values[-1] > 0 else 0.0

    @property
    def mean(self) -> float:
        """Mean delay: integral of S over [0, inf), or the lattice sum."""
        if self.lattice:
            return self._lattice_tail_sum(0)
        return float(self._cum[-1] + self.tail_mass)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = np.interp(t, self.tau, self.values)
        beyond = self.values[-1] * np.exp(-self.tail_rate * np.maximum(t - self.tau[-1], 0.0))
        return np.where(t <= self.tau[-1], inside, beyond)

    def inverse(self, r) -> np.ndarray:
        """Smallest delay with S(delay) = r for r in (0, 1]."""
        r = np.asarray(r, dtype=float)
        s_end = self.values[-1]
        inside = np.interp(-r, -self.values, self.tau)
        with np.errstate(divide="ignore"):
            beyond = self.tau[-1] + np.log(s_end / r) / self.tail_rate if s_end > 0 else 0.0
        return np.where(r >= s_end, inside, beyond)

    def integral_from(self, t) -> np.ndarray:
        """Integral of S from ``t`` to infinity."""
        t = np.asarray(t, dtype=float)
        if self.lattice:
            raise ValueError("use the lattice predictor for synchronized tables")
        tau, s = self.tau, self.values
        clipped = np.clip(t, 0.0, tau[-1])
        k = np.clip(np.searchsorted(tau, clipped, side="right") - 1, 0, tau.size - 2)
        h = tau[k + 1] - tau[k]
        x = clipped - tau[k]
        s_t = s[k] + (s[k + 1] - s[k]) * x / h
        partial = 0.5 * (s[k] + s_t) * x
        head = self._cum[-1] - (self._cum[k] + partial) + self.tail_mass
        tail = self.tail_mass * np.exp(-self.tail_rate * np.maximum(t - tau[-1], 0.0))
        return np.where(t <= tau[-1], head, tail)

    def _lattice_tail_sum(self, m: int) -> float:
        """Window units times sum_{j >= m} S(j T) on the lattice."""
        step = self.tau[1] - self.tau[0]
        s = self.values
        head = float(np.sum(s[m:])) if m < s.size else 0.0
        q = math.exp(-self.tail_rate * step) if s[-1] > 0 else 0.0
        last = s[-1]
        if m >= s.size:
            last = s[-1] * q ** (m - s.size + 1)
            head = last / q if q > 0 else 0.0
            return step * head / (1.0 - q) if q > 0 else 0.0
        return step * (head + (last * q / (1.0 - q) if q > 0 else 0.0))

    def sample(self, rng: RandomStream, size: int, rounded: bool = True) -> np.ndarray:
        """Delays by inverse transform; lattice tables round up to whole steps."""
        d = self.inverse(rng.uniform_open_closed(size))
        if self.lattice and rounded:
            d = self.round_up(d)
        return d

    def round_up(self, d) -> np.ndarray:
        step = self.tau[1] - self.tau[0]
        return step * np.maximum(1.0, np.ceil(np.asarray(d) / step - 1e-9))


def _tail_rate(g_end: float, slope_end: float, s_tail: np.ndarray, step: float) -> float:
    # exponential continuation of g - 1 that matches both its value and its
    # slope at the end of the grid, so the table keeps the exact total mass
    if g_end - 1.0 > 0 and slope_end < 0:
        return -slope_end / (g_end - 1.0)
    if s_tail[-1] > 0 and s_tail[-2] > s_tail[-1]:
        return math.log(s_tail[-2] / s_tail[-1]) / step
    return 1.0 / step


def build_survival(target, tail_tol: float = DEFAULT_TAIL_TOL, window: float = 0.0) -> Survival:
    """Delay survival function that reproduces ``target``.

    With ``window = 0`` the table is ``S = g'(tau)/g'(0)`` on the target
    grid, with derivatives from :func:`derivative`.  With ``window = T > 0`` the table sits on multiples of T and is
    ``S(mT) = (g(mT) - g((m+1)T)) / (g(0) - g(T))``, the law of the number of
    windows a level is held for that reproduces g exactly at lags mT.
    """
    validate_target(target, tail_tol)
    curve = _one_sided(target)
    g = curve.values
    dt = curve.dt
    if window > 0:
        return _lattice_survival(curve, window)
    slope = derivative(g, dt)
    s = slope / slope[0]
    s = np.clip(np.minimum.accumulate(s), 0.0, 1.0)
    s[0] = 1.0
    rate = _tail_rate(g[-1], slope[-1], s, dt)
    return Survival(curve.times, s, rate)


def _lattice_survival(curve: SampledCurve, window: float) -> Survival:
    g = curve.values
    t_end = curve.t_end
    m = int(math.floor(t_end / window + 1e-9))
    if m < 2:
        raise ValueError("target grid must span at least two windows")
    lags = window * np.arange(m + 1)
    gl = np.interp(lags, curve.times, g)
    drop = gl[:-1] - gl[1:]
    s = drop / drop[0]
    s = np.clip(np.minimum.accumulate(s), 0.0, 1.0)
    s[0] = 1.0
    # beyond the grid g - 1 decays geometrically with the ratio of the last
    # two drops, which keeps the lattice sums finite
    if drop[-1] > 0 and drop[-2] > drop[-1]:
        rate = math.log(drop[-2] / drop[-1]) / window
    else:
        rate = 1.0 / window
    return Survival(lags[:-1], s, rate, lattice=True)


# ----------------------------------------------------------------- processes

@dataclass(frozen=True)
class LevelProcessSpec:
    """Level-switching source.

    Attributes:
        intensity_law: :class:`DiscreteIntensity` or :class:`ExponentialIntensity`.
        survival: delay law from :func:`build_survival`.
        duration: total trace length (s).
        window: synchronization window T (s); 0 for free switching.
    """

    intensity_law: object
    survival: Survival
    duration: float
    window: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if self.survival.lattice != (self.window > 0):
            raise ValueError("synchronized specs need a survival table built for the window")
        if self.window > 0:
            step = self.survival.tau[1] - self.survival.tau[0]
            if abs(step - self.window) > 1e-9 * self.window:
                raise ValueError("survival lattice spacing differs from the window")

    @property
    def mean_delay(self) -> float:
        return self.survival.mean


def sample_delay(spec, rng=None, size=None):
    """Delays ``S^-1(r)`` with ``r`` uniform on (0, 1].

    ``spec`` may be a :class:`LevelProcessSpec` or a bare :class:`Survival`.
    """
    survival = spec.survival if isinstance(spec, LevelProcessSpec) else spec
    rng = as_stream(rng)
    n = 1 if size is None else size
    out = survival.sample(rng, n)
    return float(out[0]) if size is None else out


def level_switch_times(spec: LevelProcessSpec, rng=None, return_raw: bool = False):
    """Switching instants and levels covering ``[0, duration]``.

    Returns ``(edges, levels)`` where level ``levels[i]`` is held on
    ``[edges[i], edges[i + 1])``; with ``return_raw`` also the delays before
    rounding to whole windows.  Delays come from sub-stream 0 and levels
    from sub-stream 1.
    """
    rng = as_stream(rng)
    delay_rng, level_rng = rng.spawn(0), rng.spawn(1)
    surv = spec.survival
    chunk = max(64, int(1.1 * spec.duration / spec.mean_delay) + 64)
    raw, held = [], []
    last = 0.0
    while last < spec.duration:
        d = surv.sample(delay_rng, chunk, rounded=False)
        h = surv.round_up(d) if surv.lattice else d
        raw.append(d)
        held.append(h)
        last += h.sum()
    raw = np.concatenate(raw)
    edges = np.concatenate([[0.0], np.cumsum(np.concatenate(held))])
    n_hold = int(np.searchsorted(edges, spec.duration, side="left"))
    edges = edges[: n_hold + 1]
    levels = spec.intensity_law.sample(level_rng, n_hold)
    if spec.window > 0:
        # snap accumulated rounding noise back onto the window lattice
        edges = spec.window * np.round(edges / spec.window)
    if return_raw:
        return edges, levels, raw[:n_hold]
    return edges, levels


def trace_from_levels(edges, levels, duration: float, dt: float, window: float = 0.0) -> IntensityTrace:
    """Cell averages of a piecewise-constant intensity on ``[k dt, (k+1) dt)``."""
    n = int(round(duration / dt))
    cum = np.concatenate([[0.0], np.cumsum(levels * np.diff(edges))])
    grid = dt * np.arange(n + 1)
    integral = np.interp(grid, edges, cum)
    values = np.clip(np.diff(integral) / dt, 0.0, None)
    return IntensityTrace(SampledCurve(0.0, dt, values), window=window)


def synthesize_levels(spec: LevelProcessSpec, rng=None, dt: float = None) -> IntensityTrace:
    """Piecewise-constant intensity sampled as cell averages.

    ``dt`` defaults to the window in synchronized mode; it must divide the
    window so that every window boundary is a cell boundary.
    """
    if dt is None:
        if spec.window <= 0:
            raise ValueError("dt is required for free-running level processes")
        dt = spec.window
    if spec.window > 0:
        ratio = spec.window / dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt must divide the synchronization window")
    edges, levels = level_switch_times(spec, rng)
    return trace_from_levels(edges, levels, spec.duration, dt, spec.window)


def predict_g2_levels(spec: LevelProcessSpec, tau_grid=None, law=None) -> AutocorrTarget:
    """g2 implied by a level process, on ``tau_grid`` (tau >= 0).

    Free switching:  g2(tau) = 1 + (g2(0) - 1) / <dt> * integral_tau^inf S.
    Synchronized:    the same with the lattice sum, linear between windows.
    The default grid is the survival table grid.  ``law`` overrides the
    intensity law of the spec.
    """
    law = spec.intensity_law if law is None else law
    g0 = bunching(law)
    surv = spec.survival
    if tau_grid is None:
        tau_grid = surv.tau
    tau = np.asarray(tau_grid, dtype=float)
    if surv.lattice:
        step = surv.tau[1] - surv.tau[0]
        m_max = int(math.ceil(tau.max() / step)) + 1
        sums = np.array([surv._lattice_tail_sum(m) for m in range(m_max + 1)])
        shape = np.interp(tau / step, np.arange(m_max + 1), sums) / sums[0]
    else:
        shape = surv.integral_from(tau) / surv.mean
    values = 1.0 + (g0 - 1.0) * shape
    dt = tau[1] - tau[0] if tau.size > 1 else 1.0
    return AutocorrTarget(SampledCurve(0.0, dt, values), centered=False)

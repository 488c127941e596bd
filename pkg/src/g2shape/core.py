"""Shared value types, seedable random streams and small numeric helpers.

Every sampled function in the package (hills, autocorrelations, intensity
traces, drive voltages) is carried by :class:`SampledCurve`: a start time, a
uniform spacing and a read-only array of values.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

GENERATOR_NAME = "numpy.Philox"


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampledCurve:
    """Uniformly sampled real function ``values[k] = f(t_start + k * dt)``."""

    t_start: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("SampledCurve needs a 1-D array with at least one sample")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        if not np.all(np.isfinite(values)):
            raise ValueError("SampledCurve values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.values.size)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * (self.values.size - 1)

    @classmethod
    def from_function(cls, func, t_start: float, t_stop: float, dt: float) -> "SampledCurve":
        """Sample ``func`` on ``t_start, t_start + dt, ...`` up to ``t_stop`` inclusive."""
        n = int(math.floor((t_stop - t_start) / dt + 1e-9)) + 1
        t = t_start + dt * np.arange(n)
        return cls(t_start, dt, np.asarray(func(t), dtype=float))

    def with_values(self, values) -> "SampledCurve":
        return SampledCurve(self.t_start, self.dt, values)

    def scaled(self, factor: float) -> "SampledCurve":
        return self.with_values(self.values * factor)


@dataclass(frozen=True)
class AutocorrTarget:
    """Sampled g2(tau) curve.

    When ``centered`` is true the sample count is odd and the middle sample is
    tau = 0; otherwise the curve starts at tau = 0 and covers tau >= 0 only.
    """

    curve: SampledCurve
    centered: bool = True

    def __post_init__(self):
        v = self.curve.values
        if np.any(v < 0):
            raise ValueError("g2 values must be non-negative")
        if self.centered:
            if v.size % 2 != 1:
                raise ValueError("a centered target needs an odd number of samples")
            mid = (v.size - 1) // 2
            if abs(self.curve.t_start + mid * self.curve.dt) > 1e-6 * self.curve.dt:
                raise ValueError("the middle sample of a centered target must sit at tau = 0")
            scale = max(1.0, float(np.max(np.abs(v))))
            if np.max(np.abs(v - v[::-1]), initial=0.0) > 1e-9 * scale:
                raise ValueError("centered target is not symmetric, g(-tau) != g(tau)")
        elif abs(self.curve.t_start) > 1e-12:
            raise ValueError("a one-sided target must start at tau = 0")

    @property
    def tau(self) -> np.ndarray:
        return self.curve.times

    @property
    def values(self) -> np.ndarray:
        return self.curve.values

    @property
    def g0(self) -> float:
        return float(self.nonnegative().values[0])

    def nonnegative(self) -> SampledCurve:
        """The tau >= 0 half as a curve starting at 0."""
        if not self.centered:
            return self.curve
        mid = (len(self.curve) - 1) // 2
        return SampledCurve(0.0, self.curve.dt, self.curve.values[mid:])

    def tail_close_to_one(self, tol: float) -> bool:
        v = self.nonnegative().values
        amp = max(abs(v[0] - 1.0), 1e-300)
        return abs(v[-1] - 1.0) <= tol * amp

    @classmethod
    def from_one_sided(cls, curve: SampledCurve) -> "AutocorrTarget":
        """Mirror a tau >= 0 curve into a centered target."""
        if abs(curve.t_start) > 1e-12:
            raise ValueError("one-sided curve must start at tau = 0")
        v = curve.values
        full = np.concatenate([v[:0:-1], v])
        return cls(SampledCurve(-(v.size - 1) * curve.dt, curve.dt, full), centered=True)

    @classmethod
    def from_function(cls, g2, tau_max: float, dt: float) -> "AutocorrTarget":
        """Centered target sampled from an even function ``g2(tau)``."""
        m = int(round(tau_max / dt))
        tau = dt * np.arange(0, m + 1)
        half = np.asarray(g2(tau), dtype=float)
        return cls.from_one_sided(SampledCurve(0.0, dt, half))


@dataclass(frozen=True)
class TimestampSeries:
    """Sorted detection times in ``[0, span]``."""

    times: np.ndarray
    span: float

    def __post_init__(self):
        t = _frozen(self.times)
        if t.ndim != 1:
            raise ValueError("timestamps must be a 1-D array")
        if not self.span > 0:
            raise ValueError("span must be positive")
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("timestamps must be nondecreasing")
            if t[0] < 0 or t[-1] > self.span:
                raise ValueError("timestamps must lie inside [0, span]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "span", float(self.span))

    def __len__(self) -> int:
        return self.times.size

    @property
    def rate(self) -> float:
        return self.times.size / self.span


@dataclass(frozen=True)
class IntensityTrace:
    """Sampled intensity in photons per second.

    ``window`` is the synchronization window of a level-switching trace
    (0 when levels may change at any sample).
    """

    curve: SampledCurve
    window: float = 0.0

    def __post_init__(self):
        if np.any(self.curve.values < 0):
            raise ValueError("intensity must be non-negative")
        if self.window < 0:
            raise ValueError("window must be non-negative")

    @property
    def values(self) -> np.ndarray:
        return self.curve.values

    @property
    def dt(self) -> float:
        return self.curve.dt

    @property
    def duration(self) -> float:
        return self.curve.dt * len(self.curve)


@dataclass
class RandomStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator keyed through
    :class:`numpy.random.SeedSequence`. Independent sub-streams come from
    :meth:`spawn`; a stream must not be shared between workers.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = int(getattr(self, name))
            if not 0 <= value < 2**64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")
            setattr(self, name, value)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, index: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, (*self.path, int(index)))

    def uniform_open_closed(self, size=None):
        """Uniform draws on (0, 1]."""
        return 1.0 - self.generator.random(size)

    @property
    def identity(self) -> dict:
        return {"generator": GENERATOR_NAME, "seed": self.seed,
                "stream_id": self.stream_id, "path": list(self.path)}


def as_stream(rng, default_seed: int = 0) -> RandomStream:
    if rng is None:
        return RandomStream(default_seed)
    if isinstance(rng, RandomStream):
        return rng
    return RandomStream(int(rng))


def resample(curve: SampledCurve, new_dt: float) -> SampledCurve:
    """Linearly interpolate ``curve`` onto spacing ``new_dt`` over the same support.

    The new grid starts at ``curve.t_start``; the original end point is kept
    whenever the support is a whole multiple of ``new_dt``.
    """
    if not (np.isfinite(new_dt) and new_dt > 0):
        raise ValueError("new_dt must be positive")
    if new_dt == curve.dt:
        return SampledCurve(curve.t_start, curve.dt, curve.values)
    span = curve.dt * (len(curve) - 1)
    n = int(math.floor(span / new_dt + 1e-9)) + 1
    pos = np.arange(n) * (new_dt / curve.dt)
    pos = np.minimum(pos, len(curve) - 1)
    vals = np.interp(pos, np.arange(len(curve)), curve.values)
    return SampledCurve(curve.t_start, new_dt, vals)


def trapezoid_integral(curve: SampledCurve) -> float:
    v = curve.values
    if v.size == 1:
        return 0.0
    return float(curve.dt * (v.sum() - 0.5 * (v[0] + v[-1])))


# ---------------------------------------------------------------- file formats

def write_curve_csv(curve: SampledCurve, path) -> None:
    """``t,value`` CSV with LF line endings."""
    buf = io.StringIO()
    buf.write("t,value\n")
    for t, v in zip(curve.times, curve.values):
        buf.write(f"{float(t)!r},{float(v)!r}\n")
    Path(path).write_text(buf.getvalue(), newline="\n")


def read_curve_csv(path) -> SampledCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().replace(" ", "")
    if header != "t,value":
        raise ValueError(f"{path}: expected header 't,value', got {header!r}")
    t, v = data[:, 0], data[:, 1]
    if t.size == 1:
        return SampledCurve(t[0], 1.0, v)
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (t.size - 1)
    if np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ValueError(f"{path}: non-uniform time grid")
    return SampledCurve(t[0], dt, v)


def write_timestamps(ts: TimestampSeries, path) -> None:
    lines = [f"# span={float(ts.span)!r}"] + [repr(float(t)) for t in ts.times]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_timestamps(path) -> TimestampSeries:
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# span="):
            raise ValueError(f"{path}: first line must be '# span=<seconds>'")
        span = float(first.split("=", 1)[1])
        times = np.array([float(line) for line in fh if line.strip()], dtype=float)
    return TimestampSeries(times, span)


def curve_from_arrays(t: Sequence[float], values: Sequence[float]) -> SampledCurve:
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two time points to infer dt")
    return SampledCurve(t[0], (t[-1] - t[0]) / (t.size - 1), values)

"""Monte Carlo intensity traces built from randomly placed hills.

Events arrive as a homogeneous Poisson process of rate ``lam`` (or, with a
minimum spacing ``t0``, as a renewal process with gaps ``t0 + Exp(lam)``).
Each event stamps one hill, drawn from the mixture, onto a uniform grid.

The trace grid uses cell semantics: sample ``k`` holds the intensity on
``[k dt, (k + 1) dt)`` and an event at time ``t`` is aligned to cell
``floor(t / dt)``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .core import IntensityTrace, RandomStream, SampledCurve, as_stream, read_curve_csv, resample
from .errors import ConfigError, InvalidMixture, SupportTooWide
from .hills import BUILTIN_NAMES, HillShape, builtin_hill, hill_norm

# samples per independently seeded segment; fixed so that a trace depends on
# the seed only and not on the number of worker threads
SEGMENT_SAMPLES = 1 << 20

# event rates listed next to the reference shapes; the nonmonotone shape has
# no published rate and must be given explicitly
TABLE1_RATES = {
    "gauss": 1.0 / math.sqrt(2.0 * math.pi),
    "lorentz": 1.0 / (2.0 * math.pi),
    "sech": 5.0,
}


@dataclass(frozen=True)
class HillProcessSpec:
    """Hill-superposition source.

    Attributes:
        hills: sequence of ``(HillShape, probability)`` pairs.
        lam: mean event rate (1/s).
        duration: trace length T (s).
        dt: output sample spacing (s).
        background: constant intensity added everywhere (photons/s).
        min_spacing: minimum distance t0 between events; 0 allows overlap.
    """

    hills: tuple
    lam: float
    duration: float
    dt: float
    background: float = 0.0
    min_spacing: float = 0.0

    def __post_init__(self):
        hills = tuple((h, float(p)) for h, p in self.hills)
        if not hills:
            raise InvalidMixture("a hill process needs at least one hill")
        probs = np.array([p for _, p in hills])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidMixture("hill probabilities must be non-negative and sum to 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.duration > 0 or not self.dt > 0:
            raise ValueError("duration and dt must be positive")
        if self.background < 0 or self.min_spacing < 0:
            raise ValueError("background and min_spacing must be non-negative")
        object.__setattr__(self, "hills", hills)
        if self.min_spacing > 0:
            widest = max(h.support_width for h, _ in hills)
            if widest > self.min_spacing + 1e-9 * self.dt:
                raise SupportTooWide(
                    f"widest hill support {widest} exceeds min_spacing {self.min_spacing}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.hills])

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))

    def mean_intensity(self) -> float:
        """Expected time average of the trace.

        With a minimum spacing the event rate is ``1 / (t0 + 1/lam)``.
        """
        rate = 1.0 / (self.min_spacing + 1.0 / self.lam)
        return rate * sum(p * hill_norm(h) for h, p in self.hills) + self.background


# ------------------------------------------------------------------- events

def _poisson_segment(lam: float, start: float, stop: float, rng: RandomStream) -> np.ndarray:
    g = rng.generator
    n = g.poisson(lam * (stop - start))
    return np.sort(start + (stop - start) * g.random(n))


def _renewal_events(lam: float, t0: float, duration: float, rng: RandomStream) -> np.ndarray:
    g = rng.generator
    mean_gap = t0 + 1.0 / lam
    # the first event follows the residual-life law so that the process is
    # stationary from t = 0
    if g.random() < t0 / mean_gap:
        first = t0 * g.random()
    else:
        first = t0 + g.exponential(1.0 / lam)
    chunks = [np.array([first])]
    last = first
    chunk = max(16, int(1.1 * duration / mean_gap) + 16)
    while last <= duration:
        gaps = t0 + g.exponential(1.0 / lam, chunk)
        times = last + np.cumsum(gaps)
        chunks.append(times)
        last = times[-1]
    times = np.concatenate(chunks)
    return times[times < duration]


def sample_event_times(spec: HillProcessSpec, rng=None) -> np.ndarray:
    """Event times in ``[0, duration)``.

    Overlapping processes are drawn segment by segment, each segment from its
    own sub-stream; the non-overlapping renewal chain is sequential.
    """
    rng = as_stream(rng)
    if spec.min_spacing > 0:
        return _renewal_events(spec.lam, spec.min_spacing, spec.duration, rng.spawn(0))
    seg = SEGMENT_SAMPLES * spec.dt
    n_seg = max(1, math.ceil(spec.duration / seg))
    parts = []
    for i in range(n_seg):
        start, stop = i * seg, min(spec.duration, (i + 1) * seg)
        parts.append(_poisson_segment(spec.lam, start, stop, rng.spawn(i)))
    return np.concatenate(parts)


def _hill_indices(spec: HillProcessSpec, n_events: int, rng: RandomStream) -> np.ndarray:
    probs = spec.probabilities
    if probs.size == 1:
        return np.zeros(n_events, dtype=int)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.spawn(1 << 32).generator.random(n_events), side="right")


# ----------------------------------------------------------------- stamping

def _on_grid(h: HillShape, dt: float) -> HillShape:
    if abs(h.dt - dt) <= 1e-12 * dt:
        return h
    return HillShape(resample(h.curve, dt))


def _stamp(counts: np.ndarray, kernel: np.ndarray, shift: int, n_out: int,
           lo: int, hi: int):
    """Convolve ``counts[lo:hi]`` with ``kernel``.

    ``kernel[k]`` belongs at ``event_index + shift + k``.  Returns the grid
    offset and the part of the result that lands on ``[0, n_out)``.
    """
    part = counts[lo:hi]
    if not part.any():
        return 0, np.empty(0)
    full = np.clip(oaconvolve(part, kernel), 0.0, None)
    first = lo + shift
    a = max(0, first)
    b = min(n_out, first + full.size)
    if b <= a:
        return 0, np.empty(0)
    return a, full[a - first: b - first]


def stamp_events(times: np.ndarray, kinds: np.ndarray, hills, n_samples: int, dt: float,
                 threads: int = 1) -> np.ndarray:
    """Sum of hills placed at ``times`` on an ``n_samples`` grid of spacing ``dt``.

    The grid is cut into segments that are convolved independently (in
    parallel when ``threads > 1``) and summed in the seams, always in the
    same order.
    """
    out = np.zeros(n_samples)
    idx = np.floor(np.asarray(times) / dt).astype(np.int64)
    keep = (idx >= 0) & (idx < n_samples)
    idx, kinds = idx[keep], np.asarray(kinds)[keep]
    jobs = []
    for n, h in enumerate(hills):
        counts = np.bincount(idx[kinds == n], minlength=n_samples).astype(float)
        shift = int(round(h.curve.t_start / dt))
        for lo in range(0, n_samples, SEGMENT_SAMPLES):
            jobs.append((counts, h.values, shift, n_samples, lo,
                         min(n_samples, lo + SEGMENT_SAMPLES)))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            pieces = list(pool.map(lambda job: _stamp(*job), jobs))
    else:
        pieces = [_stamp(*job) for job in jobs]
    for a, piece in pieces:
        out[a: a + piece.size] += piece
    return out


def synthesize_trace(spec: HillProcessSpec, rng=None, threads: int = 1) -> IntensityTrace:
    """Intensity ``sum_i h_{n_i}(t - t_i) + background`` sampled at ``spec.dt``."""
    rng = as_stream(rng)
    times = sample_event_times(spec, rng)
    kinds = _hill_indices(spec, times.size, rng)
    hills = [_on_grid(h, spec.dt) for h, _ in spec.hills]
    values = stamp_events(times, kinds, hills, spec.n_samples, spec.dt, threads)
    values += spec.background
    return IntensityTrace(SampledCurve(0.0, spec.dt, values))


# --------------------------------------------------------------- JSON specs

_SPEC_KEYS = {"hills", "lambda", "duration", "dt", "background", "min_spacing"}
_HILL_KEYS = {"builtin", "csv", "params", "p", "amplitude"}


def hill_from_json(obj: dict, base_dir=None, dt: float = None) -> HillShape:
    """Hill given as ``{"builtin": name, "params": {...}}`` or ``{"csv": path}``."""
    unknown = set(obj) - _HILL_KEYS
    if unknown:
        raise ConfigError(f"unknown hill keys: {sorted(unknown)}")
    if ("builtin" in obj) == ("csv" in obj):
        raise ConfigError("a hill needs exactly one of 'builtin' or 'csv'")
    if "builtin" in obj:
        name = obj["builtin"]
        if name not in BUILTIN_NAMES:
            raise ConfigError(f"unknown built-in hill {name!r}; choose from {BUILTIN_NAMES}")
        params = dict(obj.get("params", {}))
        if dt is not None:
            params.setdefault("dt", dt)
        return builtin_hill(name, amplitude=obj.get("amplitude", 1.0), **params)
    path = Path(obj["csv"])
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    h = HillShape(read_curve_csv(path))
    return h.scaled(obj.get("amplitude", 1.0))


def spec_from_json(obj: dict, base_dir=None) -> HillProcessSpec:
    unknown = set(obj) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown hill-process keys: {sorted(unknown)}")
    for key in ("hills", "duration", "dt"):
        if key not in obj:
            raise ConfigError(f"hill-process spec is missing {key!r}")
    dt = float(obj["dt"])
    hills = [(hill_from_json(d, base_dir, dt), d.get("p", 1.0)) for d in obj["hills"]]
    lam = obj.get("lambda")
    if lam is None:
        names = {d.get("builtin") for d in obj["hills"]}
        if len(obj["hills"]) == 1 and names <= set(TABLE1_RATES):
            lam = TABLE1_RATES[names.pop()]
        else:
            raise ConfigError("'lambda' is required unless the spec is a single reference "
                              "hill with a published rate")
    return HillProcessSpec(tuple(hills), float(lam), float(obj["duration"]), dt,
                           float(obj.get("background", 0.0)), float(obj.get("min_spacing", 0.0)))


def load_spec(path) -> HillProcessSpec:
    path = Path(path)
    return spec_from_json(json.loads(path.read_text()), base_dir=path.parent)

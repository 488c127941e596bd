"""Semiclassical photon detection and g2 estimators.

Photon counts are Poisson given the intensity, so a trace sampled with cell
semantics turns into timestamps by drawing ``Poisson(eta * I_k * dt)``
photons per cell, uniformly placed inside it.  g2 is estimated either from
two timestamp streams (a coincidence histogram, as in an HBT setup) or
directly from the trace with FFT-based lagged products.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .core import IntensityTrace, TimestampSeries, as_stream
from .errors import EmptyArm, TraceTooShort

# cells per independently seeded detection segment
DETECT_SEGMENT = 1 << 22
MIN_BLOCKS = 50
N_BOOTSTRAP = 200


@dataclass(frozen=True)
class G2Estimate:
    """Estimated g2 on bin centers ``tau`` with per-bin standard errors."""

    tau: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    bin_width: float

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        v = np.asarray(self.values, dtype=float)
        e = np.asarray(self.stderr, dtype=float)
        if not (tau.shape == v.shape == e.shape):
            raise ValueError("tau, values and stderr must have the same shape")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if np.any(e < 0):
            raise ValueError("standard errors must be non-negative")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stderr", e)

    def z_scores(self, predicted) -> np.ndarray:
        """``(estimate - predicted) / stderr``; bins with zero error give 0 or inf."""
        diff = self.values - np.asarray(predicted, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.stderr > 0, diff / self.stderr,
                         np.where(diff == 0, 0.0, np.inf))
        return z

    def select(self, mask) -> "G2Estimate":
        mask = np.asarray(mask)
        return G2Estimate(self.tau[mask], self.values[mask], self.stderr[mask], self.bin_width)

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write("tau,g2,stderr\n")
        for t, v, e in zip(self.tau, self.values, self.stderr):
            buf.write(f"{float(t)!r},{float(v)!r},{float(e)!r}\n")
        Path(path).write_text(buf.getvalue(), newline="\n")

    @classmethod
    def from_csv(cls, path) -> "G2Estimate":
        with open(path) as fh:
            header = fh.readline().strip().replace(" ", "")
        if header != "tau,g2,stderr":
            raise ValueError(f"{path}: expected header 'tau,g2,stderr'")
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        width = float(d[1, 0] - d[0, 0]) if d.shape[0] > 1 else 1.0
        return cls(d[:, 0], d[:, 1], d[:, 2], width)


# --------------------------------------------------------------- detection

def generate_timestamps(trace: IntensityTrace, efficiency: float = 1.0, rng=None) -> TimestampSeries:
    """Photon arrival times from an intensity trace.

    Each cell ``[k dt, (k+1) dt)`` emits ``Poisson(efficiency * I_k * dt)``
    photons at uniform positions.  Segments of the trace use separate
    sub-streams.
    """
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must lie in (0, 1]")
    rng = as_stream(rng)
    dt = trace.dt
    v = trace.values
    parts = []
    for i, lo in enumerate(range(0, v.size, DETECT_SEGMENT)):
        g = rng.spawn(i).generator
        seg = v[lo: lo + DETECT_SEGMENT]
        counts = g.poisson(efficiency * seg * dt)
        cells = np.repeat(np.arange(lo, lo + seg.size), counts)
        offsets = g.random(cells.size)
        # sort within each cell: order by cell, then by offset
        order = np.lexsort((offsets, cells))
        parts.append((cells[order] + offsets[order]) * dt)
    span = v.size * dt
    times = np.concatenate(parts) if parts else np.empty(0)
    return TimestampSeries(np.minimum(times, span), span)


def hbt_split(ts: TimestampSeries, rng=None):
    """Route each photon to arm A or B with probability 1/2."""
    rng = as_stream(rng)
    to_a = rng.generator.random(len(ts)) < 0.5
    return TimestampSeries(ts.times[to_a], ts.span), TimestampSeries(ts.times[~to_a], ts.span)


# --------------------------------------------------- timestamp correlation

def pair_histogram(a: np.ndarray, b: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Counts of delays ``b_j - a_i`` in the half-open bins ``[edges[k], edges[k+1])``.

    Two-index sweep: for each ``a_i`` the window of ``b`` inside the delay
    range is located by binary search, then the offsets inside the windows
    are visited in lock step.  The work is proportional to the number of
    pairs in range.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    edges = np.asarray(edges, dtype=float)
    nb = edges.size - 1
    hist = np.zeros(nb, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return hist
    lo = np.searchsorted(b, a + edges[0], side="left")
    hi = np.searchsorted(b, a + edges[-1], side="left")
    width = hi - lo
    order = np.argsort(-width, kind="stable")
    lo, width, a_sorted = lo[order], width[order], a[order]
    n_active = np.count_nonzero(width > 0)
    uniform = np.allclose(np.diff(edges), edges[1] - edges[0], rtol=1e-12, atol=0)
    step = edges[1] - edges[0]
    offset = 0
    while n_active > 0:
        while n_active > 0 and width[n_active - 1] <= offset:
            n_active -= 1
        if n_active == 0:
            break
        d = b[lo[:n_active] + offset] - a_sorted[:n_active]
        if uniform:
            k = np.floor((d - edges[0]) / step).astype(np.int64)
            # guard against rounding at bin edges
            k -= (k < nb) & (k >= 0) & (d < edges[np.clip(k, 0, nb)])
            k += (k + 1 <= nb) & (k >= 0) & (d >= edges[np.clip(k + 1, 0, nb)])
        else:
            k = np.searchsorted(edges, d, side="right") - 1
        ok = (k >= 0) & (k < nb)
        hist += np.bincount(k[ok], minlength=nb)
        offset += 1
    return hist


def pair_histogram_bruteforce(a, b, edges) -> np.ndarray:
    """O(N_a N_b) reference for :func:`pair_histogram`."""
    d = np.subtract.outer(np.asarray(b, float), np.asarray(a, float)).ravel()
    k = np.searchsorted(edges, d, side="right") - 1
    ok = (k >= 0) & (k < len(edges) - 1)
    return np.bincount(k[ok], minlength=len(edges) - 1)


def estimate_g2_timestamps(a: TimestampSeries, b: TimestampSeries, bin_width: float,
                           tau_max: float, fold: bool = True, n_blocks: int = None,
                           n_boot: int = N_BOOTSTRAP, rng=None) -> G2Estimate:
    """Normalized coincidence histogram of delays ``t_b - t_a``.

    With ``fold`` the two delay signs are merged into bins centered at
    ``(j + 1/2) bin_width``.  The expected pair count of uncorrelated
    streams in a bin of total width ``w`` centered at lag ``tau`` is
    ``r_a r_b w (span - |tau|)``; the estimate divides by it.

    Standard errors are ``sqrt(N_pairs)`` over the same normalization, or,
    with ``n_blocks``, a bootstrap over equal time blocks of arm A.  Pair
    counts of bunched light are overdispersed, so the Poisson error is too
    small unless the light is close to uncorrelated.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptyArm("both detector arms need at least one photon")
    span = min(a.span, b.span)
    if not bin_width > 0 or not tau_max > 0:
        raise ValueError("bin_width and tau_max must be positive")
    if tau_max > span / 100:
        raise ValueError("tau_max must not exceed span / 100")
    nbin = int(round(tau_max / bin_width))
    edges = bin_width * np.arange(-nbin, nbin + 1)
    if n_blocks is None:
        hists = pair_histogram(a.times, b.times, edges)[None, :]
    else:
        cuts = np.searchsorted(a.times, span * np.arange(1, n_blocks) / n_blocks)
        hists = np.array([pair_histogram(part, b.times, edges)
                          for part in np.split(a.times, cuts)])
    ra, rb = len(a) / span, len(b) / span
    if fold:
        hists = hists[:, nbin:] + hists[:, :nbin][:, ::-1]
        tau = bin_width * (np.arange(nbin) + 0.5)
        width = 2 * bin_width
    else:
        tau = 0.5 * (edges[:-1] + edges[1:])
        width = bin_width
    counts = hists.sum(axis=0)
    expected = ra * rb * width * (span - np.abs(tau))
    if n_blocks is None:
        stderr = np.sqrt(counts) / expected
    else:
        # block pair counts over the block's share of arm-A photons
        w = as_stream(rng).generator.multinomial(n_blocks, np.full(n_blocks, 1.0 / n_blocks),
                                                 size=n_boot)
        n_a = np.diff(np.concatenate([[0], cuts, [len(a)]]))
        boot = (w @ hists) / (w @ n_a)[:, None]
        stderr = boot.std(axis=0, ddof=1) * len(a) / expected
    return G2Estimate(tau, counts / expected, stderr, bin_width)


# ------------------------------------------------------- trace correlation

def _block_lag_sums(x: np.ndarray, starts: np.ndarray, ends: np.ndarray, m: int) -> np.ndarray:
    """For each block, ``sum_{starts <= i < ends} x_i x_{i+k}`` for k = 0..m.

    Each block is correlated against itself extended by ``m`` samples
    (overlap-save), so terms with ``i + k`` beyond the end of ``x`` are absent.
    """
    n = x.size
    longest = int(np.max(ends - starts))
    nfft = next_fast_len(2 * longest + m)
    out = np.empty((starts.size, m + 1))
    chunk = max(1, (1 << 23) // nfft)
    for c0 in range(0, starts.size, chunk):
        st, en = starts[c0: c0 + chunk], ends[c0: c0 + chunk]
        head = np.zeros((st.size, nfft))
        ext = np.zeros((st.size, nfft))
        for r, (s, e) in enumerate(zip(st, en)):
            head[r, : e - s] = x[s:e]
            e2 = min(n, e + m)
            ext[r, : e2 - s] = x[s:e2]
        spec = np.conj(rfft(head, axis=1)) * rfft(ext, axis=1)
        out[c0: c0 + st.size] = irfft(spec, nfft, axis=1)[:, : m + 1]
    return out


def lag_products_direct(x: np.ndarray, m: int) -> np.ndarray:
    """``sum_i x_i x_{i+k}`` for k = 0..m by direct dot products."""
    x = np.asarray(x, dtype=float)
    return np.array([np.dot(x[: x.size - k], x[k:]) for k in range(m + 1)])


def g2_direct(x: np.ndarray, m: int) -> np.ndarray:
    """Reference estimator: mean lagged product over available pairs / mean^2."""
    x = np.asarray(x, dtype=float)
    counts = x.size - np.arange(m + 1)
    return lag_products_direct(x, m) / counts / x.mean() ** 2


def estimate_g2_trace(trace: IntensityTrace, tau_max: float, block_time: float = None,
                      n_boot: int = N_BOOTSTRAP, rng=None) -> G2Estimate:
    """g2 at lags ``k dt``, k = 0..round(tau_max/dt), with block-bootstrap errors.

    The trace is cut into at least 50 blocks of ``block_time`` (default
    ``10 * tau_max``, shortened if needed).  Each block contributes the
    lagged products that start inside it, so the block sums add up to the
    full-trace sums exactly.  Bootstrap replicates resample whole blocks.
    """
    x = np.asarray(trace.values, dtype=float)
    dt = trace.dt
    m = int(round(tau_max / dt))
    n = x.size
    if m < 0 or n < max(10 * m, 2):
        raise TraceTooShort(f"trace has {n} samples; need at least 10 * tau_max / dt = {10 * m}")
    mean = x.mean()
    if not mean > 0:
        raise ValueError("trace has zero mean intensity")
    length = int(round((10 * tau_max if block_time is None else block_time) / dt))
    length = max(1, min(length, n // MIN_BLOCKS))
    n_blocks = n // length
    starts = length * np.arange(n_blocks)
    ends = np.append(starts[1:], n)
    lens = ends - starts
    sums = _block_lag_sums(x, starts, ends, m)
    k = np.arange(m + 1)
    # number of products starting in each block that have a partner
    pairs = np.clip(np.minimum(ends[:, None], n - k[None, :]) - starts[:, None], 0, None)
    block_sum = np.add.reduceat(x, starts)

    def g_of(wts):
        num = wts @ sums / (wts @ pairs)
        mu = (wts @ block_sum) / (wts @ lens)
        return num / mu[..., None] ** 2 if np.ndim(mu) else num / mu**2

    g = g_of(np.ones(n_blocks))
    rng = as_stream(rng)
    w = rng.generator.multinomial(n_blocks, np.full(n_blocks, 1.0 / n_blocks), size=n_boot)
    boot = g_of(w.astype(float))
    stderr = boot.std(axis=0, ddof=1)
    return G2Estimate(dt * k, g, stderr, dt)


def rebin(est: G2Estimate, factor: int) -> G2Estimate:
    """Average ``factor`` neighbouring lags; errors combine as fully correlated."""
    factor = int(factor)
    if factor <= 1:
        return est
    nb = est.tau.size // factor
    sl = slice(0, nb * factor)
    shape = (nb, factor)
    return G2Estimate(est.tau[sl].reshape(shape).mean(1), est.values[sl].reshape(shape).mean(1),
                      est.stderr[sl].reshape(shape).mean(1), est.bin_width * factor)

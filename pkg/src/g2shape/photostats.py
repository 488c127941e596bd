"""Photon-number statistics through the Mandel formula.

For a window of length T the integrated intensity W = integral of I over the
window is dimensionless and counts are Poisson given W, so

    p(n) = sum_k A[n, k] P_k,   A[n, k] = exp(-W_k) W_k^n / n!

for a discrete law {W_k, P_k}.  :func:`invert_statistics` solves this for
non-negative P_k with a Lawson-Hanson active-set NNLS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .core import TimestampSeries, as_stream
from .errors import ResidualTooLarge

DEFAULT_N_MAX = 50
DEFAULT_GRID = (201, 10.0)
NORM_WEIGHT = 10.0
GRADIENT_TOL = 1e-12


@dataclass(frozen=True)
class PhotonStatistics:
    """p(n) for n = 0..n_max with a mask of entries that are constraints."""

    probs: np.ndarray
    specified: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("p(n) must be a non-empty 1-D array")
        if np.any(p < 0):
            raise ValueError("p(n) must be non-negative")
        mask = np.ones(p.size, bool) if self.specified is None else np.asarray(self.specified, bool)
        if mask.shape != p.shape:
            raise ValueError("specified mask must match p(n)")
        if p[mask].sum() > 1 + 1e-9:
            raise ValueError("specified probabilities sum to more than 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "specified", mask)

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    def to_json(self) -> dict:
        return {"pn": self.probs.tolist(), "specified": self.specified.tolist()}

    @classmethod
    def from_json(cls, obj) -> "PhotonStatistics":
        if isinstance(obj, list):
            return cls(obj)
        return cls(obj["pn"], obj.get("specified"))

    @classmethod
    def load(cls, path) -> "PhotonStatistics":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


@dataclass(frozen=True)
class WeightGrid:
    """Discrete integrated-intensity law ``P_k`` on nodes ``W_k``."""

    weights: np.ndarray
    probs: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if w.ndim != 1 or w.shape != p.shape or w.size == 0:
            raise ValueError("weights and probs must be 1-D arrays of equal length")
        if np.any(w < 0) or np.any(np.diff(w) <= 0):
            raise ValueError("weights must be non-negative and strictly increasing")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {p.sum():.9g}, not 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "probs", p)

    @property
    def mean(self) -> float:
        return float(self.probs @ self.weights)

    @property
    def second_moment(self) -> float:
        return float(self.probs @ self.weights**2)

    @property
    def bunching(self) -> float:
        """<W^2>/<W>^2, equal to g2(0) of the corresponding intensity law."""
        return self.second_moment / self.mean**2

    def intensity_law(self, window: float):
        """Levels ``I_k = W_k / T`` restricted to nodes with ``P_k > 0``."""
        from .levels import DiscreteIntensity

        keep = self.probs > 0
        p = self.probs[keep]
        return DiscreteIntensity(self.weights[keep] / window, p / p.sum())

    def to_json(self) -> dict:
        return {"W": self.weights.tolist(), "P": self.probs.tolist(),
                "residual": float(self.residual)}

    @classmethod
    def from_json(cls, obj) -> "WeightGrid":
        return cls(obj["W"], obj["P"], obj.get("residual", 0.0))

    @classmethod
    def load(cls, path) -> "WeightGrid":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def linear_grid(k: int = DEFAULT_GRID[0], w_max: float = DEFAULT_GRID[1]) -> np.ndarray:
    return np.linspace(0.0, w_max, k)


def parse_grid(text: str) -> np.ndarray:
    """``linear:<K>:<Wmax>``."""
    parts = text.split(":")
    if len(parts) != 3 or parts[0] != "linear":
        raise ValueError("grid must look like linear:<K>:<Wmax>")
    return linear_grid(int(parts[1]), float(parts[2]))


def mandel_matrix(weights, n_max: int = DEFAULT_N_MAX) -> np.ndarray:
    """``A[n, k] = exp(-W_k) W_k^n / n!`` evaluated in log space."""
    w = np.asarray(weights, dtype=float)
    n = np.arange(n_max + 1)[:, None]
    a = np.zeros((n_max + 1, w.size))
    pos = w > 0
    wp = w[pos][None, :]
    a[:, pos] = np.exp(n * np.log(wp) - wp - gammaln(n + 1))
    a[0, ~pos] = 1.0
    return a


def mandel_forward(grid: WeightGrid, n_max: int = DEFAULT_N_MAX) -> PhotonStatistics:
    return PhotonStatistics(mandel_matrix(grid.weights, n_max) @ grid.probs)


# ---------------------------------------------------------------------- NNLS

def nnls(a: np.ndarray, b: np.ndarray, tol: float = GRADIENT_TOL, max_iter: int = None):
    """Lawson-Hanson active-set solution of min ||a x - b|| subject to x >= 0.

    Terminates when every reduced gradient on the active (zero) set is at
    most ``tol``.  Returns ``(x, residual_norm)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    max_iter = 3 * n if max_iter is None else max_iter
    x = np.zeros(n)
    passive = np.zeros(n, bool)
    w = a.T @ (b - a @ x)
    it = 0
    while (~passive).any() and w[~passive].max() > tol:
        j = np.flatnonzero(~passive)[np.argmax(w[~passive])]
        passive[j] = True
        first = True
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("NNLS did not converge")
            z = np.zeros(n)
            idx = np.flatnonzero(passive)
            z[idx] = np.linalg.lstsq(a[:, idx], b, rcond=None)[0]
            if z[idx].min() > 0:
                break
            if first and z[j] <= 0:
                # rounding made the entering column useless; stop here
                passive[j] = False
                return x, float(np.linalg.norm(a @ x - b))
            first = False
            neg = idx[z[idx] <= 0]
            ratios = x[neg] / (x[neg] - z[neg])
            block = neg[np.argmin(ratios)]
            x = x + ratios.min() * (z - x)
            x[block] = 0.0
            passive &= x > 0
            x[~passive] = 0.0
        x = z
        w = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(a @ x - b))


def invert_statistics(target: PhotonStatistics, weights=None, *, threshold: float = 1e-3,
                      norm_weight: float = NORM_WEIGHT, tol: float = GRADIENT_TOL,
                      bunching: float = None, max_rounds: int = 50) -> WeightGrid:
    """Non-negative ``P_k`` on ``weights`` whose Mandel transform fits ``target``.

    Rows are the specified p(n) entries plus the normalization row
    ``norm_weight * sum P = norm_weight``.  The solution is renormalized to
    sum to one; ``residual`` is the norm of the fit over the specified rows.

    ``bunching`` optionally pins ``<W^2>/<W>^2`` (the g2(0) of the resulting
    intensity law).  The constraint ``sum P_k (W_k^2 - g0 m W_k) = 0`` is
    linear for a fixed mean ``m`` and is added as one more weighted row;
    ``m`` is updated from the solution until it settles.

    Raises:
        ResidualTooLarge: when the residual exceeds ``threshold``.
    """
    w = linear_grid() if weights is None else np.asarray(weights, dtype=float)
    rows = np.flatnonzero(target.specified)
    if w.size < rows.size:
        raise ValueError("need at least as many grid nodes as specified entries")
    a_full = mandel_matrix(w, target.n_max)
    a = np.vstack([a_full[rows], norm_weight * np.ones((1, w.size))])
    b = np.concatenate([target.probs[rows], [norm_weight]])
    p, _ = nnls(a, b, tol)
    if bunching is not None:
        scale = norm_weight / max(1.0, w.max() ** 2)
        for _ in range(max_rounds):
            m = float(p @ w) / p.sum()
            row = scale * (w**2 - bunching * m * w)
            p_new, _ = nnls(np.vstack([a, row]), np.append(b, 0.0), tol)
            done = abs(float(p_new @ w) / p_new.sum() - m) <= 1e-12 * max(m, 1.0)
            p = p_new
            if done:
                break
    total = p.sum()
    if not total > 0:
        raise ResidualTooLarge("NNLS returned the zero vector")
    p = p / total
    residual = float(np.linalg.norm(a_full[rows] @ p - target.probs[rows]))
    if residual > threshold:
        raise ResidualTooLarge(
            f"residual {residual:.3g} exceeds {threshold:.3g}; the target may be nonclassical "
            "or outside the weight grid")
    return WeightGrid(w, p, residual)


# ------------------------------------------------------------------ sampling

def sample_intensity(grid: WeightGrid, window: float, rng=None, size=None):
    """Levels ``W_k / T`` with k the first index whose cumulative P exceeds r."""
    if not window > 0:
        raise ValueError("window must be positive")
    rng = as_stream(rng)
    cdf = np.cumsum(grid.probs)
    r = rng.generator.random(1 if size is None else size)
    k = np.minimum(np.searchsorted(cdf, r, side="right"), grid.weights.size - 1)
    out = grid.weights[k] / window
    return float(out[0]) if size is None else out


def count_photons(ts: TimestampSeries, window: float, n_max: int = None,
                  check_span: bool = True) -> PhotonStatistics:
    """Empirical p(n) over consecutive disjoint windows of length ``window``.

    A trailing partial window is dropped.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    if check_span and ts.span < 100 * window:
        raise ValueError("the series must span at least 100 windows")
    n_win = max(1, int(np.floor(ts.span / window + 1e-9)))
    idx = np.floor(ts.times / window).astype(np.int64)
    idx = idx[idx < n_win]
    counts = np.bincount(np.bincount(idx, minlength=n_win))
    if n_max is not None:
        counts = np.pad(counts, (0, max(0, n_max + 1 - counts.size)))[: n_max + 1]
    return PhotonStatistics(counts / n_win)


def window_counts(ts: TimestampSeries, window: float) -> np.ndarray:
    n_win = max(1, int(np.floor(ts.span / window + 1e-9)))
    idx = np.floor(ts.times / window).astype(np.int64)
    return np.bincount(idx[idx < n_win], minlength=n_win)


@dataclass(frozen=True)
class CountEstimate:
    """Empirical p(n) with block-bootstrap standard errors."""

    probs: np.ndarray
    stderr: np.ndarray
    n_windows: int


def estimate_pn(ts: TimestampSeries, window: float, n_max: int, block_windows: int = None,
                n_boot: int = 200, rng=None) -> CountEstimate:
    """p(n) over disjoint windows with errors from resampling blocks of windows.

    Counts in neighbouring windows are correlated whenever the intensity
    holds for several windows, so the plain multinomial error would be too
    small.  ``block_windows`` defaults to the number of windows giving 50
    blocks, capped at 1000.
    """
    counts = window_counts(ts, window)
    n_win = counts.size
    if block_windows is None:
        block_windows = max(1, min(1000, n_win // 50))
    n_blocks = n_win // block_windows
    if n_blocks < 2:
        raise ValueError("too few windows for block bootstrap")
    used = counts[: n_blocks * block_windows].reshape(n_blocks, block_windows)
    clipped = np.minimum(used, n_max + 1)
    # per-block histograms with an overflow bin at n_max + 1
    rows = np.repeat(np.arange(n_blocks), block_windows)
    flat = rows * (n_max + 2) + clipped.ravel()
    hist = np.bincount(flat, minlength=n_blocks * (n_max + 2)).reshape(n_blocks, n_max + 2)
    probs = np.bincount(np.minimum(counts, n_max + 1), minlength=n_max + 2)[: n_max + 1] / n_win
    rng = as_stream(rng)
    w = rng.generator.multinomial(n_blocks, np.full(n_blocks, 1.0 / n_blocks), size=n_boot)
    boot = (w @ hist)[:, : n_max + 1] / (n_blocks * block_windows)
    return CountEstimate(probs, boot.std(axis=0, ddof=1), n_win)


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())

"""End-to-end runs: build a source, synthesize, detect, estimate and check.

A run is described by a JSON config (``version`` 1).  Hill mode::

    {"version": 1, "mode": "hill", "seed": 1,
     "source": {"hills": [{"builtin": "gauss"}], "lambda": 0.3989,
                "duration": 2e5, "dt": 0.01},
     "estimator": {"tau_max": 5, "bin_width": 0.1}}

Levels mode::

    {"version": 1, "mode": "levels", "seed": 1,
     "target_g2": {"kind": "exponential", "amplitude": 1, "rate": 1},
     "stats": {"kind": "thermal", "mean": 1},
     "source": {"duration": 2e5, "window": 0.05},
     "estimator": {"tau_max": 5, "bin_width": 0.05}}

Targets and statistics may also be file paths (CSV and JSON respectively).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import AutocorrTarget, RandomStream, SampledCurve, read_curve_csv, write_curve_csv
from .detection import (G2Estimate, estimate_g2_timestamps, estimate_g2_trace,
                        generate_timestamps, hbt_split)
from .errors import ConfigError
from .hills import (invert_hill, predict_g2_background, predict_g2_mixture,
                    predict_g2_nonoverlap)
from .levels import (DiscreteIntensity, ExponentialIntensity, LevelProcessSpec, bunching,
                     build_survival, level_switch_times, predict_g2_levels, trace_from_levels,
                     validate_target)
from .photostats import (PhotonStatistics, estimate_pn, invert_statistics, parse_grid,
                         total_variation)
from .synthesis import spec_from_json, synthesize_trace

CONFIG_VERSION = 1
Z_LIMIT = 3.0
# largest number of timestamp pairs the HBT histogram is asked to visit
HBT_PAIR_BUDGET = 5e7
HBT_BLOCKS = 50

_TOP_KEYS = {"version", "mode", "seed", "source", "target_g2", "stats", "estimator",
             "output_dir", "checks", "excerpt"}
_EST_KEYS = {"tau_max", "bin_width", "efficiency", "hbt_efficiency", "block_time", "n_boot"}
_LEVEL_SOURCE_KEYS = {"duration", "window", "dt", "intensity", "grid", "match_bunching",
                      "tail_tol"}
_CHECK_KEYS = {"z_limit", "tv_limit", "tv_n_max", "mean_delay_rel", "g0_rel"}

# random sub-stream ids of the pipeline stages
STREAM_SOURCE, STREAM_DETECT, STREAM_SPLIT, STREAM_BOOT, STREAM_PN = 1, 2, 3, 4, 5


@dataclass
class PipelineConfig:
    mode: str
    seed: int
    source: dict
    estimator: dict
    target_g2: object = None
    stats: object = None
    checks: dict = field(default_factory=dict)
    excerpt: float = None
    output_dir: str = None
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, obj: dict, base_dir=".") -> "PipelineConfig":
        unknown = set(obj) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if obj.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config 'version' must be {CONFIG_VERSION}")
        mode = obj.get("mode")
        if mode not in ("hill", "levels"):
            raise ConfigError("'mode' must be 'hill' or 'levels'")
        for key in ("seed", "source", "estimator"):
            if key not in obj:
                raise ConfigError(f"config is missing {key!r}")
        est = dict(obj["estimator"])
        bad = set(est) - _EST_KEYS
        if bad:
            raise ConfigError(f"unknown estimator keys: {sorted(bad)}")
        if "tau_max" not in est:
            raise ConfigError("estimator needs 'tau_max'")
        checks = dict(obj.get("checks", {}))
        bad = set(checks) - _CHECK_KEYS
        if bad:
            raise ConfigError(f"unknown check keys: {sorted(bad)}")
        if mode == "levels":
            if "target_g2" not in obj:
                raise ConfigError("levels mode needs 'target_g2'")
            if obj["source"].get("intensity", "from-stats") == "from-stats" and "stats" not in obj:
                raise ConfigError("levels mode with statistics-driven levels needs 'stats'")
            bad = set(obj["source"]) - _LEVEL_SOURCE_KEYS
            if bad:
                raise ConfigError(f"unknown levels source keys: {sorted(bad)}")
        base = Path(base_dir)
        for key in ("target_g2", "stats"):
            ref = obj.get(key)
            if isinstance(ref, str) and not (base / ref).exists() and not Path(ref).exists():
                raise ConfigError(f"{key} file {ref!r} does not exist")
        return cls(mode, int(obj["seed"]), dict(obj["source"]), est, obj.get("target_g2"),
                   obj.get("stats"), checks, obj.get("excerpt"), obj.get("output_dir"), base)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(obj, path.parent)

    def resolve(self, ref) -> Path:
        p = Path(ref)
        return p if p.is_absolute() or p.exists() else self.base_dir / p


# ------------------------------------------------------------- target forms

def target_from_spec(spec, base=lambda p: Path(p)) -> AutocorrTarget:
    """Build a target from a CSV path or an analytic description.

    Kinds: ``exponential`` (1 + a exp(-rate tau)), ``hyperbolic``
    (1 + a / (2 tau + 1)), ``gauss`` (1 + a exp(-tau^2 / 2)).
    """
    if isinstance(spec, (str, Path)):
        curve = read_curve_csv(base(spec))
        if abs(curve.t_start) < 1e-12:
            return AutocorrTarget(curve, centered=False)
        return AutocorrTarget(curve, centered=True)
    spec = dict(spec)
    kind = spec.pop("kind", None)
    amp = float(spec.pop("amplitude", 1.0))
    dt = float(spec.pop("dt", 1e-3))
    if kind == "exponential":
        rate = float(spec.pop("rate", 1.0))
        tau_max = float(spec.pop("tau_max", 30.0 / rate))
        func = lambda t: 1 + amp * np.exp(-rate * np.abs(t))  # noqa: E731
    elif kind == "hyperbolic":
        tau_max = float(spec.pop("tau_max", 1000.0))
        func = lambda t: 1 + amp / (2 * np.abs(t) + 1)  # noqa: E731
    elif kind == "gauss":
        tau_max = float(spec.pop("tau_max", 10.0))
        func = lambda t: 1 + amp * np.exp(-t**2 / 2)  # noqa: E731
    else:
        raise ConfigError(f"unknown target kind {kind!r}")
    if spec:
        raise ConfigError(f"unknown target keys: {sorted(spec)}")
    return AutocorrTarget.from_function(func, tau_max, dt)


def stats_from_spec(spec, base=lambda p: Path(p)) -> PhotonStatistics:
    """Photon statistics from a JSON path, an inline object or a named law.

    ``{"kind": "thermal", "mean": m, "n_max": 50}`` gives m^n / (1 + m)^(n+1).
    """
    if isinstance(spec, (str, Path)):
        return PhotonStatistics.load(base(spec))
    spec = dict(spec)
    if "pn" in spec:
        return PhotonStatistics.from_json(spec)
    if spec.get("kind") == "thermal":
        m = float(spec.get("mean", 1.0))
        n = np.arange(int(spec.get("n_max", 50)) + 1)
        return PhotonStatistics(m**n / (1 + m) ** (n + 1))
    raise ConfigError("statistics must be a path, {'pn': [...]} or {'kind': 'thermal'}")


# ------------------------------------------------------------------ helpers

def _stage(name):
    """Tag exceptions raised inside a stage with the stage name."""
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not hasattr(exc, "stage"):
                exc.stage = name
            return False
    return _Ctx()


def _check(name, value, limit, passed=None, kind="max"):
    if passed is None:
        passed = bool(np.isfinite(value) and value <= limit)
    return {"name": name, "value": float(value), "limit": float(limit), "passed": bool(passed)}


def _strided(est: G2Estimate, step: float) -> G2Estimate:
    stride = max(1, int(round(step / est.bin_width)))
    return est.select(np.arange(0, est.tau.size, stride))


def _hbt_efficiency(n_photons: int, span: float, tau_max: float) -> float:
    rate = n_photons / span
    pairs = 0.5 * n_photons * 0.5 * rate * 2 * tau_max * 2
    return float(min(1.0, math.sqrt(HBT_PAIR_BUDGET / pairs))) if pairs > 0 else 1.0


def _write_pn(path, n, probs, stderr, target, specified):
    lines = ["n,p,stderr,target,specified"]
    for k in range(n.size):
        lines.append(f"{int(n[k])},{float(probs[k])!r},{float(stderr[k])!r},"
                     f"{float(target[k])!r},{int(specified[k])}")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


# ------------------------------------------------------------------ pipeline

def run_pipeline(config: PipelineConfig, out_dir=None, threads: int = 1) -> dict:
    """Run all stages and write artifacts plus ``report.json`` into ``out_dir``.

    The report lists every check with its value and limit; ``passed`` is
    true only if all checks pass.  Exceptions carry the failing stage in a
    ``stage`` attribute.
    """
    out = Path(out_dir or config.output_dir or "g2shape-out")
    out.mkdir(parents=True, exist_ok=True)
    est_cfg = config.estimator
    tau_max = float(est_cfg["tau_max"])
    z_limit = float(config.checks.get("z_limit", Z_LIMIT))
    report = {"version": __version__, "config_version": CONFIG_VERSION, "mode": config.mode,
              "seed": config.seed, "generator": RandomStream(config.seed).identity["generator"],
              "stages": [], "checks": []}

    if config.mode == "hill":
        trace, predicted, extras = _hill_source(config, out, report, threads)
    else:
        trace, predicted, extras = _levels_source(config, out, report)

    excerpt = config.excerpt if config.excerpt is not None else min(20 * tau_max, trace.duration)
    n_ex = max(2, min(len(trace.curve), int(round(excerpt / trace.dt))))
    write_curve_csv(SampledCurve(0.0, trace.dt, trace.values[:n_ex]), out / "trace_excerpt.csv")
    write_curve_csv(predicted, out / "g2_predicted.csv")

    with _stage("estimate"):
        est = estimate_g2_trace(trace, tau_max, est_cfg.get("block_time"),
                                int(est_cfg.get("n_boot", 200)),
                                RandomStream(config.seed, STREAM_BOOT))
    est.to_csv(out / "g2_estimated.csv")
    report["stages"].append("estimate")
    bin_width = float(est_cfg.get("bin_width", 10 * trace.dt))
    coarse = _strided(est, bin_width)
    pred_coarse = np.interp(coarse.tau, predicted.times, predicted.values)
    z = coarse.z_scores(pred_coarse)
    report["g2_trace"] = {"g2_0": float(est.values[0]), "stderr_0": float(est.stderr[0]),
                          "predicted_0": float(predicted.values[0]),
                          "max_abs_z": float(np.max(np.abs(z)))}
    report["checks"].append(_check("g2_trace_within_3sigma", np.max(np.abs(z)), z_limit))
    if "target" in extras:
        tgt = extras["target"]
        zt = coarse.z_scores(np.interp(coarse.tau, tgt.times, tgt.values))
        report["g2_trace"]["max_abs_z_target"] = float(np.max(np.abs(zt)))
        report["checks"].append(_check("g2_trace_target_within_3sigma", np.max(np.abs(zt)),
                                       z_limit))
    if "g0_rel" in config.checks:
        rel = abs(est.values[0] - predicted.values[0]) / predicted.values[0]
        report["checks"].append(_check("g2_0_relative", rel, float(config.checks["g0_rel"])))

    with _stage("detect"):
        eff = float(est_cfg.get("efficiency", 1.0))
        ts = generate_timestamps(trace, eff, RandomStream(config.seed, STREAM_DETECT))
        report["photons"] = len(ts)
    report["stages"].append("detect")

    if config.mode == "levels":
        _levels_statistics(config, ts, extras, out, report)

    with _stage("hbt"):
        hbt_eff = est_cfg.get("hbt_efficiency")
        if hbt_eff is None:
            hbt_eff = _hbt_efficiency(len(ts), ts.span, tau_max)
        split_rng = RandomStream(config.seed, STREAM_SPLIT)
        keep = split_rng.spawn(0).generator.random(len(ts)) < hbt_eff
        thinned = type(ts)(ts.times[keep], ts.span)
        arm_a, arm_b = hbt_split(thinned, split_rng.spawn(1))
        hbt = estimate_g2_timestamps(arm_a, arm_b, bin_width, tau_max, n_blocks=HBT_BLOCKS,
                                     rng=RandomStream(config.seed, STREAM_BOOT).spawn(1))
    hbt.to_csv(out / "g2_hbt.csv")
    report["stages"].append("hbt")
    pred_hbt = _bin_average(predicted, hbt.tau, bin_width)
    zh = hbt.z_scores(pred_hbt)
    finite = np.isfinite(zh)
    report["g2_hbt"] = {"efficiency": float(hbt_eff), "arm_a": len(arm_a), "arm_b": len(arm_b),
                        "max_abs_z": float(np.max(np.abs(zh[finite]))) if finite.any() else None}
    report["checks"].append(_check("g2_hbt_within_3sigma",
                                   np.max(np.abs(zh)) if zh.size else 0.0, z_limit))

    report["passed"] = all(c["passed"] for c in report["checks"])
    report["failures"] = [c["name"] for c in report["checks"] if not c["passed"]]
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report


def _bin_average(curve: SampledCurve, centers: np.ndarray, width: float) -> np.ndarray:
    """Average of a one-sided curve over ``[c - width/2, c + width/2)``."""
    sub = max(4, int(math.ceil(width / curve.dt)))
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    pts = np.abs(centers[:, None] + width * offs[None, :])
    return np.interp(pts, curve.times, curve.values).mean(axis=1)


def _hill_source(config: PipelineConfig, out: Path, report: dict, threads: int):
    src = dict(config.source)
    with _stage("invert"):
        if config.target_g2 is not None:
            target = target_from_spec(config.target_g2, config.resolve)
            hill = invert_hill(target)
            if "lambda" not in src:
                raise ConfigError("an inverted hill needs an explicit 'lambda'")
            dt = float(src.get("dt", target.curve.dt))
            if abs(dt - target.curve.dt) > 1e-12 * dt:
                raise ConfigError("source dt must equal the target grid spacing")
            write_curve_csv(hill.curve, out / "hill.csv")
            src["hills"] = [{"csv": str((out / "hill.csv").resolve())}]
            report["stages"].append("invert")
        spec = spec_from_json(src, config.base_dir)
    with _stage("synthesize"):
        trace = synthesize_trace(spec, RandomStream(config.seed, STREAM_SOURCE), threads)
    report["stages"].append("synthesize")
    with _stage("predict"):
        if spec.min_spacing > 0:
            if len(spec.hills) != 1 or spec.background:
                raise ConfigError("the non-overlap predictor supports one hill without background")
            h = spec.hills[0][0]
            pred = predict_g2_nonoverlap(h, spec.lam, spec.min_spacing,
                                         tau_max=float(config.estimator["tau_max"]))
        elif spec.background > 0:
            if len(spec.hills) != 1:
                raise ConfigError("the background predictor supports one hill")
            pred = predict_g2_background(spec.hills[0][0], spec.lam, spec.background)
        else:
            pred = predict_g2_mixture(spec.hills, spec.lam)
    report["source"] = {"lambda": spec.lam, "mean_intensity": spec.mean_intensity(),
                        "trace_mean": float(trace.values.mean())}
    return trace, pred.nonnegative(), {}


def _levels_source(config: PipelineConfig, out: Path, report: dict):
    src = config.source
    window = float(src.get("window", 0.0))
    with _stage("validate"):
        target = target_from_spec(config.target_g2, config.resolve)
        tail_tol = float(src.get("tail_tol", 1e-2))
        val = validate_target(target, tail_tol)
    report["stages"].append("validate")
    report["validation"] = {"g0": val.g0, "slope0": val.slope0, "mean_delay": val.mean_delay}
    with _stage("survival"):
        survival = build_survival(target, tail_tol, window)
    stats = None
    intensity = src.get("intensity", "from-stats")
    with _stage("statistics"):
        if intensity == "from-stats":
            if window <= 0:
                raise ConfigError("statistics-driven levels need a positive window")
            stats = stats_from_spec(config.stats, config.resolve)
            grid = parse_grid(src.get("grid", "linear:201:10"))
            pin = val.g0 if src.get("match_bunching", True) else None
            wg = invert_statistics(stats, grid, bunching=pin)
            wg.save(out / "weight_grid.json")
            law = wg.intensity_law(window)
            report["statistics"] = {"residual": wg.residual, "bunching": wg.bunching}
            report["checks"].append(_check("nnls_residual", wg.residual, 1e-3))
        elif isinstance(intensity, str) and intensity.startswith("exponential:"):
            law = ExponentialIntensity(float(intensity.split(":", 1)[1]))
        elif isinstance(intensity, dict):
            law = DiscreteIntensity(intensity["levels"], intensity["probs"])
        else:
            raise ConfigError(f"unknown intensity law {intensity!r}")
    report["stages"].append("statistics")
    spec = LevelProcessSpec(law, survival, float(src["duration"]), window)
    dt = float(src.get("dt", window if window > 0 else 0.01))
    with _stage("synthesize"):
        edges, levels, raw = level_switch_times(spec, RandomStream(config.seed, STREAM_SOURCE),
                                                return_raw=True)
        trace = trace_from_levels(edges, levels, spec.duration, dt, window)
    report["stages"].append("synthesize")
    tau_grid = dt * np.arange(int(round(float(config.estimator["tau_max"]) / dt)) + 1)
    pred = predict_g2_levels(spec, tau_grid).curve
    mean_target = val.mean_delay
    rel = abs(raw.mean() - mean_target) / mean_target
    report["delays"] = {"empirical_mean": float(raw.mean()), "target_mean": mean_target,
                        "held_mean": float(np.diff(edges).mean()), "count": int(raw.size)}
    # heavy-tailed delay laws have no finite variance, so the check is opt-out
    limit = config.checks.get("mean_delay_rel", 0.01)
    if limit is not None:
        report["checks"].append(_check("mean_delay_relative", rel, float(limit)))
    report["source"] = {"law_bunching": bunching(law), "target_g0": val.g0}
    return trace, pred, {"stats": stats, "window": window, "target": target.nonnegative()}


def _levels_statistics(config, ts, extras, out: Path, report: dict) -> None:
    window = extras["window"]
    if window <= 0:
        return
    stats = extras["stats"]
    n_max = stats.n_max if stats is not None else 50
    with _stage("count"):
        pn = estimate_pn(ts, window, n_max, rng=RandomStream(config.seed, STREAM_PN))
    report["stages"].append("count")
    n = np.arange(n_max + 1)
    target = stats.probs if stats is not None else np.full(n_max + 1, np.nan)
    mask = stats.specified if stats is not None else np.zeros(n_max + 1, bool)
    _write_pn(out / "pn_empirical.csv", n, pn.probs, pn.stderr, target, mask)
    report["pn"] = {"windows": pn.n_windows}
    if stats is None:
        return
    z_limit = float(config.checks.get("z_limit", Z_LIMIT))
    # entries never observed have no bootstrap spread; fall back to the
    # multinomial error of the target
    err = np.maximum(pn.stderr, np.sqrt(target * (1 - target) / pn.n_windows))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(pn.probs - target) / err
    z = np.where(err > 0, z, np.where(pn.probs == target, 0.0, np.inf))[mask]
    report["pn"]["max_abs_z"] = float(z.max()) if z.size else 0.0
    report["checks"].append(_check("pn_specified_within_3sigma", report["pn"]["max_abs_z"], z_limit))
    if mask.all():
        m = int(config.checks.get("tv_n_max", 15))
        tv = total_variation(pn.probs[: m + 1], target[: m + 1])
        report["pn"]["tv_distance"] = tv
        report["checks"].append(_check("pn_total_variation", tv,
                                       float(config.checks.get("tv_limit", 0.01))))


# ------------------------------------------------------------------ figures

def emit_figure_data(run_dir, fig_dir=None, render: bool = True) -> list:
    """Plot-ready CSVs (and PNGs when ``render``) from a pipeline directory.

    Files: ``signal_excerpt.csv``, ``g2_overlay.csv`` and, for levels runs,
    ``statistics.csv``.  Column order is fixed.
    """
    run = Path(run_dir)
    fig = Path(fig_dir) if fig_dir is not None else run / "figures"
    for name in ("trace_excerpt.csv", "g2_predicted.csv", "g2_estimated.csv"):
        if not (run / name).exists():
            raise FileNotFoundError(f"missing pipeline artifact {run / name}")
    fig.mkdir(parents=True, exist_ok=True)
    written = []

    ex = read_curve_csv(run / "trace_excerpt.csv")
    _write_columns(fig / "signal_excerpt.csv", ["t", "intensity"], [ex.times, ex.values])
    written.append(fig / "signal_excerpt.csv")

    pred = read_curve_csv(run / "g2_predicted.csv")
    est = G2Estimate.from_csv(run / "g2_estimated.csv")
    cols = [est.tau, np.interp(est.tau, pred.times, pred.values), est.values, est.stderr]
    names = ["tau", "g2_predicted", "g2_estimated", "stderr"]
    if (run / "g2_hbt.csv").exists():
        hbt = G2Estimate.from_csv(run / "g2_hbt.csv")
        cols += [np.interp(est.tau, hbt.tau, hbt.values, left=np.nan, right=np.nan)]
        names += ["g2_hbt"]
    _write_columns(fig / "g2_overlay.csv", names, cols)
    written.append(fig / "g2_overlay.csv")

    if (run / "pn_empirical.csv").exists():
        d = np.genfromtxt(run / "pn_empirical.csv", delimiter=",", names=True)
        _write_columns(fig / "statistics.csv", ["n", "p_target", "p_empirical", "stderr"],
                       [d["n"], d["target"], d["p"], d["stderr"]], integer=("n",))
        written.append(fig / "statistics.csv")

    if render:
        from .plotting import render_figures

        written += render_figures(fig)
    return written


def _write_columns(path, names, cols, integer=()) -> None:
    lines = [",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(str(int(v)) if name in integer else repr(float(v))
                              for name, v in zip(names, row)))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


# ----------------------------------------------------------------- presets

PRESETS = {
    "table1-gauss": {
        "version": 1, "mode": "hill", "seed": 1,
        "source": {"hills": [{"builtin": "gauss"}], "lambda": 1 / math.sqrt(2 * math.pi),
                   "duration": 2e5, "dt": 0.01},
        "estimator": {"tau_max": 5.0, "bin_width": 0.1},
        "checks": {"g0_rel": 0.05},
    },
    "table2-sim1": {
        "version": 1, "mode": "levels", "seed": 1,
        "target_g2": {"kind": "exponential", "amplitude": 1.0, "rate": 1.0},
        "stats": {"kind": "thermal", "mean": 1.0, "n_max": 50},
        "source": {"duration": 2e5, "window": 0.05},
        "estimator": {"tau_max": 5.0, "bin_width": 0.05},
    },
    "table2-sim2": {
        "version": 1, "mode": "levels", "seed": 1,
        "target_g2": {"kind": "hyperbolic", "amplitude": 0.287},
        "stats": {"pn": [0.1] * 6 + [0.0] * 45, "specified": [True] * 6 + [False] * 45},
        "source": {"duration": 2e5, "window": 0.05},
        "estimator": {"tau_max": 5.0, "bin_width": 0.05},
        "checks": {"mean_delay_rel": None},
    },
}

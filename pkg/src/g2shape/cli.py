"""``g2shape`` command line.

Every subcommand writes into ``--out-dir`` (default: current directory).
Exit codes: 0 success, 1 a pipeline check failed, 2 invalid input or a
module error (the message names the failing stage when there is one).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import (AutocorrTarget, IntensityTrace, RandomStream, read_curve_csv, read_timestamps,
                   write_curve_csv, write_timestamps)
from .detection import (estimate_g2_timestamps, estimate_g2_trace, generate_timestamps,
                        hbt_split)
from .errors import ConfigError, G2ShapeError
from .hills import (HillShape, SignPattern, eom_voltage, invert_hill, predict_g2_background,
                    predict_g2_mixture, predict_g2_nonoverlap)
from .levels import (DiscreteIntensity, ExponentialIntensity, LevelProcessSpec, build_survival,
                     synthesize_levels)
from .photostats import (DEFAULT_N_MAX, PhotonStatistics, WeightGrid, estimate_pn,
                         invert_statistics, parse_grid)
from .pipeline import PRESETS, PipelineConfig, emit_figure_data, run_pipeline, target_from_spec
from .synthesis import load_spec, synthesize_trace


def _out(args, name: str, flag: str = "out") -> Path:
    """``--out`` if given, else ``name`` inside ``--out-dir``."""
    explicit = getattr(args, flag, None)
    path = Path(explicit) if explicit else Path(args.out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _target(text: str) -> AutocorrTarget:
    if text.lstrip().startswith("{"):
        return target_from_spec(json.loads(text))
    return target_from_spec(text)


def _trace(path) -> IntensityTrace:
    return IntensityTrace(read_curve_csv(path))


def _pick(args, *names):
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            return value
    raise ConfigError(f"missing required input --{names[0].replace('_', '-')}")


# ----------------------------------------------------------------- commands

def cmd_invert_hill(args):
    target = _target(_pick(args, "g2", "target"))
    sign = "auto" if args.sign == "auto" else SignPattern.load(args.sign)
    hill = invert_hill(target, sign, neg_tol=args.neg_tol)
    path = _out(args, "hill.csv")
    write_curve_csv(hill.curve, path)
    print(path)


def cmd_predict_g2(args):
    spec = load_spec(_pick(args, "spec", "spec_file"))
    if spec.min_spacing > 0:
        if len(spec.hills) != 1:
            raise ConfigError("the non-overlap predictor supports a single hill")
        g2 = predict_g2_nonoverlap(spec.hills[0][0], spec.lam, spec.min_spacing, args.max_tau)
    elif spec.background > 0:
        if len(spec.hills) != 1:
            raise ConfigError("the background predictor supports a single hill")
        g2 = predict_g2_background(spec.hills[0][0], spec.lam, spec.background)
    else:
        g2 = predict_g2_mixture(spec.hills, spec.lam)
    path = _out(args, "g2_predicted.csv")
    write_curve_csv(g2.curve, path)
    print(path)


def cmd_synth_hills(args):
    spec = load_spec(_pick(args, "spec", "spec_file"))
    trace = synthesize_trace(spec, RandomStream(args.seed, 1), args.threads)
    path = _out(args, "trace.csv")
    write_curve_csv(trace.curve, path)
    print(path)


def _intensity_law(text: str, window: float):
    kind, _, rest = text.partition(":")
    if kind == "exponential":
        return ExponentialIntensity(float(rest))
    if kind == "discrete":
        if "/" in rest and not rest.lstrip().startswith("{"):
            levels, _, probs = rest.partition("/")
            obj = {"levels": [float(v) for v in levels.split(",")],
                   "probs": [float(v) for v in probs.split(",")]}
        elif rest.lstrip().startswith("{"):
            obj = json.loads(rest)
        else:
            obj = json.loads(Path(rest).read_text())
        return DiscreteIntensity(obj["levels"], obj["probs"])
    if kind == "from-stats":
        if not window > 0:
            raise ConfigError("from-stats levels need a positive --window")
        return WeightGrid.load(rest).intensity_law(window)
    raise ConfigError("--intensity must be exponential:<mean>, discrete:<json> "
                      "or from-stats:<weight_grid.json>")


def cmd_synth_levels(args):
    target = _target(args.g2)
    survival = build_survival(target, args.tail_tol, args.window)
    spec = LevelProcessSpec(_intensity_law(args.intensity, args.window), survival,
                            args.duration, args.window)
    dt = args.dt if args.dt else (args.window if args.window > 0 else 0.01)
    trace = synthesize_levels(spec, RandomStream(args.seed, 1), dt)
    path = _out(args, "trace.csv")
    write_curve_csv(trace.curve, path)
    print(path)


def cmd_invert_stats(args):
    stats = PhotonStatistics.load(_pick(args, "pn", "stats"))
    grid = invert_statistics(stats, parse_grid(args.grid), threshold=args.threshold,
                             bunching=args.bunching)
    path = _out(args, "weight_grid.json")
    grid.save(path)
    print(f"{path} residual={grid.residual:.3g} bunching={grid.bunching:.6g}")


def cmd_detect(args):
    trace = _trace(_pick(args, "trace", "trace_file"))
    ts = generate_timestamps(trace, args.efficiency, RandomStream(args.seed, 2))
    if args.split:
        a, b = hbt_split(ts, RandomStream(args.seed, 3))
        path_a, path_b = _out(args, "arm_a.txt", "out_a"), _out(args, "arm_b.txt", "out_b")
        write_timestamps(a, path_a)
        write_timestamps(b, path_b)
        print(path_a, path_b)
    else:
        path = _out(args, "timestamps.txt")
        write_timestamps(ts, path)
        print(path)


def cmd_estimate_g2(args):
    if args.trace:
        est = estimate_g2_trace(_trace(args.trace), args.max_tau, args.block_time,
                                rng=RandomStream(args.seed, 4))
    else:
        if not args.timestamps or len(args.timestamps) > 2:
            raise ConfigError("give either --trace or --timestamps A [B]")
        if not args.bin:
            raise ConfigError("--bin is required for timestamps")
        series = [read_timestamps(p) for p in args.timestamps]
        if len(series) == 1:
            # a single stream is split as in an HBT setup
            series = list(hbt_split(series[0], RandomStream(args.seed, 3)))
        est = estimate_g2_timestamps(series[0], series[1], args.bin, args.max_tau,
                                     n_blocks=args.blocks, rng=RandomStream(args.seed, 4))
    path = _out(args, "g2_estimated.csv")
    est.to_csv(path)
    print(path)


def cmd_estimate_pn(args):
    ts = read_timestamps(_pick(args, "timestamps", "timestamps_file"))
    pn = estimate_pn(ts, args.window, args.n_max, rng=RandomStream(args.seed, 5))
    path = _out(args, "pn_empirical.csv")
    lines = ["n,p,stderr"] + [f"{n},{float(p)!r},{float(e)!r}"
                              for n, (p, e) in enumerate(zip(pn.probs, pn.stderr))]
    path.write_text("\n".join(lines) + "\n", newline="\n")
    print(path)


def cmd_eom_voltage(args):
    volts = eom_voltage(HillShape(read_curve_csv(_pick(args, "hill", "hill_file"))), args.v_pi)
    path = _out(args, "voltage.csv")
    write_curve_csv(volts, path)
    print(path)


def cmd_pipeline(args):
    if args.preset:
        obj = json.loads(json.dumps(PRESETS[args.preset]))
        if args.duration:
            obj["source"]["duration"] = args.duration
        config = PipelineConfig.from_dict(obj)
    else:
        if args.duration:
            raise ConfigError("--duration only applies to presets")
        config = PipelineConfig.load(args.config)
    if args.seed_given:
        config.seed = args.seed
    out = args.out_dir if args.out_dir_given or not config.output_dir else config.output_dir
    report = run_pipeline(config, out, args.threads)
    for check in report["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        print(f"{status} {check['name']}: {check['value']:.4g} (limit {check['limit']:.4g})")
    return 0 if report["passed"] else 1


def cmd_emit_figures(args):
    for path in emit_figure_data(args.run_dir, args.fig_dir, render=not args.no_render):
        print(path)


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        flags = argparse.ArgumentParser(add_help=False)
        flags.add_argument("--seed", type=int, default=default, help="random seed (default 0)")
        flags.add_argument("--threads", type=int, default=default, help="worker cap (default 1)")
        flags.add_argument("--out-dir", default=default, help="output directory (default .)")
        return flags

    # the flags are accepted before and after the subcommand; the subcommand
    # copies must not overwrite values given earlier
    common = global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="g2shape", parents=[global_flags(None)],
                                     description="Synthesize light with a prescribed g2 and "
                                                 "photon statistics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    target_help = "g2 CSV (t,value) or inline JSON such as '{\"kind\": \"exponential\"}'"

    p = add("invert-hill", cmd_invert_hill, "hill function from a target g2")
    p.add_argument("target", nargs="?", help=target_help)
    p.add_argument("--g2", help=target_help)
    p.add_argument("--sign", default="auto", help="'auto' or a sign-pattern JSON file")
    p.add_argument("--neg-tol", type=float, default=1e-6)
    p.add_argument("--out")

    p = add("predict-g2", cmd_predict_g2, "analytic g2 of a hill-process spec")
    p.add_argument("spec_file", nargs="?", help="hill-process JSON")
    p.add_argument("--spec", help="hill-process JSON")
    p.add_argument("--max-tau", "--tau-max", dest="max_tau", type=float, default=None)
    p.add_argument("--out")

    p = add("synth-hills", cmd_synth_hills, "intensity trace from a hill-process spec")
    p.add_argument("spec_file", nargs="?", help="hill-process JSON")
    p.add_argument("--spec", help="hill-process JSON")
    p.add_argument("--out")

    p = add("synth-levels", cmd_synth_levels, "level-switching intensity trace")
    p.add_argument("--g2", "--target", dest="g2", required=True, help=target_help)
    p.add_argument("--intensity", required=True,
                   help="exponential:<mean> | discrete:<json> | from-stats:<weight_grid.json>")
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--window", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--tail-tol", type=float, default=1e-2)
    p.add_argument("--out")

    p = add("invert-stats", cmd_invert_stats, "NNLS weight grid for a target p(n)")
    p.add_argument("stats", nargs="?", help="JSON {'pn': [...], 'specified': [...]}")
    p.add_argument("--pn", help="JSON {'pn': [...], 'specified': [...]}")
    p.add_argument("--grid", default="linear:201:10")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--bunching", type=float, default=None, help="pin <W^2>/<W>^2")
    p.add_argument("--out")

    p = add("detect", cmd_detect, "photon timestamps from an intensity trace")
    p.add_argument("trace_file", nargs="?")
    p.add_argument("--trace")
    p.add_argument("--efficiency", type=float, default=1.0)
    p.add_argument("--split", "--hbt", dest="split", action="store_true",
                   help="split onto two detector arms")
    p.add_argument("--out")
    p.add_argument("--out-a")
    p.add_argument("--out-b")

    p = add("estimate-g2", cmd_estimate_g2, "g2 from a trace or timestamp arms")
    p.add_argument("--trace")
    p.add_argument("--timestamps", nargs="+")
    p.add_argument("--max-tau", "--tau-max", dest="max_tau", type=float, required=True)
    p.add_argument("--bin", "--bin-width", dest="bin", type=float, default=None)
    p.add_argument("--block-time", type=float, default=None)
    p.add_argument("--blocks", type=int, default=None, help="bootstrap blocks for timestamps")
    p.add_argument("--out")

    p = add("estimate-pn", cmd_estimate_pn, "empirical p(n) from timestamps")
    p.add_argument("timestamps_file", nargs="?")
    p.add_argument("--timestamps")
    p.add_argument("--window", type=float, required=True)
    p.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    p.add_argument("--out")

    p = add("eom-voltage", cmd_eom_voltage, "EOM drive voltage for a hill")
    p.add_argument("hill_file", nargs="?", help="hill CSV")
    p.add_argument("--hill", help="hill CSV")
    p.add_argument("--v-pi", type=float, required=True)
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "end-to-end run with checks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="pipeline JSON")
    src.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--duration", type=float, default=None, help="override a preset's duration")

    p = add("emit-figures", cmd_emit_figures, "plot-ready CSVs and PNGs from a pipeline run")
    p.add_argument("run_dir")
    p.add_argument("--fig-dir", default=None)
    p.add_argument("--no-render", action="store_true", help="CSV only")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    args.out_dir_given = args.out_dir is not None
    args.seed = 0 if args.seed is None else args.seed
    args.out_dir = "." if args.out_dir is None else args.out_dir
    args.threads = 1 if args.threads is None else args.threads
    try:
        code = args.func(args)
    except (G2ShapeError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"error in stage {stage}" if stage else "error"
        print(f"{prefix}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())

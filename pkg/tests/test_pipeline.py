import copy
import json

import numpy as np
import pytest

from g2shape import cli
from g2shape.errors import ConfigError, NotConvex
from g2shape.pipeline import PRESETS, PipelineConfig, emit_figure_data, run_pipeline


def preset(name, duration=3000.0, **checks):
    obj = copy.deepcopy(PRESETS[name])
    obj["source"]["duration"] = duration
    obj.setdefault("checks", {}).update(checks)
    return obj


class TestConfig:
    def test_unknown_key(self):
        obj = preset("table1-gauss")
        obj["colour"] = "red"
        with pytest.raises(ConfigError, match="colour"):
            PipelineConfig.from_dict(obj)

    def test_version(self):
        obj = preset("table1-gauss")
        obj["version"] = 2
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(obj)

    def test_missing_seed(self):
        obj = preset("table1-gauss")
        del obj["seed"]
        with pytest.raises(ConfigError, match="seed"):
            PipelineConfig.from_dict(obj)

    def test_missing_file(self, tmp_path):
        obj = preset("table2-sim1")
        obj["stats"] = "nowhere.json"
        with pytest.raises(ConfigError, match="does not exist"):
            PipelineConfig.from_dict(obj, tmp_path)

    def test_unknown_check(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(preset("table1-gauss", tolerance=1))

    def test_levels_needs_target(self):
        obj = preset("table2-sim1")
        del obj["target_g2"]
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(obj)

    def test_load_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "c.json")


class TestRun:
    def test_hill_artifacts(self, tmp_path):
        report = run_pipeline(PipelineConfig.from_dict(preset("table1-gauss")), tmp_path)
        for name in ("trace_excerpt.csv", "g2_predicted.csv", "g2_estimated.csv", "g2_hbt.csv",
                     "report.json"):
            assert (tmp_path / name).exists()
        names = [c["name"] for c in report["checks"]]
        assert names[0] == "g2_trace_within_3sigma" and "g2_hbt_within_3sigma" in names
        assert report["stages"][-2:] == ["detect", "hbt"]
        on_disk = json.loads((tmp_path / "report.json").read_text())
        assert on_disk["passed"] == report["passed"]

    def test_levels_artifacts(self, tmp_path):
        report = run_pipeline(PipelineConfig.from_dict(preset("table2-sim1")), tmp_path)
        assert (tmp_path / "pn_empirical.csv").exists()
        assert (tmp_path / "weight_grid.json").exists()
        names = {c["name"] for c in report["checks"]}
        assert {"nnls_residual", "mean_delay_relative", "pn_specified_within_3sigma",
                "pn_total_variation"} <= names

    def test_opt_out_check(self, tmp_path):
        report = run_pipeline(PipelineConfig.from_dict(preset("table2-sim2")), tmp_path)
        names = {c["name"] for c in report["checks"]}
        assert "mean_delay_relative" not in names
        assert "pn_total_variation" not in names

    def test_deterministic(self, tmp_path):
        cfg = PipelineConfig.from_dict(preset("table2-sim1", duration=1000.0))
        run_pipeline(cfg, tmp_path / "a")
        run_pipeline(cfg, tmp_path / "b")
        for name in ("g2_estimated.csv", "g2_hbt.csv", "pn_empirical.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_not_convex_stage(self, tmp_path):
        obj = preset("table2-sim1")
        obj["target_g2"] = {"kind": "gauss", "amplitude": 1.0}
        with pytest.raises(NotConvex) as info:
            run_pipeline(PipelineConfig.from_dict(obj), tmp_path)
        assert info.value.stage == "validate"

    def test_creates_nested_dir(self, tmp_path):
        out = tmp_path / "x" / "y"
        run_pipeline(PipelineConfig.from_dict(preset("table1-gauss", duration=1000.0)), out)
        assert (out / "report.json").exists()


class TestFigures:
    def test_bundle_is_deterministic(self, tmp_path):
        run_pipeline(PipelineConfig.from_dict(preset("table2-sim1", duration=1000.0)),
                     tmp_path / "run")
        first = emit_figure_data(tmp_path / "run", tmp_path / "f1", render=False)
        emit_figure_data(tmp_path / "run", tmp_path / "f2", render=False)
        assert {p.name for p in first} == {"signal_excerpt.csv", "g2_overlay.csv",
                                           "statistics.csv"}
        for p in first:
            assert p.read_bytes() == (tmp_path / "f2" / p.name).read_bytes()
        header = (tmp_path / "f1" / "g2_overlay.csv").read_text().splitlines()[0]
        assert header == "tau,g2_predicted,g2_estimated,stderr,g2_hbt"
        stats = np.genfromtxt(tmp_path / "f1" / "statistics.csv", delimiter=",", names=True)
        assert stats["n"][0] == 0

    def test_renders_png(self, tmp_path):
        run_pipeline(PipelineConfig.from_dict(preset("table1-gauss", duration=1000.0)),
                     tmp_path / "run")
        written = emit_figure_data(tmp_path / "run")
        pngs = [p for p in written if p.suffix == ".png"]
        assert {p.name for p in pngs} == {"signal_excerpt.png", "g2_overlay.png"}
        assert all(p.read_bytes()[:4] == b"\x89PNG" for p in pngs)

    def test_missing_artifacts(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_figure_data(tmp_path)


class TestCli:
    def test_invert_predict_round_trip(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"hills": [{"builtin": "gauss"}], "lambda": 0.4,
                                    "duration": 100.0, "dt": 0.01}))
        assert cli.main(["--out-dir", str(tmp_path), "predict-g2", str(spec),
                         "--max-tau", "5"]) == 0
        g2 = tmp_path / "g2_predicted.csv"
        assert g2.exists()
        assert cli.main(["--out-dir", str(tmp_path), "invert-hill", str(g2)]) == 0
        assert (tmp_path / "hill.csv").exists()

    def test_pipeline_exit_codes(self, tmp_path, capsys):
        ok = tmp_path / "ok.json"
        ok.write_text(json.dumps(preset("table1-gauss", duration=2000.0, z_limit=1e9)))
        assert cli.main(["--out-dir", str(tmp_path / "a"), "pipeline", str(ok)]) == 0
        assert "pass g2_trace_within_3sigma" in capsys.readouterr().out
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(preset("table1-gauss", duration=2000.0, z_limit=1e-9)))
        assert cli.main(["--out-dir", str(tmp_path / "b"), "pipeline", str(bad)]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_error_exit(self, tmp_path, capsys):
        obj = preset("table2-sim1")
        obj["target_g2"] = {"kind": "gauss", "amplitude": 1.0}
        path = tmp_path / "c.json"
        path.write_text(json.dumps(obj))
        assert cli.main(["--out-dir", str(tmp_path), "pipeline", str(path)]) == 2
        assert "stage validate" in capsys.readouterr().err

    def test_seed_override(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(preset("table1-gauss", duration=1000.0, z_limit=1e9)))
        cli.main(["--seed", "7", "--out-dir", str(tmp_path / "r"), "pipeline", str(path)])
        assert json.loads((tmp_path / "r" / "report.json").read_text())["seed"] == 7

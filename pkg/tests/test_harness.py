import math
import re

import numpy as np
import pytest

from symradio.cli import main
from symradio.harness import (
    COMPLEXITY_HEADER, RESULT_HEADER, ConfigError, ExperimentConfig, ResultRow, emit_csv, load_config, read_csv,
    read_results, run_experiment,
)
from symradio.plot import AxesSpec, default_axes, emit_plot, series_points
from symradio.sca import complexity_cqr, complexity_sq


def row(**kw):
    base = dict(experiment="rate_sweep", method="CQR", M=4, I=2, N=2, C_bps_hz=0.1, E_T_J=12.5, E_T_dB=10.9691001,
                iterations=7, converged=False, rank_residual=1e-9, wall_s=None, seed=3, trial=0)
    base.update(kw)
    return ResultRow(**base)


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.trials == 50 and cfg.C_values == (0.02, 0.04, 0.06, 0.08, 0.1)

    def test_ini_round_trip(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[experiment]\nexperiment = m_sweep\nN = 2\nC_values = 0.01, 0.02\nsvg = yes\n")
        cfg = load_config(path, trials=3)
        assert cfg.experiment == "m_sweep" and cfg.N == 2 and cfg.trials == 3
        assert cfg.C_values == (0.01, 0.02) and cfg.svg is True

    def test_chain_center_flag(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[experiment]\nchain_center = true\n")
        assert load_config(path).algorithm().chain_center
        assert not ExperimentConfig().algorithm().chain_center

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[experiment]\nantenas = 4\n")
        with pytest.raises(ConfigError, match="antenas"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[extra]\nN = 4\n")
        with pytest.raises(ConfigError):
            load_config(path)

    @pytest.mark.parametrize("kw", [dict(trials=0), dict(C_values=(0.2, 0.1)), dict(experiment="nope"),
                                    dict(methods=("GA",)), dict(placement="moon")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_trial_seeds_distinct(self):
        cfg = ExperimentConfig(seed=5)
        assert len({cfg.trial_seed(t) for t in range(100)}) == 100
        assert cfg.trial_seed(3) == ExperimentConfig(seed=5).trial_seed(3)


class TestCsv:
    def test_one_row_two_lines(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_csv([row()], path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0] == ",".join(RESULT_HEADER)

    def test_round_trip(self, tmp_path):
        rows = [row(), row(trial=1, E_T_J=1 / 3, E_T_dB=10 * math.log10(1 / 3), converged=True, wall_s=0.25)]
        path = tmp_path / "r.csv"
        emit_csv(rows, path)
        back = read_results(path)
        assert [r.method for r in back] == ["CQR", "CQR"]
        assert back[1].converged and back[1].wall_s == 0.25 and back[0].wall_s is None
        np.testing.assert_allclose(back[1].E_T_J, 1 / 3, rtol=1e-9)
        assert back[0] == rows[0]

    def test_nine_significant_digits(self, tmp_path):
        path = tmp_path / "r.csv"
        emit_csv([row(E_T_J=math.pi)], path)
        assert read_csv(path)[0]["E_T_J"] == "3.14159265"

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_csv([], tmp_path / "r.csv")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            row(method="GA")


class TestExperiments:
    def test_complexity_matches_closed_forms(self, tmp_path):
        res = run_experiment(ExperimentConfig(experiment="complexity", out_dir=str(tmp_path)))
        assert res.header == COMPLEXITY_HEADER and res.exit_code == 0
        recs = read_csv(tmp_path / "complexity.csv")
        assert len(recs) == 80
        for rec in recs:
            I = int(rec["I"])
            est = complexity_sq(I, 4, 1e-6) if rec["method"] == "SQ" else complexity_cqr(I, 4, 4, 1e-6)
            np.testing.assert_allclose(float(rec["size"]), est.size, rtol=1e-9)
            np.testing.assert_allclose(float(rec["flops"]), est.flops, rtol=1e-8)

    def test_null_rate_sweep(self, tmp_path):
        cfg = ExperimentConfig(experiment="rate_sweep", trials=1, C_values=(0.0,), methods=("CQR",),
                               out_dir=str(tmp_path))
        res = run_experiment(cfg)
        assert len(res.rows) == 1 and res.rows[0].E_T_J == 0.0
        assert res.exit_code == 0

    def test_rerun_byte_identical(self, tmp_path):
        kw = dict(experiment="rate_sweep", trials=2, C_values=(0.02, 0.05), N=2, I=2, counter_max=3)
        run_experiment(ExperimentConfig(out_dir=str(tmp_path / "a"), **kw))
        run_experiment(ExperimentConfig(out_dir=str(tmp_path / "b"), **kw))
        a = (tmp_path / "a" / "rate_sweep.csv").read_bytes()
        assert a == (tmp_path / "b" / "rate_sweep.csv").read_bytes()

    def test_rows_sorted_by_trial_then_sweep(self, tmp_path):
        cfg = ExperimentConfig(experiment="rate_sweep", trials=2, C_values=(0.02, 0.05), N=2, I=2, counter_max=2,
                               out_dir=str(tmp_path), workers=2)
        keys = [(r.trial, r.C_bps_hz) for r in run_experiment(cfg).rows]
        assert keys == sorted(keys)

    def test_unconverged_exit_code(self, tmp_path):
        cfg = ExperimentConfig(experiment="rate_sweep", trials=1, C_values=(0.05,), N=2, I=2, counter_max=2,
                               methods=("CQR",), out_dir=str(tmp_path))
        assert run_experiment(cfg).exit_code == 2

    def test_paired_tdma_rows_share_seeds(self, tmp_path):
        cfg = ExperimentConfig(experiment="tdma_compare", trials=2, C_values=(0.05,), N=2, I=2, counter_max=3,
                               out_dir=str(tmp_path))
        rows = run_experiment(cfg).rows
        for t in range(2):
            pair = [r for r in rows if r.trial == t]
            assert {r.method for r in pair} == {"TDMA", "CQR"}
            assert len({r.seed for r in pair}) == 1

    def test_location_names(self, tmp_path):
        cfg = ExperimentConfig(experiment="location_study", trials=1, C_values=(0.05,), N=2, I=2, counter_max=2,
                               out_dir=str(tmp_path))
        names = {r.experiment for r in run_experiment(cfg, write=False).rows}
        assert names == {"location_study:near_bs", "location_study:mid", "location_study:near_sue"}

    def test_convergence_rows(self, tmp_path):
        cfg = ExperimentConfig(experiment="convergence", trials=1, C_values=(0.05,), N=2, I=2, counter_max=4,
                               out_dir=str(tmp_path), svg=True)
        res = run_experiment(cfg)
        assert {r["iteration"] for r in res.rows} == {1, 2, 3, 4}
        assert (tmp_path / "convergence.svg").exists()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            run_experiment(ExperimentConfig(experiment="iot_ee", out_dir=str(blocker / "sub")))


class TestPlot:
    def test_two_points_one_polyline(self, tmp_path):
        rows = [{"method": "SQ", "C_bps_hz": c, "E_T_dB": e} for c, e in ((0.1, 1.0), (0.2, 2.0))]
        path = emit_plot(rows, AxesSpec("C_bps_hz", "E_T_dB"), tmp_path / "p.svg")
        text = open(path, encoding="utf-8").read()
        assert text.count("<polyline") == 1 and text.startswith("<svg")

    def test_empty_series(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot([], AxesSpec("C_bps_hz", "E_T_dB"), tmp_path / "p.svg")

    def test_single_point_series_is_a_marker(self, tmp_path):
        path = emit_plot([{"method": "SQ", "C_bps_hz": 0.1, "E_T_dB": 1.0}], AxesSpec("C_bps_hz", "E_T_dB"),
                         tmp_path / "p.svg")
        text = open(path, encoding="utf-8").read()
        assert "<polyline" not in text and text.count("<circle") == 1

    def test_complexity_plot_cqr_below_sq(self, tmp_path):
        res = run_experiment(ExperimentConfig(experiment="complexity", out_dir=str(tmp_path), svg=True))
        pts = series_points(res.rows, default_axes("complexity"))
        sq, cqr = dict(pts["SQ"]), dict(pts["CQR"])
        assert all(cqr[i] < sq[i] for i in sq)
        svg = (tmp_path / "complexity.svg").read_text(encoding="utf-8")
        lines = {}
        for m in re.finditer(r'points="([^"]+)"><title>(\w+)</title>', svg):
            lines[m.group(2)] = [tuple(map(float, p.split(","))) for p in m.group(1).split()]
        # larger values sit higher on the canvas, which means a smaller pixel y
        assert all(c[1] > s[1] for c, s in zip(lines["CQR"], lines["SQ"]))


class TestCli:
    def test_complexity(self, tmp_path, capsys):
        assert main(["complexity", "--out", str(tmp_path), "--svg"]) == 0
        assert (tmp_path / "complexity.csv").exists() and (tmp_path / "complexity.svg").exists()

    def test_iot_ee(self, tmp_path):
        assert main(["iot_ee", "--out", str(tmp_path)]) == 0
        recs = read_csv(tmp_path / "iot_ee.csv")
        assert {r["protocol"] for r in recs} == {"SigFox", "LoRa", "NB-IoT", "ZigBee", "SR"}

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[experiment]\nbogus = 1\n")
        assert main(["rate_sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_unknown_experiment(self):
        with pytest.raises(SystemExit):
            main(["fig99"])

    def test_config_with_overrides(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[experiment]\nN = 2\nI = 2\nC_values = 0.0\nmethods = CQR\n")
        assert main(["rate_sweep", "--config", str(cfg), "--out", str(tmp_path), "--trials", "2",
                     "--seed", "9"]) == 0
        rows = read_results(tmp_path / "rate_sweep.csv")
        assert len(rows) == 2 and all(r.E_T_J == 0.0 for r in rows)

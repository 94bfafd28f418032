import json

import numpy as np
import pytest

from mimo_lab import cli, harness
from mimo_lab.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    emit_plot,
    parse_sweep,
    read_csv,
    rows_to_csv,
    run_experiment,
    run_selftest,
    write_results,
)

ENTROPY_SMALL = dict(experiment="EntropyVsSnr", rho=0.2, snr_db="0:6:3", chain_K=8,
                     mc_samples=400, seed=3)
BER_SMALL = dict(experiment="BerVsSnr", K=22, L=20, rho=0.2, snr_db=[2.0, 6.0], trials=4,
                 max_trials=8, pop_size=2000, seed=5)


def write_config(tmp_path, **kw):
    import yaml

    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(kw))
    return p


class TestConfig:
    def test_header(self):
        assert ",".join(CSV_HEADER) == "x,method,y,stderr,n,seed,k,l,rho,snr_db,sigma2_convention"

    def test_sweeps(self):
        assert parse_sweep(2) == [2.0]
        assert parse_sweep("0:10:2") == [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
        assert parse_sweep("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
        assert parse_sweep([0.5, 0.2]) == [0.5, 0.2]
        for bad in ("1:2", "0:1:-1", "0:1:0"):
            with pytest.raises(ConfigError):
                parse_sweep(bad)

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.K, cfg.L, cfg.trials) == (440, 400, 128)
        assert cfg.beta == pytest.approx(1.1)

    @pytest.mark.parametrize("bad", [dict(color="red"), dict(experiment="Fig5"), dict(trials=0),
                                     dict(snr_db=[0, 2, 1]), dict(rho=0.7),
                                     dict(methods=["demod_sim"])])
    def test_rejects(self, tmp_path, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(write_config(tmp_path, **{**ENTROPY_SMALL, **bad}))

    def test_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        cfg = ExperimentConfig.from_dict(ENTROPY_SMALL)
        p.write_text(harness.config_to_yaml(cfg))
        assert ExperimentConfig.from_file(p) == cfg


class TestRun:
    def test_entropy_rows(self):
        rows = run_experiment(ExperimentConfig.from_dict(ENTROPY_SMALL))
        assert [(r.x, r.method) for r in rows] == sorted((r.x, r.method) for r in rows)
        assert {r.method for r in rows} == {"exact_mc", "matrix_integration", "identity"}
        for r in rows:
            assert not r.failed and r.stderr >= 0
            assert -3 * r.stderr <= r.y <= np.log(2) + 3 * r.stderr
            assert r.sigma2_convention == harness.CHI_CONVENTION
        by = {(r.x, r.method): r for r in rows}
        for snr in (0.0, 3.0, 6.0):
            ex, mi = by[(snr, "exact_mc")], by[(snr, "matrix_integration")]
            assert ex.y >= mi.y - 3 * ex.stderr

    def test_ber_rows(self):
        rows = run_experiment(ExperimentConfig.from_dict(BER_SMALL))
        assert {r.method for r in rows} == {"population_dynamics", "matrix_integration", "demod_sim"}
        for r in rows:
            assert not r.failed, r.meta
            assert 0.0 <= r.y <= 1.0 and r.stderr >= 0
        demod = [r for r in rows if r.method == "demod_sim"]
        assert all(r.n >= 4 and "iterations_p95" in r.meta for r in demod)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = ExperimentConfig.from_dict(ENTROPY_SMALL)
        a = write_results(cfg, run_experiment(cfg), tmp_path / "a")[0].read_bytes()
        b = write_results(cfg, run_experiment(cfg), tmp_path / "b")[0].read_bytes()
        assert a == b

    def test_parallel_matches_serial(self):
        serial = rows_to_csv(run_experiment(ExperimentConfig.from_dict(ENTROPY_SMALL)))
        par = rows_to_csv(run_experiment(ExperimentConfig.from_dict({**ENTROPY_SMALL, "workers": 2})))
        assert serial == par

    def test_seed_changes_mc(self):
        a = rows_to_csv(run_experiment(ExperimentConfig.from_dict(ENTROPY_SMALL)))
        b = rows_to_csv(run_experiment(ExperimentConfig.from_dict({**ENTROPY_SMALL, "seed": 4})))
        assert a != b

    def test_failed_row_recorded(self, monkeypatch):
        def boom(*args):
            raise FloatingPointError("forced")

        monkeypatch.setattr(harness, "_entropy_point", boom)
        rows = run_experiment(ExperimentConfig.from_dict(ENTROPY_SMALL))
        assert all(r.failed and "forced" in r.meta["error"] for r in rows)
        assert "nan" in rows_to_csv(rows)

    def test_sidecar_provenance(self, tmp_path):
        cfg = ExperimentConfig.from_dict(ENTROPY_SMALL)
        _, meta = write_results(cfg, run_experiment(cfg), tmp_path)
        data = json.loads(meta.read_text())
        assert data["config"]["seed"] == 3 and "version" in data
        assert data["tolerances"]["demod_tol"] == cfg.tol


class TestPlot:
    def test_byte_stable_and_scales(self, tmp_path):
        cfg = ExperimentConfig.from_dict(ENTROPY_SMALL)
        csv_path, _ = write_results(cfg, run_experiment(cfg), tmp_path)
        svg, script = emit_plot(csv_path)
        first = svg.read_bytes()
        svg2, _ = emit_plot(csv_path)
        assert svg2.read_bytes() == first
        assert 'set_yscale("linear")' in script.read_text()

    def test_ber_log_axis(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**BER_SMALL, "snr_db": 2.0})
        csv_path, _ = write_results(cfg, run_experiment(cfg), tmp_path)
        _, script = emit_plot(csv_path)
        assert 'set_yscale("log")' in script.read_text()
        rows = read_csv(csv_path)
        assert harness._axes_style([r for r in rows if r["method"] == "matrix_integration"], None)[0] == "log"

    def test_empty_table(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot([], tmp_path / "x.svg")


class TestCli:
    def test_selftest(self, capsys):
        assert all(ok for _, ok, _ in run_selftest())
        assert cli.main(["selftest"]) == 0
        assert capsys.readouterr().out.count("PASS") == 6

    def test_config_error_exit(self, tmp_path):
        p = write_config(tmp_path, **{**ENTROPY_SMALL, "bogus": 1})
        assert cli.main(["run", "--config", str(p)]) == 1

    def test_run_with_overrides(self, tmp_path):
        p = write_config(tmp_path, **ENTROPY_SMALL)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(p), "--snr-db", "0:2:2", "--seed", "9",
                         "--out", str(out)]) == 0
        rows = read_csv(out / "EntropyVsSnr.csv")
        assert sorted({float(r["x"]) for r in rows}) == [0.0, 2.0]
        assert all(r["seed"] == "9" for r in rows)
        assert (out / "EntropyVsSnr.svg").exists()
        assert cli.main(["plot", str(out / "EntropyVsSnr.csv"), "--style", "entropy"]) == 0

    def test_numerical_failure_exit(self, tmp_path, monkeypatch):
        monkeypatch.setattr(harness, "_entropy_point", lambda *a: (float("nan"), 0.0, 0))
        p = write_config(tmp_path, **{**ENTROPY_SMALL, "output_dir": str(tmp_path / "o")})
        assert cli.main(["run", "--config", str(p)]) == 2

    def test_selftest_failure_exit(self, monkeypatch):
        monkeypatch.setattr(cli, "run_selftest", lambda: [("x", False, "forced")])
        assert cli.main(["selftest"]) == 3

    def test_plot_missing_file(self, tmp_path):
        assert cli.main(["plot", str(tmp_path / "none.csv")]) == 1

import json

import pytest

from qsdsim import (
    ExperimentConfig,
    ReportBudget,
    cross_method_report,
    emit_config,
    parse_config,
    parse_distribution,
    rate_fit,
    run_config,
)
from qsdsim.cli import main as cli_main
from qsdsim.errors import ConfigInvalid, DegenerateInput
from qsdsim.harness import map_replicas


class TestRateFit:
    def test_exact_power_law(self):
        fit = rate_fit([(100, 0.1), (400, 0.05)])
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)

    def test_exponent_recovery(self):
        pts = [(n, 3.7 * n**-0.77) for n in (10, 40, 90, 500)]
        fit = rate_fit(pts)
        assert fit.slope == pytest.approx(-0.77, abs=1e-12)
        assert fit.residual <= 1e-12

    def test_duplicate_n_rejected(self):
        with pytest.raises(DegenerateInput):
            rate_fit([(100, 0.1), (100, 0.2)])

    def test_nonpositive_error_rejected(self):
        with pytest.raises(DegenerateInput):
            rate_fit([(100, 0.0), (200, 0.1)])


class TestConfig:
    def test_parse_emit_round_trip(self):
        text = (
            "qsdconfig v1\n"
            "method = fv\n"
            "model = two-state\n"
            "seed = 42\n"
            "replicas = 3\n"
            "[fv]\n"
            "horizon = 1.0\n"
            "particles = 100\n"
        )
        cfg = parse_config(text)
        assert cfg.method == "fv"
        assert cfg.seed == 42
        assert cfg.params["particles"] == "100"
        again = parse_config(emit_config(cfg))
        assert again == cfg

    def test_missing_header(self):
        with pytest.raises(ConfigInvalid):
            parse_config("method = fv\nmodel = two-state\nseed = 1\n")

    def test_field_level_messages(self):
        with pytest.raises(ConfigInvalid) as err:
            parse_config("qsdconfig v1\nmethod = warp\nmodel = nope:1\n")
        joined = " | ".join(err.value.problems)
        assert "method" in joined
        assert "model" in joined
        assert "seed" in joined

    def test_seed_is_mandatory(self):
        with pytest.raises(ConfigInvalid, match="seed"):
            parse_config("qsdconfig v1\nmethod = oracle\nmodel = point\n")

    def test_comments_ignored(self):
        cfg = parse_config(
            "qsdconfig v1\n# full run\nmethod = oracle\nmodel = point\nseed = 1\n"
        )
        assert cfg.method == "oracle"


class TestParseDistribution:
    def test_delta(self):
        assert parse_distribution("delta:3").support == (3,)

    def test_uniform(self):
        d = parse_distribution("uniform:2-5")
        assert d.support == (2, 3, 4, 5)

    def test_pairs(self):
        d = parse_distribution("1:0.25,2:0.75")
        assert d.mass(2) == 0.75


class TestRunConfig:
    def test_oracle_output(self, tmp_path):
        cfg = ExperimentConfig(method="oracle", model="two-state", seed=1)
        record = run_config(cfg, tmp_path)
        payload = json.loads((tmp_path / "oracle.json").read_text())
        assert payload["nu"]["1"] == pytest.approx(0.3819660112499733, abs=1e-9)
        assert payload["theta"] == pytest.approx(0.3819660112501051, abs=1e-9)
        assert payload["K"] == 2
        assert (tmp_path / "summary.json").exists()

    def test_byte_identical_rerun(self, tmp_path):
        cfg = ExperimentConfig(
            method="fv",
            model="two-state",
            seed=9,
            replicas=3,
            params={"particles": "50", "horizon": "1.0", "init": "delta:2"},
        )
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_config(cfg, a)
        run_config(cfg, b)
        assert (a / "fv.csv").read_bytes() == (b / "fv.csv").read_bytes()
        assert (a / "fv_summary.json").read_bytes() == (b / "fv_summary.json").read_bytes()

    def test_scan_emits_fit_and_plot_script(self, tmp_path):
        cfg = ExperimentConfig(
            method="scan",
            model="two-state",
            seed=3,
            replicas=40,
            params={"particles": "25,100", "horizon": "1.0", "init": "delta:2", "state": "1"},
        )
        run_config(cfg, tmp_path)
        assert (tmp_path / "scan.csv").exists()
        fit = json.loads((tmp_path / "scan_fit.json").read_text())
        assert -1.5 < fit["slope"] < 0.0
        script = (tmp_path / "scan.gp").read_text()
        assert "plot" in script and "scan.csv" in script

    def test_conditioned_csv(self, tmp_path):
        cfg = ExperimentConfig(
            method="conditioned",
            model="two-state",
            seed=0,
            params={"init": "delta:2", "horizon": "2.0"},
        )
        run_config(cfg, tmp_path)
        lines = (tmp_path / "conditioned.csv").read_text().splitlines()
        assert lines[0] == "t,state,mass"
        t_final, state, mass = lines[-1].split(",")
        assert float(t_final) == 2.0
        assert state in ("1", "2")

    def test_report_csv_and_runtime_sidecar(self, tmp_path):
        cfg = ExperimentConfig(
            method="report",
            model="point",
            seed=0,
            params={"fv_particles": "10", "fv_horizon": "11.0", "afp_steps": "2000",
                    "branch_horizon": "4.0", "branch_attempts": "5", "branch_cap": "500"},
        )
        record = run_config(cfg, tmp_path)
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "method,tv_to_oracle,status"
        assert len(lines) == 6
        assert set(record.summary["runtimes_s"]) == {
            "oracle", "fv_stationary", "phi_iterate", "afp", "branch",
        }

    def test_phi_csv_headers(self, tmp_path):
        cfg = ExperimentConfig(
            method="phi", model="two-state", seed=0, params={"init": "delta:1"}
        )
        run_config(cfg, tmp_path)
        lines = (tmp_path / "phi.csv").read_text().splitlines()
        assert lines[0] == "iteration,tv"

    def test_couple_csv(self, tmp_path):
        cfg = ExperimentConfig(
            method="couple",
            model="two-state",
            seed=5,
            replicas=10,
            params={"particles": "10", "horizon": "1.0", "init": "delta:2"},
        )
        run_config(cfg, tmp_path)
        lines = (tmp_path / "couple.csv").read_text().splitlines()
        assert lines[0] == "replica,psi_final,divergence_time"
        assert len(lines) == 11

    def test_unknown_method(self, tmp_path):
        cfg = ExperimentConfig(method="warp", model="point", seed=0)
        with pytest.raises(ConfigInvalid):
            run_config(cfg, tmp_path)


class TestThreads:
    def test_map_replicas_order_independent_of_workers(self, monkeypatch):
        def fn(i):
            return i * i

        monkeypatch.setenv("QSD_THREADS", "1")
        seq = map_replicas(fn, 20)
        monkeypatch.setenv("QSD_THREADS", "4")
        par = map_replicas(fn, 20)
        assert seq == par == [i * i for i in range(20)]

    def test_threaded_fv_results_identical(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig(
            method="fv",
            model="two-state",
            seed=11,
            replicas=4,
            params={"particles": "40", "horizon": "0.5", "init": "delta:2"},
        )
        monkeypatch.setenv("QSD_THREADS", "1")
        run_config(cfg, tmp_path / "seq")
        monkeypatch.setenv("QSD_THREADS", "3")
        run_config(cfg, tmp_path / "par")
        assert (tmp_path / "seq/fv.csv").read_bytes() == (tmp_path / "par/fv.csv").read_bytes()


class TestCrossMethodReport:
    def test_point_model_all_exact(self, t1):
        budget = ReportBudget(
            fv_particles=20,
            fv_burnin=1.0,
            fv_horizon=11.0,
            afp_steps=5_000,
            branch_horizon=5.0,
            branch_cap=2_000,
            branch_attempts=10,
        )
        rows = cross_method_report(t1, budget, seed=2)
        assert {r["method"] for r in rows} == {
            "oracle",
            "fv_stationary",
            "phi_iterate",
            "afp",
            "branch",
        }
        for r in rows:
            assert r["status"] == "ok"
            assert r["tv_to_oracle"] == pytest.approx(0.0, abs=1e-12)

    def test_t2_within_budget_tolerances(self, t2):
        budget = ReportBudget(
            fv_particles=200,
            fv_burnin=10.0,
            fv_horizon=110.0,
            afp_steps=100_000,
            branch_horizon=8.0,
            branch_cap=20_000,
            branch_attempts=15,
        )
        rows = cross_method_report(t2, budget, seed=4)
        for r in rows:
            assert r["status"] == "ok"
            assert r["tv_to_oracle"] <= 0.05


class TestCli:
    def test_oracle_subcommand(self, tmp_path, capsys):
        rc = cli_main(["oracle", "--model", "two-state", "--out-dir", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "oracle.json").exists()

    def test_config_file(self, tmp_path):
        cfgfile = tmp_path / "exp.cfg"
        cfgfile.write_text(
            "qsdconfig v1\nmethod = oracle\nmodel = point\nseed = 1\n"
        )
        rc = cli_main(["--config", str(cfgfile), "--out-dir", str(tmp_path / "out")])
        assert rc == 0

    def test_bad_config_exits_2(self, tmp_path):
        cfgfile = tmp_path / "exp.cfg"
        cfgfile.write_text("qsdconfig v1\nmethod = oracle\n")
        rc = cli_main(["--config", str(cfgfile), "--out-dir", str(tmp_path)])
        assert rc == 2

    def test_method_error_exits_3(self, tmp_path):
        # disconnected model: the oracle raises NotIrreducible -> exit 3
        model_file = tmp_path / "m.qsd"
        model_file.write_text("qsdmodel v1\n1 0 1.0\n2 0 1.0\n")
        rc = cli_main(
            ["oracle", "--model", f"file:{model_file}", "--out-dir", str(tmp_path)]
        )
        assert rc == 3

    def test_missing_subcommand_exits_2(self, capsys):
        assert cli_main([]) == 2

    def test_afp_subcommand(self, tmp_path):
        rc = cli_main(
            [
                "afp",
                "--model",
                "two-state",
                "--steps",
                "20000",
                "--start",
                "1",
                "--seed",
                "3",
                "--out-dir",
                str(tmp_path),
            ]
        )
        assert rc == 0
        header = (tmp_path / "afp.csv").read_text().splitlines()[0]
        assert header == "checkpoint,state,mass,tv_to_oracle"

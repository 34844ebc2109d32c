import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from lmiobs import cli


def write_config(tmp_path, mutate=None, name="config.yaml"):
    data = yaml.safe_load(cli.EXAMPLE_CONFIG)
    if mutate:
        mutate(data)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def column(path, name):
    header, rows = read_csv(path)
    idx = header.index(name)
    return [float(r[idx]) for r in rows]


class TestConfig:
    def test_example_config_valid(self, tmp_path):
        cfg = cli.load_config(write_config(tmp_path))
        assert cfg.data["system"]["state_dim"] == 2
        assert cfg.data["design"]["theorem"] == 2

    def test_round_trip_identity(self, tmp_path):
        cfg = cli.load_config(write_config(tmp_path))
        text = cli.dump_config(cfg)
        again = cli.validate_config(yaml.safe_load(text))
        assert again.data == cfg.data

    def test_missing_section_named(self, tmp_path):
        path = write_config(tmp_path, lambda d: d.pop("design"))
        with pytest.raises(cli.ConfigError, match="design"):
            cli.load_config(path)

    def test_bad_matrix_shape_named(self, tmp_path):
        def mutate(d):
            d["system"]["A"] = [[0.0, 1.0, 2.0], [-1.0, -1.0, 0.0]]
        with pytest.raises(cli.ConfigError, match="system.A"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_q_choices_exclusive(self, tmp_path):
        def mutate(d):
            d["design"]["Q"] = {"scaled_identity": 0.1,
                                "explicit": [[1.0, 0.0], [0.0, 1.0]]}
        with pytest.raises(cli.ConfigError, match="design.Q"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_gain_design_requires_output_weight(self, tmp_path):
        def mutate(d):
            d["design"]["theorem"] = 4
            d["system"].pop("H")
        with pytest.raises(cli.ConfigError, match="system.H"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_gain_design_requires_disturbance_map(self, tmp_path):
        def mutate(d):
            d["design"]["theorem"] = 4
            d["system"].pop("B")
        with pytest.raises(cli.ConfigError, match="system.B"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_region_ordering_checked(self, tmp_path):
        def mutate(d):
            d["system"]["region"]["lower"] = [0.2, -0.21]
        with pytest.raises(cli.ConfigError, match="region"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_unknown_mode_rejected(self, tmp_path):
        def mutate(d):
            d["design"]["h8_mode"] = "exotic"
        with pytest.raises(cli.ConfigError, match="h8_mode"):
            cli.load_config(write_config(tmp_path, mutate))

    def test_bad_expression_named(self, tmp_path):
        def mutate(d):
            d["system"]["f"] = ["x3^2", "0"]
        cfg = cli.load_config(write_config(tmp_path, mutate))
        with pytest.raises(cli.ConfigError, match="system.f"):
            cli.build_plant(cfg)


class TestDesignCommand:
    def test_certified_report(self, tmp_path):
        config = write_config(tmp_path)
        report_path = tmp_path / "report.json"
        assert cli.main(["design", "--config", str(config),
                         "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["status"] == "certified"
        assert report["gamma_c_star"] == pytest.approx(0.6686317299721267,
                                                       rel=1e-6)
        assert abs(report["gamma_c_star"] - 0.67) <= 0.1 * 0.67
        assert np.asarray(report["L"]).shape == (2, 1)
        assert report["certificate"]["passed"] is True
        assert report["residuals"]["passed"] is True

    def test_infeasible_exits_2(self, tmp_path):
        def mutate(d):
            d["design"] = {"theorem": 1, "Q": {"scaled_identity": 1.0},
                           "gamma_d": 10.0}
        config = write_config(tmp_path, mutate)
        report_path = tmp_path / "report.json"
        code = cli.main(["design", "--config", str(config),
                         "--report", str(report_path)])
        assert code == 2
        assert json.loads(report_path.read_text())["status"] == "infeasible"

    def test_missing_config_exits_3(self, tmp_path):
        assert cli.main(["design", "--config",
                         str(tmp_path / "ghost.yaml")]) == 3

    def test_usage_error_exits_3(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["design", "--no-such-flag"])
        assert exc.value.code == 3


@pytest.fixture()
def designed(tmp_path):
    config = write_config(tmp_path)
    report = tmp_path / "design.json"
    assert cli.main(["design", "--config", str(config),
                     "--report", str(report)]) == 0
    return config, report


class TestSimulateCommand:
    def test_trajectory_csv(self, tmp_path, designed):
        config, report = designed
        out = tmp_path / "traj.csv"
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(report), "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["k", "t", "x1", "x2", "xhat1", "xhat2",
                          "e_norm", "w1", "z1", "z2"]
        assert len(rows) == 101
        assert [int(r[0]) for r in rows] == list(range(101))
        metrics = json.loads(
            out.with_suffix(".metrics.json").read_text())
        assert metrics["settling_index"] is not None
        assert metrics["settling_index"] <= 30

    def test_bit_stable_across_runs(self, tmp_path, designed):
        config, report = designed
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert cli.main(["simulate", "--config", str(config),
                             "--report", str(report),
                             "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_matched_initials_give_zero_error(self, tmp_path):
        def mutate(d):
            d["simulate"]["disturbance"] = None
            d["simulate"]["xhat0"] = [0.15, -0.2]
        config = write_config(tmp_path, mutate, name="quiet.yaml")
        report = tmp_path / "design.json"
        assert cli.main(["design", "--config", str(config),
                         "--report", str(report)]) == 0
        out = tmp_path / "quiet.csv"
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(report), "--out", str(out)]) == 0
        assert all(v == 0.0 for v in column(out, "e_norm"))

    def test_gain_bound_holds_empirically(self, tmp_path):
        def mutate(d):
            d["design"] = {"theorem": 4, "Q": {"scaled_identity": 1.0},
                           "h8_mode": "tightened", "sequential": False}
        config = write_config(tmp_path, mutate, name="gain.yaml")
        report_path = tmp_path / "gain.json"
        assert cli.main(["design", "--config", str(config),
                         "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["mu_star"] == pytest.approx(49.82032674944278,
                                                  rel=1e-4)
        out = tmp_path / "gain.csv"
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(report_path),
                         "--out", str(out)]) == 0
        metrics = json.loads(out.with_suffix(".metrics.json").read_text())
        assert metrics["empirical_gain"] is not None
        assert metrics["empirical_gain"] <= report["mu_star"]

    def test_dimension_mismatch_exits_3(self, tmp_path, designed):
        config, report = designed
        doctored = json.loads(report.read_text())
        doctored["L"] = [[1.0], [2.0], [3.0]]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doctored))
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(bad)]) == 3

    def test_seed_override(self, tmp_path, designed):
        config, report = designed
        base = tmp_path / "base.csv"
        other = tmp_path / "other.csv"
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(report), "--out", str(base)]) == 0
        assert cli.main(["simulate", "--config", str(config),
                         "--report", str(report), "--out", str(other),
                         "--seed", "9"]) == 0
        assert column(base, "w1") != column(other, "w1")


class TestLipschitzCommand:
    def test_linear_map(self, tmp_path):
        def mutate(d):
            d["system"]["f"] = ["0.5*x1", "0"]
        config = write_config(tmp_path, mutate)
        out = tmp_path / "lip.json"
        assert cli.main(["lipschitz", "--config", str(config),
                         "--out", str(out)]) == 0
        assert json.loads(out.read_text())["gamma_estimate"] == 0.5

    def test_zero_map(self, tmp_path):
        def mutate(d):
            d["system"]["f"] = ["0", "0"]
        config = write_config(tmp_path, mutate)
        out = tmp_path / "lip.json"
        assert cli.main(["lipschitz", "--config", str(config),
                         "--out", str(out)]) == 0
        assert json.loads(out.read_text())["gamma_estimate"] == 0.0

    def test_example_estimate(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "lip.json"
        assert cli.main(["lipschitz", "--config", str(config),
                         "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["gamma_estimate"] == pytest.approx(
            0.5751203018713812, rel=1e-9)
        assert payload["argmax_point"] == pytest.approx([0.15, 0.21],
                                                        abs=1e-12)
        assert payload["grid_points_per_axis"] == 201


class TestSweepCommand:
    def test_table_rows(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "sweep.csv"
        assert cli.main(["sweep", "--config", str(config),
                         "--t-list", "0.2,0.1", "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["T", "gamma_d_star", "steady_state_error",
                          "status"]
        assert len(rows) == 2
        assert [r[3] for r in rows] == ["ok", "ok"]
        assert float(rows[0][1]) == pytest.approx(0.11232958692698464,
                                                  rel=1e-6)
        assert float(rows[1][1]) == pytest.approx(0.06686317299721267,
                                                  rel=1e-6)

    def test_single_entry(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "one.csv"
        assert cli.main(["sweep", "--config", str(config),
                         "--t-list", "0.1", "--out", str(out)]) == 0
        _, rows = read_csv(out)
        assert len(rows) == 1

    def test_nonpositive_t_exits_3(self, tmp_path):
        config = write_config(tmp_path)
        assert cli.main(["sweep", "--config", str(config),
                         "--t-list", "0.1,0"]) == 3
        assert cli.main(["sweep", "--config", str(config),
                         "--t-list", "abc"]) == 3


class TestReproduceExample:
    def test_full_run(self, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["reproduce-example", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["failures"] == []
        assert report["rate_design"]["gamma_c_star"] == pytest.approx(
            0.6686317299721267, rel=1e-6)
        staged = report["staged_gain_designs"]
        assert staged["paper_literal"]["status"] == "inadmissible"
        assert staged["faithful"]["status"] == "infeasible"
        assert staged["tightened"]["status"] == "infeasible"
        direct = report["direct_tightened_design"]
        assert direct["status"] == "certified"
        assert direct["mu_star"] == pytest.approx(49.82032674944278,
                                                  rel=1e-4)
        assert report["simulation_metrics"]["settling_index"] <= 30
        quantities = [r["quantity"] for r in report["comparison"]]
        assert any("gamma_c_star" in s for s in quantities)
        assert any("mu_star" in s for s in quantities)
        assert (out / "trajectories.csv").exists()
        assert cli.load_config(out / "config.yaml").data == yaml.safe_load(
            cli.EXAMPLE_CONFIG)

    def test_module_entry_point(self, tmp_path):
        run = subprocess.run(
            [sys.executable, "-m", "lmiobs", "lipschitz", "--config",
             str(write_config(tmp_path)), "--out",
             str(tmp_path / "lip.json")],
            capture_output=True, text=True)
        assert run.returncode == 0
        assert (tmp_path / "lip.json").exists()

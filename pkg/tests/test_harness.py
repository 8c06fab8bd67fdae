import json

import numpy as np
import pytest
import yaml

from robust_tdoa.harness import cli
from robust_tdoa.harness.config import (
    ConfigError,
    ScenarioConfig,
    config_from_dict,
    default_topology,
    delay_sweep,
    load_config,
    template_attack,
)
from robust_tdoa.harness.report import emit_report, read_csv_report
from robust_tdoa.harness.runner import (
    EXPERIMENT_COLUMNS,
    ExperimentReport,
    run_appendix_experiment,
    run_scenario,
    run_trajectory,
    t_interval,
)


class TestTopology:
    def test_2d(self):
        net = default_topology(2)
        assert net.n_sensors == 4 and np.all(np.abs(net.positions) <= 10_000)

    def test_3d(self):
        net = default_topology(3)
        assert net.n_sensors == 5
        assert net.positions[:4, 2].tolist() == [600, 1250, 900, 700]
        assert net.positions[4, 2] == 400

    @pytest.mark.parametrize("dim", [2, 3])
    def test_distinct(self, dim):
        p = default_topology(dim).positions
        d = np.linalg.norm(p[:, None] - p[None], axis=-1)
        assert np.all(d[np.triu_indices(len(p), 1)] > 0)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            default_topology(4)


class TestConfig:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert cfg.source_point().tolist() == [3333.3, -889.1111]
        assert cfg.calib_point().tolist() == [0.0, -4000.0]
        assert cfg.calib_n == 15 and cfg.trials == 500

    def test_sweep(self):
        d = delay_sweep()
        assert len(d) == 25 and d[0] > 0 and d[-1] == pytest.approx(50.0)
        assert np.all(np.diff(np.log(d)) > 0)

    def test_templates(self):
        assert template_attack(4, 1e-8).offsets.tolist() == [500, 500 + 1e-8, 0, 1e-8]
        assert template_attack(5, 2.0).offsets.tolist() == [0, 2.0, 4.0, 500]
        with pytest.raises(ConfigError):
            template_attack(6, 1.0)

    def test_yaml_and_json(self, tmp_path):
        data = {"scenario": 3, "trials": 7, "delays": [1e-9, 1e-6], "selection": {"m": 40, "n": 10, "b": 8}}
        (tmp_path / "a.yaml").write_text(yaml.safe_dump(data))
        (tmp_path / "a.json").write_text(json.dumps(data))
        a, b = load_config(tmp_path / "a.yaml"), load_config(tmp_path / "a.json")
        assert a == b and a.trials == 7 and a.selection_spec().m == 40
        assert a.attack_vector(1e-6).offsets.tolist() == [1e-6, 1e-6, 0, 0]

    @pytest.mark.parametrize(
        "bad",
        [
            {"trials": 0},
            {"bogus": 1},
            {"source": [1, 2, 3]},
            {"attack": [0, 0, 0]},
            {"scenario": 9},
            {"sensors": "nowhere"},
            {"selection": {"m": 5, "n": 10}},
            {"protocol": {"adversary": "weak_replay", "jam_proportion": 0.3}},
            {"protocol": {"colour": 1}},
            {"sensors": [[0, 0], [0, 0], [1, 1]]},
            [1, 2],
        ],
    )
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            config_from_dict(bad)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        (tmp_path / "broken.yaml").write_text("a: [1, 2")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "broken.yaml")


def small_report(trials=2, scenario=4):
    return run_scenario(ScenarioConfig(scenario=scenario, trials=trials, delays=[1e-9, 1e-6]))


class TestReport:
    def test_empty_csv_header_only(self, tmp_path):
        path = emit_report(ExperimentReport(), "csv", tmp_path / "e.csv")
        assert path.read_text().strip() == ",".join(EXPERIMENT_COLUMNS)

    def test_single_row_round_trip(self, tmp_path):
        rep = run_scenario(ScenarioConfig(scenario=2, trials=1, delays=[1e-6]))
        rows = read_csv_report(emit_report(rep, "csv", tmp_path / "r.csv"))
        assert len(rows) == 1
        assert float(rows[0]["robust_error_m"]) == rep.rows[0].robust_error_m
        assert rows[0]["status"] == rep.rows[0].status

    def test_json_and_csv_row_counts(self, tmp_path):
        rep = small_report()
        rows = read_csv_report(emit_report(rep, "csv", tmp_path))
        js = json.loads(emit_report(rep, "json", tmp_path).read_text())
        assert len(rows) == len(js["rows"]) == 4 and js["columns"] == EXPERIMENT_COLUMNS
        corrupt = [r for r in js["rows"] if r["status"] == "corrupt_system"]
        assert corrupt and all(r["robust_error_m"] is None for r in corrupt)

    def test_plotdata(self, tmp_path):
        rep = small_report()
        lines = emit_report(rep, "plotdata", tmp_path).read_text().splitlines()
        assert lines[0].startswith("# ") and lines[0][2:].split() == EXPERIMENT_COLUMNS
        assert all(len(line.split()) == len(EXPERIMENT_COLUMNS) for line in lines[1:])

    def test_trajectory_plotdata_flattens(self, tmp_path):
        rep = run_trajectory(ScenarioConfig(attack=[0, 0, 0, 3e-5], instants=3))
        lines = emit_report(rep, "plotdata", tmp_path).read_text().splitlines()
        assert "truth_0" in lines[0] and len({len(line.split()) for line in lines[1:]}) == 1

    def test_bad_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(ExperimentReport(), "xml", tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="file"):
            emit_report(ExperimentReport(), "csv", blocker / "sub" / "r.csv")

    def test_aggregates_recomputable(self):
        rep = run_scenario(ScenarioConfig(scenario=2, trials=6, delays=[1e-8, 1e-6]))
        for agg in rep.aggregates():
            err = [r.robust_error_m for r in rep.rows if r.delay_s == agg.delay_s]
            assert agg.mean_error_m == pytest.approx(np.mean(err))
            assert agg.ci_low_m <= agg.mean_error_m <= agg.ci_high_m
            assert min(err) >= 0

    def test_t_interval(self):
        mean, lo, hi = t_interval([1.0, 2.0, 3.0])
        assert mean == 2.0 and hi - mean == pytest.approx(4.302652729911275 / np.sqrt(3))
        assert np.isnan(t_interval([1.0])[1])


def test_deterministic_bytes(tmp_path):
    for k in (1, 2):
        assert cli.main(["montecarlo", "--seed", "5", "--trials", "3", "--out", str(tmp_path / str(k)), "--format", "json"]) == 0
    assert (tmp_path / "1" / "report.json").read_bytes() == (tmp_path / "2" / "report.json").read_bytes()


def test_trial_streams_schedule_independent():
    a = run_scenario(ScenarioConfig(scenario=3, trials=4, delays=[1e-8, 1e-6]))
    b = run_scenario(ScenarioConfig(scenario=3, trials=2, delays=[1e-6]))
    sub = [r for r in a.rows if r.delay_s == 1e-6][:2]
    assert [r.robust_error_m for r in sub] != [r.robust_error_m for r in b.rows]
    c = run_scenario(ScenarioConfig(scenario=3, trials=2, delays=[1e-8, 1e-6]))
    assert [r.robust_error_m for r in a.rows if r.trial < 2] == [r.robust_error_m for r in c.rows]


class TestCli:
    def write(self, tmp_path, data):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(data))
        return str(path)

    def test_config_error_exit(self, tmp_path, capsys):
        assert cli.main(["locate", "--config", self.write(tmp_path, {"nope": 1}), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_missing_config_exit(self, tmp_path):
        assert cli.main(["calibrate", "--config", str(tmp_path / "none.yaml")]) == cli.EXIT_CONFIG

    def test_corrupt_exit(self, tmp_path):
        cfg = self.write(tmp_path, {"scenario": 4, "delay": 1e-6})
        assert cli.main(["locate", "--config", cfg, "--out", str(tmp_path), "--fail-on-corrupt"]) == cli.EXIT_CORRUPT
        assert cli.main(["locate", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_OK
        out = json.loads((tmp_path / "locate.json").read_text())
        assert out["robust"]["status"] == "corrupt_system"

    def test_all_subcommands(self, tmp_path):
        out = str(tmp_path)
        assert cli.main(["calibrate", "--out", out]) == 0
        assert json.loads((tmp_path / "weights.json").read_text())["cfd"] > 0.75
        assert cli.main(["locate", "--out", out, "--fail-on-corrupt"]) == 0
        cfg = self.write(tmp_path, {"appendix": {"a_values": [6], "q_values": [0.0, 0.3]}})
        assert cli.main(["appendix", "--config", cfg, "--trials", "5", "--out", out]) == 0
        assert len(read_csv_report(tmp_path / "report.csv")) == 8
        assert cli.main(["trajectory", "--out", out, "--format", "json"]) == 0
        cfg = self.write(tmp_path, {"protocol": {"adversary": "weak_replay"}})
        assert cli.main(["protocol-sim", "--config", cfg, "--out", out]) == 0
        assert (tmp_path / "events.jsonl").exists() and (tmp_path / "session.json").exists()


class TestTrajectory:
    def test_single_sensor_attack(self):
        for seed in range(5):
            rep = run_trajectory(ScenarioConfig(attack=[0, 0, 0, 3e-5], seed=seed))
            assert len(rep.rows) == 9
            assert all(r.naive_error_m > 2000 and r.robust_error_m < 5 for r in rep.rows)

    def test_two_sensor_attack(self):
        for seed in range(5):
            rep = run_trajectory(ScenarioConfig(attack=[3e-5, 0, 3e-5, 0], seed=seed))
            assert all(r.robust_error_m < 5 and r.cfd > 0.35 for r in rep.rows)

    def test_3d_altitude(self):
        robust, naive = [], []
        for seed in range(10):
            rep = run_trajectory(ScenarioConfig(sensors="default5_3d", attack=[3e-5, 0, 0, 0, 0], seed=seed))
            robust += [r.robust_altitude_error_m for r in rep.rows]
            naive += [r.naive_altitude_error_m for r in rep.rows]
        robust = np.array(robust)
        assert np.median(robust) < 25 and np.mean(robust < 25) >= 0.9
        assert min(naive) > 300

    def test_schedule_epochs(self):
        sched = [[0, 0, 0, 0]] * 4 + [[0, 0, 0, 3e-5]] * 5
        rep = run_trajectory(ScenarioConfig(schedule=sched))
        cfds = [r.cfd for r in rep.rows]
        assert len(set(cfds[:4])) == 1 and len(set(cfds[4:])) == 1
        assert all(r.robust_error_m < 5 for r in rep.rows)

    def test_schedule_length_checked(self):
        with pytest.raises(ConfigError):
            run_trajectory(ScenarioConfig(schedule=[[0, 0, 0, 0]] * 3))


@pytest.fixture(scope="module")
def report():
    return run_appendix_experiment([15000.0], [0.0, 0.2, 0.4, 0.9], 160, 30, 12, 150, np.random.default_rng(0))


@pytest.fixture(scope="module")
def sweeps():
    return {s: run_scenario(ScenarioConfig(scenario=s, trials=30, seed=3)) for s in (2, 3, 4, 5)}


class TestAppendix:
    def test_sync_pair_holds(self, report):
        base = report.cell(1, 15000.0, 0.0).mean_weight
        for q in (0.2, 0.4):
            assert report.cell(1, 15000.0, q).mean_weight > base - 0.05

    def test_nonsync_pair_low(self, report):
        for q in (0.0, 0.2, 0.4):
            assert report.cell(2, 15000.0, q).mean_weight < 0.1

    def test_majority_attack_collapse(self, report):
        assert report.cell(1, 15000.0, 0.9).mean_weight < 0.05
        assert report.cell(1, 15000.0, 0.2, "all").mean_weight < 0.05

    def test_missing_cell(self, report):
        with pytest.raises(KeyError):
            report.cell(3, 1.0, 0.0)


class TestSweepProperties:
    def test_dominance(self, sweeps):
        for s, rep in sweeps.items():
            for agg in rep.aggregates():
                if agg.delay_s > 10 * 2.192e-9 and np.isfinite(agg.median_error_m):
                    assert agg.median_error_m < agg.median_naive_error_m, (s, agg.delay_s)

    def test_no_false_positives(self, sweeps):
        for rep in sweeps.values():
            assert not [r for r in rep.rows if r.cfd >= 0.75 and r.robust_error_m > 50]

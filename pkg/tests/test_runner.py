import io
import json
import math

import numpy as np
import pytest

from bubblesim import deterministic as det
from bubblesim import runner
from bubblesim.errors import ParseError, ValidationError
from bubblesim.params import ModelParams


def short(**kw):
    return runner.RunConfig(ModelParams(t_max=kw.pop("t_max", 400), **kw.pop("params", {})), **kw)


class TestConfig:
    def test_defaults(self):
        cfg = runner.load_config("")
        p = cfg.params
        assert (p.theta, p.r, p.sigma_r, p.r_f, p.x, p.p, p.mu_kappa, p.nu, p.t_max) == (
            0.95, 1.6e-4, 9.5e-4, 8e-5, 0.3, 0.2, 0.196, 1.0, 5000)
        assert p.eta == pytest.approx(math.log(10) / 20)
        assert runner.load_config({}) == runner.load_config(None) == cfg

    def test_bound_violation(self):
        with pytest.raises(ValidationError) as err:
            runner.load_config('{"x": 1.5}')
        assert err.value.key == "x"

    def test_nu_override(self):
        cfg = runner.load_config({"nu": 0.5})
        assert cfg.params == ModelParams(nu=0.5)

    def test_unknown_key(self):
        with pytest.raises(ValidationError) as err:
            runner.load_config({"gamma": 1})
        assert err.value.key == "gamma"

    @pytest.mark.parametrize("doc", ["{", "[1, 2]", b"\xff"])
    def test_parse_errors(self, doc):
        with pytest.raises(ParseError):
            runner.load_config(doc)

    @pytest.mark.parametrize("doc", [{"runs": 0}, {"n_noise": 2.5}, {"seed": -1}, {"record_every": True}, {"x": "a"}])
    def test_invalid_values(self, doc):
        with pytest.raises(ValidationError) as err:
            runner.load_config(doc)
        assert err.value.key == next(iter(doc))

    def test_round_trip(self):
        cfg = runner.load_config({"nu": 2.0, "seed": 9, "runs": 3, "record_every": 7, "n_noise": 500, "out": "a.csv"})
        assert runner.load_config(runner.dump_config(cfg)) == cfg

    def test_file(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text('{"theta": 0.9}')
        assert runner.load_config_file(f).params.theta == 0.9


class TestRunSimulation:
    def test_deterministic(self):
        cfg = short(seed=42)
        a, b = runner.run_simulation(cfg), runner.run_simulation(cfg)
        assert runner.trajectory_csv_text(a) == runner.trajectory_csv_text(b)
        assert len(a) == 400 and a.aborted is None

    def test_stream_independence(self):
        cfg = short(seed=42)
        a, b = runner.run_simulation(cfg, 0), runner.run_simulation(cfg, 1)
        assert not np.array_equal(a.price, b.price)

    def test_deterministic_oracle(self):
        params = ModelParams(sigma_kappa=0.0, sigma_r=0.0, n_noise=10_000_000, t_max=1000)
        traj = runner.run_simulation(runner.RunConfig(params, seed=5))
        oracle = det.deterministic_trajectory(params, params.mu_kappa, 1000)
        # oracle row 0 is the initial state
        assert np.all(traj.kappa == params.mu_kappa)
        assert np.max(np.abs(traj.price / oracle.price[1:] - 1)) < 0.01

    def test_thinning_keeps_terminal(self):
        cfg = short(t_max=103, record_every=10)
        traj = runner.run_simulation(cfg)
        assert list(traj.t) == [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 103]
        full = runner.run_simulation(cfg, record_every=1)
        assert list(full.t) == list(range(1, 104))
        assert traj.terminal == full.terminal
        assert traj.terminal.t == 103 and traj.price[-1] == traj.terminal.price
        assert np.array_equal(traj.price, full.price[np.isin(full.t, traj.t)])

    def test_aborted_run(self):
        cfg = short(params={"sigma_r": 10.0})
        traj = runner.run_simulation(cfg)
        assert traj.aborted is not None
        assert traj.aborted.cause == "NonPositivePrice"
        assert traj.aborted.t == len(traj) + 1
        assert traj.aborted.frame["t"] == traj.aborted.t


class TestCSV:
    def test_round_trip(self, tmp_path):
        traj = runner.run_simulation(short(seed=3, t_max=200))
        path = tmp_path / "t.csv"
        runner.write_trajectory_csv(traj, path)
        assert path.read_text().splitlines()[0] == "t,price,s,kappa,h,w_rational,w_noise,ret,div_ratio,p_plus,p_minus"
        back = runner.read_trajectory_csv(path)
        for name in runner.CSV_COLUMNS:
            assert np.array_equal(back.columns[name], traj.columns[name])

    def test_missing_columns(self):
        with pytest.raises(ParseError):
            runner.read_trajectory_csv(io.StringIO("t,price\n1,1.0\n"))
        with pytest.raises(ParseError):
            runner.read_trajectory_csv(io.StringIO(""))


class TestEnsemble:
    def test_single_run_matches_report(self):
        cfg = short(seed=11, t_max=600)
        summary = runner.run_ensemble(cfg)
        single = runner.analyze_trajectory(runner.run_simulation(cfg), cfg.params)
        assert json.dumps(summary.reports[0].to_dict()) == json.dumps(single.to_dict())
        assert summary.tail_alpha["median"] == single.tail_alpha

    def test_parallelism_independent(self, tmp_path):
        cfg = short(seed=42, runs=5, t_max=500, record_every=3)
        s1 = runner.run_ensemble(cfg, 1, out_dir=tmp_path / "a")
        s4 = runner.run_ensemble(cfg, 4, out_dir=tmp_path / "b")
        assert json.dumps(s1.to_dict()) == json.dumps(s4.to_dict())
        for i in range(5):
            name = f"run_{i:04d}.csv"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_partial_failure(self):
        cfg = short(runs=3, params={"sigma_r": 10.0})
        summary = runner.run_ensemble(cfg)
        doc = summary.to_dict()
        assert doc["completed"] == 0 and doc["failed"] == 3
        assert doc["tail_alpha"]["median"] is None

    def test_quartiles_skip_failures(self):
        ok = runner.RunResult(0, runner.analyze_trajectory(runner.run_simulation(short()), ModelParams()), None, 400)
        bad = runner.RunResult(1, None, runner.AbortedRun(1, 5, "NonPositivePrice", "x"), 4)
        summary = runner.EnsembleSummary.from_results([bad, ok])
        assert [r.run_index for r in summary.results] == [0, 1]
        assert summary.tail_alpha["median"] == ok.report.tail_alpha
        assert len(summary.failures) == 1

    def test_threads_env(self, monkeypatch):
        monkeypatch.delenv(runner.THREADS_ENV, raising=False)
        assert runner.resolve_threads(None) == 1
        assert runner.resolve_threads(3) == 3
        monkeypatch.setenv(runner.THREADS_ENV, "5")
        assert runner.resolve_threads(3) == 5
        monkeypatch.setenv(runner.THREADS_ENV, "many")
        with pytest.raises(ValidationError):
            runner.resolve_threads(3)

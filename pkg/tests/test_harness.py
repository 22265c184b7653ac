import json
import math

import numpy as np
import pytest

from qucrl.agent import StepRecord, run
from qucrl.cli import main
from qucrl.errors import ConfigError, DegenerateWindow, MismatchedHorizon
from qucrl.harness import (
    CSV_HEADER,
    EnvironmentSpec,
    RunConfig,
    aggregate,
    compute_regret,
    fit_slope,
    read_regret_csv,
    replica_workers,
    run_replica,
    run_single,
    run_sweep,
)
from qucrl.mdp import Mdp, make_environment

# OLS slope of log(7 log^2 t + 1) on log t for every integer t in [1e3, 1e5],
# computed with exact-sum normal equations (math.fsum)
SLOPE_OF_LOG_SQUARED = 0.20299624986628217


def rec(t, reward, s=0):
    return StepRecord(t, s, 0, reward, s, 1)


# -- regret ----------------------------------------------------------------

def test_regret_zero_when_earning_the_optimum():
    series = compute_regret([rec(t, 0.7) for t in range(1, 51)], 0.7)
    np.testing.assert_allclose(series.regret, 0.0, atol=1e-12)


def test_regret_of_zero_rewards():
    series = compute_regret([rec(t, 0.0) for t in range(1, 11)], 0.3)
    np.testing.assert_allclose(series.regret, 0.3 * np.arange(1, 11))


def test_regret_on_the_cycle():
    env = make_environment("two_state_cycle")
    late = compute_regret(run(env, "quantum", 8, 0, cfg=_start(1)).records, 0.5)
    np.testing.assert_allclose(late.regret, [0.5, 0, 0.5, 0, 0.5, 0, 0.5, 0], atol=1e-12)
    early = compute_regret(run(env, "quantum", 8, 0, cfg=_start(0)).records, 0.5)
    np.testing.assert_allclose(early.regret, [-0.5, 0, -0.5, 0, -0.5, 0, -0.5, 0], atol=1e-12)


def _start(s):
    from qucrl.agent import AgentConfig
    return AgentConfig(start_state=s)


def test_regret_needs_enough_records():
    with pytest.raises(MismatchedHorizon):
        compute_regret([rec(1, 0.0)], 0.5, T=3)


def test_regret_identity():
    env = make_environment("riverswim", 6)
    res = run(env, "classical", 20_000, seed=1)
    series = compute_regret(res.records, 0.4)
    T = len(series)
    assert abs(series.regret[-1] + res.records.rewards.sum() - T * 0.4) <= 1e-6 * T


# -- slope -----------------------------------------------------------------

def test_slope_of_square_root():
    t = np.arange(1, 10_001, dtype=float)
    fit = fit_slope((t, np.sqrt(t) - 1), (10, 10_000))
    assert fit.slope == pytest.approx(0.5, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0)


def test_slope_of_constant():
    t = np.arange(1, 1001)
    assert fit_slope((t, np.full(t.size, 3.0)), (1, 1000)).slope == pytest.approx(0.0, abs=1e-6)


def test_slope_of_log_squared():
    t = np.arange(1, 100_001, dtype=float)
    fit = fit_slope((t, 7 * np.log(t) ** 2), (1000, 100_000))
    assert fit.slope == pytest.approx(SLOPE_OF_LOG_SQUARED, abs=1e-6)
    # and it keeps falling as the window widens
    wider = fit_slope((np.arange(1, 10**6 + 1, dtype=float),
                       7 * np.log(np.arange(1, 10**6 + 1)) ** 2), (1000, 10**6))
    assert wider.slope < fit.slope


def test_slope_window_needs_ten_points():
    t = np.arange(1, 100)
    with pytest.raises(DegenerateWindow):
        fit_slope((t, t.astype(float)), (50, 58))


# -- configuration ---------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = RunConfig(environment=EnvironmentSpec("random_ergodic", 4, 3, 2, 0.1),
                    agent="classical", horizon=500, seeds=(1, 2), stride=50)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.dumps())
    assert RunConfig.load(path) == cfg


@pytest.mark.parametrize("doc", [
    {"horizonn": 10},
    {"environment": {"kind": "riverswim", "size": 6}},
    {"estimator": {"c": 1.0, "delta": 0.1}},
    {"horizon": 0},
    {"seeds": []},
    {"agent": "bayesian"},
    {"estimator": {"L2": 2.0}},
    {"environment": {"kind": "gridworld"}},
])
def test_config_rejections(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("QUCRL_THREADS", "1")
    assert replica_workers(8) == 1
    monkeypatch.setenv("QUCRL_THREADS", "many")
    with pytest.raises(ConfigError):
        replica_workers(8)


# -- CSV -------------------------------------------------------------------

def test_short_run_csv_rows(tmp_path):
    cfg = RunConfig(horizon=10, out=str(tmp_path))
    run_single(cfg)
    path = tmp_path / "quantum_riverswim_S6A2_seed0.csv"
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + math.ceil(10 / cfg.stride)
    assert lines[-1].startswith("10,")


def test_csv_rows_at_stride_and_final_step(tmp_path):
    cfg = RunConfig(horizon=250, stride=100, out=str(tmp_path))
    run_single(cfg)
    t, _ = read_regret_csv(tmp_path / "quantum_riverswim_S6A2_seed0.csv")
    assert t.tolist() == [100, 200, 250]


def test_csv_uses_17_significant_digits(tmp_path):
    cfg = RunConfig(horizon=300, out=str(tmp_path))
    run_single(cfg)
    row = (tmp_path / "quantum_riverswim_S6A2_seed0.csv").read_text().splitlines()[1]
    gamma = row.split(",")[-1]
    assert float(gamma) == pytest.approx(0.4286224337994644, abs=1e-15)
    assert gamma == format(float(gamma), ".17g")


def test_sweep_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("QUCRL_THREADS", "2")
    cfg = RunConfig(horizon=3000, seeds=(0, 1, 2), stride=250)
    first = run_sweep(cfg, out=tmp_path / "a")
    second = run_sweep(cfg, out=tmp_path / "b")
    assert len(first.paths) == 5
    for p, q in zip(first.paths, second.paths):
        assert p.read_bytes() == q.read_bytes()


def test_aggregate_mean_and_stderr():
    cfg = RunConfig(horizon=500, seeds=(0,))
    runs = [run_replica(cfg, seed).series for seed in (0, 1, 2)]
    agg = aggregate(runs, stride=100)
    R = np.stack([s.regret[agg.t - 1] for s in runs])
    np.testing.assert_allclose(agg.mean_regret, R.mean(axis=0))
    np.testing.assert_allclose(agg.stderr_regret, R.std(axis=0, ddof=1) / math.sqrt(3))


def test_epoch_log_tracks_containment():
    replica = run_replica(RunConfig(horizon=5000, seeds=(0,)), 0)
    assert replica.epochs[0].contains_true          # zero estimate, radius 2
    assert sum(e.length for e in replica.epochs) == 5000
    assert all(e.max_flow_gap <= 1e-7 for e in replica.epochs)


# -- command line ----------------------------------------------------------

def test_cli_run_and_slope(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--horizon", "2000", "--out", str(out), "--seed", "3",
                 "--agent", "classical"]) == 0
    csv_path = out / "classical_riverswim_S6A2_seed3.csv"
    assert csv_path.exists()
    assert main(["slope", str(csv_path), "--window", "100", "2000"]) == 0
    assert "slope" in capsys.readouterr().out


def test_cli_sweep(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"horizon": 1000, "seeds": [0, 1], "stride": 100}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "quantum_riverswim_S6A2_aggregate.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"horizon": 10, "colour": "red"}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--agent", "bayesian"])
    assert exc.value.code == 2


def test_cli_runtime_failure_exit_code(tmp_path):
    blocked = tmp_path / "file"
    blocked.write_text("")
    assert main(["run", "--horizon", "10", "--out", str(blocked / "sub")]) == 3


def test_cli_verify(capsys):
    assert main(["verify", "--trials", "300", "--triples", "12"]) in (0, 3)
    out = capsys.readouterr().out
    assert out.count("PASS") + out.count("FAIL") == 5


def test_mdp_file_format_matches_loader(tmp_path):
    env = make_environment("riverswim", 4)
    path = tmp_path / "env.json"
    env.save(path)
    assert set(json.loads(path.read_text())) == {"S", "A", "P", "r"}
    assert Mdp.load(path) == env

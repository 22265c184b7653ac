"""Seeded experiment runs, regret accounting, slope fits and CSV output.

A run is fully described by a :class:`RunConfig` plus a seed. Per-seed CSV
files contain one row every ``stride`` steps and always the final step;
floats are written with 17 significant digits so identical runs produce
byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .agent import AGENT_KINDS, AgentConfig, run
from .errors import ConfigError, DegenerateWindow, IoFailure, MismatchedHorizon, QucrlError
from .mdp import ENVIRONMENTS, Mdp, make_environment
from .planner import solve_known_model
from .quantum import NOISE_MODES, EstimatorConfig

CSV_HEADER = ("t", "cum_reward", "regret", "epoch", "gamma_opt")
AGGREGATE_HEADER = ("t", "mean_regret", "stderr_regret", "mean_cum_reward", "runs")
EPOCH_HEADER = ("seed", "epoch", "start", "length", "gain", "delta", "contains_true",
                "widened", "max_flow_gap")
MIN_FIT_POINTS = 10


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# -- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "riverswim"
    S: int = 6
    A: int = 2
    seed: int = 0
    epsilon: float = 0.0

    def build(self) -> Mdp:
        return make_environment(self.kind, self.S, self.A, self.seed, self.epsilon)

    @property
    def tag(self) -> str:
        mdp = self.build()
        return f"{self.kind}_S{mdp.S}A{mdp.A}"


@dataclass(frozen=True)
class EstimatorSpec:
    c: float = 1.0
    L2: float = 1.0
    noise_mode: str = "conforming_random"
    skip_vacuous_updates: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a sweep.

    The JSON form uses exactly these field names, with ``environment`` and
    ``estimator`` as nested objects. Unknown keys are rejected.
    """

    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    agent: str = "quantum"
    horizon: int = 10_000
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    seeds: tuple = (0,)
    out: str = "results"
    stride: int = 100
    fallback: str = "steer"
    start_state: int = 0

    def __post_init__(self):
        env = self.environment
        if env.kind not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment kind {env.kind!r}")
        if not (isinstance(env.S, int) and isinstance(env.A, int)) or env.S < 1 or env.A < 1:
            raise ConfigError("environment S and A must be positive integers")
        if not 0.0 <= env.epsilon <= 1.0:
            raise ConfigError("environment epsilon must lie in [0, 1]")
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"agent must be one of {AGENT_KINDS}")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigError("stride must be a positive integer")
        seeds = tuple(self.seeds)
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        object.__setattr__(self, "seeds", seeds)
        est = self.estimator
        if not est.c > 0 or not 0 < est.L2 <= 1 or est.noise_mode not in NOISE_MODES:
            raise ConfigError("estimator needs c > 0, L2 in (0, 1] and a known noise_mode")
        if self.fallback not in ("steer", "uniform"):
            raise ConfigError("fallback must be 'steer' or 'uniform'")

    def agent_config(self) -> AgentConfig:
        est = self.estimator
        return AgentConfig(
            estimator=EstimatorConfig(est.c, est.L2, est.noise_mode),
            skip_vacuous_updates=est.skip_vacuous_updates,
            start_state=self.start_state,
            fallback=self.fallback,
        )

    def replace(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(data, cls, "config")
        data = dict(data)
        try:
            if "environment" in data:
                _reject_unknown(data["environment"], EnvironmentSpec, "environment")
                data["environment"] = EnvironmentSpec(**data["environment"])
            if "estimator" in data:
                _reject_unknown(data["estimator"], EstimatorSpec, "estimator")
                data["estimator"] = EstimatorSpec(**data["estimator"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _reject_unknown(data, cls, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


# -- regret ----------------------------------------------------------------

@dataclass
class RegretSeries:
    """Per-step cumulative reward and regret of one run.

    ``regret[i]`` is the regret after ``t[i] = i + 1`` steps:
    ``t * gamma_opt`` minus the reward collected in those ``t`` steps.
    """

    t: np.ndarray
    cum_reward: np.ndarray
    regret: np.ndarray
    gamma_opt: float
    epoch: np.ndarray | None = None
    seed: int | None = None

    def __len__(self):
        return self.t.size

    def logged_rows(self, stride: int) -> np.ndarray:
        """Indices of the rows written to CSV: every ``stride`` steps plus the last."""
        T = self.t.size
        idx = np.arange(stride, T + 1, stride) - 1
        if T and (idx.size == 0 or idx[-1] != T - 1):
            idx = np.append(idx, T - 1)
        return idx


@dataclass
class AggregateSeries:
    """Across-seed mean and standard error of regret at the logged steps."""

    t: np.ndarray
    mean_regret: np.ndarray
    stderr_regret: np.ndarray
    mean_cum_reward: np.ndarray
    runs: int

    @property
    def regret(self):
        return self.mean_regret


def compute_regret(records, gamma_opt: float, T: int | None = None,
                   seed: int | None = None) -> RegretSeries:
    """Regret ``R_t = t * gamma_opt - sum_{u <= t} r_u`` for ``t = 1..T``.

    ``records`` is a trajectory or any sequence of step records.
    """
    rewards = getattr(records, "rewards", None)
    epochs = getattr(records, "epochs", None)
    if rewards is None:
        rewards = np.array([rec.reward for rec in records], dtype=float)
        epochs = np.array([rec.epoch for rec in records], dtype=np.int64)
    T = len(rewards) if T is None else T
    if len(rewards) < T:
        raise MismatchedHorizon(f"{len(rewards)} records for a horizon of {T}")
    rewards = np.asarray(rewards[:T], dtype=float)
    t = np.arange(1, T + 1)
    cum = np.cumsum(rewards)
    regret = t * gamma_opt - cum
    epoch = None if epochs is None else np.asarray(epochs[:T])
    return RegretSeries(t, cum, regret, float(gamma_opt), epoch, seed)


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


def fit_slope(series, window) -> SlopeFit:
    """Least-squares slope of ``log(R_t + 1)`` against ``log t`` on ``window``.

    ``series`` may be a :class:`RegretSeries`, an :class:`AggregateSeries`
    or a ``(t, regret)`` pair. Both window ends are inclusive.
    """
    if isinstance(series, tuple):
        t, regret = series
    else:
        t, regret = series.t, series.regret
    t = np.asarray(t, dtype=float)
    regret = np.asarray(regret, dtype=float)
    lo, hi = window
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < MIN_FIT_POINTS:
        raise DegenerateWindow(f"only {int(mask.sum())} points in window [{lo}, {hi}]")
    x = np.log(t[mask])
    shifted = regret[mask] + 1.0
    if np.any(shifted <= 0):
        raise DegenerateWindow("regret + 1 must be positive on the fit window")
    y = np.log(shifted)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2)


def aggregate(series_list, stride: int = 1) -> AggregateSeries:
    """Mean and standard error (``ddof=1``) of regret across runs."""
    if not series_list:
        raise ValueError("nothing to aggregate")
    T = len(series_list[0])
    if any(len(s) != T for s in series_list):
        raise MismatchedHorizon("runs have different horizons")
    idx = series_list[0].logged_rows(stride)
    R = np.stack([s.regret[idx] for s in series_list])
    C = np.stack([s.cum_reward[idx] for s in series_list])
    n = len(series_list)
    stderr = R.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(idx.size)
    return AggregateSeries(series_list[0].t[idx], R.mean(axis=0), stderr, C.mean(axis=0), n)


# -- per-epoch bookkeeping -------------------------------------------------

@dataclass
class EpochLog:
    """What the harness checks after each plan."""

    epoch: int
    start: int
    gain: float
    delta: float
    contains_true: bool
    widened: bool
    max_flow_gap: float
    length: int = 0


def confidence_set_contains(P, p_hat, radii, atol: float = 0.0) -> bool:
    """Whether every true row lies in its L1 ball around the estimate."""
    dist = np.abs(np.asarray(p_hat) - np.asarray(P)).sum(axis=2)
    return bool(np.all(dist <= np.asarray(radii) + atol))


class EpochRecorder:
    """Observer for :func:`qucrl.agent.run` that logs one :class:`EpochLog` per plan."""

    def __init__(self, env: Mdp):
        self.env = env
        self.logs: list[EpochLog] = []

    def __call__(self, state):
        plan = state.plan
        self.logs.append(EpochLog(
            epoch=state.epoch,
            start=state.epoch_start,
            gain=plan.gain,
            delta=state.delta,
            contains_true=confidence_set_contains(self.env.P, state.estimate.p_hat, state.radii),
            widened=plan.widened,
            max_flow_gap=float(np.max(np.abs(plan.flow_gap))),
        ))


# -- running ---------------------------------------------------------------

@dataclass
class ReplicaResult:
    seed: int
    series: RegretSeries
    epochs: list


@dataclass
class SweepResult:
    config: RunConfig
    gamma_opt: float
    replicas: list
    aggregate: AggregateSeries
    paths: list = field(default_factory=list)


def optimal_gain(env: Mdp) -> float:
    return solve_known_model(env)[0]


def run_replica(config: RunConfig, seed: int, gamma_opt: float | None = None) -> ReplicaResult:
    """One seeded run with regret series and per-epoch log."""
    env = config.environment.build()
    if gamma_opt is None:
        gamma_opt = optimal_gain(env)
    recorder = EpochRecorder(env)
    result = run(env, config.agent, config.horizon, seed, config.agent_config(),
                 observer=recorder)
    for log, summary in zip(recorder.logs, result.epochs):
        log.length = summary.length
    series = compute_regret(result.records, gamma_opt, config.horizon, seed)
    return ReplicaResult(seed, series, recorder.logs)


def _run_job(args):
    return run_replica(*args)


def replica_workers(n_jobs: int) -> int:
    """Worker count: the CPU count, capped by ``QUCRL_THREADS`` and ``n_jobs``."""
    cap = os.environ.get("QUCRL_THREADS")
    workers = os.cpu_count() or 1
    if cap:
        try:
            limit = int(cap)
        except ValueError as exc:
            raise ConfigError(f"QUCRL_THREADS must be an integer, got {cap!r}") from exc
        if limit < 1:
            raise ConfigError("QUCRL_THREADS must be at least 1")
        workers = min(workers, limit)
    return max(1, min(workers, n_jobs))


def run_replicas(config: RunConfig, seeds=None) -> list:
    seeds = list(config.seeds if seeds is None else seeds)
    gamma_opt = optimal_gain(config.environment.build())
    jobs = [(config, seed, gamma_opt) for seed in seeds]
    workers = replica_workers(len(jobs))
    if workers == 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# -- CSV output ------------------------------------------------------------

def run_filename(config: RunConfig, seed: int) -> str:
    return f"{config.agent}_{config.environment.tag}_seed{seed}.csv"


def _write_rows(path: Path, header, rows):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def write_run_csv(path, series: RegretSeries, stride: int = 100) -> Path:
    idx = series.logged_rows(stride)
    epoch = series.epoch if series.epoch is not None else np.zeros(len(series), dtype=np.int64)
    rows = ((int(series.t[i]), series.cum_reward[i], series.regret[i], int(epoch[i]),
             series.gamma_opt) for i in idx)
    return _write_rows(Path(path), CSV_HEADER, rows)


def write_epoch_csv(path, replicas) -> Path:
    rows = ((r.seed, e.epoch, e.start, e.length, e.gain, e.delta, e.contains_true,
             e.widened, e.max_flow_gap) for r in replicas for e in r.epochs)
    return _write_rows(Path(path), EPOCH_HEADER, rows)


def write_aggregate_csv(path, agg: AggregateSeries) -> Path:
    rows = ((int(agg.t[i]), agg.mean_regret[i], agg.stderr_regret[i],
             agg.mean_cum_reward[i], agg.runs) for i in range(agg.t.size))
    return _write_rows(Path(path), AGGREGATE_HEADER, rows)


def read_regret_csv(path):
    """``(t, regret)`` from a per-run or aggregate CSV."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            columns = reader.fieldnames or []
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    key = "regret" if "regret" in columns else "mean_regret"
    if "t" not in columns or key not in columns:
        raise ConfigError(f"{path} has no t/regret columns")
    t = np.array([int(row["t"]) for row in rows])
    regret = np.array([float(row[key]) for row in rows])
    return t, regret


def run_single(config: RunConfig, seed: int | None = None, out=None) -> ReplicaResult:
    """Run one seed and write its CSV (plus epoch log) under ``out``."""
    seed = config.seeds[0] if seed is None else seed
    out = Path(out or config.out)
    replica = run_replica(config, seed)
    path = out / run_filename(config, seed)
    write_run_csv(path, replica.series, config.stride)
    write_epoch_csv(path.with_name(path.stem + "_epochs.csv"), [replica])
    return replica


def run_sweep(config: RunConfig, out=None) -> SweepResult:
    """Run every seed, write per-seed CSVs, the aggregate and the epoch log."""
    out = Path(out or config.out)
    replicas = run_replicas(config)
    paths = [write_run_csv(out / run_filename(config, r.seed), r.series, config.stride)
             for r in replicas]
    agg = aggregate([r.series for r in replicas], config.stride)
    prefix = f"{config.agent}_{config.environment.tag}"
    paths.append(write_aggregate_csv(out / f"{prefix}_aggregate.csv", agg))
    paths.append(write_epoch_csv(out / f"{prefix}_epochs.csv", replicas))
    return SweepResult(config, replicas[0].series.gamma_opt, replicas, agg, paths)


__all__ = [
    "AggregateSeries", "EnvironmentSpec", "EpochLog", "EpochRecorder", "EstimatorSpec",
    "QucrlError", "RegretSeries", "RunConfig",
    "SlopeFit", "SweepResult", "aggregate", "compute_regret", "confidence_set_contains",
    "fit_slope", "run_replica", "run_replicas", "run_single", "run_sweep",
]

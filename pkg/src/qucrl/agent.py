"""Epoch-based optimistic agents: the quantum-estimator controller and its
classical empirical-frequency baseline.

Both agents share the loop: plan once per epoch, play the epoch policy,
count visits, and close the epoch when some pair's in-epoch count reaches
``max(1, N)``. They differ only in how the transition estimate and the
confidence radii are refreshed at the epoch boundary.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams
from .kernels import get_run_segment
from .mdp import Mdp
from .model import (
    TransitionEstimate,
    VisitCounters,
    classical_empirical_update,
    confidence_radius,
    end_of_epoch_quantum_update,
    record_visit,
)
from .planner import PlanResult, solve_optimistic
from .quantum import EstimatorConfig, SampleBuffer, draw_index, oracle_step

AGENT_KINDS = ("quantum", "classical")


@dataclass(frozen=True)
class AgentConfig:
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    skip_vacuous_updates: bool = True
    start_state: int = 0
    chunk: int = 4096
    backend: str | None = None
    fallback: str = "steer"


@dataclass(frozen=True)
class StepRecord:
    t: int
    state: int
    action: int
    reward: float
    next_state: int
    epoch: int


class Trajectory(Sequence):
    """Column store of :class:`StepRecord` rows; ``t`` runs from 1."""

    def __init__(self, states, actions, rewards, next_states, epochs):
        self.states = states
        self.actions = actions
        self.rewards = rewards
        self.next_states = next_states
        self.epochs = epochs

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return StepRecord(i + 1, int(self.states[i]), int(self.actions[i]),
                          float(self.rewards[i]), int(self.next_states[i]),
                          int(self.epochs[i]))

    @classmethod
    def from_records(cls, records):
        cols = list(zip(*[(r.state, r.action, r.reward, r.next_state, r.epoch)
                          for r in records])) or [(), (), (), (), ()]
        return cls(np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.int64),
                   np.asarray(cols[2], dtype=float), np.asarray(cols[3], dtype=np.int64),
                   np.asarray(cols[4], dtype=np.int64))

    def equals(self, other) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("states", "actions", "rewards", "next_states", "epochs"))


@dataclass
class EpochSummary:
    epoch: int
    start: int
    length: int
    gain: float
    delta: float


@dataclass
class EpochState:
    """Mutable controller state. ``plan`` is replaced only at rollovers."""

    kind: str
    S: int
    A: int
    rewards: np.ndarray
    epoch: int
    t: int
    t_epoch: int
    epoch_start: int
    delta: float
    counters: VisitCounters
    estimate: TransitionEstimate
    radii: np.ndarray
    plan: PlanResult
    buffer: SampleBuffer | None
    state: int
    consumed: int = 0
    vacuous_updates: int = 0

    @property
    def policy_cdf(self):
        return np.cumsum(self.plan.policy.probs, axis=1)


def epoch_trigger(nu: int, N: int) -> bool:
    """Doubling rule: the epoch ends once ``nu`` reaches ``max(1, N)``."""
    return nu == max(1, N)


def epoch_delta(S: int, A: int, t_epoch: int) -> float:
    """Confidence level for the next epoch from the completed epoch's length."""
    return 1.0 / (S * S * A * float(t_epoch) ** 7)


def _freeze(plan: PlanResult) -> PlanResult:
    for arr in (plan.occupancy, plan.model, plan.flow_gap, plan.slack, plan.radii):
        arr.setflags(write=False)
    return plan


def initial_state(env: Mdp, kind: str, cfg: AgentConfig) -> EpochState:
    """Empty counters, zero estimate, capped radii and the first plan."""
    if kind not in AGENT_KINDS:
        raise InvalidParams(f"unknown agent kind {kind!r}")
    S, A = env.S, env.A
    if not 0 <= cfg.start_state < S:
        raise InvalidParams("start state out of range")
    counters = VisitCounters(S, A)
    estimate = TransitionEstimate.zeros(S, A)
    radii = confidence_radius(kind, S, A, 1, counters.N, 0.0)
    plan = _freeze(solve_optimistic(env.r, estimate.p_hat, radii, fallback=cfg.fallback))
    buffer = SampleBuffer(epoch=1) if kind == "quantum" else None
    return EpochState(kind, S, A, env.r, epoch=1, t=0, t_epoch=0, epoch_start=1, delta=0.0,
                      counters=counters, estimate=estimate, radii=radii, plan=plan,
                      buffer=buffer, state=cfg.start_state)


def step(state: EpochState, env: Mdp, rng: np.random.Generator):
    """Play one step of the current epoch policy.

    Consumes two uniforms from ``rng`` (action, then next state), exactly
    like the batched kernels. Returns ``(record, triggered)``.
    """
    s = state.state
    a = draw_index(np.cumsum(state.plan.policy.probs[s]), rng.random())
    t = state.t + 1
    s_next, reward, _ = oracle_step(env, s, a, t, rng, state.buffer)
    record_visit(state.counters, s, a, s_next)
    state.t = t
    state.t_epoch += 1
    state.state = s_next
    triggered = epoch_trigger(int(state.counters.nu[s, a]), int(state.counters.N[s, a]))
    return StepRecord(t, s, a, reward, s_next, state.epoch), triggered


def end_epoch(state: EpochState, T: int, cfg: AgentConfig,
              rng: np.random.Generator) -> EpochState:
    """Close the current epoch: refresh the estimate, roll counts and replan."""
    S, A = state.S, state.A
    delta = epoch_delta(S, A, max(1, state.t_epoch))
    if state.kind == "quantum":
        consumed = len(state.buffer)
        vacuous = end_of_epoch_quantum_update(
            state.estimate, state.counters, state.buffer, max(2, T), delta,
            cfg.estimator, rng, state.epoch, cfg.skip_vacuous_updates)
        state.consumed += consumed
        state.vacuous_updates += int(vacuous.sum())
        state.counters.roll()
    else:
        state.counters.roll()
        classical_empirical_update(state.estimate, state.counters)
    state.delta = delta
    state.radii = confidence_radius(state.kind, S, A, state.t, state.counters.N, delta)
    state.plan = _freeze(solve_optimistic(state.rewards, state.estimate.p_hat, state.radii,
                                          fallback=cfg.fallback))
    state.epoch += 1
    state.t_epoch = 0
    state.epoch_start = state.t + 1
    return state


@dataclass
class RunResult:
    records: Trajectory
    epochs: list
    state: EpochState

    def __iter__(self):
        yield self.records
        yield self.epochs


def _streams(seed: int):
    env_seq, est_seq = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.PCG64(env_seq)),
            np.random.Generator(np.random.PCG64(est_seq)))


def run(env: Mdp, agent_kind: str, T: int, seed: int, cfg: AgentConfig | None = None,
        observer=None) -> RunResult:
    """Run an agent for ``T`` steps.

    ``observer(state)`` is called after every plan, including the initial
    one, and may inspect (not modify) the controller state.
    """
    if T < 1:
        raise InvalidParams("horizon must be at least 1")
    cfg = cfg or AgentConfig()
    env_rng, est_rng = _streams(seed)
    segment = get_run_segment(cfg.backend)
    st = initial_state(env, agent_kind, cfg)
    if observer is not None:
        observer(st)

    trans_cdf = np.ascontiguousarray(np.cumsum(env.P, axis=2))
    states = np.empty(T, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    nexts = np.empty(T, dtype=np.int64)
    epochs = np.empty(T, dtype=np.int64)
    summaries = [EpochSummary(1, 1, 0, st.plan.gain, st.delta)]
    pol_cdf = np.ascontiguousarray(st.policy_cdf)
    bits = env_rng.bit_generator

    while st.t < T:
        k = min(cfg.chunk, T - st.t)
        saved = bits.state
        u = env_rng.random(2 * k)
        lo = st.t
        n, triggered, s_final = segment(pol_cdf, trans_cdf, st.counters.nu, st.counters.N,
                                        st.counters.mu, st.state, u, states[lo:lo + k],
                                        actions[lo:lo + k], nexts[lo:lo + k])
        if n < k:
            # rewind so the stream matches one-step-at-a-time play
            bits.state = saved
            bits.advance(2 * n)
        epochs[lo:lo + n] = st.epoch
        if st.buffer is not None:
            st.buffer.extend(states[lo:lo + n], actions[lo:lo + n],
                             np.arange(lo + 1, lo + n + 1), env.P)
        st.t += n
        st.t_epoch += n
        st.state = int(s_final)
        summaries[-1].length += n
        if triggered and st.t < T:
            end_epoch(st, T, cfg, est_rng)
            summaries.append(EpochSummary(st.epoch, st.epoch_start, 0, st.plan.gain, st.delta))
            pol_cdf = np.ascontiguousarray(st.policy_cdf)
            if observer is not None:
                observer(st)

    rewards = env.r[states, actions]
    return RunResult(Trajectory(states, actions, rewards, nexts, epochs), summaries, st)


def run_stepwise(env: Mdp, agent_kind: str, T: int, seed: int,
                 cfg: AgentConfig | None = None) -> RunResult:
    """Reference loop built from :func:`step`; slow but easy to audit."""
    cfg = cfg or AgentConfig()
    env_rng, est_rng = _streams(seed)
    st = initial_state(env, agent_kind, cfg)
    summaries = [EpochSummary(1, 1, 0, st.plan.gain, st.delta)]
    records = []
    while st.t < T:
        rec, triggered = step(st, env, env_rng)
        records.append(rec)
        summaries[-1].length += 1
        if triggered and st.t < T:
            end_epoch(st, T, cfg, est_rng)
            summaries.append(EpochSummary(st.epoch, st.epoch_start, 0, st.plan.gain, st.delta))
    return RunResult(Trajectory.from_records(records), summaries, st)

"""Tabular average-reward MDPs and their exact evaluation.

Everything here is a pure function of its inputs. Arrays stored on
:class:`Mdp` and :class:`Policy` are made read-only at construction so
instances can be shared freely between experiment replicas.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParams, NonErgodicChain, SingularSystem, TooLargeToEnumerate

STOCHASTIC_ATOL = 1e-12
SOLVE_ATOL = 1e-9

#: RiverSwim rewards: a small one for swimming left at the bank, a large one
#: for fighting the current at the far end.
RIVERSWIM_SMALL_REWARD = 0.005
RIVERSWIM_LARGE_REWARD = 1.0

LEFT, RIGHT = 0, 1


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and rewards ``r[s, a]``."""

    P: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        P = _frozen(self.P)
        r = _frozen(self.r)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise InvalidParams(f"transition tensor must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise InvalidParams(f"reward table must have shape {P.shape[:2]}, got {r.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise InvalidParams("transition probabilities must be finite and nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > STOCHASTIC_ATOL:
            raise InvalidParams("every transition row must sum to 1")
        if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > 1):
            raise InvalidParams("rewards must lie in [0, 1]")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]

    def with_transitions(self, P) -> "Mdp":
        """Same rewards, different dynamics."""
        return Mdp(P, self.r)

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return np.array_equal(self.P, other.P) and np.array_equal(self.r, other.r)

    __hash__ = None

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {"S": self.S, "A": self.A, "P": self.P.tolist(), "r": self.r.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Mdp":
        expected = {"S", "A", "P", "r"}
        if not isinstance(data, dict) or set(data) != expected:
            raise InvalidParams(f"MDP document must have exactly the keys {sorted(expected)}")
        S, A = data["S"], data["A"]
        if not (isinstance(S, int) and isinstance(A, int)) or S < 1 or A < 1:
            raise InvalidParams("S and A must be positive integers")
        try:
            P = np.asarray(data["P"], dtype=float)
            r = np.asarray(data["r"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidParams(f"malformed MDP arrays: {exc}") from exc
        if P.shape != (S, A, S) or r.shape != (S, A):
            raise InvalidParams(f"array shapes {P.shape}, {r.shape} do not match S={S}, A={A}")
        return cls(P, r)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Mdp":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Mdp":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary stochastic policy ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise InvalidParams("policy table must be 2-dimensional")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > STOCHASTIC_ATOL:
            raise InvalidParams("policy rows must be probability vectors")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, S: int, A: int) -> "Policy":
        return cls(np.full((S, A), 1.0 / A))

    @classmethod
    def deterministic(cls, actions, A: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, A))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))


@dataclass(frozen=True)
class GainBias:
    gain: float
    bias: np.ndarray

    @property
    def span(self) -> float:
        return float(self.bias.max() - self.bias.min())


@dataclass(frozen=True)
class MixingDiagnostics:
    """Hitting-time summary over all deterministic policies.

    ``hitting_times`` maps an action tuple (one action per state) to the
    ``S x S`` matrix of expected first-passage times; ``inf`` marks a target
    that cannot be reached. Policies with any unreachable target are listed
    in ``flagged`` and left out of ``t_mix`` (infinite only if every policy
    is flagged). The diameter takes, per pair, the fastest policy among all
    of them; unreachable entries never win that minimum.
    """

    hitting_times: dict
    t_mix: float
    diameter: float
    flagged: tuple = field(default_factory=tuple)


def _check_policy(mdp: Mdp, policy: Policy):
    if policy.probs.shape != (mdp.S, mdp.A):
        raise InvalidParams(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.S}, {mdp.A})"
        )


def induced_chain(mdp: Mdp, policy: Policy):
    """State transition matrix and per-state reward under ``policy``."""
    _check_policy(mdp, policy)
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.P)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.r)
    return P_pi, r_pi


def _recurrent_class_count(P_pi: np.ndarray) -> int:
    # closed communicating classes of the support graph
    S = P_pi.shape[0]
    adj = P_pi > 0
    reach = np.eye(S, dtype=bool) | adj
    for _ in range(max(1, int(np.ceil(np.log2(max(S, 2)))) + 1)):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    closed = 0
    seen = np.zeros(S, dtype=bool)
    for s in range(S):
        if seen[s]:
            continue
        cls = reach[s] & reach[:, s]
        seen |= cls
        # class is closed iff nothing reachable from it lies outside it
        if not np.any(reach[s] & ~cls):
            closed += 1
    return closed


def stationary_state_distribution(P_pi: np.ndarray) -> np.ndarray:
    S = P_pi.shape[0]
    if _recurrent_class_count(P_pi) != 1:
        raise NonErgodicChain("induced chain has more than one recurrent class")
    M = np.vstack([P_pi.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if np.max(np.abs(mu @ P_pi - mu)) > 1e-10:
        raise NonErgodicChain("stationary distribution did not converge")
    return mu


def stationary_distribution(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Steady-state occupancy ``rho[s, a]`` of ``policy`` on ``mdp``.

    Raises
    ------
    NonErgodicChain
        If the induced chain has more than one recurrent class.
    """
    P_pi, _ = induced_chain(mdp, policy)
    mu = stationary_state_distribution(P_pi)
    return mu[:, None] * policy.probs


def gain_bias(mdp: Mdp, policy: Policy) -> GainBias:
    """Average reward and bias (normalised so that ``bias[0] == 0``).

    Solves ``lambda + h(s) - (P_pi h)(s) = r_pi(s)`` together with the
    normalisation row as a single dense linear system.
    """
    P_pi, r_pi = induced_chain(mdp, policy)
    S = mdp.S
    if _recurrent_class_count(P_pi) != 1:
        raise NonErgodicChain("induced chain has more than one recurrent class")
    M = np.zeros((S + 1, S + 1))
    M[:S, 0] = 1.0
    M[:S, 1:] = np.eye(S) - P_pi
    M[S, 1] = 1.0
    rhs = np.concatenate([r_pi, [0.0]])
    try:
        x = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    gain, bias = float(x[0]), x[1:] - x[1]
    residual = r_pi - gain + P_pi @ bias - bias
    if not np.all(np.isfinite(x)) or np.max(np.abs(residual)) > SOLVE_ATOL:
        raise SingularSystem(f"evaluation residual {np.max(np.abs(residual)):.3g} too large")
    return GainBias(gain, bias)


def bellman_error(true_mdp: Mdp, optimistic_P, policy: Policy) -> np.ndarray:
    """One-step discrepancy ``B(s, a) = (P_e(.|s,a) - P(.|s,a)) . h_e``.

    ``h_e`` is the bias of ``policy`` on the model with dynamics
    ``optimistic_P`` and the true rewards. This is the vanishing-discount
    limit of ``Q_e(s, a) - r(s, a) - gamma * P(.|s,a) . V_e``.
    """
    optimistic = true_mdp.with_transitions(optimistic_P)
    h = gain_bias(optimistic, policy).bias
    return (optimistic.P - true_mdp.P) @ h


def _can_reach(P_pi: np.ndarray, target: int) -> np.ndarray:
    S = P_pi.shape[0]
    ok = np.zeros(S, dtype=bool)
    ok[target] = True
    queue = deque([target])
    while queue:
        j = queue.popleft()
        for i in np.nonzero(P_pi[:, j] > 0)[0]:
            if not ok[i]:
                ok[i] = True
                queue.append(i)
    return ok


def hitting_times(P_pi: np.ndarray) -> np.ndarray:
    """Expected first-passage times ``H[s, s']`` (``H[s, s] = 0``)."""
    S = P_pi.shape[0]
    H = np.zeros((S, S))
    for j in range(S):
        reach = _can_reach(P_pi, j)
        others = np.array([i for i in range(S) if i != j], dtype=int)
        if others.size == 0:
            continue
        if not reach.all():
            H[~reach, j] = np.inf
        idx = others[reach[others]]
        if idx.size:
            Q = P_pi[np.ix_(idx, idx)]
            H[idx, j] = np.linalg.solve(np.eye(idx.size) - Q, np.ones(idx.size))
    return H


def mixing_diagnostics(mdp: Mdp, max_policies: int = 10**6) -> MixingDiagnostics:
    """Hitting times, mixing time and diameter over deterministic policies."""
    n_policies = mdp.A**mdp.S
    if n_policies > max_policies:
        raise TooLargeToEnumerate(f"{n_policies} deterministic policies exceeds {max_policies}")
    table = {}
    flagged = []
    t_mix = -np.inf
    best = np.full((mdp.S, mdp.S), np.inf)
    np.fill_diagonal(best, 0.0)
    for actions in itertools.product(range(mdp.A), repeat=mdp.S):
        P_pi = mdp.P[np.arange(mdp.S), actions]
        H = hitting_times(P_pi)
        table[actions] = H
        best = np.minimum(best, H)
        if np.isinf(H).any():
            flagged.append(actions)
            continue
        t_mix = max(t_mix, float(H.max()))
    t_mix = np.inf if t_mix == -np.inf else t_mix
    diameter = float(best.max())
    return MixingDiagnostics(table, t_mix, diameter, tuple(flagged))


# -- environments ----------------------------------------------------------

def riverswim(S: int = 6) -> Mdp:
    """RiverSwim chain with action 0 = left (deterministic), 1 = right.

    Swimming right succeeds with probability 0.35, stays with 0.6 and is
    pushed back with 0.05 in interior states. At the left bank right moves
    with 0.6 (else stays); at the right end it stays with 0.6 and drifts back
    with 0.4.
    """
    if S < 2:
        raise InvalidParams("RiverSwim needs at least two states")
    P = np.zeros((S, 2, S))
    r = np.zeros((S, 2))
    for s in range(S):
        P[s, LEFT, max(s - 1, 0)] = 1.0
    P[0, RIGHT, 0], P[0, RIGHT, 1] = 0.4, 0.6
    for s in range(1, S - 1):
        P[s, RIGHT, s - 1] = 0.05
        P[s, RIGHT, s] = 0.6
        P[s, RIGHT, s + 1] = 0.35
    P[S - 1, RIGHT, S - 1], P[S - 1, RIGHT, S - 2] = 0.6, 0.4
    r[0, LEFT] = RIVERSWIM_SMALL_REWARD
    r[S - 1, RIGHT] = RIVERSWIM_LARGE_REWARD
    return Mdp(P, r)


def two_state_cycle(A: int = 1) -> Mdp:
    P = np.zeros((2, A, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    r = np.zeros((2, A))
    r[0, :] = 1.0
    return Mdp(P, r)


def random_ergodic(S: int, A: int, seed: int) -> Mdp:
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(S, A))
    return Mdp(P, r)


def smooth(mdp: Mdp, epsilon: float) -> Mdp:
    """Mix each transition row with the uniform distribution."""
    if epsilon == 0:
        return mdp
    P = (1.0 - epsilon) * mdp.P + epsilon / mdp.S
    P /= P.sum(axis=2, keepdims=True)
    return mdp.with_transitions(P)


ENVIRONMENTS = ("riverswim", "random_ergodic", "two_state_cycle")


def make_environment(kind: str, S: int = 6, A: int = 2, seed: int = 0,
                     epsilon: float = 0.0) -> Mdp:
    """Build one of the benchmark environments.

    ``riverswim`` ignores ``A`` (always 2 actions); ``two_state_cycle`` ignores
    ``S``. ``epsilon`` mixes every row with the uniform distribution.
    """
    if kind not in ENVIRONMENTS:
        raise InvalidParams(f"unknown environment kind {kind!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidParams("smoothing epsilon must lie in [0, 1]")
    if S < 1 or A < 1:
        raise InvalidParams("S and A must be positive")
    if kind == "riverswim":
        base = riverswim(S)
    elif kind == "two_state_cycle":
        base = two_state_cycle(A)
    else:
        base = random_ergodic(S, A, seed)
    return smooth(base, epsilon)

"""Visit counters, running transition estimates and confidence radii."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams
from .quantum import (
    EstimatorConfig,
    SampleBuffer,
    experiment_budget,
    is_vacuous,
    qbounded_estimate,
)

RADIUS_CAP = 2.0
# keeps the ball nondegenerate when log(S^2 A t) == 0 (S = A = t = 1)
RADIUS_FLOOR = 1e-9
# largest per-pair confidence handed to the estimator
MAX_PAIR_DELTA = 0.5


class VisitCounters:
    """In-epoch counts ``nu``, pre-epoch counts ``N`` and transition counts ``mu``."""

    def __init__(self, S: int, A: int):
        self.nu = np.zeros((S, A), dtype=np.int64)
        self.N = np.zeros((S, A), dtype=np.int64)
        self.mu = np.zeros((S, A, S), dtype=np.int64)

    @property
    def shape(self):
        return self.nu.shape

    def total(self) -> np.ndarray:
        return self.N + self.nu

    def roll(self):
        """Fold the epoch counts into the cumulative ones."""
        self.N += self.nu
        self.nu[:] = 0

    def copy(self) -> "VisitCounters":
        out = VisitCounters(*self.shape)
        out.nu[:], out.N[:], out.mu[:] = self.nu, self.N, self.mu
        return out


def record_visit(counters: VisitCounters, s: int, a: int, s_next: int) -> VisitCounters:
    counters.nu[s, a] += 1
    counters.mu[s, a, s_next] += 1
    return counters


@dataclass
class TransitionEstimate:
    """Running estimate ``p_hat[s, a, :]`` plus the latest epoch estimate.

    ``updated_epoch[s, a]`` is 0 until the pair first receives an estimate;
    ``last_p_tilde`` rows are NaN until then.
    """

    p_hat: np.ndarray
    last_p_tilde: np.ndarray
    updated_epoch: np.ndarray

    @classmethod
    def zeros(cls, S: int, A: int) -> "TransitionEstimate":
        return cls(
            np.zeros((S, A, S)),
            np.full((S, A, S), np.nan),
            np.zeros((S, A), dtype=np.int64),
        )

    def has_estimate(self, s: int, a: int) -> bool:
        return bool(self.updated_epoch[s, a] > 0)

    def to_dict(self) -> dict:
        S, A = self.updated_epoch.shape
        last = [[None if np.isnan(row).any() else row.tolist() for row in pair]
                for pair in self.last_p_tilde]
        return {"S": S, "A": A, "P_hat": self.p_hat.tolist(), "P_tilde": last,
                "updated_epoch": self.updated_epoch.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "TransitionEstimate":
        S, A = data["S"], data["A"]
        p_hat = np.asarray(data["P_hat"], dtype=float)
        if p_hat.shape != (S, A, S):
            raise InvalidParams("P_hat shape does not match S, A")
        last = np.full((S, A, S), np.nan)
        for s in range(S):
            for a in range(A):
                row = data["P_tilde"][s][a]
                if row is not None:
                    last[s, a] = row
        return cls(p_hat, last, np.asarray(data["updated_epoch"], dtype=np.int64))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "TransitionEstimate":
        return cls.from_dict(json.loads(text))


def combine(p_hat_old, p_tilde, N: int, nu: int, first: bool) -> np.ndarray:
    """Visit-weighted average of the running and the fresh estimate."""
    if first:
        return np.array(p_tilde, dtype=float)
    w_old = N / (N + nu)
    w_new = nu / (N + nu)
    return w_old * p_hat_old + w_new * p_tilde


def end_of_epoch_quantum_update(estimate: TransitionEstimate, counters: VisitCounters,
                                buffer: SampleBuffer, T: int, delta: float,
                                cfg: EstimatorConfig, rng: np.random.Generator,
                                epoch: int, skip_vacuous_updates: bool = True):
    """Measure the epoch's samples and fold them into ``estimate``.

    Must run before ``counters.roll()``: weights use the pre-epoch count
    ``N`` and the in-epoch count ``nu``. ``delta`` is split evenly over the
    pairs visited this epoch. Returns the per-pair vacuity flags.
    """
    buffer.check_epoch(epoch)
    S, A = counters.shape
    visited = [(s, a) for s in range(S) for a in range(A) if counters.nu[s, a] > 0]
    pair_delta = min(delta / max(1, len(visited)), MAX_PAIR_DELTA)
    vacuous = np.zeros((S, A), dtype=bool)
    for s, a in visited:
        samples = buffer.take(s, a)
        nu = int(counters.nu[s, a])
        n = experiment_budget(nu, T, S, cfg)
        p_tilde = qbounded_estimate(samples, n, pair_delta, cfg, rng)
        vacuous[s, a] = is_vacuous(n, pair_delta, S, cfg.L2)
        if vacuous[s, a] and skip_vacuous_updates:
            continue
        first = not estimate.has_estimate(s, a)
        estimate.p_hat[s, a] = combine(estimate.p_hat[s, a], p_tilde,
                                       int(counters.N[s, a]), nu, first)
        estimate.last_p_tilde[s, a] = p_tilde
        estimate.updated_epoch[s, a] = epoch
    # leftovers cannot exist for visited pairs; anything else is discarded
    buffer.clear(epoch + 1)
    return vacuous


def classical_empirical_update(estimate: TransitionEstimate,
                               counters: VisitCounters) -> TransitionEstimate:
    """Empirical next-state frequencies from all transitions seen so far."""
    total = np.maximum(1, counters.total())
    estimate.p_hat[:] = counters.mu / total[:, :, None]
    return estimate


def confidence_radius(agent_kind: str, S: int, A: int, t: int, N, delta: float = 0.0):
    """L1 confidence radius, capped at 2.

    quantum:   ``7 S log(S^2 A t) / max(1, N)``
    classical: ``sqrt(14 S log(2 A t / delta) / max(1, N))``

    ``N`` may be an array; ``delta == 0`` makes the classical radius the cap.
    """
    t = max(1, t)
    denom = np.maximum(1, np.asarray(N, dtype=float))
    if agent_kind == "quantum":
        radius = 7.0 * S * math.log(S * S * A * t) / denom
    elif agent_kind == "classical":
        if delta <= 0:
            radius = np.full_like(denom, np.inf)
        else:
            radius = np.sqrt(14.0 * S * math.log(2.0 * A * t / delta) / denom)
    else:
        raise InvalidParams(f"unknown agent kind {agent_kind!r}")
    radius = np.clip(radius, RADIUS_FLOOR, RADIUS_CAP)
    return float(radius) if radius.ndim == 0 else radius

"""Simulated quantum transition oracle and the bounded mean estimator.

The estimator is not simulated at the gate level. ``qbounded_estimate``
reproduces its published error law instead: below the sample threshold it
returns the zero vector, otherwise the sup-norm error is at most
``sqrt(L2) * log(S / delta) / n`` with probability at least ``1 - delta``.
Measuring collapses a sample, so every :class:`QuantumSample` can be
consumed exactly once.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DoubleConsumption, InvalidHorizon, InvalidParams, MixedKeys, StaleBuffer
from .mdp import Mdp

NOISE_MODES = ("conforming_random", "zero_noise", "adversarial_at_bound")


@dataclass(frozen=True)
class EstimatorConfig:
    c: float = 1.0
    L2: float = 1.0
    noise_mode: str = "conforming_random"

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidParams("budget constant c must be positive")
        if not 0 < self.L2 <= 1:
            raise InvalidParams("L2 must lie in (0, 1]")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidParams(f"unknown noise mode {self.noise_mode!r}")


class QuantumSample:
    """Handle on one unmeasured next-state superposition for ``(s, a)``.

    The distribution it encodes is held privately and only dereferenced by
    :func:`qbounded_estimate` while measuring.
    """

    __slots__ = ("state", "action", "step", "_P", "_consumed")

    def __init__(self, state: int, action: int, step: int, transitions: np.ndarray):
        self.state = state
        self.action = action
        self.step = step
        self._P = transitions
        self._consumed = False

    @property
    def key(self):
        return (self.state, self.action)

    @property
    def id(self):
        return (self.state, self.action, self.step)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _measure(self) -> np.ndarray:
        if self._consumed:
            raise DoubleConsumption(f"sample {self.id} was already measured")
        self._consumed = True
        return self._P[self.state, self.action]

    def __repr__(self):
        flag = "consumed" if self._consumed else "live"
        return f"QuantumSample(s={self.state}, a={self.action}, t={self.step}, {flag})"


class SampleBuffer:
    """Unmeasured samples collected during the current epoch, keyed by pair."""

    def __init__(self, epoch: int = 1):
        self.epoch = epoch
        self._samples = defaultdict(list)

    def add(self, sample: QuantumSample):
        self._samples[sample.key].append(sample)

    def extend(self, states, actions, steps, transitions: np.ndarray):
        """Register one sample per ``(state, action, step)`` triple."""
        samples = self._samples
        for s, a, t in zip(states.tolist(), actions.tolist(), steps.tolist()):
            samples[(s, a)].append(QuantumSample(s, a, t, transitions))

    def count(self, s: int, a: int) -> int:
        return len(self._samples.get((s, a), ()))

    def keys(self):
        return [k for k, v in self._samples.items() if v]

    def take(self, s: int, a: int) -> list:
        """Remove and return every sample for ``(s, a)``."""
        return self._samples.pop((s, a), [])

    def __len__(self):
        return sum(len(v) for v in self._samples.values())

    def clear(self, next_epoch: int):
        self._samples = defaultdict(list)
        self.epoch = next_epoch

    def check_epoch(self, epoch: int):
        if self.epoch != epoch:
            raise StaleBuffer(f"buffer holds samples from epoch {self.epoch}, expected {epoch}")


def draw_index(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: first index whose cumulative mass exceeds ``u``."""
    return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)


def oracle_step(mdp: Mdp, s: int, a: int, t: int, rng: np.random.Generator,
                buffer: SampleBuffer | None = None):
    """Play ``a`` in ``s``: next state, known reward and a fresh quantum sample.

    Consumes exactly one uniform from ``rng``.
    """
    if not (0 <= s < mdp.S and 0 <= a < mdp.A):
        raise InvalidParams(f"invalid state/action ({s}, {a})")
    cdf = np.cumsum(mdp.P[s, a])
    s_next = draw_index(cdf, rng.random())
    sample = QuantumSample(s, a, t, mdp.P)
    if buffer is not None:
        buffer.add(sample)
    return s_next, float(mdp.r[s, a]), sample


def experiment_budget(nu: int, T: int, S: int, cfg: EstimatorConfig) -> int:
    """Number of estimator queries affordable from ``nu`` collected samples.

    Never more than ``nu``: one experiment per sample at most, even when
    ``c`` is small enough that the formula would allow more.
    """
    if T < 2:
        raise InvalidHorizon("horizon must be at least 2")
    if nu < 0:
        raise InvalidParams("sample count must be nonnegative")
    cost = cfg.c * math.sqrt(math.log(T * math.sqrt(S)))
    return min(nu, int(math.floor(nu / cost)))


def error_bound(n: int, delta: float, S: int, L2: float = 1.0) -> float:
    """Sup-norm radius guaranteed with probability ``1 - delta``."""
    return math.sqrt(L2) * math.log(S / delta) / n


def is_vacuous(n: int, delta: float, S: int, L2: float = 1.0) -> bool:
    """True when the estimator falls back to the zero vector."""
    return n <= math.log(S / delta) / math.sqrt(L2)


def qbounded_estimate(samples, n: int, delta: float, cfg: EstimatorConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Measure ``samples`` and return an estimate of their common next-state row.

    Every sample is consumed, whatever ``n`` is. The output is clipped to
    ``[-1, 1]`` per coordinate and is not projected onto the simplex.
    """
    samples = list(samples)
    if not samples:
        raise InvalidParams("need at least one sample to estimate from")
    if not 0 < delta < 1:
        raise InvalidParams("delta must lie in (0, 1)")
    key = samples[0].key
    for smp in samples:
        if smp.key != key:
            raise MixedKeys(f"samples mix pairs {key} and {smp.key}")
        if smp.consumed:
            raise DoubleConsumption(f"sample {smp.id} was already measured")
    rows = [smp._measure() for smp in samples]
    mean = np.asarray(rows[0], dtype=float)
    S = mean.size
    if is_vacuous(n, delta, S, cfg.L2):
        return np.zeros(S)
    b = error_bound(n, delta, S, cfg.L2)
    if cfg.noise_mode == "zero_noise":
        noise = np.zeros(S)
    elif cfg.noise_mode == "adversarial_at_bound":
        noise = b * rng.choice((-1.0, 1.0), size=S)
    else:
        width = 1.0 if rng.random() < delta else b
        noise = rng.uniform(-width, width, size=S)
    return np.clip(mean + noise, -1.0, 1.0)

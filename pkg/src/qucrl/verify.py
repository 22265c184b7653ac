"""Numerical checks of the estimator guarantee and the analysis identities.

Each ``measure_*`` function returns raw measurements; thresholds live with
the caller (tests, or :func:`run_all` for the command line).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import Mdp, Policy, bellman_error, gain_bias, mixing_diagnostics, stationary_distribution
from .quantum import EstimatorConfig, QuantumSample, error_bound, qbounded_estimate


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# -- estimator -------------------------------------------------------------

def _fresh_samples(row: np.ndarray, count: int = 1):
    P = row.reshape(1, 1, -1)
    return [QuantumSample(0, 0, i, P) for i in range(count)]


def estimator_errors(row, n: int, delta: float, trials: int, rng,
                     cfg: EstimatorConfig | None = None) -> np.ndarray:
    """Sup-norm errors of ``trials`` independent estimates of ``row``."""
    cfg = cfg or EstimatorConfig()
    row = np.asarray(row, dtype=float)
    out = np.empty(trials)
    for k in range(trials):
        est = qbounded_estimate(_fresh_samples(row), n, delta, cfg, rng)
        out[k] = np.max(np.abs(est - row))
    return out


def empirical_errors(row, n: int, trials: int, rng) -> np.ndarray:
    """Sup-norm errors of empirical frequencies from ``n`` i.i.d. draws."""
    row = np.asarray(row, dtype=float)
    counts = rng.multinomial(n, row, size=trials)
    return np.max(np.abs(counts / n - row), axis=1)


def reference_row(S: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).dirichlet(np.ones(S))


def measure_guarantee(ns=(16, 64, 256), deltas=(0.2, 0.05), sizes=(4, 6), trials=2000,
                      seed=0):
    """Violation rate of the sup-norm bound for every grid cell.

    Returns a list of ``(n, delta, S, rate)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for S in sizes:
        row = reference_row(S, S)
        for delta in deltas:
            for n in ns:
                err = estimator_errors(row, n, delta, trials, rng)
                bound = error_bound(n, delta, S)
                out.append((n, delta, S, float(np.mean(err > bound))))
    return out


def measure_rate(ns=(16, 64, 256), deltas=(0.2, 0.05), sizes=(4, 6), trials=2000, seed=1):
    """Median-error ratios when ``n`` doubles, for both estimators.

    Returns a list of ``(n, delta, S, quantum_ratio, classical_ratio)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for S in sizes:
        row = reference_row(S, S)
        for delta in deltas:
            for n in ns:
                q1 = np.median(estimator_errors(row, n, delta, trials, rng))
                q2 = np.median(estimator_errors(row, 2 * n, delta, trials, rng))
                c1 = np.median(empirical_errors(row, n, trials, rng))
                c2 = np.median(empirical_errors(row, 2 * n, trials, rng))
                out.append((n, delta, S, float(q2 / q1), float(c2 / c1)))
    return out


# -- analysis identities ---------------------------------------------------

def random_unichain_mdp(S: int, A: int, rng, floor: float = 0.05) -> Mdp:
    """Random rows mixed with the uniform row, so every policy mixes."""
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P = (1.0 - floor) * P + floor / S
    P /= P.sum(axis=2, keepdims=True)
    return Mdp(P, rng.uniform(0.0, 1.0, size=(S, A)))


def random_policy(S: int, A: int, rng) -> Policy:
    return Policy(rng.dirichlet(np.ones(A), size=S))


@dataclass
class Triple:
    true: Mdp
    optimistic_P: np.ndarray
    policy: Policy


def random_triples(count: int = 100, sizes=(2, 3, 4), actions=(1, 2), seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        S = sizes[k % len(sizes)]
        A = actions[(k // len(sizes)) % len(actions)]
        true = random_unichain_mdp(S, A, rng)
        other = random_unichain_mdp(S, A, rng)
        out.append(Triple(true, other.P, random_policy(S, A, rng)))
    return out


def gain_gap_residual(tr: Triple) -> float:
    """``|(gain on P_e - gain on P) - sum rho B|`` for one triple."""
    optimistic = tr.true.with_transitions(tr.optimistic_P)
    lhs = gain_bias(optimistic, tr.policy).gain - gain_bias(tr.true, tr.policy).gain
    rho = stationary_distribution(tr.true, tr.policy)
    B = bellman_error(tr.true, tr.optimistic_P, tr.policy)
    return abs(lhs - float(np.sum(rho * B)))


def bellman_bound_excess(tr: Triple) -> float:
    """``max(|B| - ||P_e - P||_1 ||h_e||_inf)``; nonpositive when the bound holds."""
    optimistic = tr.true.with_transitions(tr.optimistic_P)
    h = gain_bias(optimistic, tr.policy).bias
    B = bellman_error(tr.true, tr.optimistic_P, tr.policy)
    gap = np.abs(tr.optimistic_P - tr.true.P).sum(axis=2)
    return float(np.max(np.abs(B) - gap * np.max(np.abs(h))))


def span_excess(mdp: Mdp, policy: Policy) -> float:
    """``span(h) - t_mix``; nonpositive when the span bound holds."""
    span = gain_bias(mdp, policy).span
    return span - mixing_diagnostics(mdp).t_mix


def run_all(trials: int = 2000, triples: int = 100) -> list:
    """Every property suite with its default tolerance, as :class:`Check` rows."""
    checks = []
    rates = measure_guarantee(trials=trials)
    worst = max(rate - (d + 3 * math.sqrt(d / trials)) for _, d, _, rate in rates)
    checks.append(Check("estimator guarantee", worst <= 0,
                        f"worst excess over delta + 3 sigma = {worst:.4f}"))
    ratios = measure_rate(trials=trials)
    q_ok = all(0.5 / 1.3 <= q <= 0.5 * 1.3 for *_, q, _ in ratios)
    c_ok = all(math.sqrt(0.5) / 1.3 <= c <= math.sqrt(0.5) * 1.3 for *_, c in ratios)
    checks.append(Check("error rate 1/n vs 1/sqrt(n)", q_ok and c_ok,
                        "quantum ratios " + ", ".join(f"{q:.3f}" for *_, q, _ in ratios)
                        + "; classical ratios " + ", ".join(f"{c:.3f}" for *_, c in ratios)))
    tr = random_triples(triples)
    res = max(gain_gap_residual(t) for t in tr)
    checks.append(Check("gain gap equals averaged Bellman error", res <= 1e-8,
                        f"max residual {res:.3g}"))
    exc = max(bellman_bound_excess(t) for t in tr)
    checks.append(Check("Bellman error bound", exc <= 1e-12, f"max excess {exc:.3g}"))
    span = max(span_excess(t.true, t.policy) for t in tr)
    checks.append(Check("bias span below mixing time", span <= 1e-9, f"max excess {span:.3g}"))
    return checks

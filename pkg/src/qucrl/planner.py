"""Optimistic planning as an extended linear program.

The optimistic problem searches jointly over an occupancy measure ``rho``
and a model ``P_e`` inside L1 balls around the running estimate. Writing
``p(s, a, s') = rho(s, a) * P_e(s' | s, a)`` and bounding the per-entry
deviation by slacks ``alpha`` turns it into an LP::

    max  sum r(s,a) p(s,a,s')
    s.t. sum p = 1
         sum_{a,s''} p(s',a,s'') <= sum_{s,a} p(s,a,s')          for all s'
         |p(s,a,s') - P_hat(s'|s,a) rho(s,a)| <= alpha(s,a,s')
         sum_{s'} alpha(s,a,s') <= radius(s,a) rho(s,a)
         p, alpha >= 0

The flow rows are relaxed to inequalities; both sides sum to one over
``s'``, so every feasible point satisfies them with equality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, InvalidRadius, NumericalFailure
from .mdp import Mdp, Policy

OCCUPANCY_TOL = 1e-10
POLICY_TOL = 1e-12
FEASIBILITY_TOL = 1e-8

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class LinearProgram:
    """``max objective @ x`` s.t. ``A_ub x <= b_ub``, ``A_eq x == b_eq``, ``x >= 0``."""

    objective: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray


@dataclass(frozen=True)
class ExtendedLpInstance:
    """Dense LP in maximisation form over ``x = [p, alpha]``.

    ``A_ub x <= b_ub`` holds the flow, deviation and ball rows (in that
    order); ``A_eq x == b_eq`` is the single normalisation row.
    """

    S: int
    A: int
    objective: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.S * self.A

    @property
    def n_flow(self) -> int:
        return self.S

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.A_ub.shape[0] + self.A_eq.shape[0]

    def flow_rows(self) -> np.ndarray:
        return self.A_ub[: self.S]

    def split(self, x):
        n = self.S * self.A * self.S
        shape = (self.S, self.A, self.S)
        return x[:n].reshape(shape), x[n:].reshape(shape)


def _p_index(S, A, s, a, s2):
    return (s * A + a) * S + s2


def build_extended_lp(r, p_hat, radii) -> ExtendedLpInstance:
    """Assemble the optimistic LP for rewards ``r``, centres ``p_hat`` and ``radii``."""
    r = np.asarray(r, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    S, A = r.shape
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (S, A))
    if np.any(~(radii > 0)):
        raise InvalidRadius("all confidence radii must be positive")
    if p_hat.shape != (S, A, S) or not np.all(np.isfinite(p_hat)):
        raise InvalidRadius("estimate must be a finite (S, A, S) array")

    n = S * A * S
    objective = np.concatenate([np.repeat(r.ravel(), S), np.zeros(n)])

    A_eq = np.zeros((1, 2 * n))
    A_eq[0, :n] = 1.0
    b_eq = np.ones(1)

    n_ub = S + 2 * n + S * A
    A_ub = np.zeros((n_ub, 2 * n))
    b_ub = np.zeros(n_ub)
    # flow: outflow(s') - inflow(s') <= 0
    p_view = A_ub[:S, :n].reshape(S, S, A, S)
    for s2 in range(S):
        p_view[s2, s2, :, :] += 1.0
        p_view[s2, :, :, s2] -= 1.0
    # deviation rows, two per (s, a, s')
    row = S
    for s in range(S):
        for a in range(A):
            base = _p_index(S, A, s, a, 0)
            block = slice(base, base + S)
            for s2 in range(S):
                j = base + s2
                upper = A_ub[row]
                upper[block] -= p_hat[s, a, s2]
                upper[j] += 1.0
                upper[n + j] = -1.0
                lower = A_ub[row + 1]
                lower[block] += p_hat[s, a, s2]
                lower[j] -= 1.0
                lower[n + j] = -1.0
                row += 2
    # ball rows
    for s in range(S):
        for a in range(A):
            base = _p_index(S, A, s, a, 0)
            A_ub[row, n + base: n + base + S] = 1.0
            A_ub[row, base: base + S] = -radii[s, a]
            row += 1
    return ExtendedLpInstance(S, A, objective, A_ub, b_ub, A_eq, b_eq)


def highs_solver(objective, A_ub, b_ub, A_eq, b_eq):
    """Maximise ``objective @ x`` with HiGHS dual simplex; ``x >= 0``."""
    res = linprog(-objective, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status != 0:
        raise NumericalFailure(res.message, {"status": res.status, "nit": res.nit})
    return -res.fun, res.x


def solve_lp(instance, solver=highs_solver):
    """Solve a :class:`LinearProgram` (or an :class:`ExtendedLpInstance`).

    ``solver`` is any callable with the signature of :func:`highs_solver`.
    Returns ``(value, x)`` after checking primal feasibility.
    """
    value, x = solver(instance.objective, instance.A_ub, instance.b_ub,
                      instance.A_eq, instance.b_eq)
    x = np.asarray(x, dtype=float)
    viol = max(
        float(np.max(instance.A_ub @ x - instance.b_ub, initial=0.0)),
        float(np.max(np.abs(instance.A_eq @ x - instance.b_eq), initial=0.0)),
        float(np.max(-x, initial=0.0)),
    )
    if viol > FEASIBILITY_TOL:
        raise NumericalFailure(f"primal residual {viol:.3g} exceeds {FEASIBILITY_TOL}",
                               {"residual": viol})
    return float(value), x


def policy_from_occupancy(rho, tol: float = POLICY_TOL) -> Policy:
    """``pi(a|s) = rho(s,a) / sum_a rho(s,a)``; uniform where the state is unoccupied."""
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    S, A = rho.shape
    mass = rho.sum(axis=1, keepdims=True)
    probs = np.where(mass > tol, rho / np.where(mass > tol, mass, 1.0), 1.0 / A)
    probs /= probs.sum(axis=1, keepdims=True)
    return Policy(probs)


def l1_simplex_projection(v) -> np.ndarray:
    """A point of the probability simplex minimising ``||q - v||_1``."""
    q = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    total = q.sum()
    if total > 1.0:
        return q / total
    return q + (1.0 - total) / q.size


def _ball_centres(p_hat, radii):
    """Simplex points nearest to each centre and the L1 budget left over."""
    S, A, _ = p_hat.shape
    q0 = np.empty_like(p_hat)
    for s in range(S):
        for a in range(A):
            q0[s, a] = l1_simplex_projection(p_hat[s, a])
    budget = radii - np.abs(q0 - p_hat).sum(axis=2)
    return q0, budget


def _optimistic_min(q0, budget, cost):
    """``min q . cost`` over the L1 ball of each pair, starting from ``q0``.

    Shifts up to ``budget / 2`` mass onto the cheapest state, taken from the
    most expensive states first.
    """
    S = cost.size
    order = np.argsort(-cost, kind="stable")
    best = order[-1]
    q = q0.reshape(-1, S).copy()
    move = np.minimum(np.clip(budget.reshape(-1), 0.0, None) / 2.0, 1.0 - q[:, best])
    rest = order[:-1]
    taken = q[:, rest]
    before = np.cumsum(taken, axis=1) - taken
    removed = np.clip(move[:, None] - before, 0.0, taken)
    q[:, rest] = taken - removed
    q[:, best] += removed.sum(axis=1)
    return (q @ cost).reshape(budget.shape)


def steer_actions(p_hat, radii, support, max_iter: int = 500, tol: float = 1e-9):
    """Optimistic shortest-path actions towards the states in ``support``.

    Value iteration on expected hitting times of ``support`` where every
    pair may use the most favourable model in its confidence ball. Pairs
    whose ball misses the simplex are never chosen. Returns one action per
    state (``-1`` when no pair of the state is usable).
    """
    p_hat = np.asarray(p_hat, dtype=float)
    S, A, _ = p_hat.shape
    q0, budget = _ball_centres(p_hat, np.broadcast_to(radii, (S, A)))
    usable = budget >= 0
    dist = np.zeros(S)
    q_values = np.zeros((S, A))
    for _ in range(max_iter):
        q_values = 1.0 + _optimistic_min(q0, budget, dist)
        q_values[~usable] = np.inf
        new = np.where(support, 0.0, q_values.min(axis=1))
        new = np.minimum(new, 1e12)
        if np.max(np.abs(new - dist)) < tol:
            dist = new
            break
        dist = new
    actions = np.argmin(q_values, axis=1)
    actions[~usable.any(axis=1)] = -1
    return actions


def extract_policy(rho, p_hat, radii, fallback: str = "steer",
                   tol: float = POLICY_TOL) -> Policy:
    """Epoch policy from an optimistic occupancy.

    Occupied states use ``rho(s, a) / sum_a rho(s, a)``. Unoccupied states
    either play uniformly (``fallback="uniform"``) or steer optimistically
    towards the occupied set (``fallback="steer"``).
    """
    policy = policy_from_occupancy(rho, tol)
    if fallback == "uniform":
        return policy
    if fallback != "steer":
        raise ValueError(f"unknown fallback {fallback!r}")
    support = np.asarray(rho).sum(axis=1) > tol
    if support.all():
        return policy
    actions = steer_actions(p_hat, radii, support)
    probs = np.array(policy.probs)
    for s in np.nonzero(~support & (actions >= 0))[0]:
        probs[s] = 0.0
        probs[s, actions[s]] = 1.0
    return Policy(probs)


def simplex_distance(p_hat) -> np.ndarray:
    """L1 distance from each row of ``p_hat`` to the probability simplex."""
    p_hat = np.asarray(p_hat, dtype=float)
    q0, budget = _ball_centres(p_hat, np.zeros(p_hat.shape[:2]))
    return -budget


def reachable_radii(p_hat, radii) -> np.ndarray:
    """Radii widened just enough that every ball meets the simplex.

    Balls that already contain a probability vector keep their radius.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    radii = np.broadcast_to(np.asarray(radii, dtype=float), p_hat.shape[:2])
    need = simplex_distance(p_hat)
    return np.where(need > radii, need * (1.0 + 1e-9) + 1e-9, radii)


@dataclass(frozen=True)
class PlanResult:
    """Solved optimistic program.

    ``radii`` are the radii the program was solved with; they differ from
    the requested ones only when the requested set was empty (see
    :func:`solve_optimistic`).
    """

    occupancy: np.ndarray
    model: np.ndarray
    gain: float
    policy: Policy
    flow_gap: np.ndarray
    slack: np.ndarray
    radii: np.ndarray
    widened: bool = False


def solve_optimistic(r, p_hat, radii, solver=highs_solver,
                     fallback: str = "steer") -> PlanResult:
    """Optimistic occupancy, model and epoch policy for the given confidence set.

    ``fallback`` picks the policy in states the optimistic occupancy leaves
    empty; see :func:`extract_policy`.

    An estimate that is not a probability vector can sit so far from the
    simplex that its ball holds no model at all. If no stationary policy
    can be built from the remaining pairs the program is infeasible; it is
    then re-solved once with :func:`reachable_radii` and the result is
    flagged ``widened``.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    S, A = np.shape(r)
    radii = np.array(np.broadcast_to(np.asarray(radii, dtype=float), (S, A)))
    widened = False
    instance = build_extended_lp(r, p_hat, radii)
    try:
        value, x = solve_lp(instance, solver)
    except Infeasible:
        radii = reachable_radii(p_hat, radii)
        widened = True
        instance = build_extended_lp(r, p_hat, radii)
        value, x = solve_lp(instance, solver)
    p, alpha = instance.split(x)
    p = np.clip(p, 0.0, None)
    rho = p.sum(axis=2)
    rho_sum = rho.sum()
    rho /= rho_sum
    p /= rho_sum
    model = np.empty_like(p)
    for s in range(S):
        for a in range(A):
            if rho[s, a] >= OCCUPANCY_TOL:
                model[s, a] = p[s, a] / rho[s, a]
            else:
                # payoff-irrelevant row; any point of the ball will do
                model[s, a] = l1_simplex_projection(p_hat[s, a])
    model /= model.sum(axis=2, keepdims=True)
    flow_gap = instance.flow_rows() @ x
    policy = extract_policy(rho, p_hat, radii, fallback)
    return PlanResult(rho, model, float(value), policy, flow_gap, alpha, radii, widened)


def solve_known_model(mdp: Mdp, solver=highs_solver):
    """Optimal gain, an optimal policy and its occupancy for a known model.

    Returns ``(gain, policy, rho)``.
    """
    S, A = mdp.S, mdp.A
    objective = mdp.r.ravel().astype(float)
    A_eq = np.zeros((1 + S, S * A))
    A_eq[0] = 1.0
    for s2 in range(S):
        flow = np.zeros((S, A))
        flow[s2, :] += 1.0
        flow -= mdp.P[:, :, s2]
        A_eq[1 + s2] = flow.ravel()
    b_eq = np.zeros(1 + S)
    b_eq[0] = 1.0

    lp = LinearProgram(objective, np.zeros((0, S * A)), np.zeros(0), A_eq, b_eq)
    value, x = solve_lp(lp, solver)
    rho = np.clip(x.reshape(S, A), 0.0, None)
    rho /= rho.sum()
    return float(mdp.r.ravel() @ rho.ravel()), policy_from_occupancy(rho), rho


def write_lp(instance: ExtendedLpInstance, path) -> None:
    """Dump ``instance`` in CPLEX LP text format."""
    S, A = instance.S, instance.A
    names = [f"p_{s}_{a}_{t}" for s in range(S) for a in range(A) for t in range(S)]
    names += [f"alpha_{s}_{a}_{t}" for s in range(S) for a in range(A) for t in range(S)]

    def expr(coefs):
        terms = [f"{c:+.17g} {names[j]}" for j, c in enumerate(coefs) if c != 0]
        return " ".join(terms) if terms else f"0 {names[0]}"

    lines = ["Maximize", " obj: " + expr(instance.objective), "Subject To"]
    for i, (row, rhs) in enumerate(zip(instance.A_eq, instance.b_eq)):
        lines.append(f" eq{i}: {expr(row)} = {rhs:.17g}")
    for i, (row, rhs) in enumerate(zip(instance.A_ub, instance.b_ub)):
        lines.append(f" ub{i}: {expr(row)} <= {rhs:.17g}")
    lines.append("Bounds")
    lines.extend(f" {name} >= 0" for name in names)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

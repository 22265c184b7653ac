"""Pure-Python stepping loop, bit-compatible with the compiled kernel."""
import numpy as np


def _draw(cdf, u):
    i = 0
    last = len(cdf) - 1
    while i < last and u >= cdf[i]:
        i += 1
    return i


def run_segment(pol_cdf, trans_cdf, nu, N, mu, state, u, out_state, out_action, out_next):
    """Step until a pair's in-epoch count reaches ``max(1, N)`` or ``u`` runs out.

    Each step consumes two uniforms: ``u[2i]`` picks the action, ``u[2i+1]``
    the next state. ``nu``, ``mu`` and the ``out_*`` arrays are updated in
    place. Returns ``(steps, triggered, final_state)``.
    """
    pol = pol_cdf.tolist()
    trans = trans_cdf.tolist()
    nu_l = nu.tolist()
    N_l = N.tolist()
    uu = u.tolist()
    k = len(uu) // 2
    states, actions, nexts = [], [], []
    triggered = False
    i = 0
    while i < k:
        a = _draw(pol[state], uu[2 * i])
        s2 = _draw(trans[state][a], uu[2 * i + 1])
        states.append(state)
        actions.append(a)
        nexts.append(s2)
        nu_l[state][a] += 1
        i += 1
        if nu_l[state][a] == max(1, N_l[state][a]):
            triggered = True
            state = s2
            break
        state = s2
    out_state[:i] = states
    out_action[:i] = actions
    out_next[:i] = nexts
    nu[:] = nu_l
    np.add.at(mu, (out_state[:i], out_action[:i], out_next[:i]), 1)
    return i, triggered, state

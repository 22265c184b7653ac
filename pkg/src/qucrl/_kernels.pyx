# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stepping loop; see :mod:`qucrl._pykernels` for the reference twin."""

cdef inline Py_ssize_t _draw(const double[::1] cdf, double u) noexcept nogil:
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t last = cdf.shape[0] - 1
    while i < last and u >= cdf[i]:
        i += 1
    return i


def run_segment(const double[:, ::1] pol_cdf,
                const double[:, :, ::1] trans_cdf,
                long long[:, ::1] nu,
                const long long[:, ::1] N,
                long long[:, :, ::1] mu,
                Py_ssize_t state,
                const double[::1] u,
                long long[::1] out_state,
                long long[::1] out_action,
                long long[::1] out_next):
    cdef Py_ssize_t k = u.shape[0] // 2
    cdef Py_ssize_t i = 0, a, s2
    cdef long long bound
    cdef bint triggered = False
    with nogil:
        while i < k:
            a = _draw(pol_cdf[state], u[2 * i])
            s2 = _draw(trans_cdf[state, a], u[2 * i + 1])
            out_state[i] = state
            out_action[i] = a
            out_next[i] = s2
            nu[state, a] += 1
            mu[state, a, s2] += 1
            bound = N[state, a] if N[state, a] > 1 else 1
            i += 1
            if nu[state, a] == bound:
                triggered = True
                state = s2
                break
            state = s2
    return i, triggered, state

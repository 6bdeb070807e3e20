# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backward kernels for the driver-0 reflection operator.

Node layout is breadth-first with a uniform branching factor ``b``: the
children of node ``i`` on level ``l`` are the ``b`` consecutive nodes starting
at ``level_start[l + 1] + (i - level_start[l]) * b``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _ref(const double[::1] lo_at, const double[::1] lo_right,
               const double[::1] prob, const long[::1] level_start,
               long b, double[::1] x_at, double[::1] x_right,
               double[::1] a_inc, double[::1] c_jump) noexcept nogil:
    cdef long depth = level_start.shape[0] - 2
    cdef long n = level_start[depth + 1]
    cdef long i, j, l, c0, lo, hi
    cdef double cont, r
    for i in range(level_start[depth], n):
        x_at[i] = lo_at[i]
    a_inc[0] = 0.0
    for l in range(depth - 1, -1, -1):
        lo = level_start[l]
        hi = level_start[l + 1]
        for i in range(lo, hi):
            c0 = hi + (i - lo) * b
            cont = 0.0
            for j in range(b):
                cont += prob[c0 + j] * x_at[c0 + j]
            r = lo_right[i]
            if cont >= r:
                r = cont
            x_right[i] = r
            for j in range(b):
                a_inc[c0 + j] = r - cont
            if lo_at[i] > r:
                x_at[i] = lo_at[i]
                c_jump[i] = lo_at[i] - r
            else:
                x_at[i] = r
                c_jump[i] = 0.0


def ref_backward(const double[::1] lo_at, const double[::1] lo_right, const double[::1] prob,
                 const long[::1] level_start, long b):
    """Smallest strong supermartingale above a ladlag obstacle.

    Returns ``(x_at, x_right, a_inc, c_jump)``; ``a_inc`` is indexed by the
    child node that closes the interval it was charged on.
    """
    cdef long n = lo_at.shape[0]
    cdef long n_inner = lo_right.shape[0]
    x_at = np.empty(n)
    x_right = np.empty(n_inner)
    a_inc = np.empty(n)
    c_jump = np.empty(n_inner)
    cdef double[::1] xa = x_at, xr = x_right, ai = a_inc, cj = c_jump
    with nogil:
        _ref(lo_at, lo_right, prob, level_start, b, xa, xr, ai, cj)
    return x_at, x_right, a_inc, c_jump


def picard(const double[::1] xt_at, const double[::1] xt_right,
           const double[::1] zt_at, const double[::1] zt_right,
           const double[::1] prob, const long[::1] level_start, long b,
           double tol, long max_iter):
    """Coupled monotone iteration X = Ref[X' + xt], X' = Ref[X - zt].

    Obstacle terminal values are forced to zero. Returns the two Ref
    solutions, the iteration count and the last sup-norm change.
    """
    cdef long n = xt_at.shape[0]
    cdef long n_inner = xt_right.shape[0]
    cdef long depth = level_start.shape[0] - 2
    cdef long i, it = 0
    cdef double change = 0.0, d

    X = [np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner)]
    Xp = [np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner)]
    Xn = [np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner)]
    Xpn = [np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner)]
    ob_at = np.zeros(n)
    ob_right = np.zeros(n_inner)
    obp_at = np.zeros(n)
    obp_right = np.zeros(n_inner)

    cdef double[::1] oa = ob_at, orr = ob_right, opa = obp_at, opr = obp_right
    cdef double[::1] x_at, x_right, xp_at, xp_right
    cdef double[::1] y_at, y_right, y_a, y_c, yp_at, yp_right, yp_a, yp_c
    cdef long leaf0 = level_start[depth]

    while it < max_iter:
        x_at = X[0]
        x_right = X[1]
        xp_at = Xp[0]
        xp_right = Xp[1]
        y_at = Xn[0]
        y_right = Xn[1]
        y_a = Xn[2]
        y_c = Xn[3]
        yp_at = Xpn[0]
        yp_right = Xpn[1]
        yp_a = Xpn[2]
        yp_c = Xpn[3]
        with nogil:
            for i in range(leaf0):
                oa[i] = xp_at[i] + xt_at[i]
                opa[i] = x_at[i] - zt_at[i]
            for i in range(leaf0, n):
                oa[i] = 0.0
                opa[i] = 0.0
            for i in range(n_inner):
                orr[i] = xp_right[i] + xt_right[i]
                opr[i] = x_right[i] - zt_right[i]
            _ref(oa, orr, prob, level_start, b, y_at, y_right, y_a, y_c)
            _ref(opa, opr, prob, level_start, b, yp_at, yp_right, yp_a, yp_c)
            change = 0.0
            for i in range(n):
                d = abs(y_at[i] - x_at[i])
                if d > change:
                    change = d
                d = abs(yp_at[i] - xp_at[i])
                if d > change:
                    change = d
            for i in range(n_inner):
                d = abs(y_right[i] - x_right[i])
                if d > change:
                    change = d
                d = abs(yp_right[i] - xp_right[i])
                if d > change:
                    change = d
        X, Xn = Xn, X
        Xp, Xpn = Xpn, Xp
        it += 1
        if change < tol:
            break
    return tuple(X), tuple(Xp), it, change

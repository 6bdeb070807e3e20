"""Pure numpy versions of the compiled kernels (same signatures, same results)."""

import numpy as np


def ref_backward(lo_at, lo_right, prob, level_start, b):
    lo_at = np.asarray(lo_at, dtype=float)
    lo_right = np.asarray(lo_right, dtype=float)
    prob = np.asarray(prob, dtype=float)
    depth = len(level_start) - 2
    n = lo_at.shape[0]
    x_at = np.empty(n)
    x_right = np.empty(lo_right.shape[0])
    a_inc = np.empty(n)
    c_jump = np.empty(lo_right.shape[0])
    leaf0 = level_start[depth]
    x_at[leaf0:] = lo_at[leaf0:]
    a_inc[0] = 0.0
    for l in range(depth - 1, -1, -1):
        lo, hi, nxt = level_start[l], level_start[l + 1], level_start[l + 2]
        m = hi - lo
        cont = (prob[hi:nxt] * x_at[hi:nxt]).reshape(m, b).sum(axis=1)
        r = np.maximum(lo_right[lo:hi], cont)
        x_right[lo:hi] = r
        a_inc[hi:nxt] = np.repeat(r - cont, b)
        at = np.maximum(lo_at[lo:hi], r)
        x_at[lo:hi] = at
        c_jump[lo:hi] = at - r
    return x_at, x_right, a_inc, c_jump


def picard(xt_at, xt_right, zt_at, zt_right, prob, level_start, b, tol, max_iter):
    n = len(xt_at)
    n_inner = len(xt_right)
    leaf0 = level_start[len(level_start) - 2]
    X = (np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner))
    Xp = (np.zeros(n), np.zeros(n_inner), np.zeros(n), np.zeros(n_inner))
    it, change = 0, 0.0
    while it < max_iter:
        oa = Xp[0] + xt_at
        oa[leaf0:] = 0.0
        opa = X[0] - zt_at
        opa[leaf0:] = 0.0
        Xn = ref_backward(oa, Xp[1] + xt_right, prob, level_start, b)
        Xpn = ref_backward(opa, X[1] - zt_right, prob, level_start, b)
        change = max(
            np.max(np.abs(Xn[0] - X[0]), initial=0.0),
            np.max(np.abs(Xpn[0] - Xp[0]), initial=0.0),
            np.max(np.abs(Xn[1] - X[1]), initial=0.0),
            np.max(np.abs(Xpn[1] - Xp[1]), initial=0.0),
        )
        X, Xp = Xn, Xpn
        it += 1
        if change < tol:
            break
    return X, Xp, it, change

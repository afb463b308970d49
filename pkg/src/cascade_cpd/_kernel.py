"""Compiled depth-first path search used by the detector.

Columns are window-relative (0..L-1) and ``T`` is the last column. The
search visits paths in the same order as ``detector.gen_next`` and draws
uniforms at the same points, so both agree under the same seed. It uses an
explicit stack because numba cannot reload cached recursive functions.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sample_risk(nodes, depth, failed, rates, P, out_nodes, rs_nodes, rs_w, taken):
    n = rates.shape[0]
    nr = 0
    for j in range(n):
        if failed[j]:
            continue
        w = 0.0
        for f in range(depth):
            w += rates[nodes[f], j]
        if w > 0.0:
            rs_nodes[nr] = j
            rs_w[nr] = w
            taken[nr] = False
            nr += 1
    k = min(P, nr)
    for d in range(k):
        total = 0.0
        last = -1
        for a in range(nr):
            if not taken[a]:
                total += rs_w[a]
                last = a
        u = np.random.random() * total
        pick = last
        c = 0.0
        for a in range(nr):
            if taken[a]:
                continue
            c += rs_w[a]
            if u < c:
                pick = a
                break
        taken[pick] = True
        out_nodes[d] = rs_nodes[pick]
    return k


@njit(cache=True)
def search(gain, cand, ncand, rates, indptr, targets, vals, P, log_l1, min_k, max_k, seed):
    """Best ``gainsum + propagation loglik`` over paths with ``min_k..max_k`` nodes.

    Returns ``(value, nodes, ticks, length)``; value is -inf when no path
    qualifies.
    """
    np.random.seed(seed)
    n, L = gain.shape
    T = L - 1
    nodes = np.zeros(max_k, dtype=np.int64)
    ticks = np.zeros(max_k, dtype=np.int64)
    failed = np.zeros(n, dtype=np.bool_)
    best_val = -np.inf
    best_nodes = np.zeros(max_k, dtype=np.int64)
    best_ticks = np.zeros(max_k, dtype=np.int64)
    best_len = 0

    # level d expands a path of length d; arrays indexed by d
    pmax = max(P, 1)
    picked = np.zeros((max_k + 1, pmax), dtype=np.int64)
    npicked = np.zeros(max_k + 1, dtype=np.int64)
    pi = np.zeros(max_k + 1, dtype=np.int64)
    ai = np.zeros(max_k + 1, dtype=np.int64)
    dens = np.zeros(max_k + 1)
    surv = np.zeros(max_k + 1)
    gsum = np.zeros(max_k + 1)
    rs_nodes = np.empty(n, dtype=np.int64)
    rs_w = np.empty(n)
    taken = np.empty(n, dtype=np.bool_)

    for x0 in range(n):
        out0 = 0.0
        for e in range(indptr[x0], indptr[x0 + 1]):
            out0 += vals[e]
        for a0 in range(ncand[x0]):
            t0 = cand[x0, a0]
            s0 = (T - t0) * out0
            val0 = gain[x0, t0] - s0
            nodes[0] = x0
            ticks[0] = t0
            failed[x0] = True
            if min_k <= 1 and val0 > best_val:
                best_val = val0
                best_len = 1
                best_nodes[0] = x0
                best_ticks[0] = t0
            depth = 1
            dens[1] = 0.0
            surv[1] = s0
            gsum[1] = gain[x0, t0]
            if depth < max_k:
                npicked[1] = _sample_risk(nodes, 1, failed, rates, P, picked[1], rs_nodes, rs_w, taken)
            else:
                npicked[1] = 0
            pi[1] = 0
            ai[1] = 0
            while depth >= 1:
                advanced = False
                while pi[depth] < npicked[depth]:
                    x = picked[depth, pi[depth]]
                    if ai[depth] >= ncand[x]:
                        pi[depth] += 1
                        ai[depth] = 0
                        continue
                    t = cand[x, ai[depth]]
                    ai[depth] += 1
                    t_last = ticks[depth - 1]
                    if t < t_last:
                        continue
                    rate = 0.0
                    pen = 0.0
                    drop = 0.0
                    for f in range(depth):
                        r = rates[nodes[f], x]
                        drop += r * (T - ticks[f])
                        if ticks[f] < t:
                            rate += r
                            pen += r * (t - ticks[f])
                    if rate <= 0.0:
                        continue
                    d_new = dens[depth] + math.log(rate) - pen
                    if d_new < log_l1:
                        if t == t_last:
                            continue
                        pi[depth] += 1
                        ai[depth] = 0
                        continue
                    out = 0.0
                    for e in range(indptr[x], indptr[x + 1]):
                        if not failed[targets[e]]:
                            out += vals[e]
                    s_new = surv[depth] - drop + (T - t) * out
                    g_new = gsum[depth] + gain[x, t]
                    val = g_new + d_new - s_new
                    nodes[depth] = x
                    ticks[depth] = t
                    failed[x] = True
                    if depth + 1 >= min_k and val > best_val:
                        best_val = val
                        best_len = depth + 1
                        for f in range(depth + 1):
                            best_nodes[f] = nodes[f]
                            best_ticks[f] = ticks[f]
                    depth += 1
                    dens[depth] = d_new
                    surv[depth] = s_new
                    gsum[depth] = g_new
                    if depth < max_k:
                        npicked[depth] = _sample_risk(nodes, depth, failed, rates, P, picked[depth],
                                                      rs_nodes, rs_w, taken)
                    else:
                        npicked[depth] = 0
                    pi[depth] = 0
                    ai[depth] = 0
                    advanced = True
                    break
                if not advanced:
                    depth -= 1
                    if depth >= 1:
                        failed[nodes[depth]] = False
            failed[x0] = False
    return best_val, best_nodes[:best_len].copy(), best_ticks[:best_len].copy(), best_len

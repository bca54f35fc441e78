# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled hot loops.  See ``_pykernels`` for the reference semantics."""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log, sqrt, INFINITY

import numpy as np

from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_beta, random_standard_uniform


cdef double _slope_positional(double[:, ::1] logs, Py_ssize_t row, Py_ssize_t start,
                              Py_ssize_t n, Py_ssize_t cap) noexcept nogil:
    cdef double sx = 0.0, sy = 0.0, mx, my, sxy = 0.0, sxx = 0.0, dx
    cdef Py_ssize_t i
    if n < 2:
        return 0.0
    for i in range(n):
        sx += <double>i
        sy += logs[row, (start + i) % cap]
    mx = sx / n
    my = sy / n
    for i in range(n):
        dx = <double>i - mx
        sxy += dx * (logs[row, (start + i) % cap] - my)
        sxx += dx * dx
    return sxy / sxx


def slope_positional(values):
    cdef double[:, ::1] arr = np.ascontiguousarray(values, dtype=np.float64).reshape(1, -1)
    cdef Py_ssize_t n = arr.shape[1]
    if n < 2:
        return 0.0
    return _slope_positional(arr, 0, 0, n, n)


def compute_rewards(win_logs, win_len, win_pos, weights, log_prev, log_last,
                    closed_counts, closed_totals):
    cdef double[:, ::1] logs = np.ascontiguousarray(win_logs, dtype=np.float64)
    cdef long long[::1] lens = np.ascontiguousarray(win_len, dtype=np.int64)
    cdef long long[::1] pos = np.ascontiguousarray(win_pos, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] lp = np.ascontiguousarray(log_prev, dtype=np.float64)
    cdef double[::1] ll = np.ascontiguousarray(log_last, dtype=np.float64)
    cdef long long[:, ::1] counts = np.ascontiguousarray(closed_counts, dtype=np.int64)
    cdef long long[::1] totals = np.ascontiguousarray(closed_totals, dtype=np.int64)
    cdef Py_ssize_t m = logs.shape[0], cap = logs.shape[1]
    out_self = np.zeros(m)
    out_trade = np.zeros(m)
    cdef double[::1] rs = out_self
    cdef double[::1] rt = out_trade
    cdef Py_ssize_t v, k, n, start
    cdef double acc, share
    with nogil:
        for v in range(m):
            n = lens[v]
            if n >= 2:
                start = pos[v] - n
                if start < 0:
                    start += cap
                rs[v] = -_slope_positional(logs, v, start, n, cap) * w[v]
        for v in range(m):
            acc = 0.0
            for k in range(m):
                if k == v or totals[k] <= 0:
                    continue
                share = <double>counts[k, v] / <double>totals[k]
                acc += w[k] * share * (lp[k] - ll[k])
            rt[v] = acc
    return out_self, out_trade


def ucb_bernoulli(means, uniforms):
    cdef double[::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t k = mu.shape[0], horizon = u.shape[0], t, j, a
    counts_arr = np.zeros(k, dtype=np.int64)
    sums_arr = np.zeros(k)
    arms_arr = np.empty(horizon, dtype=np.int64)
    rewards_arr = np.empty(horizon)
    cdef long long[::1] counts = counts_arr
    cdef double[::1] sums = sums_arr
    cdef long long[::1] arms = arms_arr
    cdef double[::1] rewards = rewards_arr
    cdef double best, score, log_t, r
    with nogil:
        for t in range(horizon):
            if t < k:
                a = t
            else:
                log_t = log(<double>(t + 1))
                a = 0
                best = -INFINITY
                for j in range(k):
                    score = sums[j] / counts[j] + sqrt(2.0 * log_t / counts[j])
                    if score > best:
                        best = score
                        a = j
            r = 1.0 if u[t] < mu[a] else 0.0
            counts[a] += 1
            sums[a] += r
            arms[t] = a
            rewards[t] = r
    return arms_arr, rewards_arr


def thompson_bernoulli(means, Py_ssize_t horizon, rng):
    cdef double[::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef Py_ssize_t k = mu.shape[0], t, j, a
    alpha_arr = np.ones(k)
    beta_arr = np.ones(k)
    arms_arr = np.empty(horizon, dtype=np.int64)
    rewards_arr = np.empty(horizon)
    cdef double[::1] al = alpha_arr
    cdef double[::1] be = beta_arr
    cdef long long[::1] arms = arms_arr
    cdef double[::1] rewards = rewards_arr
    cdef double best, draw, r
    bit_gen = rng.bit_generator
    capsule = bit_gen.capsule
    cdef bitgen_t *state = <bitgen_t *>PyCapsule_GetPointer(capsule, "BitGenerator")
    with bit_gen.lock, nogil:
        for t in range(horizon):
            a = 0
            best = -INFINITY
            for j in range(k):
                draw = random_beta(state, al[j], be[j])
                if draw > best:
                    best = draw
                    a = j
            r = 1.0 if random_standard_uniform(state) < mu[a] else 0.0
            al[a] += r
            be[a] += 1.0 - r
            arms[t] = a
            rewards[t] = r
    return arms_arr, rewards_arr, alpha_arr, beta_arr


def sgd_quadratic(hessians, offsets, arms, etas, theta0, theta_star):
    cdef double[:, :, ::1] h = np.ascontiguousarray(hessians, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef long long[::1] pick = np.ascontiguousarray(arms, dtype=np.int64)
    cdef double[::1] eta = np.ascontiguousarray(etas, dtype=np.float64)
    cdef double[::1] star = np.ascontiguousarray(theta_star, dtype=np.float64)
    theta_arr = np.array(theta0, dtype=np.float64)
    grad_arr = np.empty_like(theta_arr)
    v_arr = np.empty(pick.shape[0] + 1)
    cdef double[::1] th = theta_arr
    cdef double[::1] g = grad_arr
    cdef double[::1] v = v_arr
    cdef Py_ssize_t d = th.shape[0], steps = pick.shape[0], t, i, j, kk
    cdef double acc, diff
    with nogil:
        acc = 0.0
        for i in range(d):
            diff = th[i] - star[i]
            acc += diff * diff
        v[0] = 0.5 * acc
        for t in range(steps):
            kk = pick[t]
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += h[kk, i, j] * th[j]
                g[i] = acc - c[kk, i]
            acc = 0.0
            for i in range(d):
                th[i] = th[i] - eta[t] * g[i]
                diff = th[i] - star[i]
                acc += diff * diff
            v[t + 1] = 0.5 * acc
    return theta_arr, v_arr

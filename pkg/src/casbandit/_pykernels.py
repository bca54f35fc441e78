"""Pure-Python reference kernels.

Same signatures and floating-point operation order as ``_ckernels.pyx``; the
scalar kernels (UCB, Thompson, rewards) are bit-identical across the two
backends.  ``sgd_quadratic`` uses numpy matrix products here, so it agrees
with the compiled loop only to rounding.
"""

from __future__ import annotations

import math

import numpy as np


def slope_positional(values) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    sx = 0.0
    sy = 0.0
    for i in range(n):
        sx += float(i)
        sy += values[i]
    mx = sx / n
    my = sy / n
    sxy = 0.0
    sxx = 0.0
    for i in range(n):
        dx = float(i) - mx
        sxy += dx * (values[i] - my)
        sxx += dx * dx
    return sxy / sxx


def compute_rewards(win_logs, win_len, win_pos, weights, log_prev, log_last,
                    closed_counts, closed_totals):
    """Self and trade-off reward of every arm.

    ``closed_counts[k, v]`` is how often ``v`` was selected between the two
    most recent selections of ``k``; ``closed_totals[k]`` is the row sum.
    """
    m, cap = win_logs.shape
    r_self = np.zeros(m)
    r_trade = np.zeros(m)
    for v in range(m):
        n = int(win_len[v])
        if n >= 2:
            start = int(win_pos[v]) - n
            ys = [float(win_logs[v, (start + i) % cap]) for i in range(n)]
            r_self[v] = -slope_positional(ys) * float(weights[v])
    for v in range(m):
        acc = 0.0
        for k in range(m):
            if k == v:
                continue
            total = int(closed_totals[k])
            if total <= 0:
                continue
            share = float(closed_counts[k, v]) / float(total)
            acc += float(weights[k]) * share * (float(log_prev[k]) - float(log_last[k]))
        r_trade[v] = acc
    return r_self, r_trade


def ucb_bernoulli(means, uniforms):
    """UCB1 on a Bernoulli bandit; rewards are ``uniforms[t] < means[arm]``."""
    k = len(means)
    horizon = len(uniforms)
    counts = [0] * k
    sums = [0.0] * k
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    for t in range(horizon):
        if t < k:
            a = t
        else:
            log_t = math.log(float(t + 1))
            a = 0
            best = -math.inf
            for j in range(k):
                score = sums[j] / counts[j] + math.sqrt(2.0 * log_t / counts[j])
                if score > best:
                    best = score
                    a = j
        r = 1.0 if uniforms[t] < means[a] else 0.0
        counts[a] += 1
        sums[a] += r
        arms[t] = a
        rewards[t] = r
    return arms, rewards


def thompson_bernoulli(means, horizon, rng):
    """Beta-Bernoulli Thompson sampling with a uniform prior.

    Per round: one ``rng.beta`` draw per arm in index order, then one
    ``rng.random()`` for the reward.
    """
    k = len(means)
    alpha = np.ones(k)
    beta = np.ones(k)
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    for t in range(horizon):
        a = 0
        best = -math.inf
        for j in range(k):
            draw = rng.beta(alpha[j], beta[j])
            if draw > best:
                best = draw
                a = j
        r = 1.0 if rng.random() < means[a] else 0.0
        alpha[a] += r
        beta[a] += 1.0 - r
        arms[t] = a
        rewards[t] = r
    return arms, rewards, alpha, beta


def sgd_quadratic(hessians, offsets, arms, etas, theta0, theta_star):
    """SGD on quadratic arms with gradient ``hessians[k] @ theta - offsets[k]``.

    Returns the final iterate and ``V_t = 0.5 * ||theta_t - theta_star||^2``
    for ``t = 0..T``.
    """
    theta = np.array(theta0, dtype=float)
    v = np.empty(len(arms) + 1)
    diff = theta - theta_star
    v[0] = 0.5 * float(diff @ diff)
    for t in range(len(arms)):
        k = arms[t]
        grad = hessians[k] @ theta - offsets[k]
        theta = theta - etas[t] * grad
        diff = theta - theta_star
        v[t + 1] = 0.5 * float(diff @ diff)
    return theta, v

"""Stochastic multi-armed bandits: UCB1, Beta-Bernoulli Thompson sampling, regret."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

GAP_FLOOR = 1e-9
DEFAULT_SLACK = 8.0


class UnpulledArmError(ValueError):
    """An arm's index was requested before the arm was ever pulled."""


@dataclass
class ArmStats:
    pulls: int = 0
    reward_sum: float = 0.0

    @property
    def empirical_mean(self) -> float:
        if self.pulls == 0:
            raise UnpulledArmError("empirical mean undefined for an unpulled arm")
        return self.reward_sum / self.pulls

    def record(self, reward: float) -> None:
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"UCB rewards must lie in [0, 1], got {reward}")
        self.pulls += 1
        self.reward_sum += reward


@dataclass(frozen=True)
class BetaParams:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta parameters must be positive")


@dataclass
class BanditTrace:
    horizon: int
    true_means: np.ndarray
    chosen_arms: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    rewards: np.ndarray = field(default_factory=lambda: np.empty(0))

    def pulls(self) -> np.ndarray:
        return np.bincount(self.chosen_arms, minlength=len(self.true_means))

    def pseudo_regret(self) -> float:
        return pseudo_regret(self.true_means, self.pulls())


def ucb_index(mean: float, pulls: int, total_pulls: int) -> float:
    """``mean + sqrt(2 ln(total_pulls) / pulls)``."""
    if pulls <= 0:
        raise UnpulledArmError("UCB index undefined for an arm with zero pulls")
    if total_pulls < 1:
        raise ValueError("total_pulls must be at least 1")
    return mean + math.sqrt(2.0 * math.log(total_pulls) / pulls)


def ucb_select(stats: Sequence[ArmStats], round_: int) -> int:
    """Arm with the largest UCB index at round ``round_``; lowest index wins ties."""
    best_arm = -1
    best = -math.inf
    for a, s in enumerate(stats):
        if s.pulls == 0:
            raise UnpulledArmError(f"arm {a} has not been pulled yet")
        score = ucb_index(s.empirical_mean, s.pulls, round_)
        if score > best:
            best, best_arm = score, a
    if best_arm < 0:
        raise ValueError("no arms")
    return best_arm


def thompson_select(params: Sequence[BetaParams], rng: np.random.Generator) -> int:
    if not params:
        raise ValueError("no arms")
    best_arm = 0
    best = -math.inf
    for a, p in enumerate(params):
        draw = rng.beta(p.alpha, p.beta)
        if draw > best:
            best, best_arm = draw, a
    return best_arm


def thompson_update(params: BetaParams, reward: int) -> BetaParams:
    if reward not in (0, 1):
        raise ValueError(f"Thompson sampling expects a Bernoulli reward, got {reward}")
    return BetaParams(params.alpha + reward, params.beta + (1 - reward))


def pseudo_regret(true_means, pulls) -> float:
    means = np.asarray(true_means, dtype=float)
    counts = np.asarray(pulls, dtype=float)
    if means.shape != counts.shape:
        raise ValueError("true_means and pulls must have the same length")
    return float(np.sum(counts * (means.max() - means)))


def regret_bound(true_means, horizon: int, slack: float = DEFAULT_SLACK) -> float:
    """Logarithmic UCB regret bound: sum over suboptimal arms of ``8 ln T / gap + slack``.

    Arms whose gap is below ``GAP_FLOOR`` count as optimal.
    """
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    means = np.asarray(true_means, dtype=float)
    gaps = means.max() - means
    gaps = gaps[gaps >= GAP_FLOOR]
    return float(np.sum(8.0 * math.log(horizon) / gaps + slack))


def run_ucb(true_means, horizon: int, rng: np.random.Generator) -> BanditTrace:
    """UCB1 on Bernoulli arms.  Each arm is pulled once, then the index decides."""
    means = np.asarray(true_means, dtype=float)
    uniforms = rng.random(horizon)
    arms, rewards = kernels.ucb_bernoulli(means, uniforms)
    return BanditTrace(horizon, means, arms, rewards)


def run_thompson(true_means, horizon: int, rng: np.random.Generator):
    """Thompson sampling on Bernoulli arms.

    Returns the trace and the final per-arm ``BetaParams``.
    """
    means = np.asarray(true_means, dtype=float)
    arms, rewards, alpha, beta = kernels.thompson_bernoulli(means, horizon, rng)
    params = [BetaParams(float(a), float(b)) for a, b in zip(alpha, beta)]
    return BanditTrace(horizon, means, arms, rewards), params

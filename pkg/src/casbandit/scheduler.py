"""Calibrated adversarial sampling: reward estimation and arm selection.

Each arm is a perturbation type.  An arm's reward combines the trend of its
own log-loss over a sliding window with the log-ratio change it induced in
other arms' losses between their consecutive selections.  Rewards are
exponentiated, given a UCB exploration bonus, multiplied by the arm weight
and normalised into a sampling distribution.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import kernels

EXP_CLAMP = 50.0
DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 8.0 / 9.0
DEFAULT_WINDOW = 10


@dataclass(frozen=True)
class PerturbationSpec:
    id: int
    weight: float = 1.0
    epsilon: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"arm {self.id}: weight must be positive")
        if self.epsilon <= 0:
            raise ValueError(f"arm {self.id}: epsilon must be positive")


def check_specs(specs: Sequence[PerturbationSpec]) -> None:
    if not specs:
        raise ValueError("at least one arm is required")
    ids = [s.id for s in specs]
    if ids != list(range(len(specs))):
        raise ValueError(f"arm ids must be 0..M-1 in order, got {ids}")


@dataclass
class LossWindow:
    """The last ``capacity`` (stamp, log-loss) observations of one arm."""

    capacity: int
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("window capacity must be positive")
        self.entries = deque(self.entries, maxlen=self.capacity)

    def push(self, stamp: int, loss: float) -> None:
        if loss <= 0:
            raise ValueError(f"loss must be positive, got {loss}")
        if self.entries and stamp <= self.entries[-1][0]:
            raise ValueError("window stamps must increase")
        self.entries.append((stamp, math.log(loss)))

    def log_losses(self) -> list[float]:
        return [v for _, v in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def regression_slope(indices: Sequence[float], values: Sequence[float]) -> float:
    """Ordinary least-squares slope of ``values`` against ``indices``."""
    n = len(values)
    if n < 2 or len(indices) != n:
        raise ValueError("need at least two (index, value) pairs")
    sx = 0.0
    sy = 0.0
    for i in range(n):
        sx += float(indices[i])
        sy += values[i]
    mx = sx / n
    my = sy / n
    sxy = 0.0
    sxx = 0.0
    for i in range(n):
        dx = float(indices[i]) - mx
        sxy += dx * (values[i] - my)
        sxx += dx * dx
    if sxx == 0.0:
        raise ValueError("indices must not all be identical")
    return sxy / sxx


def self_reward(window: LossWindow, weight: float) -> float:
    """Negated log-loss slope, scaled by the arm weight.

    Positions within the window are the regression abscissae, so gaps between
    an arm's selections do not flatten its slope.  Zero before the window
    holds two entries.
    """
    logs = window.log_losses()
    if len(logs) < 2:
        return 0.0
    return -regression_slope(range(len(logs)), logs) * weight


class CrossTypeLedger:
    """Per-arm record of what was trained between consecutive selections.

    ``open_counts[k, v]`` counts selections of ``v`` since ``k`` was last
    selected.  When ``k`` is selected again the open interval closes: its
    counts move to ``closed_counts[k]`` together with the loss pair
    (``prev_loss[k]``, ``last_loss[k]``) that bracket it.
    """

    def __init__(self, n_arms: int):
        self.n_arms = n_arms
        self.prev_loss = np.full(n_arms, np.nan)
        self.last_loss = np.full(n_arms, np.nan)
        self.log_prev = np.zeros(n_arms)
        self.log_last = np.zeros(n_arms)
        self.open_counts = np.zeros((n_arms, n_arms), dtype=np.int64)
        self.closed_counts = np.zeros((n_arms, n_arms), dtype=np.int64)
        self.closed_totals = np.zeros(n_arms, dtype=np.int64)
        self.seen = np.zeros(n_arms, dtype=bool)

    def interleave(self, v: int, k: int) -> int:
        """``n_{v,k}``: selections of ``v`` between the two latest selections of ``k``."""
        return int(self.closed_counts[k, v])

    def record(self, arm: int, loss: float) -> None:
        if loss <= 0:
            raise ValueError(f"loss must be positive, got {loss}")
        log_loss = math.log(loss)
        if self.seen[arm]:
            self.prev_loss[arm] = self.last_loss[arm]
            self.log_prev[arm] = self.log_last[arm]
            self.closed_counts[arm] = self.open_counts[arm]
            self.closed_totals[arm] = int(self.open_counts[arm].sum())
        self.last_loss[arm] = loss
        self.log_last[arm] = log_loss
        self.open_counts[arm] = 0
        # arm is now interleaved into every other arm's open interval
        others = self.seen.copy()
        others[arm] = False
        self.open_counts[others, arm] += 1
        self.seen[arm] = True


def tradeoff_reward(ledger: CrossTypeLedger, candidate: int, weights: Sequence[float]) -> float:
    """Credit ``candidate`` earns from the log-loss changes of the other arms.

    Each arm ``k`` with a closed, non-empty interval contributes
    ``w_k * n_{v,k} / sum_j n_{j,k} * log(L_prev / L_curr)``.
    """
    total = 0.0
    for k in range(ledger.n_arms):
        if k == candidate:
            continue
        denom = int(ledger.closed_totals[k])
        if denom <= 0:
            continue
        share = float(ledger.closed_counts[k, candidate]) / float(denom)
        total += float(weights[k]) * share * (float(ledger.log_prev[k]) - float(ledger.log_last[k]))
    return total


def total_reward(self_part: float, tradeoff_part: float) -> float:
    return self_part + tradeoff_part


def exploration_bonus(pulls, total_pulls):
    """``sqrt(2 ln(total) / pulls)``; accepts arrays."""
    if np.any(np.asarray(pulls) < 1):
        raise ValueError("every arm needs at least one pull")
    return np.sqrt(2.0 * np.log(total_pulls) / pulls)


def ucb_augment(reward: float, pulls: int, total_pulls: int, alpha: float = DEFAULT_ALPHA) -> float:
    """``exp(alpha * reward) + sqrt(2 ln(total_pulls) / pulls)``, exponent clamped to +-50."""
    if pulls < 1:
        raise ValueError("pulls must be at least 1")
    z = min(max(alpha * reward, -EXP_CLAMP), EXP_CLAMP)
    return math.exp(z) + math.sqrt(2.0 * math.log(total_pulls) / pulls)


def sampling_distribution(scores, weights) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    w = np.asarray(weights, dtype=float)
    if s.shape != w.shape:
        raise ValueError("scores and weights must have the same length")
    if np.any(s <= 0) or np.any(w <= 0):
        raise ValueError("scores and weights must be strictly positive")
    mass = s * w
    return mass / mass.sum()


def categorical(probs, u):
    """Inverse-CDF draw(s) from ``probs`` for uniform(s) ``u`` in [0, 1)."""
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def hybrid_loss(adv_loss: float, clean_loss: float, beta: float = DEFAULT_BETA) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * adv_loss + (1.0 - beta) * clean_loss


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    window: int = DEFAULT_WINDOW
    n_init: int = 1
    # ablation switches
    use_tradeoff: bool = True
    use_exploration: bool = True

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must hold at least two entries")
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


class Selection(NamedTuple):
    reward_self: np.ndarray
    reward_tradeoff: np.ndarray
    scores: np.ndarray
    probs: np.ndarray


class SchedulerState:
    """Mutable CAS state for ``M`` arms.  Drive it from one thread."""

    def __init__(self, specs: Sequence[PerturbationSpec], config: SchedulerConfig | None = None):
        check_specs(specs)
        self.specs = tuple(specs)
        self.config = config or SchedulerConfig()
        m = len(self.specs)
        self.weights = np.array([s.weight for s in self.specs], dtype=float)
        self.pull_counts = np.full(m, self.config.n_init, dtype=np.int64)
        self.iteration = 0
        cap = self.config.window
        self.win_logs = np.zeros((m, cap))
        self.win_stamps = np.zeros((m, cap), dtype=np.int64)
        self.win_len = np.zeros(m, dtype=np.int64)
        self.win_pos = np.zeros(m, dtype=np.int64)
        self.ledger = CrossTypeLedger(m)

    @property
    def n_arms(self) -> int:
        return len(self.specs)

    def window(self, arm: int) -> LossWindow:
        """A copy of ``arm``'s window, oldest entry first."""
        cap = self.config.window
        n = int(self.win_len[arm])
        start = int(self.win_pos[arm]) - n
        out = LossWindow(cap)
        for i in range(n):
            j = (start + i) % cap
            out.entries.append((int(self.win_stamps[arm, j]), float(self.win_logs[arm, j])))
        return out

    def rewards(self) -> tuple[np.ndarray, np.ndarray]:
        led = self.ledger
        r_self, r_trade = kernels.compute_rewards(
            self.win_logs, self.win_len, self.win_pos, self.weights,
            led.log_prev, led.log_last, led.closed_counts, led.closed_totals,
        )
        if not self.config.use_tradeoff:
            r_trade = np.zeros_like(r_trade)
        return r_self, r_trade

    def scores(self, rewards) -> np.ndarray:
        z = np.clip(self.config.alpha * np.asarray(rewards, dtype=float), -EXP_CLAMP, EXP_CLAMP)
        s = np.exp(z)
        if self.config.use_exploration:
            s = s + exploration_bonus(self.pull_counts, self.pull_counts.sum())
        return s

    def selection(self) -> Selection:
        r_self, r_trade = self.rewards()
        s = self.scores(r_self + r_trade)
        return Selection(r_self, r_trade, s, sampling_distribution(s, self.weights))

    def record(self, arm: int, loss: float) -> None:
        if not 0 <= arm < self.n_arms:
            raise IndexError(f"arm {arm} out of range")
        if not loss > 0:
            raise ValueError(f"loss must be positive, got {loss}")
        self.ledger.record(arm, loss)
        self.iteration += 1
        self.pull_counts[arm] += 1
        cap = self.config.window
        j = int(self.win_pos[arm])
        self.win_logs[arm, j] = math.log(loss)
        self.win_stamps[arm, j] = self.iteration
        self.win_pos[arm] = (j + 1) % cap
        self.win_len[arm] = min(int(self.win_len[arm]) + 1, cap)


def select_arm(state: SchedulerState, rng: np.random.Generator) -> tuple[int, Selection]:
    """Sample an arm from the current distribution; the state is not modified."""
    sel = state.selection()
    return int(categorical(sel.probs, rng.random())), sel


def record_observation(state: SchedulerState, arm: int, loss: float) -> SchedulerState:
    state.record(arm, loss)
    return state


class StepResult(NamedTuple):
    arm: int
    loss: float
    selection: Selection


def cas_step(state: SchedulerState, observe: Callable[[int], float],
             rng: np.random.Generator) -> StepResult:
    """Select an arm, let ``observe`` train on it and report its loss, record it."""
    arm, sel = select_arm(state, rng)
    loss = float(observe(arm))
    state.record(arm, loss)
    return StepResult(arm, loss, sel)

"""Comparison samplers: fixed probabilities, error-rate weighting, fixed order, loss averaging.

Every policy exposes the same small interface as the CAS scheduler wrapper
below (``prepare`` / ``choose`` / ``observe``), so a run differs between
policies only in how the next arm is picked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .env import EnvState, QuadraticRisk, weighted_step
from .scheduler import (
    PerturbationSpec,
    SchedulerConfig,
    SchedulerState,
    categorical,
    check_specs,
    select_arm,
)

EAT_REFRESH = 100
SIMPLEX_TOL = 1e-9
AVG_ARM = -1


def _check_simplex(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"probabilities must lie on the simplex (sum={p.sum()!r})")
    return p


def sat_select(probs, rng: np.random.Generator) -> int:
    """One categorical draw from fixed probabilities."""
    return int(categorical(_check_simplex(probs), rng.random()))


def eat_probs(accuracies) -> np.ndarray:
    """Probabilities proportional to each arm's error rate ``1 - acc``; uniform if all are 1."""
    acc = np.asarray(accuracies, dtype=float)
    if acc.size == 0 or np.any(acc <= 0) or np.any(acc > 1) or not np.all(np.isfinite(acc)):
        raise ValueError("accuracies must lie in (0, 1]")
    err = 1.0 - acc
    total = err.sum()
    if total <= 0:
        return np.full(acc.size, 1.0 / acc.size)
    return err / total


def eat_select(accuracies, rng: np.random.Generator) -> int:
    return int(categorical(eat_probs(accuracies), rng.random()))


def default_order(weights, ids: Sequence[int] | None = None) -> tuple[int, ...]:
    """Arm ids sorted by descending weight, ties broken by ascending id."""
    w = [float(x) for x in weights]
    ids = list(range(len(w))) if ids is None else [int(i) for i in ids]
    if len(ids) != len(w):
        raise ValueError("one id per weight is required")
    return tuple(i for _, i in sorted(zip(w, ids), key=lambda p: (-p[0], p[1])))


def order_select(sequence: Sequence[int], step: int) -> int:
    if len(sequence) == 0:
        raise ValueError("order sequence must not be empty")
    return int(sequence[step % len(sequence)])


def avg_step(env: EnvState, risks: Sequence[QuadraticRisk], clean: QuadraticRisk, weights,
             beta: float, eta: float | None = None, rng: np.random.Generator | None = None):
    """One step on the weight-averaged hybrid loss over all arms.

    Returns the new state (``grad_evals`` grows by ``M``), the observed loss
    and every arm's post-step risk.
    """
    if eta is not None:
        env = EnvState(env.theta, env.step, eta, env.noise_scale, env.grad_evals)
    return weighted_step(env, risks, clean, weights, beta, rng)


# --- policy objects ------------------------------------------------------------

class Choice(NamedTuple):
    arm: int
    probs: np.ndarray
    reward_self: np.ndarray | None = None
    reward_tradeoff: np.ndarray | None = None


class Policy:
    """Per-step arm selection; ``averaging`` policies train on every arm at once."""

    name = "policy"
    averaging = False

    def __init__(self, specs: Sequence[PerturbationSpec]):
        check_specs(specs)
        self.specs = tuple(specs)
        self.weights = np.array([s.weight for s in specs], dtype=float)

    @property
    def n_arms(self) -> int:
        return len(self.specs)

    def prepare(self, step: int, accuracies: Callable[[], np.ndarray]) -> None:
        """Hook called before ``choose``; ``accuracies`` evaluates the current proxies."""

    def distribution(self, step: int) -> np.ndarray:
        raise NotImplementedError

    def choose(self, step: int, rng: np.random.Generator) -> Choice:
        probs = self.distribution(step)
        return Choice(int(categorical(probs, rng.random())), probs)

    def observe(self, arm: int, loss: float) -> None:
        """Feedback after training on ``arm``."""


class CASPolicy(Policy):
    name = "cas"

    def __init__(self, specs, config: SchedulerConfig | None = None):
        super().__init__(specs)
        self.state = SchedulerState(specs, config)

    def distribution(self, step: int) -> np.ndarray:
        return self.state.selection().probs

    def choose(self, step, rng):
        arm, sel = select_arm(self.state, rng)
        return Choice(arm, sel.probs, sel.reward_self, sel.reward_tradeoff)

    def observe(self, arm, loss):
        self.state.record(arm, loss)


class SATPolicy(Policy):
    name = "sat"

    def __init__(self, specs, probs=None):
        super().__init__(specs)
        p = self.weights / self.weights.sum() if probs is None else _check_simplex(probs)
        if len(p) != self.n_arms:
            raise ValueError("one probability per arm is required")
        self.fixed_probs = p

    def distribution(self, step):
        return self.fixed_probs


class EATPolicy(Policy):
    """Error-rate-proportional sampling from an accuracy snapshot refreshed every ``refresh`` steps."""

    name = "eat"

    def __init__(self, specs, refresh: int = EAT_REFRESH):
        super().__init__(specs)
        if refresh < 1:
            raise ValueError("refresh period must be positive")
        self.refresh = refresh
        self.snapshot = np.ones(self.n_arms)

    def prepare(self, step, accuracies):
        if step % self.refresh == 0:
            self.snapshot = np.asarray(accuracies(), dtype=float)

    def distribution(self, step):
        return eat_probs(self.snapshot)


class OrderPolicy(Policy):
    """Deterministic cycle; never touches the generator."""

    name = "order"

    def __init__(self, specs, sequence: Sequence[int] | None = None):
        super().__init__(specs)
        seq = default_order(self.weights) if sequence is None else tuple(int(a) for a in sequence)
        if not seq or set(seq) != set(range(self.n_arms)):
            raise ValueError("order sequence must cover every arm and nothing else")
        self.sequence = seq

    def distribution(self, step):
        probs = np.zeros(self.n_arms)
        probs[order_select(self.sequence, step)] = 1.0
        return probs

    def choose(self, step, rng):
        arm = order_select(self.sequence, step)
        return Choice(arm, self.distribution(step))


class AVGPolicy(Policy):
    """Trains on the weighted average of all arms' losses each step."""

    name = "avg"
    averaging = True

    def distribution(self, step):
        return self.weights / self.weights.sum()

    def choose(self, step, rng):
        return Choice(AVG_ARM, self.distribution(step))


POLICIES = {p.name: p for p in (CASPolicy, SATPolicy, EATPolicy, OrderPolicy, AVGPolicy)}


@dataclass(frozen=True)
class PolicyOptions:
    scheduler: SchedulerConfig | None = None
    sat_probs: tuple[float, ...] | None = None
    eat_refresh: int = EAT_REFRESH
    order_sequence: tuple[int, ...] | None = None


def make_policy(name: str, specs: Sequence[PerturbationSpec],
                options: PolicyOptions | None = None) -> Policy:
    opts = options or PolicyOptions()
    if name == "cas":
        return CASPolicy(specs, opts.scheduler)
    if name == "sat":
        return SATPolicy(specs, opts.sat_probs)
    if name == "eat":
        return EATPolicy(specs, opts.eat_refresh)
    if name == "order":
        return OrderPolicy(specs, opts.order_sequence)
    if name == "avg":
        return AVGPolicy(specs)
    raise ValueError(f"unknown policy {name!r}; expected one of {sorted(POLICIES)}")

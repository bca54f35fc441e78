"""Desk-scale experiment procedures on the synthetic environment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .env import (
    DivergenceError,
    EnvState,
    Environment,
    QuadraticRisk,
    avg_risk,
    drift_report,
    DriftReport,
    train_step,
)
from .scheduler import (
    EXP_CLAMP,
    PerturbationSpec,
    SchedulerConfig,
    SchedulerState,
    categorical,
)

DEFAULT_ROW_STEPS = 300


# --- trade-off matrix --------------------------------------------------------

@dataclass(frozen=True)
class TradeoffMatrix:
    """``entries[v, k]``: change of attack ``k``'s proxy accuracy after fine-tuning on ``v``."""

    entries: np.ndarray
    steps: int
    baseline: np.ndarray
    mode: str = "reset"


def tradeoff_matrix(env: Environment, steps: int = DEFAULT_ROW_STEPS, beta: float = 8 / 9,
                    eta: float = 0.1, mode: str = "reset", theta0=None) -> TradeoffMatrix:
    """Fine-tune on each attack in turn and record every attack's accuracy change.

    ``mode="reset"`` restarts every row from the checkpoint; ``"cumulative"``
    continues from where the previous row stopped and measures each row
    against its own starting point.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if mode not in ("reset", "cumulative"):
        raise ValueError(f"unknown mode {mode!r}")
    start = np.array(env.theta0 if theta0 is None else theta0, dtype=float)
    baseline = env.accuracies(start)
    m = env.n_arms
    entries = np.zeros((m, m))
    theta = start
    for v in range(m):
        if mode == "reset":
            theta = start
        before = env.accuracies(theta)
        state = EnvState(theta, learning_rate=eta)
        try:
            for _ in range(steps):
                state, _ = train_step(state, env.risks[v], env.clean, beta)
        except DivergenceError as exc:
            raise DivergenceError(exc.step, f"row {v}: parameters diverged at step {exc.step}") from exc
        theta = state.theta
        entries[v] = env.accuracies(theta) - before
    return TradeoffMatrix(entries, steps, baseline, mode)


@dataclass(frozen=True)
class MatrixStats:
    total: float
    asymmetry: float
    row_sums: np.ndarray
    col_sums: np.ndarray


def matrix_stats(matrix) -> MatrixStats:
    m = np.asarray(getattr(matrix, "entries", matrix), dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("trade-off matrix must be square")
    asym = np.linalg.norm(m - m.T) / max(np.linalg.norm(m), 1e-12)
    return MatrixStats(float(m.sum()), float(asym), m.sum(axis=1), m.sum(axis=0))


# --- equilibrium ---------------------------------------------------------------

def equilibrium_target(rewards, weights, alpha: float) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    mass = w * np.exp(np.clip(alpha * np.asarray(rewards, dtype=float), -EXP_CLAMP, EXP_CLAMP))
    return mass / mass.sum()


def equilibrium_frequencies(rewards, weights, alpha: float, draws: int,
                            rng: np.random.Generator, preload: int = 10**6) -> np.ndarray:
    """Empirical selection frequencies with frozen rewards and every count at ``preload``."""
    specs = [PerturbationSpec(i, float(w)) for i, w in enumerate(weights)]
    state = SchedulerState(specs, SchedulerConfig(alpha=alpha))
    state.pull_counts[:] = preload
    probs = state.scores(rewards) * state.weights
    probs /= probs.sum()
    picks = categorical(probs, rng.random(draws))
    return np.bincount(picks, minlength=len(specs)) / draws


def equilibrium_check(rewards, weights, alpha: float, draws: int, rng: np.random.Generator,
                      preload: int = 10**6) -> float:
    """Largest absolute gap between empirical frequencies and ``w * exp(alpha * R)`` normalised.

    The exploration bonus is suppressed by pre-loading every pull count, which
    leaves it a common additive constant of ``sqrt(2 ln(M * preload) / preload)``.
    """
    if draws < 10**4:
        raise ValueError("at least 10^4 draws are required")
    freq = equilibrium_frequencies(rewards, weights, alpha, draws, rng, preload)
    return float(np.max(np.abs(freq - equilibrium_target(rewards, weights, alpha))))


# --- stochastic approximation ----------------------------------------------------

@dataclass(frozen=True)
class PowerSchedule:
    """Step sizes ``scale / t**power`` for ``t = 1, 2, ...``."""

    scale: float
    power: float

    def __call__(self, t):
        return self.scale / np.asarray(t, dtype=float) ** self.power


@dataclass(frozen=True)
class RobbinsMonroCheck:
    eta_sum: float
    eta_sq_sum: float
    exponent: float
    sum_diverges: bool
    sq_sum_converges: bool

    @property
    def valid(self) -> bool:
        return self.sum_diverges and self.sq_sum_converges


def _decay_exponent(schedule: Callable, horizon: int) -> float:
    if isinstance(schedule, PowerSchedule):
        return 0.0 if schedule.scale == 0 else float(schedule.power)
    late, early = float(schedule(horizon)), float(schedule(horizon // 2))
    if early == 0.0 and late == 0.0:
        return 0.0
    if late <= 0.0:
        return math.inf
    return math.log(early / late) / math.log(horizon / (horizon // 2))


def robbins_monro_check(schedule: Callable, horizon: int) -> RobbinsMonroCheck:
    """Prefix sums at ``horizon`` and the classification of a ``c / t**p`` schedule.

    For schedules other than ``PowerSchedule`` the decay exponent ``p`` is
    estimated from the ratio ``eta(horizon/2) / eta(horizon)``.  A schedule that
    is identically zero never moves, so its sum is reported as convergent.
    """
    if horizon < 10:
        raise ValueError("horizon must be at least 10")
    etas = np.asarray(schedule(np.arange(1, horizon + 1)), dtype=float)
    p = _decay_exponent(schedule, horizon)
    moving = bool(np.any(etas != 0))
    return RobbinsMonroCheck(
        eta_sum=float(etas.sum()),
        eta_sq_sum=float((etas**2).sum()),
        exponent=p,
        sum_diverges=moving and p <= 1.0,
        sq_sum_converges=(not moving) or p > 0.5,
    )


@dataclass(frozen=True)
class ConvergenceReport:
    v_series: np.ndarray
    eta_prefix: np.ndarray
    eta_sq_prefix: np.ndarray
    converged: bool
    schedule: RobbinsMonroCheck
    theta_star: np.ndarray
    theta_final: np.ndarray

    @property
    def ratio(self) -> float:
        return float(self.v_series[-1] / self.v_series[0]) if self.v_series[0] > 0 else 0.0

    @property
    def schedule_violation(self) -> bool:
        return not self.schedule.valid


def composite_optimum(risks: Sequence[QuadraticRisk], probs) -> np.ndarray:
    """Minimiser of ``sum_k p_k R_k``."""
    h = sum(p * r.hessian() for p, r in zip(probs, risks))
    b = sum(p * (r.hessian() @ r.center) for p, r in zip(probs, risks))
    return np.linalg.solve(h, b)


def composite_hessian(risks: Sequence[QuadraticRisk], probs) -> np.ndarray:
    return sum(p * r.hessian() for p, r in zip(probs, risks))


def convergence_run(risks: Sequence[QuadraticRisk], probs, schedule: Callable, horizon: int,
                    rng: np.random.Generator, theta0, tolerance: float = 1e-3) -> ConvergenceReport:
    """SGD with one arm drawn from the fixed distribution ``probs`` per step.

    Records ``V_t = 0.5 * ||theta_t - theta*||^2``; converged means
    ``V_T < tolerance * V_0``.
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must lie on the simplex")
    theta_star = composite_optimum(risks, probs)
    hessians = np.stack([r.hessian() for r in risks])
    offsets = np.stack([r.hessian() @ r.center for r in risks])
    arms = categorical(probs, rng.random(horizon)).astype(np.int64)
    etas = np.asarray(schedule(np.arange(1, horizon + 1)), dtype=float) * np.ones(horizon)
    theta, v = kernels.sgd_quadratic(hessians, offsets, arms, etas, np.asarray(theta0, float), theta_star)
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise DivergenceError(int(bad[0]))
    return ConvergenceReport(
        v_series=v,
        eta_prefix=np.cumsum(etas),
        eta_sq_prefix=np.cumsum(etas**2),
        converged=bool(v[-1] < tolerance * v[0]),
        schedule=robbins_monro_check(schedule, max(horizon, 10)),
        theta_star=theta_star,
        theta_final=theta,
    )


# --- sequential fine-tuning failure ---------------------------------------------

@dataclass(frozen=True)
class SequentialFailure:
    theta1: np.ndarray
    p_phase_risk: np.ndarray
    q_phase_risk: np.ndarray
    reports: tuple[DriftReport, ...]

    @property
    def crossing_step(self) -> int | None:
        """First q-phase step (1-based) at which the average risk goes up."""
        prev = self.p_phase_risk[-1]
        for i, r in enumerate(self.q_phase_risk, start=1):
            if r > prev:
                return i
            prev = r
        return None


def sequential_failure_demo(theta0, risk_p: QuadraticRisk, risk_q: QuadraticRisk,
                            p_steps: int, q_steps: int, eta: float, beta: float = 1.0,
                            clean: QuadraticRisk | None = None) -> SequentialFailure:
    """Fine-tune on ``p`` then on ``q``; report the accumulated drift after each q-step."""
    if clean is None:
        if beta != 1.0:
            raise ValueError("a clean risk is required when beta < 1")
        clean = risk_p
    pair = (risk_p, risk_q)
    state = EnvState(theta0, learning_rate=eta)
    p_risk = [avg_risk(pair, state.theta)]
    for _ in range(p_steps):
        state, _ = train_step(state, risk_p, clean, beta)
        p_risk.append(avg_risk(pair, state.theta))
    theta1 = state.theta.copy()
    q_risk, reports = [], []
    for _ in range(q_steps):
        state, _ = train_step(state, risk_q, clean, beta)
        q_risk.append(avg_risk(pair, state.theta))
        reports.append(drift_report(theta1, risk_p, risk_q, state.theta - theta1))
    return SequentialFailure(theta1, np.array(p_risk), np.array(q_risk), tuple(reports))

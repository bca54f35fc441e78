"""Synthetic multi-robustness environment built from quadratic risks.

Each attack type ``k`` owns a risk surface
``R_k(theta) = eps_k * (0.5 * (theta - mu_k)^T A_k (theta - mu_k) + c_k)``
over a shared parameter vector.  Because the surfaces are exactly quadratic,
second-order Taylor expansions are exact and the drift analysis (gradient
alignment, top Hessian eigenvalue, safe-drift threshold) can be checked to
machine precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .rng import substream
from .scheduler import EXP_CLAMP, hybrid_loss

NORM_FLOOR = 1e-12


class DivergenceError(FloatingPointError):
    """Parameters became non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"parameters diverged at step {step}")


class ConvergenceError(RuntimeError):
    pass


class AngleUndefinedError(ValueError):
    pass


class AssumptionViolation(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuadraticRisk:
    matrix: np.ndarray
    center: np.ndarray
    offset: float = 0.0
    strength: float = 1.0
    name: str = ""

    def __post_init__(self):
        a = _frozen(self.matrix)
        mu = _frozen(self.center)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != mu.shape[0]:
            raise ValueError("matrix must be d x d and center length d")
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
            raise ValueError("risk matrix must be symmetric")
        if np.linalg.eigvalsh(a)[0] < -1e-10:
            raise ValueError("risk matrix must be positive semi-definite")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")
        if self.strength <= 0:
            raise ValueError("strength must be positive")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "center", mu)

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    def _diff(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.center.shape:
            raise ValueError(f"theta has shape {theta.shape}, risk expects {self.center.shape}")
        return theta - self.center

    def value(self, theta) -> float:
        d = self._diff(theta)
        return float(self.strength * (0.5 * d @ self.matrix @ d + self.offset))

    def gradient(self, theta) -> np.ndarray:
        return self.strength * (self.matrix @ self._diff(theta))

    def hessian(self) -> np.ndarray:
        return self.strength * self.matrix

    def with_strength(self, strength: float) -> "QuadraticRisk":
        return replace(self, strength=strength)


def risk_value(risk: QuadraticRisk, theta) -> float:
    return risk.value(theta)


def risk_gradient(risk: QuadraticRisk, theta) -> np.ndarray:
    return risk.gradient(theta)


def avg_risk(risks: Sequence[QuadraticRisk], theta) -> float:
    if not risks:
        raise ValueError("need at least one risk")
    return sum(r.value(theta) for r in risks) / len(risks)


def avg_gradient(risks: Sequence[QuadraticRisk], theta) -> np.ndarray:
    if not risks:
        raise ValueError("need at least one risk")
    return sum(r.gradient(theta) for r in risks) / len(risks)


def avg_hessian(risks: Sequence[QuadraticRisk]) -> np.ndarray:
    return sum(r.hessian() for r in risks) / len(risks)


def accuracy_proxy(risk: float) -> float:
    """``exp(-risk)``: maps a risk in [0, inf) onto an accuracy-like (0, 1]."""
    if risk < 0:
        raise ValueError(f"risk must be non-negative, got {risk}")
    return math.exp(-risk)


@dataclass
class EnvState:
    theta: np.ndarray
    step: int = 0
    learning_rate: float = 0.1
    noise_scale: float = 0.0
    grad_evals: int = 0

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.noise_scale < 0:
            raise ValueError("noise scale must be non-negative")


def _advance(env: EnvState, grad: np.ndarray, evals: int) -> EnvState:
    theta = env.theta - env.learning_rate * grad
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(env.step + 1)
    return replace(env, theta=theta, step=env.step + 1, grad_evals=env.grad_evals + evals)


def _observed(loss: float, env: EnvState, rng) -> float:
    if not math.isfinite(loss):
        raise DivergenceError(env.step)
    if env.noise_scale > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_scale > 0")
        loss *= math.exp(env.noise_scale * rng.standard_normal())
    return loss


def train_step(env: EnvState, risk: QuadraticRisk, clean: QuadraticRisk, beta: float,
               rng: np.random.Generator | None = None) -> tuple[EnvState, float]:
    """One gradient step on the hybrid loss; returns the new state and the observed loss.

    The observed loss is the post-step hybrid loss, times ``exp(noise_scale * z)``
    with ``z`` standard normal when noise is configured.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    # overflow surfaces as a non-finite iterate or loss and is raised as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        grad = beta * risk.gradient(env.theta) + (1.0 - beta) * clean.gradient(env.theta)
        new = _advance(env, grad, 1)
        loss = hybrid_loss(risk.value(new.theta), clean.value(new.theta), beta)
    return new, _observed(loss, new, rng)


def weighted_step(env: EnvState, risks: Sequence[QuadraticRisk], clean: QuadraticRisk,
                  weights, beta: float, rng: np.random.Generator | None = None):
    """One step on ``beta * sum_k p_k R_k + (1 - beta) * R_clean`` with ``p = w / sum(w)``.

    Costs one gradient evaluation per risk.  Returns the new state, the observed
    hybrid loss and every risk's post-step value.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    w = np.asarray(weights, dtype=float)
    if len(w) != len(risks) or np.any(w <= 0):
        raise ValueError("one positive weight per risk is required")
    p = w / w.sum()
    with np.errstate(over="ignore", invalid="ignore"):
        adv = p[0] * risks[0].gradient(env.theta)
        for k in range(1, len(risks)):
            adv = adv + p[k] * risks[k].gradient(env.theta)
        grad = beta * adv + (1.0 - beta) * clean.gradient(env.theta)
        new = _advance(env, grad, len(risks))
        values = np.array([r.value(new.theta) for r in risks])
        loss = hybrid_loss(float(p @ values), clean.value(new.theta), beta)
    return new, _observed(loss, new, rng), values


def hessian_lambda_max(risks: Sequence[QuadraticRisk], theta=None, tolerance: float = 1e-8,
                       max_iter: int = 10_000, rng: np.random.Generator | None = None) -> float:
    """Top eigenvalue of the mean Hessian by power iteration on Hessian-vector products.

    Stops when the residual ``||Hv - lambda v||`` falls below ``tolerance * |lambda|``.
    ``theta`` is accepted for interface symmetry; quadratic Hessians do not depend on it.
    """
    if not risks:
        raise ValueError("need at least one risk")
    d = risks[0].dimension

    def hvp(v):
        return sum(r.strength * (r.matrix @ v) for r in risks) / len(risks)

    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = hvp(v)
        lam = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        if np.linalg.norm(w - lam * v) <= tolerance * abs(lam):
            return lam
        v = w / norm_w
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def cos_psi(grad_avg, grad_q) -> float:
    """Cosine of the angle between the average-risk gradient and attack ``q``'s gradient."""
    a = np.asarray(grad_avg, dtype=float)
    b = np.asarray(grad_q, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise AngleUndefinedError("angle undefined for a (near) zero gradient")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def risk_change_bound(grad_avg_norm: float, drift_norm: float, cos: float, lambda_max: float) -> float:
    """Second-order upper bound on the change of the average risk."""
    return -grad_avg_norm * drift_norm * cos + 0.5 * lambda_max * drift_norm**2


def drift_threshold(grad_avg_norm: float, cos: float, lambda_max: float) -> float:
    """Largest drift norm guaranteed not to increase the average risk (0 when cos <= 0)."""
    if lambda_max <= 0:
        raise AssumptionViolation(
            "top Hessian eigenvalue must be positive (a non-positive spectrum means a local maximum)"
        )
    if cos <= 0:
        return 0.0
    return 2.0 * grad_avg_norm * cos / lambda_max


@dataclass(frozen=True)
class DriftReport:
    grad_avg_norm: float
    cos_psi: float
    lambda_max: float
    drift_norm: float
    threshold: float
    bound_value: float
    actual_delta: float
    # alignment of the realised drift with -grad_avg; equals cos_psi for a single pure q-step
    cos_psi_drift: float = float("nan")

    @property
    def within_threshold(self) -> bool:
        return self.drift_norm < self.threshold


def drift_report(theta1, risk_p: QuadraticRisk, risk_q: QuadraticRisk, delta) -> DriftReport:
    """Compare the realised change of ``R_avg`` under drift ``delta`` with its bounds."""
    theta1 = np.asarray(theta1, dtype=float)
    delta = np.asarray(delta, dtype=float)
    pair = (risk_p, risk_q)
    g = avg_gradient(pair, theta1)
    g_norm = float(np.linalg.norm(g))
    cos = cos_psi(g, risk_q.gradient(theta1))
    lam = hessian_lambda_max(pair)
    drift = float(np.linalg.norm(delta))
    cos_drift = float(-(g @ delta) / (g_norm * drift)) if drift > 0 else cos
    return DriftReport(
        grad_avg_norm=g_norm,
        cos_psi=cos,
        lambda_max=lam,
        drift_norm=drift,
        threshold=drift_threshold(g_norm, cos, lam),
        bound_value=risk_change_bound(g_norm, drift, cos_drift, lam),
        actual_delta=avg_risk(pair, theta1 + delta) - avg_risk(pair, theta1),
        cos_psi_drift=cos_drift,
    )


@dataclass(frozen=True)
class CalibrationResult:
    epsilon: float
    accuracy: float
    iterations: int
    converged: bool


def calibrate_epsilon(accuracy: Callable[[float], float], lambda_k: float, epsilon_base: float,
                      target: tuple[float, float] = (0.2, 0.6), max_iter: int = 100) -> CalibrationResult:
    """Iterate ``eps <- (lambda_k + accuracy(eps)) * epsilon_base`` until the accuracy is in range.

    At least one update is made, starting from ``eps = epsilon_base``.  If the
    range is not reached within ``max_iter`` updates the last iterate is
    returned with ``converged=False`` and a warning.
    """
    if epsilon_base <= 0:
        raise ValueError("epsilon_base must be positive")
    lo, hi = target
    eps = epsilon_base
    acc = accuracy(eps)
    for i in range(1, max_iter + 1):
        eps = (lambda_k + acc) * epsilon_base
        if eps <= 0:
            raise ValueError(f"calibration produced a non-positive epsilon ({eps})")
        acc = accuracy(eps)
        if lo <= acc <= hi:
            return CalibrationResult(eps, acc, i, True)
    warnings.warn(f"epsilon calibration did not reach {target} in {max_iter} iterations",
                  RuntimeWarning, stacklevel=2)
    return CalibrationResult(eps, acc, max_iter, False)


def risk_accuracy(risk: QuadraticRisk, theta) -> Callable[[float], float]:
    """Proxy accuracy of ``risk`` at ``theta`` as a function of its strength."""
    theta = np.asarray(theta, dtype=float)
    return lambda eps: accuracy_proxy(risk.with_strength(eps).value(theta))


def pareto_reweighted_direction(grads, weights, rewards, alpha: float) -> np.ndarray:
    """``sum_k w_k * exp(alpha * R_k) * grad_k`` (exponent clamped like the UCB score)."""
    g = np.asarray(grads, dtype=float)
    w = np.asarray(weights, dtype=float)
    r = np.asarray(rewards, dtype=float)
    if not (len(g) == len(w) == len(r)):
        raise ValueError("grads, weights and rewards must have the same length")
    scale = w * np.exp(np.clip(alpha * r, -EXP_CLAMP, EXP_CLAMP))
    return scale @ g


# --- seeded environments -----------------------------------------------------

@dataclass(frozen=True)
class Environment:
    risks: tuple[QuadraticRisk, ...]
    clean: QuadraticRisk
    theta0: np.ndarray = field(repr=False)

    @property
    def n_arms(self) -> int:
        return len(self.risks)

    def accuracies(self, theta) -> np.ndarray:
        return np.array([accuracy_proxy(r.value(theta)) for r in self.risks])


def _cayley(skew: np.ndarray) -> np.ndarray:
    eye = np.eye(skew.shape[0])
    return np.linalg.solve(eye - skew, eye + skew)


def make_environment(dimension: int, strengths: Sequence[float], conflict: float, seed: int,
                     radius: float = 1.5, eig_range: tuple[float, float] = (0.5, 2.0),
                     offset_range: tuple[float, float] = (0.02, 0.1)) -> Environment:
    """Seeded quadratic environment; ``conflict`` in [0, 1] dials the cross-type tension.

    The starting checkpoint and the clean risk's minimiser sit at the origin.
    Risk minimisers lie at distance ``radius`` from it, along directions that
    interpolate between one shared direction (``conflict=0``) and mutually
    opposing random directions (``conflict=1``).  Eigenbases are rotated away
    from the axes by a Cayley transform scaled by ``conflict``, so at
    ``conflict=0`` every Hessian is diagonal in the same basis and training on
    any attack improves all of them.
    """
    if not 0.0 <= conflict <= 1.0:
        raise ValueError("conflict must lie in [0, 1]")
    if dimension < 1:
        raise ValueError("dimension must be positive")
    m = len(strengths)
    rng = substream(seed, "env")
    shared = rng.standard_normal(dimension)
    shared /= np.linalg.norm(shared)
    own = rng.standard_normal((m, dimension))
    if m > 1:
        own -= own.mean(axis=0)
    own /= np.maximum(np.linalg.norm(own, axis=1, keepdims=True), NORM_FLOOR)
    lo, hi = eig_range
    risks = []
    for k in range(m):
        u = (1.0 - conflict) * shared + conflict * own[k]
        norm = np.linalg.norm(u)
        u = u / norm if norm > NORM_FLOOR else shared
        eigs = np.exp(rng.uniform(math.log(lo), math.log(hi), dimension))
        raw = rng.standard_normal((dimension, dimension))
        q = _cayley(conflict * (raw - raw.T) / 2.0)
        a = (q * eigs) @ q.T
        a = 0.5 * (a + a.T)
        offset = float(rng.uniform(*offset_range))
        risks.append(QuadraticRisk(a, radius * u, offset, float(strengths[k]), name=f"attack{k}"))
    clean = QuadraticRisk(np.eye(dimension), np.zeros(dimension), offset_range[0], 1.0, name="clean")
    return Environment(tuple(risks), clean, _frozen(np.zeros(dimension)))

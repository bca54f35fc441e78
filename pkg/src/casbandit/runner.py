"""Seeded simulation runs and their on-disk artifacts.

A run builds the environment from ``env.seed``, draws selections from the
``policy`` substream of the run seed and observation noise from the
``noise`` substream, so (config, seed) fixes every artifact byte.  Wall-clock
time is returned in the summary object but never written to disk.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import config as cfg
from .baselines import PolicyOptions, avg_step, make_policy
from .env import (
    DivergenceError,
    EnvState,
    Environment,
    calibrate_epsilon,
    make_environment,
    risk_accuracy,
    train_step,
)
from .rng import derive_seed, substream
from .scheduler import SchedulerConfig

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.toml"
TRACE_COMMENT = "# columns: iteration, arm (-1 = all arms averaged), observed loss, " \
                "self reward, trade-off reward, then the sampling distribution pi_0..pi_{M-1} used for the pick"


@dataclass
class RunSummary:
    policy: str
    seed: int
    horizon: int
    epsilons: list[float]
    final_accuracies: list[float]
    weighted_accuracy: float
    selection_frequencies: list[float]
    grad_evals: int
    wall_seconds: float = 0.0
    artifacts: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        """Deterministic fields only, in a fixed order."""
        return {
            "policy": self.policy,
            "seed": self.seed,
            "horizon": self.horizon,
            "n_arms": len(self.epsilons),
            "epsilons": self.epsilons,
            "final_accuracies": self.final_accuracies,
            "weighted_accuracy": self.weighted_accuracy,
            "selection_frequencies": self.selection_frequencies,
            "grad_evals": self.grad_evals,
            "artifacts": self.artifacts,
            "config": self.config,
        }


@dataclass
class TraceRow:
    iteration: int
    arm: int
    loss: float
    reward_self: float | None
    reward_tradeoff: float | None
    probs: np.ndarray


def build_environment(config: cfg.RunConfig) -> tuple[Environment, list[float]]:
    """The seeded environment with every arm's strength resolved (calibrated if requested)."""
    e = config.env
    base = [1.0 if isinstance(a.epsilon, str) else float(a.epsilon) for a in config.arms]
    env = make_environment(e.dimension, base, e.conflict, e.seed, radius=e.radius)
    c = config.calibration
    risks = list(env.risks)
    for k, arm in enumerate(config.arms):
        if arm.epsilon == "calibrate":
            res = calibrate_epsilon(risk_accuracy(risks[k], env.theta0), c.lambda_k, c.epsilon_base,
                                    (c.target_low, c.target_high), c.max_iter)
            risks[k] = risks[k].with_strength(res.epsilon)
    env = Environment(tuple(risks), env.clean, env.theta0)
    return env, [r.strength for r in env.risks]


def _policy(config: cfg.RunConfig, epsilons):
    s, b = config.scheduler, config.baselines
    opts = PolicyOptions(
        scheduler=SchedulerConfig(alpha=s.alpha, beta=config.env.beta, window=s.window,
                                  use_tradeoff=s.use_tradeoff, use_exploration=s.use_exploration),
        sat_probs=None if b.sat_probs is None else tuple(b.sat_probs),
        eat_refresh=b.eat_refresh,
        order_sequence=None if b.order_sequence is None else tuple(b.order_sequence),
    )
    return make_policy(config.policy, config.specs(epsilons), opts)


def simulate(config: cfg.RunConfig, on_row: Callable[[TraceRow], None] | None = None) -> RunSummary:
    """Run ``config.horizon`` iterations; ``on_row`` receives every trace row."""
    started = time.perf_counter()
    env, epsilons = build_environment(config)
    policy = _policy(config, epsilons)
    pick_rng = substream(config.seed, "policy")
    noise_rng = substream(config.seed, "noise")
    e = config.env
    state = EnvState(env.theta0, learning_rate=e.learning_rate, noise_scale=e.noise_scale)
    weights = policy.weights
    counts = np.zeros(env.n_arms)
    for t in range(config.horizon):
        policy.prepare(t, lambda: env.accuracies(state.theta))
        choice = policy.choose(t, pick_rng)
        try:
            if policy.averaging:
                state, loss, _ = avg_step(state, env.risks, env.clean, weights, e.beta, rng=noise_rng)
            else:
                state, loss = train_step(state, env.risks[choice.arm], env.clean, e.beta, noise_rng)
        except DivergenceError as exc:
            raise DivergenceError(t + 1, f"parameters diverged at iteration {t + 1}") from exc
        loss *= e.loss_scale
        if policy.averaging:
            counts += choice.probs
        else:
            counts[choice.arm] += 1
            policy.observe(choice.arm, loss)
        if on_row is not None:
            rs, rt = choice.reward_self, choice.reward_tradeoff
            on_row(TraceRow(t + 1, choice.arm, loss,
                            None if rs is None else float(rs[choice.arm]),
                            None if rt is None else float(rt[choice.arm]), choice.probs))
    if config.horizon == 0:
        policy.prepare(0, lambda: env.accuracies(state.theta))
        freqs = np.asarray(policy.distribution(0), dtype=float)
    else:
        freqs = counts / config.horizon
    acc = env.accuracies(state.theta)
    return RunSummary(
        policy=config.policy,
        seed=config.seed,
        horizon=config.horizon,
        epsilons=[float(x) for x in epsilons],
        final_accuracies=[float(x) for x in acc],
        weighted_accuracy=float(weights @ acc / weights.sum()),
        selection_frequencies=[float(x) for x in freqs],
        grad_evals=state.grad_evals,
        wall_seconds=time.perf_counter() - started,
        config=config.model_dump(mode="json", exclude_none=True),
    )


# --- artifact writing ---------------------------------------------------------

def fmt_float(x) -> str:
    """Shortest round-trip text for a float; empty for ``None``."""
    return "" if x is None else repr(float(x))


def write_atomically(target, files: dict[str, str]) -> list[str]:
    """Write ``{name: text}`` into a fresh directory and move it to ``target`` in one rename.

    An existing ``target`` is replaced only after every file has been written.
    """
    target = Path(target)
    parent = target.parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", suffix=".tmp", dir=parent))
    try:
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o777 & ~umask)
        for name, text in files.items():
            with open(tmp / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        old = None
        if target.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{target.name}.", suffix=".old", dir=parent))
            os.replace(target, old / "prev")
        os.replace(tmp, target)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return sorted(files)


def csv_text(header: Sequence[str], rows, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(comment + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def trace_header(n_arms: int) -> list[str]:
    return ["iteration", "arm", "loss", "reward_self", "reward_tradeoff"] + [f"pi_{k}" for k in range(n_arms)]


def run(config: cfg.RunConfig, out=None) -> RunSummary:
    """Simulate and write ``trace.csv``, ``summary.json`` and ``config.toml`` to the output directory."""
    rows: list[list[str]] = []

    def keep(row: TraceRow):
        rows.append([str(row.iteration), str(row.arm), fmt_float(row.loss), fmt_float(row.reward_self),
                     fmt_float(row.reward_tradeoff)] + [fmt_float(p) for p in row.probs])

    summary = simulate(config, keep)
    summary.artifacts = sorted([TRACE_FILE, SUMMARY_FILE, CONFIG_FILE])
    write_atomically(out or config.outputs.directory, {
        TRACE_FILE: csv_text(trace_header(config.n_arms), rows, TRACE_COMMENT),
        SUMMARY_FILE: json_text(summary.to_json()),
        CONFIG_FILE: cfg.dumps(config),
    })
    return summary


# --- paired comparison ----------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    label: str
    policy: str
    repeats: int
    mean: float
    std: float
    grad_evals: float


def _environment_key(config: cfg.RunConfig):
    return (config.env.model_dump(), [a.epsilon for a in config.arms], config.calibration.model_dump())


def compare(configs: Sequence[cfg.RunConfig], repeats: int = 5, seed: int | None = None) -> list[ComparisonRow]:
    """Weighted-average accuracy, mean and sample std over ``repeats`` paired seeds per config.

    Repeat ``r`` of every config uses the same run seed, derived from ``seed``
    (default: the first config's seed), so the rows differ only by policy.
    """
    if len(configs) < 2:
        raise ValueError("compare needs at least two configurations")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    key = _environment_key(configs[0])
    for i, c in enumerate(configs[1:], start=1):
        if _environment_key(c) != key:
            raise ValueError(f"configuration {i} uses a different environment; comparisons must be paired")
    base = configs[0].seed if seed is None else seed
    seeds = [derive_seed(base, f"repeat-{r}") for r in range(repeats)]
    rows = []
    for c in configs:
        scores, evals = [], []
        for s in seeds:
            summary = simulate(c.with_overrides(seed=s))
            scores.append(summary.weighted_accuracy)
            evals.append(summary.grad_evals)
        std = float(np.std(scores, ddof=1)) if repeats > 1 else 0.0
        rows.append(ComparisonRow(c.label or c.policy, c.policy, repeats, float(np.mean(scores)), std,
                                  float(np.mean(evals))))
    return rows


COMPARE_HEADER = ["label", "policy", "repeats", "weighted_accuracy_mean", "weighted_accuracy_std", "grad_evals"]


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    return csv_text(COMPARE_HEADER, [[r.label, r.policy, str(r.repeats), fmt_float(r.mean), fmt_float(r.std),
                                      fmt_float(r.grad_evals)] for r in rows])


def comparison_text(rows: Sequence[ComparisonRow]) -> str:
    body = [[r.label, r.policy, str(r.repeats), f"{r.mean:.4f} ± {r.std:.4f}", f"{r.grad_evals:.0f}"]
            for r in rows]
    head = ["label", "policy", "repeats", "weighted accuracy", "grad evals"]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in [head] + body]
    return "\n".join(lines) + "\n"

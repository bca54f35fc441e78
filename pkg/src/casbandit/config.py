"""Run configuration: TOML in, validated models, TOML echo out."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional, Union

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .rng import MAX_SEED
from .scheduler import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_WINDOW, PerturbationSpec

PolicyName = Literal["cas", "sat", "eat", "order", "avg"]


class ConfigError(ValueError):
    """Unreadable or invalid configuration; the message names the offending key."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArmConfig(_Section):
    id: int = Field(ge=0, description="arm index; arms must be numbered 0..M-1 in order")
    weight: float = Field(1.0, gt=0, description="scenario weight w_k")
    epsilon: Union[float, Literal["calibrate"]] = Field(
        1.0, description='attack strength scaling the risk, or "calibrate" to solve for it')
    name: str = Field("", description="free-form label")

    @field_validator("epsilon")
    @classmethod
    def _positive(cls, v):
        if not isinstance(v, str) and v <= 0:
            raise ValueError("epsilon must be positive")
        return v


def default_arms() -> list[ArmConfig]:
    """Three high-priority arms at weight 6 followed by eighteen at weight 1."""
    return [ArmConfig(id=i, weight=6.0 if i < 3 else 1.0) for i in range(21)]


class EnvConfig(_Section):
    dimension: int = Field(10, ge=1, description="parameter dimension d")
    conflict: float = Field(0.8, ge=0, le=1, description="cross-type conflict strength in [0, 1]")
    learning_rate: float = Field(0.05, ge=0, description="SGD step size eta")
    beta: float = Field(DEFAULT_BETA, ge=0, le=1, description="hybrid-loss weight on the adversarial term")
    noise_scale: float = Field(0.0, ge=0, description="log-normal observation noise sigma_obs")
    seed: int = Field(0, ge=0, le=MAX_SEED, description="seed of the risk layout (shared by paired runs)")
    radius: float = Field(1.5, gt=0, description="distance of every risk minimiser from the start point")
    loss_scale: float = Field(1.0, gt=0, description="constant multiplying every observed loss")


class SchedulerSection(_Section):
    alpha: float = Field(DEFAULT_ALPHA, description="reward scale inside the exponential")
    window: int = Field(DEFAULT_WINDOW, ge=2, description="self-reward regression window W")
    use_tradeoff: bool = Field(True, description="include the cross-type reward")
    use_exploration: bool = Field(True, description="include the UCB exploration bonus")


class BaselineSection(_Section):
    sat_probs: Optional[list[float]] = Field(None, description="fixed SAT probabilities (default: weight-proportional)")
    eat_refresh: int = Field(100, ge=1, description="E-AT accuracy snapshot period in steps")
    order_sequence: Optional[list[int]] = Field(None, description="Order cycle (default: descending weight, then id)")


class CalibrationSection(_Section):
    lambda_k: float = Field(0.1, description="additive term in eps <- (lambda + acc) * eps_base")
    epsilon_base: float = Field(1.0, gt=0, description="base strength eps_base")
    target_low: float = Field(0.2, ge=0, le=1, description="lower end of the target accuracy range")
    target_high: float = Field(0.6, ge=0, le=1, description="upper end of the target accuracy range")
    max_iter: int = Field(100, ge=1, description="iteration cap")


class OutputSection(_Section):
    directory: str = Field("runs/latest", description="output directory (replaced atomically)")


class TradeoffSection(_Section):
    steps: int = Field(300, ge=0, description="fine-tuning steps per row")
    mode: Literal["reset", "cumulative"] = Field("reset", description="restart every row from the checkpoint or continue")


class RegretSection(_Section):
    means: list[float] = Field([0.9, 0.1], min_length=1, description="Bernoulli arm means")
    horizon: int = Field(10_000, ge=1, description="rounds per run")
    seeds: int = Field(30, ge=1, description="independent runs per algorithm")
    slack: float = Field(8.0, ge=0, description="additive constant per suboptimal arm in the bound")
    algorithms: list[Literal["ucb", "thompson"]] = Field(["ucb", "thompson"], description="algorithms to run")


class ConvergenceSection(_Section):
    dimension: int = Field(5, ge=1, description="parameter dimension")
    n_risks: int = Field(3, ge=1, description="risks in the composite")
    conflict: float = Field(0.5, ge=0, le=1, description="conflict of the composite's risks")
    env_seed: int = Field(7, ge=0, le=MAX_SEED, description="seed of the composite's layout")
    radius: float = Field(1.0, gt=0, description="minimiser distance from the origin")
    start: float = Field(10.0, description="every coordinate of the starting point")
    horizon: int = Field(100_000, ge=10, description="SGD steps T")
    seeds: int = Field(20, ge=1, description="independent runs")
    power: float = Field(1.0, ge=0, description="step sizes scale / t**power")
    scale: Optional[float] = Field(None, ge=0, description="step-size scale (default: 1 / lambda_max)")
    tolerance: float = Field(1e-3, gt=0, description="converged means V_T < tolerance * V_0")


class EquilibriumSection(_Section):
    rewards: Optional[list[float]] = Field(None, description="frozen per-arm rewards (default: evenly spaced in [-0.05, 0.05])")
    draws: int = Field(100_000, ge=10_000, description="selections per seed")
    seeds: int = Field(10, ge=1, description="independent runs, frequencies averaged")
    tolerance: float = Field(0.02, gt=0, description="allowed absolute per-arm deviation")


class DriftSection(_Section):
    p_arm: int = Field(0, ge=0, description="arm fine-tuned first")
    q_arm: int = Field(1, ge=0, description="arm fine-tuned second")
    p_steps: int = Field(200, ge=0, description="steps on the first arm")
    q_steps: int = Field(200, ge=1, description="steps on the second arm")


class RunConfig(_Section):
    seed: int = Field(0, ge=0, le=MAX_SEED, description="64-bit run seed")
    policy: PolicyName = Field("cas", description="selection policy: cas | sat | eat | order | avg")
    horizon: int = Field(1000, ge=0, description="training iterations T")
    label: Optional[str] = Field(None, description="row label in comparison tables; the policy name when unset")
    arms: list[ArmConfig] = Field(default_factory=default_arms, min_length=1, description="[[arms]] tables")
    env: EnvConfig = Field(default_factory=EnvConfig)
    scheduler: SchedulerSection = Field(default_factory=SchedulerSection)
    baselines: BaselineSection = Field(default_factory=BaselineSection)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)
    outputs: OutputSection = Field(default_factory=OutputSection)
    tradeoff: TradeoffSection = Field(default_factory=TradeoffSection)
    regret: RegretSection = Field(default_factory=RegretSection)
    convergence: ConvergenceSection = Field(default_factory=ConvergenceSection)
    equilibrium: EquilibriumSection = Field(default_factory=EquilibriumSection)
    drift: DriftSection = Field(default_factory=DriftSection)

    @model_validator(mode="after")
    def _cross_checks(self):
        ids = [a.id for a in self.arms]
        if ids != list(range(len(ids))):
            raise ValueError(f"arms: ids must be 0..M-1 in order, got {ids}")
        m = len(self.arms)
        b = self.baselines
        if b.sat_probs is not None and len(b.sat_probs) != m:
            raise ValueError("baselines.sat_probs: one probability per arm is required")
        if b.order_sequence is not None and set(b.order_sequence) != set(range(m)):
            raise ValueError("baselines.order_sequence: must cover every arm id and nothing else")
        if self.equilibrium.rewards is not None and len(self.equilibrium.rewards) != m:
            raise ValueError("equilibrium.rewards: one reward per arm is required")
        if self.calibration.target_low > self.calibration.target_high:
            raise ValueError("calibration.target_low must not exceed target_high")
        return self

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    def specs(self, epsilons=None) -> list[PerturbationSpec]:
        eps = epsilons or [1.0 if isinstance(a.epsilon, str) else a.epsilon for a in self.arms]
        return [PerturbationSpec(a.id, a.weight, float(e), a.name) for a, e in zip(self.arms, eps)]

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        if out is not None:
            data["outputs"]["directory"] = str(out)
        return parse_config(data)


def _describe_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        msg = err["msg"].removeprefix("Value error, ")
        key = ".".join(str(p) for p in err["loc"])
        lines.append(f"{key}: {msg}" if key else msg)
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe_error(exc)) from None


def loads(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return parse_config(data)


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return loads(text)


def dumps(config: RunConfig) -> str:
    """TOML echo; ``loads(dumps(c)) == c``."""
    return tomli_w.dumps(config.model_dump(mode="json", exclude_none=True))


def describe_keys(model: type[BaseModel] = RunConfig, prefix: str = "") -> list[tuple[str, str]]:
    """``(dotted key, description)`` for every leaf field, in declaration order."""
    out = []
    for name, info in model.model_fields.items():
        ann = info.annotation
        key = f"{prefix}{name}"
        if name == "arms":
            out.extend(describe_keys(ArmConfig, "arms[]."))
        elif isinstance(ann, type) and issubclass(ann, BaseModel):
            out.extend(describe_keys(ann, key + "."))
        else:
            if info.is_required():
                suffix = "required"
            else:
                suffix = f"default: {info.get_default(call_default_factory=True)!r}"
            out.append((key, f"{info.description or ''} ({suffix})"))
    return out

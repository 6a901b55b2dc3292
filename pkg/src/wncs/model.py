"""Problem instances, validation and plant discretization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence


class ConfigError(ValueError):
    """Invalid system configuration; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnrepresentablePlantError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ContinuousPlant:
    a: float
    b: float = 1.0


@dataclass(frozen=True)
class DiscretePlant:
    a_bar: float
    b_bar: float


@dataclass(frozen=True)
class SystemConfig:
    plants: tuple[ContinuousPlant, ...]
    channel: tuple[float, ...]
    sampling_periods: tuple[int, ...]
    slot_length: float
    feasibility_margin: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "plants", tuple(self.plants))
        object.__setattr__(self, "channel", tuple(self.channel))
        object.__setattr__(self, "sampling_periods", tuple(self.sampling_periods))

    @property
    def n(self) -> int:
        return len(self.plants)

    @property
    def homogeneous(self) -> bool:
        return len(set(self.sampling_periods)) == 1

    @property
    def h(self) -> int:
        """Common sampling period; only defined for homogeneous configs."""
        if not self.homogeneous:
            raise ConfigError(["sampling_periods: homogeneous periods required"])
        return self.sampling_periods[0]

    def with_period(self, h: int) -> "SystemConfig":
        return SystemConfig(self.plants, self.channel, (h,) * self.n,
                            self.slot_length, self.feasibility_margin)

    def with_channel(self, channel: Sequence[float]) -> "SystemConfig":
        return SystemConfig(self.plants, tuple(channel), self.sampling_periods,
                            self.slot_length, self.feasibility_margin)

    def discrete_plants(self) -> list[DiscretePlant]:
        return [discretize(pl, h, self.slot_length)
                for pl, h in zip(self.plants, self.sampling_periods)]


@dataclass(frozen=True)
class StabilityVerdict:
    stabilizable: bool
    slack: float
    binding_constraint: Optional[str] = None
    binding_subset: Optional[tuple[int, ...]] = None
    margin: float = 0.0
    details: dict = field(default_factory=dict, compare=False)

    def subset_label(self) -> str:
        if not self.binding_subset:
            return ""
        return "".join(str(i + 1) for i in sorted(self.binding_subset))


def symmetric_config(n: int, a: float, p: float, h: int, delta: float,
                     margin: float = 1e-6) -> SystemConfig:
    return SystemConfig((ContinuousPlant(a, 1.0),) * n, (p,) * n, (h,) * n,
                        delta, margin)


def discretize(plant: ContinuousPlant, h: int, delta: float) -> DiscretePlant:
    """Lift a continuous scalar plant to one sampling period of ``h`` slots.

    Uses the exact antiderivative of the input integral, with the ``a == 0``
    limit ``h * delta * b``. ``expm1`` keeps ``b_bar`` accurate for small
    ``a * h * delta``.
    """
    if h < 1 or delta <= 0:
        raise ValueError("need h >= 1 and delta > 0")
    tau = h * delta
    try:
        x = plant.a * tau
        a_bar = math.exp(x)
        # x can underflow to 0 for subnormal a; the limit is then exact
        b_bar = tau * plant.b if x == 0 else tau * plant.b * (math.expm1(x) / x)
    except OverflowError as exc:
        raise UnrepresentablePlantError(
            f"exp({plant.a} * {tau}) overflows") from exc
    if not (math.isfinite(a_bar) and math.isfinite(b_bar)):
        raise UnrepresentablePlantError(f"exp({plant.a} * {tau}) overflows")
    return DiscretePlant(a_bar, b_bar)


def validate(config: SystemConfig) -> SystemConfig:
    problems = []
    n = len(config.plants)
    if n < 1:
        problems.append("plants: at least one plant required")
    if len(config.channel) != n:
        problems.append(f"channel: length {len(config.channel)} != {n} plants")
    if len(config.sampling_periods) != n:
        problems.append(
            f"sampling_periods: length {len(config.sampling_periods)} != {n} plants")
    for i, pl in enumerate(config.plants):
        if not (isinstance(pl.a, (int, float)) and math.isfinite(pl.a) and pl.a >= 0):
            problems.append(f"plants[{i}].a: A_i >= 0 violated ({pl.a!r})")
        if not (isinstance(pl.b, (int, float)) and math.isfinite(pl.b) and pl.b != 0):
            problems.append(f"plants[{i}].b: B_i != 0 violated ({pl.b!r})")
    for i, p in enumerate(config.channel):
        if not (isinstance(p, (int, float)) and 0 < p <= 1):
            problems.append(f"channel[{i}]: p_i ∈ (0,1] violated ({p!r})")
    for i, h in enumerate(config.sampling_periods):
        if isinstance(h, bool) or not isinstance(h, int) or h < 1:
            problems.append(f"sampling_periods[{i}]: h_i >= 1 integer violated ({h!r})")
    if not (isinstance(config.slot_length, (int, float))
            and math.isfinite(config.slot_length) and config.slot_length > 0):
        problems.append(f"slot_length: Δ > 0 violated ({config.slot_length!r})")
    if not (isinstance(config.feasibility_margin, (int, float))
            and config.feasibility_margin > 0):
        problems.append(
            f"feasibility_margin: ε > 0 violated ({config.feasibility_margin!r})")
    if problems:
        raise ConfigError(problems)
    return config


_TOP_KEYS = {"plants", "channel", "sampling_periods", "slot_length", "feasibility_margin"}
_PLANT_KEYS = {"a", "b"}


def config_from_dict(doc: Any) -> SystemConfig:
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    problems = [f"{k}: unknown field" for k in sorted(set(doc) - _TOP_KEYS)]
    for k in sorted(_TOP_KEYS - {"feasibility_margin"} - set(doc)):
        problems.append(f"{k}: missing field")
    plants = []
    raw_plants = doc.get("plants", [])
    if not isinstance(raw_plants, list):
        problems.append("plants: expected a list")
        raw_plants = []
    for i, rp in enumerate(raw_plants):
        if not isinstance(rp, dict):
            problems.append(f"plants[{i}]: expected an object")
            continue
        problems += [f"plants[{i}].{k}: unknown field" for k in sorted(set(rp) - _PLANT_KEYS)]
        problems += [f"plants[{i}].{k}: missing field" for k in sorted(_PLANT_KEYS - set(rp))]
        plants.append(ContinuousPlant(rp.get("a", 0.0), rp.get("b", 1.0)))
    for key in ("channel", "sampling_periods"):
        if key in doc and not isinstance(doc[key], list):
            problems.append(f"{key}: expected a list")
    if problems:
        raise ConfigError(problems)
    return validate(SystemConfig(
        tuple(plants),
        tuple(doc["channel"]),
        tuple(doc["sampling_periods"]),
        doc["slot_length"],
        doc.get("feasibility_margin", 1e-6),
    ))


def config_to_dict(config: SystemConfig) -> dict:
    return {
        "plants": [{"a": pl.a, "b": pl.b} for pl in config.plants],
        "channel": list(config.channel),
        "sampling_periods": list(config.sampling_periods),
        "slot_length": config.slot_length,
        "feasibility_margin": config.feasibility_margin,
    }


def load_config(path) -> SystemConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<root>: invalid JSON ({exc})"]) from exc
    return config_from_dict(doc)

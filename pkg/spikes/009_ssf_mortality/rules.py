"""
Social Security Factor rule family.

The SSF formula, benefit clamping, the 60-month transition factor, worker
class bonuses and the 85/95 progressive points rule. Factors are carried
unrounded; three-decimal rounding happens only when tables are written.

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

from errors import RuleError
from lifetable import MortalitySource, rounded_e_for_ssf

logger = logging.getLogger(__name__)

DEFAULT_RULES_PATH = Path(__file__).parent / "config" / "rules.json"
TRANSITION_MONTHS = 60


class WorkerClass(StrEnum):
    MALE_WORKER = "male_worker"
    FEMALE_WORKER = "female_worker"
    MALE_TEACHER = "male_teacher"
    FEMALE_TEACHER = "female_teacher"

    @property
    def is_female(self) -> bool:
        return self in (WorkerClass.FEMALE_WORKER, WorkerClass.FEMALE_TEACHER)

    @property
    def is_teacher(self) -> bool:
        return self in (WorkerClass.MALE_TEACHER, WorkerClass.FEMALE_TEACHER)


class RuleMode(StrEnum):
    SSF = "ssf"
    COMBINED = "combined"
    POINTS = "points"


@dataclass(frozen=True)
class RuleConfig:
    A: float = 0.31
    bonuses: Mapping[WorkerClass, float] = field(default_factory=dict)
    min_ect: Mapping[WorkerClass, float] = field(default_factory=dict)
    points: Mapping[int, tuple[int, int]] = field(default_factory=dict)
    teacher_point_bonus: float = 5.0
    ceiling: float = 5839.45
    floor: float = 998.0
    min_entry_age: float = 18.0

    def __post_init__(self):
        if not self.A > 0:
            raise RuleError(f"A must be positive, got {self.A}")
        for cls in WorkerClass:
            if cls not in self.bonuses or cls not in self.min_ect:
                raise RuleError(f"rule config has no bonus/min_ect for {cls}")
        if any(b < 0 for b in self.bonuses.values()):
            raise RuleError("bonuses must be non-negative")
        for year, (female, male) in self.points.items():
            if not female < male:
                raise RuleError(f"female points must be below male points in {year}, got {female}/{male}")
        if self.floor > self.ceiling:
            raise RuleError(f"benefit floor {self.floor} exceeds ceiling {self.ceiling}")

    def bonus(self, cls: WorkerClass) -> float:
        return float(self.bonuses[cls])

    def points_threshold(self, cls: WorkerClass, year: int) -> int:
        if year not in self.points:
            known = ", ".join(str(y) for y in sorted(self.points))
            raise RuleError(f"no points threshold configured for {year} (configured: {known})")
        female, male = self.points[year]
        return female if cls.is_female else male

    @property
    def first_points_year(self) -> int | None:
        return min(self.points) if self.points else None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RuleConfig:
        try:
            return cls(
                A=float(data["A"]),
                bonuses={WorkerClass(k): float(v) for k, v in data["bonuses"].items()},
                min_ect={WorkerClass(k): float(v) for k, v in data["min_ect"].items()},
                points={int(y): (int(p[0]), int(p[1])) for y, p in data.get("points", {}).items()},
                teacher_point_bonus=float(data.get("teacher_point_bonus", 5)),
                ceiling=float(data["ceiling"]),
                floor=float(data["floor"]),
                min_entry_age=float(data.get("min_entry_age", 18)),
            )
        except KeyError as e:
            raise RuleError(f"rule config is missing {e.args[0]}") from None
        except ValueError as e:
            raise RuleError(f"invalid rule config: {e}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "A": self.A,
            "bonuses": {str(k): v for k, v in sorted(self.bonuses.items())},
            "min_ect": {str(k): v for k, v in sorted(self.min_ect.items())},
            "points": {str(y): list(p) for y, p in sorted(self.points.items())},
            "teacher_point_bonus": self.teacher_point_bonus,
            "ceiling": self.ceiling,
            "floor": self.floor,
            "min_entry_age": self.min_entry_age,
        }


def load_rule_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RuleConfig:
    """Built-in defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    merged: dict[str, Any] = json.loads(DEFAULT_RULES_PATH.read_text(encoding="utf-8"))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise RuleError(f"rule config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise RuleError(f"rule config {path} is not valid JSON: {e}") from None
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        logger.debug(f"Merged rule config from {path}")
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return RuleConfig.from_dict(merged)


@dataclass(frozen=True)
class ContributionTime:
    ct: float
    feasible: bool


@dataclass(frozen=True)
class Scenario:
    """An SSF year bound to the mortality source its factors are read from."""

    ssf_year: int
    source: MortalitySource
    config: RuleConfig = field(default_factory=load_rule_config)
    label: str = ""
    exact_age: bool = False

    @property
    def table_year(self) -> int:
        return self.ssf_year - 2

    def e_for(self, x: float, exact: bool | None = None) -> float:
        return rounded_e_for_ssf(self.source, x, self.exact_age if exact is None else exact)


def ssf(x: float, ct: float, e_rounded: float, A: float = 0.31) -> float:
    if x <= 0 or ct <= 0 or e_rounded <= 0 or A <= 0:
        raise RuleError(f"SSF needs positive inputs, got x={x}, CT={ct}, e={e_rounded}, A={A}")
    contribution = ct * A
    return contribution / e_rounded * (1.0 + (x + contribution) / 100.0)


def effective_ct(ect: float, cls: WorkerClass, cfg: RuleConfig) -> ContributionTime:
    if ect < 0:
        raise RuleError(f"effective contribution time must be non-negative, got {ect}")
    return ContributionTime(ct=ect + cfg.bonus(cls), feasible=ect >= cfg.min_ect[cls])


def max_contribution_time(x: float, cls: WorkerClass, cfg: RuleConfig) -> float:
    """Longest CT at age x for a career started at the minimum entry age."""
    return x - cfg.min_entry_age + cfg.bonus(cls)


def benefit(M: float, factor: float, C: float, W: float) -> float:
    if M <= 0 or C <= 0 or W <= 0:
        raise RuleError(f"benefit needs positive M, C and W, got {M}, {C}, {W}")
    if W > C:
        raise RuleError(f"floor {W} exceeds ceiling {C}")
    return max(min(factor * M, C), W)


def transition_factor(ssf_value: float, n: int) -> float:
    if not 0 <= n <= TRANSITION_MONTHS:
        raise RuleError(f"transition month must be within [0, {TRANSITION_MONTHS}], got {n}")
    return ssf_value * n / TRANSITION_MONTHS + (TRANSITION_MONTHS - n) / TRANSITION_MONTHS


def benefit_with_transition(M: float, ssf_value: float, n: int, C: float, W: float) -> float:
    return benefit(M, transition_factor(ssf_value, n), C, W)


def meets_points(x: float, ect: float, cls: WorkerClass, year: int, cfg: RuleConfig) -> bool:
    """Age plus ECT (plus the teacher bonus) reaches the year's threshold with eligible ECT.

    The teacher bonus counts towards the points sum only.
    """
    threshold = cfg.points_threshold(cls, year)
    total = x + ect + (cfg.teacher_point_bonus if cls.is_teacher else 0.0)
    return total >= threshold and ect >= cfg.min_ect[cls]


def combined_factor(
    x: float, ect: float, cls: WorkerClass, scenario: Scenario, mode: RuleMode = RuleMode.COMBINED
) -> float:
    """Factor applied at retirement: the SSF, or max(1, SSF) once the points rule is met."""
    cfg = scenario.config
    contribution = effective_ct(ect, cls, cfg)
    if not contribution.feasible:
        raise RuleError(f"{cls} with ECT {ect} is below the minimum of {cfg.min_ect[cls]:g} years")
    value = ssf(x, contribution.ct, scenario.e_for(x), cfg.A)
    if mode == RuleMode.SSF or scenario.ssf_year not in cfg.points:
        return value
    if meets_points(x, ect, cls, scenario.ssf_year, cfg):
        return max(1.0, value)
    return value


def modes_for_year(year: int, cfg: RuleConfig) -> list[RuleMode]:
    """The first points year is reported both ways; the rule applied from mid-year."""
    first = cfg.first_points_year
    if first is None or year not in cfg.points:
        return [RuleMode.SSF]
    if year == first:
        return [RuleMode.SSF, RuleMode.COMBINED]
    return [RuleMode.COMBINED]

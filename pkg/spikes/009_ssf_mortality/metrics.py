"""
Retirement planning metrics derived from the SSF.

Relative discrepancy between official and counterfactual factors, the
Normal Retirement Age (the age at which a full career reaches a factor of
one), the contribution time CT1 that makes the factor one at a given age,
and the multi-year sweeps that tabulate them.

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import pandas as pd
from scipy import optimize

from errors import NumericalFailure, RuleError
from lifetable import MortalitySource
from rules import (
    RuleConfig,
    RuleMode,
    Scenario,
    WorkerClass,
    combined_factor,
    effective_ct,
    max_contribution_time,
    modes_for_year,
    ssf,
)

logger = logging.getLogger(__name__)

NRA_AGE_LIMIT = 100
NRA_XTOL = 1e-9
SOURCE_KINDS = ("official", "ggm")


class SourceResolver(Protocol):
    def source(self, kind: str, table_year: int) -> MortalitySource: ...


@dataclass(frozen=True)
class Ct1Feasibility:
    """Both CT1 constraints for one class, reported independently."""

    entry_age_ok: bool
    above_min_ect: bool

    @property
    def feasible(self) -> bool:
        return self.entry_age_ok and self.above_min_ect

    def __str__(self) -> str:
        if self.feasible:
            return "feasible"
        failed = []
        if not self.entry_age_ok:
            failed.append("infeasible_entry_age")
        if not self.above_min_ect:
            failed.append("below_min_ect")
        return "+".join(failed)


@dataclass(frozen=True)
class NraResult:
    worker_class: WorkerClass
    entry_age: float
    nra: float
    ect_at_nra: float
    rule_mode: RuleMode
    ssf_year: int


@dataclass(frozen=True, eq=False)
class ScenarioComparison:
    """Official vs counterfactual factor matrices on a (CT or ECT) x age grid.

    Rows follow ``cts`` and columns follow ``ages``; NaN marks infeasible cells.
    """

    ssf_year: int
    rule_mode: RuleMode
    ages: tuple[int, ...]
    cts: tuple[int, ...]
    ct_kind: str = "ct"
    factor_official: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    factor_counterfactual: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    discrepancy: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def relative_discrepancy(f_cf: float, f_official: float) -> float:
    """(f_cf / f_official - 1) * 100 on unrounded factors."""
    if f_official == 0:
        raise RuleError("official factor is zero; discrepancy is undefined")
    return (f_cf / f_official - 1.0) * 100.0


def expectancy_discrepancy(e_cf: float, e_official: float) -> float:
    """Discrepancy implied by the life expectancies alone; SSF is proportional to 1/e."""
    if e_cf <= 0 or e_official <= 0:
        raise RuleError(f"life expectancies must be positive, got {e_cf} and {e_official}")
    return (e_official / e_cf - 1.0) * 100.0


def ct1(x: float, e_rounded: float, A: float = 0.31) -> float:
    """Contribution time that makes the SSF exactly one.

    Positive root of u^2 + (100 + x) u - 100 e = 0 with u = CT * A, written
    without the cancelling subtraction.
    """
    if e_rounded <= 0 or A <= 0:
        raise RuleError(f"CT1 needs positive e and A, got e={e_rounded}, A={A}")
    linear = 100.0 + x
    u = 200.0 * e_rounded / (linear + math.sqrt(linear * linear + 400.0 * e_rounded))
    return u / A


def ct1_feasibility(x: float, ct1_value: float, cls: WorkerClass, cfg: RuleConfig) -> Ct1Feasibility:
    return Ct1Feasibility(
        entry_age_ok=ct1_value <= max_contribution_time(x, cls, cfg),
        above_min_ect=ct1_value >= cfg.min_ect[cls] + cfg.bonus(cls),
    )


def _points_nra(cls: WorkerClass, entry_age: float, scenario: Scenario) -> float:
    cfg = scenario.config
    threshold = cfg.points_threshold(cls, scenario.ssf_year)
    teacher = cfg.teacher_point_bonus if cls.is_teacher else 0.0
    # x + (x - y) + teacher >= threshold
    return max((threshold + entry_age - teacher) / 2.0, entry_age + cfg.min_ect[cls])


def _ssf_crossing(cls: WorkerClass, entry_age: float, scenario: Scenario, limit: float) -> float | None:
    """Smallest age in [y + min_ect, limit) where the full-career SSF reaches one.

    e is constant on each [k, k+1), so the search walks integer segments and
    bisects inside the first one whose right end reaches one. A segment that
    already starts at or above one is a jump at the boundary age.
    """
    cfg = scenario.config
    bonus = cfg.bonus(cls)
    start = entry_age + cfg.min_ect[cls]
    k = math.floor(start)
    while k < limit:
        lo, hi = max(start, float(k)), min(float(k + 1), limit)
        edge = math.nextafter(float(k + 1), -math.inf)

        def gap(t: float, edge: float = edge) -> float:
            return ssf(t, t - entry_age + bonus, scenario.e_for(min(t, edge)), cfg.A) - 1.0

        if gap(lo) >= 0:
            return lo
        if gap(hi) >= 0:
            return float(optimize.bisect(gap, lo, hi, xtol=NRA_XTOL))
        k += 1
    return None


def nra(
    cls: WorkerClass,
    entry_age: float,
    scenario: Scenario,
    rule_mode: RuleMode = RuleMode.SSF,
) -> NraResult:
    cfg = scenario.config
    if entry_age < cfg.min_entry_age:
        raise RuleError(f"entry age {entry_age} is below the minimum of {cfg.min_entry_age:g}")

    if rule_mode == RuleMode.POINTS:
        age = _points_nra(cls, entry_age, scenario)
    else:
        points_age = None
        if rule_mode == RuleMode.COMBINED and scenario.ssf_year in cfg.points:
            points_age = _points_nra(cls, entry_age, scenario)
        limit = points_age if points_age is not None else float(NRA_AGE_LIMIT)
        crossing = _ssf_crossing(cls, entry_age, scenario, limit)
        if crossing is not None:
            age = crossing
        elif points_age is not None:
            age = points_age
        else:
            raise NumericalFailure(
                f"SSF for {cls} entering at {entry_age:g} never reaches 1 before age {NRA_AGE_LIMIT}"
                f" in {scenario.ssf_year} ({scenario.label or 'unlabelled scenario'})"
            )

    logger.debug(f"NRA {scenario.ssf_year} {cls} y={entry_age:g} {rule_mode}: {age:.4f}")
    return NraResult(
        worker_class=cls,
        entry_age=entry_age,
        nra=age,
        ect_at_nra=age - entry_age,
        rule_mode=rule_mode,
        ssf_year=scenario.ssf_year,
    )


def _cell_factor(
    x: int, c: int, cls: WorkerClass, scenario: Scenario, mode: RuleMode, ct_kind: str
) -> float:
    cfg = scenario.config
    if ct_kind == "ect":
        ect, ct = float(c), effective_ct(c, cls, cfg).ct
    else:
        ect, ct = c - cfg.bonus(cls), float(c)
    if ct > max_contribution_time(x, cls, cfg) or ect < cfg.min_ect[cls]:
        return math.nan
    if mode == RuleMode.SSF:
        return ssf(x, ct, scenario.e_for(x), cfg.A)
    return combined_factor(x, ect, cls, scenario, mode)


def ssf_matrix(
    scenario: Scenario,
    ages: Sequence[int],
    cts: Sequence[int],
    cls: WorkerClass,
    mode: RuleMode = RuleMode.SSF,
    ct_kind: str = "ct",
) -> np.ndarray:
    """Published-layout factor matrix: one row per CT (or ECT), one column per age.

    Cells whose contribution time cannot be reached from the minimum entry
    age, or whose ECT is below the class minimum, are NaN.
    """
    if ct_kind not in ("ct", "ect"):
        raise ValueError(f"ct_kind must be 'ct' or 'ect', got {ct_kind!r}")
    return np.array([[_cell_factor(x, c, cls, scenario, mode, ct_kind) for x in ages] for c in cts], dtype=float)


def compare(
    ssf_year: int,
    official: MortalitySource,
    counterfactual: MortalitySource,
    ages: Sequence[int],
    cts: Sequence[int],
    cls: WorkerClass,
    config: RuleConfig,
    mode: RuleMode = RuleMode.SSF,
    ct_kind: str = "ct",
) -> ScenarioComparison:
    official_matrix = ssf_matrix(Scenario(ssf_year, official, config, "official"), ages, cts, cls, mode, ct_kind)
    cf_matrix = ssf_matrix(Scenario(ssf_year, counterfactual, config, "counterfactual"), ages, cts, cls, mode, ct_kind)
    with np.errstate(invalid="ignore"):
        discrepancy = (cf_matrix / official_matrix - 1.0) * 100.0
    return ScenarioComparison(
        ssf_year=ssf_year,
        rule_mode=mode,
        ages=tuple(ages),
        cts=tuple(cts),
        ct_kind=ct_kind,
        factor_official=official_matrix,
        factor_counterfactual=cf_matrix,
        discrepancy=discrepancy,
    )


def sweep(
    years: Iterable[int],
    catalog: SourceResolver,
    ages: Sequence[int],
    cts: Sequence[int],
    cls: WorkerClass,
    config: RuleConfig,
    ct_kind: str = "ct",
    counterfactual_kind: str = "ggm",
    workers: int = 1,
) -> list[ScenarioComparison]:
    """One comparison per year and rule mode, in year order.

    A year whose vintage is missing or whose grid falls outside the tables
    becomes an entry carrying ``error``; the sweep continues.
    """

    def one_year(year: int) -> list[ScenarioComparison]:
        modes = modes_for_year(year, config)
        try:
            official = catalog.source("official", year - 2)
            counterfactual = catalog.source(counterfactual_kind, year - 2)
            return [
                compare(year, official, counterfactual, ages, cts, cls, config, mode, ct_kind) for mode in modes
            ]
        except (LookupError, ValueError) as e:
            logger.warning(f"⚠️  Sweep year {year} skipped: {e}")
            return [ScenarioComparison(year, mode, tuple(ages), tuple(cts), ct_kind, error=str(e)) for mode in modes]

    ordered = list(years)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_year = list(pool.map(one_year, ordered))
    else:
        per_year = [one_year(y) for y in ordered]
    return [comparison for entries in per_year for comparison in entries]


def ct1_table(
    years: Iterable[int],
    catalog: SourceResolver,
    kind: str,
    ages: Sequence[int],
    config: RuleConfig,
) -> pd.DataFrame:
    """CT1 by SSF year and age for one source kind, with per-class feasibility."""
    rows = []
    for year in years:
        scenario = Scenario(year, catalog.source(kind, year - 2), config, kind)
        for x in ages:
            value = ct1(x, scenario.e_for(x), config.A)
            row = {"ssf_year": year, "source": kind, "age": x, "ct1": value}
            for cls in WorkerClass:
                row[str(cls)] = str(ct1_feasibility(x, value, cls, config))
            rows.append(row)
    return pd.DataFrame(rows, columns=["ssf_year", "source", "age", "ct1", *[str(c) for c in WorkerClass]])


def nra_series(
    years: Iterable[int],
    catalog: SourceResolver,
    kind: str,
    classes: Sequence[WorkerClass],
    config: RuleConfig,
    entry_ages: Sequence[float] = (18, 23),
    modes: Callable[[int, RuleConfig], list[RuleMode]] = modes_for_year,
) -> pd.DataFrame:
    """NRA per year, class, entry age and applicable rule mode; failures keep a row with the error."""
    rows = []
    for year in years:
        try:
            source = catalog.source(kind, year - 2)
        except LookupError as e:
            logger.warning(f"⚠️  NRA series year {year} skipped: {e}")
            continue
        scenario = Scenario(year, source, config, kind)
        for cls in classes:
            for y in entry_ages:
                for mode in modes(year, config):
                    row = {"ssf_year": year, "source": kind, "worker_class": str(cls), "entry_age": y}
                    row["rule_mode"] = str(mode)
                    try:
                        result = nra(cls, y, scenario, mode)
                        row |= {"nra": result.nra, "ect": result.ect_at_nra, "error": ""}
                    except (LookupError, ValueError, NumericalFailure) as e:
                        row |= {"nra": math.nan, "ect": math.nan, "error": str(e)}
                    rows.append(row)
    columns = ["ssf_year", "source", "worker_class", "entry_age", "rule_mode", "nra", "ect", "error"]
    return pd.DataFrame(rows, columns=columns)


def _optional_e(source: MortalitySource, x: int) -> float:
    try:
        return source.life_expectancy(x)
    except LookupError:
        return math.nan


def expectancy_comparison(
    table_years: Iterable[int],
    catalog: SourceResolver,
    ages: Sequence[int] = tuple(range(43, 81)),
) -> pd.DataFrame:
    """Official vs GGM life expectancy per vintage and age; ages a vintage lacks are NaN."""
    rows = []
    for year in table_years:
        official, fitted = catalog.source("official", year), catalog.source("ggm", year)
        for x in ages:
            e_off, e_cf = _optional_e(official, x), _optional_e(fitted, x)
            gap = math.nan if math.isnan(e_off) or math.isnan(e_cf) else expectancy_discrepancy(e_cf, e_off)
            rows.append({"table_year": year, "age": x, "e_official": e_off, "e_ggm": e_cf, "discrepancy": gap})
    return pd.DataFrame(rows, columns=["table_year", "age", "e_official", "e_ggm", "discrepancy"])


def plot_series(
    table_years: Iterable[int],
    catalog: SourceResolver,
    ages: Sequence[int] = (50, 65, 80),
    kinds: Sequence[str] = SOURCE_KINDS,
) -> pd.DataFrame:
    """Long-format (year, age, value, source) life-expectancy trajectories."""
    rows = []
    for year in table_years:
        for kind in kinds:
            try:
                source = catalog.source(kind, year)
            except LookupError as e:
                logger.debug(f"No {kind} vintage {year} for plot series: {e}")
                continue
            for x in ages:
                value = _optional_e(source, x)
                if not math.isnan(value):
                    rows.append({"year": year, "age": x, "value": value, "source": kind})
    return pd.DataFrame(rows, columns=["year", "age", "value", "source"])

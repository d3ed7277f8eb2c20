"""
Complete period life tables.

Rebuilds dx/Lx/Tx/ex from the survivor column lx under the uniform
distribution of deaths, closes the open-ended interval with a constant
hazard (e = 1/m) and serves life expectancies to the SSF rules.

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Protocol, runtime_checkable

import numpy as np
import pandas as pd

from errors import LifeTableError

logger = logging.getLogger(__name__)

LIFE_TABLE_COLUMNS = ["age", "lx", "dx", "qx", "Lx", "Tx", "mx", "ex"]


@runtime_checkable
class MortalitySource(Protocol):
    """Anything the SSF can read a life expectancy from."""

    label: str

    def life_expectancy(self, x: float) -> float: ...


def _frozen(values: Sequence[float] | np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LifeTable:
    """Single-year period life table with an open-ended terminal interval."""

    start_age: int
    open_age: int
    lx: np.ndarray
    dx: np.ndarray
    Lx: np.ndarray
    mx: np.ndarray
    ex: np.ndarray
    label: str = ""

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.start_age, self.open_age + 1)

    @property
    def Tx(self) -> np.ndarray:
        return np.cumsum(self.Lx[::-1])[::-1]

    def _index(self, x: int) -> int:
        if x != int(x) or not self.start_age <= x <= self.open_age:
            raise LifeTableError(f"age {x} outside table {self.label or ''} [{self.start_age}, {self.open_age}]")
        return int(x) - self.start_age

    def life_expectancy(self, x: float) -> float:
        """e_x = T_x / l_x at an integer age, unrounded."""
        return float(self.ex[self._index(int(x) if float(x).is_integer() else x)])

    def px(self, x: int) -> float:
        """Probability of surviving from x to x+1 (0 in the open interval's last row is not defined)."""
        i = self._index(x)
        if i == len(self.lx) - 1:
            raise LifeTableError(f"p_x is not defined for the open-ended age {x}")
        return float(self.lx[i + 1] / self.lx[i])

    def qx(self, x: int) -> float:
        return 1.0 - self.px(x)

    def to_frame(self) -> pd.DataFrame:
        """Canonical column set; qx of the open interval is 1."""
        qx = np.append(1.0 - self.lx[1:] / self.lx[:-1], 1.0)
        return pd.DataFrame(
            {
                "age": self.ages,
                "lx": self.lx,
                "dx": self.dx,
                "qx": qx,
                "Lx": self.Lx,
                "Tx": self.Tx,
                "mx": self.mx,
                "ex": self.ex,
            },
            columns=LIFE_TABLE_COLUMNS,
        )


@dataclass(frozen=True)
class ExpectancyTable:
    """Published, already-rounded life expectancies by integer age.

    Official Gazette releases and the inverted regression fixtures only carry
    e_x, so there is no lx to rebuild from.
    """

    ages: tuple[int, ...]
    ex: tuple[float, ...]
    label: str = ""
    _lookup: dict[int, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.ages) != len(self.ex) or not self.ages:
            raise LifeTableError(f"expectancy table {self.label!r} needs one e per age")
        if any(b - a != 1 for a, b in zip(self.ages, self.ages[1:], strict=False)):
            raise LifeTableError(f"expectancy table {self.label!r} ages must be contiguous and increasing")
        if any(not math.isfinite(e) or e <= 0 for e in self.ex):
            raise LifeTableError(f"expectancy table {self.label!r} has non-positive life expectancies")
        object.__setattr__(self, "_lookup", dict(zip(self.ages, self.ex, strict=True)))

    def life_expectancy(self, x: float) -> float:
        try:
            return float(self._lookup[int(x)])
        except KeyError:
            raise LookupError(
                f"no life expectancy for age {int(x)} in {self.label or 'expectancy table'}"
                f" (ages {self.ages[0]}-{self.ages[-1]})"
            ) from None


def close_open_interval(l_open: float, m_inf: float) -> tuple[float, float]:
    """Constant-hazard closing: e = 1/m and L = e * l for the open interval."""
    if not m_inf > 0:
        raise LifeTableError(f"terminal death rate must be positive, got {m_inf}")
    if not l_open > 0:
        raise LifeTableError(f"cannot close a table with {l_open} survivors at the open age")
    e_open = 1.0 / m_inf
    return e_open, e_open * l_open


def rebuild_from_lx(
    lx: Sequence[float] | np.ndarray,
    open_age: int,
    terminal_m: float,
    start_age: int = 0,
    label: str = "",
) -> LifeTable:
    """Rebuild every column from survivors; any published dx/Lx is ignored."""
    survivors = np.asarray(lx, dtype=float)
    expected = open_age - start_age + 1
    if survivors.ndim != 1 or len(survivors) != expected:
        raise LifeTableError(f"expected {expected} lx values for ages {start_age}-{open_age}, got {len(survivors)}")
    if not np.all(np.isfinite(survivors)) or np.any(survivors < 0):
        raise LifeTableError("lx must be finite and non-negative")
    if survivors[0] <= 0:
        raise LifeTableError(f"lx at age {start_age} must be positive")

    increases = np.flatnonzero(np.diff(survivors) > 0)
    if increases.size:
        age = start_age + int(increases[0]) + 1
        raise LifeTableError(f"lx increases at age {age} ({survivors[increases[0]]} -> {survivors[increases[0] + 1]})")

    e_open, L_open = close_open_interval(float(survivors[-1]), terminal_m)

    dx = np.append(survivors[:-1] - survivors[1:], survivors[-1])
    Lx = np.append(survivors[1:] + 0.5 * dx[:-1], L_open)
    mx = np.append(dx[:-1] / Lx[:-1], terminal_m)
    Tx = np.cumsum(Lx[::-1])[::-1]
    ex = Tx / survivors
    # exact closing identity
    ex[-1] = e_open

    logger.debug(f"Rebuilt life table {label!r}: ages {start_age}-{open_age}, e0={ex[0]:.4f}")
    return LifeTable(
        start_age=start_age,
        open_age=open_age,
        lx=_frozen(survivors),
        dx=_frozen(dx),
        Lx=_frozen(Lx),
        mx=_frozen(mx),
        ex=_frozen(ex),
        label=label,
    )


def life_expectancy(table: LifeTable, x: int) -> float:
    return table.life_expectancy(x)


def round_half_up(value: float, digits: int = 1) -> float:
    """Round to ``digits`` decimals with ties away from zero (19.55 -> 19.6)."""
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


def rounded_e_for_ssf(source: MortalitySource, x: float, exact: bool = False) -> float:
    """Life expectancy as the SSF consumes it: e at floor(x), one decimal.

    Tables always use floor(x). A fitted model can be read at the exact
    (fractional) age when ``exact`` is set.
    """
    if x < 0:
        raise LifeTableError(f"age must be non-negative, got {x}")
    tabular = isinstance(source, LifeTable | ExpectancyTable)
    age = float(x) if exact and not tabular else math.floor(x)
    return round_half_up(source.life_expectancy(age), 1)

"""
Gamma-Gompertz-Makeham mortality.

Hazard, survival and Poisson likelihood of the frailty model
mu(x) = a e^{bx} / (1 + s2 (a/b)(e^{bx} - 1)) + c, maximum-likelihood fitting
by seeded multi-start Nelder-Mead, and remaining life expectancy by
quadrature of the analytic survival function.

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.special import xlogy
from scipy.stats import qmc

from errors import MortalityDataError, NumericalFailure
from lifetable import LifeTable

logger = logging.getLogger(__name__)

SIGMA2_ZERO = 1e-10
LOG_OFFSET = 1e-12
MIN_FIT_CELLS = 4
RECOMMENDED_FIT_CELLS = 8

# e(x) integration horizon
SURVIVAL_CUTOFF = 1e-12
HORIZON_CAP = 150.0
HORIZON_LIMIT = 2000.0
QUAD_EPSABS = 1e-8
QUAD_LIMIT = 500

# (low, high) of the start box; a, b and sigma2 are sampled log-uniform, c linearly
START_BOX = {
    "a": (1e-8, 1e-2),
    "b": (0.01, 0.3),
    "c": (0.0, 0.05),
    "sigma2": (1e-6, 1.0),
}


@dataclass(frozen=True)
class GgmParams:
    """theta = (a, b, c, sigma2); sigma2 = 0 is the Gompertz-Makeham limit."""

    a: float
    b: float
    c: float
    sigma2: float
    label: str = field(default="", compare=False)

    def __post_init__(self):
        values = (self.a, self.b, self.c, self.sigma2)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"GGM parameters must be finite, got {values}")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"a and b must be positive, got a={self.a}, b={self.b}")
        if self.c < 0 or self.sigma2 < 0:
            raise ValueError(f"c and sigma2 must be non-negative, got c={self.c}, sigma2={self.sigma2}")

    def hazard(self, x: float | np.ndarray) -> float | np.ndarray:
        return hazard(self, x)

    def survival(self, x: float | np.ndarray) -> float | np.ndarray:
        return survival(self, x)

    def plateau(self) -> float:
        """Limit of the hazard as age grows: b/sigma2 + c."""
        if self.sigma2 == 0:
            return math.inf
        return self.b / self.sigma2 + self.c

    def life_expectancy(self, x: float) -> float:
        return remaining_life_expectancy(self, x)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.sigma2)


@dataclass(frozen=True, eq=False)
class MortalityData:
    """Deaths and exposures per single-year age bin [x, x+1), sorted by age."""

    ages: np.ndarray
    deaths: np.ndarray
    exposures: np.ndarray

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        deaths = np.asarray(self.deaths, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        if not (ages.ndim == deaths.ndim == exposures.ndim == 1):
            raise MortalityDataError("ages, deaths and exposures must be vectors")
        if not len(ages) == len(deaths) == len(exposures):
            raise MortalityDataError(
                f"length mismatch: {len(ages)} ages, {len(deaths)} deaths, {len(exposures)} exposures"
            )
        if len(ages) == 0:
            raise MortalityDataError("mortality data is empty")
        if not (np.all(np.isfinite(deaths)) and np.all(np.isfinite(exposures))):
            raise MortalityDataError("deaths and exposures must be finite")
        if np.any(deaths < 0) or np.any(exposures < 0):
            raise MortalityDataError("deaths and exposures must be non-negative")

        order = np.argsort(ages, kind="stable")
        ages, deaths, exposures = ages[order], deaths[order], exposures[order]
        duplicated = ages[1:][np.diff(ages) == 0]
        if duplicated.size:
            raise MortalityDataError(f"duplicate age {duplicated[0]:g}")
        unexposed = ages[(deaths > 0) & (exposures == 0)]
        if unexposed.size:
            raise MortalityDataError(f"deaths without exposure at age {unexposed[0]:g}")

        for name, values in (("ages", ages), ("deaths", deaths), ("exposures", exposures)):
            values.setflags(write=False)
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.ages)

    @property
    def age_range(self) -> tuple[int, int]:
        return int(self.ages[0]), int(self.ages[-1])

    def restrict(self, min_age: float, max_age: float = math.inf) -> MortalityData:
        keep = (self.ages >= min_age) & (self.ages <= max_age)
        if not keep.any():
            raise MortalityDataError(f"no age cells in [{min_age}, {max_age}] (data covers {self.age_range})")
        return MortalityData(self.ages[keep], self.deaths[keep], self.exposures[keep])


@dataclass(frozen=True)
class FitOptions:
    min_age: int = 30
    restarts: int = 32
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 4000
    workers: int = 1
    polish_rounds: int = 3

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class FitResult:
    params: GgmParams
    loglik: float
    converged: bool
    n_restarts_used: int
    age_range: tuple[int, int]
    seed: int = 0

    def to_record(self) -> dict[str, Any]:
        return {
            "a": self.params.a,
            "b": self.params.b,
            "c": self.params.c,
            "sigma2": self.params.sigma2,
            "loglik": self.loglik,
            "converged": self.converged,
            "age_min": self.age_range[0],
            "age_max": self.age_range[1],
            "n_restarts_used": self.n_restarts_used,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any], label: str = "") -> FitResult:
        try:
            params = GgmParams(
                float(record["a"]), float(record["b"]), float(record["c"]), float(record["sigma2"]), label=label
            )
            return cls(
                params=params,
                loglik=float(record.get("loglik", math.nan)),
                converged=bool(record.get("converged", True)),
                n_restarts_used=int(record.get("n_restarts_used", 0)),
                age_range=(int(record.get("age_min", 0)), int(record.get("age_max", 0))),
                seed=int(record.get("seed", 0)),
            )
        except KeyError as e:
            raise MortalityDataError(f"fit record is missing field {e.args[0]}") from None


def hazard(p: GgmParams, x: float | np.ndarray) -> float | np.ndarray:
    """Force of mortality; written with e^{-bx} so large ages do not overflow."""
    x = np.asarray(x, dtype=float)
    decay = np.exp(-p.b * x)
    value = p.a / (decay + p.sigma2 * (p.a / p.b) * (1.0 - decay)) + p.c
    return float(value) if value.ndim == 0 else value


def log_survival(p: GgmParams, x: float | np.ndarray) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    growth = (p.a / p.b) * np.expm1(p.b * x)
    if p.sigma2 < SIGMA2_ZERO:
        value = -p.c * x - growth
    else:
        value = -p.c * x - np.log1p(p.sigma2 * growth) / p.sigma2
    return float(value) if value.ndim == 0 else value


def survival(p: GgmParams, x: float | np.ndarray) -> float | np.ndarray:
    value = np.exp(log_survival(p, x))
    return float(value) if np.ndim(value) == 0 else value


def log_likelihood(p: GgmParams, data: MortalityData) -> float:
    """Poisson log-likelihood without the ln(D!) constant; mu is read mid-bin."""
    if len(data) == 0:
        raise MortalityDataError("mortality data is empty")
    expected = np.asarray(hazard(p, data.ages + 0.5)) * data.exposures
    return float(np.sum(xlogy(data.deaths, expected) - expected))


def _decode(theta: np.ndarray) -> tuple[float, float, float, float]:
    a, b = math.exp(theta[0]), math.exp(theta[1])
    c = max(math.exp(theta[2]) - LOG_OFFSET, 0.0)
    sigma2 = max(math.exp(theta[3]) - LOG_OFFSET, 0.0)
    return a, b, c, sigma2


def _encode(a: float, b: float, c: float, sigma2: float) -> np.ndarray:
    return np.array([math.log(a), math.log(b), math.log(c + LOG_OFFSET), math.log(sigma2 + LOG_OFFSET)])


def _start_points(restarts: int, seed: int) -> list[np.ndarray]:
    unit = qmc.Halton(d=4, scramble=True, rng=seed).random(restarts)
    lows = np.log([START_BOX["a"][0], START_BOX["b"][0], START_BOX["sigma2"][0]])
    highs = np.log([START_BOX["a"][1], START_BOX["b"][1], START_BOX["sigma2"][1]])
    starts = []
    for u in unit:
        log_a, log_b, log_s2 = lows + u[[0, 1, 3]] * (highs - lows)
        c = START_BOX["c"][0] + u[2] * (START_BOX["c"][1] - START_BOX["c"][0])
        starts.append(_encode(math.exp(log_a), math.exp(log_b), c, math.exp(log_s2)))
    return starts


@dataclass(frozen=True)
class _Trial:
    index: int
    fun: float
    theta: np.ndarray
    success: bool


def fit(data: MortalityData, options: FitOptions | None = None) -> FitResult:
    """Maximum-likelihood GGM fit over ages >= options.min_age."""
    options = options or FitOptions()
    cells = data.restrict(options.min_age)
    if len(cells) < MIN_FIT_CELLS:
        raise MortalityDataError(f"{len(cells)} age cells cannot identify 4 parameters")
    total_deaths = float(cells.deaths.sum())
    if total_deaths <= 0:
        raise MortalityDataError("all deaths are zero; nothing to fit")
    if len(cells) < RECOMMENDED_FIT_CELLS:
        logger.warning(f"⚠️  Fitting on only {len(cells)} age cells, estimates will be unstable")

    def objective(theta: np.ndarray) -> float:
        try:
            a, b, c, sigma2 = _decode(theta)
            params = GgmParams(a, b, c, sigma2)
        except (OverflowError, ValueError):
            return math.inf
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            value = -log_likelihood(params, cells) / total_deaths
        return value if math.isfinite(value) else math.inf

    nm_options = {"xatol": 1e-8, "fatol": options.tol, "maxiter": options.max_iter, "adaptive": True}

    def run(indexed_start: tuple[int, np.ndarray]) -> _Trial:
        index, start = indexed_start
        result = optimize.minimize(objective, start, method="Nelder-Mead", options=nm_options)
        return _Trial(index, float(result.fun), np.asarray(result.x), bool(result.success))

    starts = list(enumerate(_start_points(options.restarts, options.seed)))
    logger.info(f"🔧 Fitting GGM on ages {cells.age_range[0]}-{cells.age_range[1]} with {len(starts)} starts")
    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            trials = list(pool.map(run, starts))
    else:
        trials = [run(s) for s in starts]

    finite = [t for t in trials if math.isfinite(t.fun)]
    if not finite:
        raise NumericalFailure("no start produced a finite log-likelihood")
    best = min(finite, key=lambda t: (t.fun, t.index))

    # restart the simplex around the incumbent until it stops moving
    for _ in range(options.polish_rounds):
        polished = optimize.minimize(objective, best.theta, method="Nelder-Mead", options=nm_options)
        improved = best.fun - float(polished.fun)
        if float(polished.fun) <= best.fun:
            best = _Trial(best.index, float(polished.fun), np.asarray(polished.x), bool(polished.success))
        if improved <= options.tol:
            break

    a, b, c, sigma2 = _decode(best.theta)
    if sigma2 < SIGMA2_ZERO:
        sigma2 = 0.0
    params = GgmParams(a, b, c, sigma2, label=f"ggm fit {cells.age_range[0]}-{cells.age_range[1]}")
    loglik = log_likelihood(params, cells)
    converged = best.success and math.isfinite(loglik)
    logger.info(
        f"✅ GGM fit: a={a:.4g} b={b:.4g} c={c:.4g} sigma2={sigma2:.4g} loglik={loglik:.6g} converged={converged}"
    )
    return FitResult(
        params=params,
        loglik=loglik,
        converged=converged,
        n_restarts_used=len(starts),
        age_range=cells.age_range,
        seed=options.seed,
    )


def remaining_life_expectancy(p: GgmParams, x: float) -> float:
    """e(x) = integral of S(x+t)/S(x) dt, truncated where the ratio drops below 1e-12.

    The integral is split at 150 years. A ratio still above the cutoff after
    HORIZON_LIMIT years is reported as a divergent integral.
    """
    if x < 0:
        raise ValueError(f"age must be non-negative, got {x}")
    base = log_survival(p, x)
    if not math.isfinite(base):
        raise NumericalFailure(f"S({x}) is zero; remaining life expectancy is undefined")

    def log_ratio(t: float) -> float:
        return float(log_survival(p, x + t)) - base

    def ratio(t: float) -> float:
        return math.exp(log_ratio(t))

    cutoff = math.log(SURVIVAL_CUTOFF)
    with np.errstate(over="ignore"):
        at_limit = log_ratio(HORIZON_LIMIT)
        if at_limit > cutoff:
            raise NumericalFailure(
                f"life expectancy integral does not converge at age {x}: "
                f"S ratio {math.exp(at_limit):.3g} after {HORIZON_LIMIT:g} years"
            )
        # clamped so brentq never sees -inf once survival underflows
        horizon = optimize.brentq(lambda t: max(log_ratio(t), 2.0 * cutoff) - cutoff, 0.0, HORIZON_LIMIT, xtol=1e-10)
        head = min(horizon, HORIZON_CAP)
        value, _ = integrate.quad(ratio, 0.0, head, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
        if horizon > HORIZON_CAP:
            tail, _ = integrate.quad(ratio, HORIZON_CAP, horizon, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
            logger.debug(f"e({x}): {tail:.6g} years of survival beyond {HORIZON_CAP:g}")
            value += tail

    if not (math.isfinite(value) and value > 0):
        raise NumericalFailure(f"life expectancy at age {x} evaluated to {value}")
    return value


def mortality_data_from_lifetable(t: LifeTable, min_age: int = 30) -> MortalityData:
    """D = dx and E = Lx for ages min_age..open_age-1; the open interval is left out."""
    if min_age >= t.open_age:
        raise MortalityDataError(f"min_age {min_age} must be below the open age {t.open_age}")
    if min_age < t.start_age:
        raise MortalityDataError(f"min_age {min_age} is below the table start age {t.start_age}")
    lo, hi = min_age - t.start_age, t.open_age - t.start_age
    return MortalityData(t.ages[lo:hi].astype(float), t.dx[lo:hi], t.Lx[lo:hi])


def mortality_data_from_frame(frame: pd.DataFrame) -> MortalityData:
    missing = [c for c in ("age", "deaths", "exposure") if c not in frame.columns]
    if missing:
        raise MortalityDataError(f"missing column {missing[0]}")
    return MortalityData(
        frame["age"].to_numpy(dtype=float),
        frame["deaths"].to_numpy(dtype=float),
        frame["exposure"].to_numpy(dtype=float),
    )


def simulate_deaths(
    params: GgmParams,
    ages: Sequence[float] | np.ndarray,
    exposures: Sequence[float] | np.ndarray,
    rng: np.random.Generator,
) -> MortalityData:
    """Poisson deaths with mean mu(x+0.5) E_x."""
    ages = np.asarray(ages, dtype=float)
    exposures = np.asarray(exposures, dtype=float)
    deaths = rng.poisson(np.asarray(hazard(params, ages + 0.5)) * exposures)
    return MortalityData(ages, deaths.astype(float), exposures)


def expectancy_vector(params: GgmParams, ages: Sequence[float] | np.ndarray, exact: bool = True) -> np.ndarray:
    grid = np.asarray(ages, dtype=float)
    if not exact:
        grid = np.floor(grid)
    return np.array([remaining_life_expectancy(params, float(x)) for x in grid])

"""Choice of blanket rate and per-level Poisson rates under segmented privacy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from segshuffle import amplify

RATE_TOL = 2.0 ** -40
M_FLOOR = 1e-3


class InfeasibleLevelError(RuntimeError):
    def __init__(self, level_index: int, message: str):
        super().__init__(f"level {level_index}: {message}")
        self.level_index = level_index


class UndefinedObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentedConfig:
    """Privacy-level ladder plus the population it applies to.

    ``level_counts`` may be real-valued (e.g. noisy level histograms).
    Level indices used by the API are 1-based.
    """

    levels: tuple[float, ...]
    level_counts: tuple[float, ...]
    delta: float
    domain_size: int
    set_size: int
    population: int

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(e) for e in self.levels))
        object.__setattr__(self, "level_counts", tuple(float(c) for c in self.level_counts))
        if not self.levels:
            raise ValueError("at least one privacy level is required")
        if len(self.levels) != len(self.level_counts):
            raise ValueError("levels and level_counts differ in length")
        if any(e <= 0 for e in self.levels):
            raise ValueError("privacy levels must be positive")
        if any(b < a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("privacy levels must be non-decreasing")
        if any(c < 0 for c in self.level_counts):
            raise ValueError("level counts must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.domain_size < 1 or self.set_size < 1 or self.population < 1:
            raise ValueError("domain_size, set_size and population must be positive")
        if self.set_size > self.domain_size:
            raise ValueError("set_size cannot exceed domain_size")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def single_level(self, level: float, population: Optional[int] = None) -> "SegmentedConfig":
        """Uniform-privacy config at ``level`` for ``population`` users."""
        n = self.population if population is None else population
        return SegmentedConfig(levels=(level,), level_counts=(n,), delta=self.delta,
                               domain_size=self.domain_size, set_size=self.set_size,
                               population=n)


@dataclass(frozen=True)
class ProtocolParams:
    blanket_rate: float
    poisson_rates: tuple[float, ...]
    mse_bound: float = math.nan
    # endpoints of the blanket-rate grid that was searched
    search_range: tuple[float, float] = field(default=(math.nan, math.nan))

    def __post_init__(self):
        object.__setattr__(self, "poisson_rates", tuple(float(r) for r in self.poisson_rates))
        if self.blanket_rate < 0:
            raise ValueError("blanket rate must be non-negative")
        if any(not 0.0 <= r <= 1.0 for r in self.poisson_rates):
            raise ValueError("Poisson rates must lie in [0, 1]")


class FeasibleRate(NamedTuple):
    rate: float
    feasible: bool


def mse_bound(config: SegmentedConfig, m: float, rates: Sequence[float]) -> float:
    """Upper bound ``(n*m + s*sum(n_k*l_k)) / sum(n_k*l_k)**2`` on the estimator's MSE."""
    signal = math.fsum(c * r for c, r in zip(config.level_counts, rates))
    if signal <= 0:
        raise UndefinedObjectiveError("sum of n_k * lambda_k must be positive")
    return (config.population * m + config.set_size * signal) / signal ** 2


def level_check(config: SegmentedConfig, level_index: int, m: float,
                rate: float) -> amplify.PrivacyCheck:
    """Privacy check for users at ``level_index`` (1-based) under ``(m, rate)``."""
    params = amplify.poisson_instance(rate, config.domain_size, m, config.population)
    req = amplify.PrivacyCheckRequest(level_epsilon=config.levels[level_index - 1],
                                      delta=config.delta, set_size=config.set_size,
                                      params=params)
    return amplify.check_privacy(req)


def _holds(config, level_index, m, rate) -> bool:
    return level_check(config, level_index, m, rate).holds


def max_feasible_rate(config: SegmentedConfig, level_index: int, m: float) -> FeasibleRate:
    """Largest Poisson rate (to within ``2**-40``) passing the level's privacy check."""
    if m < 0:
        raise ValueError("blanket rate must be non-negative")
    if _holds(config, level_index, m, 1.0):
        return FeasibleRate(1.0, True)
    if not _holds(config, level_index, m, RATE_TOL):
        return FeasibleRate(0.0, False)
    lo, hi = RATE_TOL, 1.0
    while hi - lo > RATE_TOL:
        mid = 0.5 * (lo + hi)
        if _holds(config, level_index, m, mid):
            lo = mid
        else:
            hi = mid
    return FeasibleRate(lo, True)


def min_blanket_rate(config: SegmentedConfig, level_index: int, cap: float = 64.0,
                     rel_tol: float = 1e-3) -> float:
    """Smallest blanket rate letting ``level_index`` report at rate 1.

    Feasibility is assumed monotone in ``m``: a doubling search brackets the
    threshold, then bisection narrows it to ``rel_tol``.
    """
    lo, hi = 0.0, 1.0 / 1024
    while not _holds(config, level_index, hi, 1.0):
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            if _holds(config, level_index, cap, 1.0):
                hi = cap
                break
            raise InfeasibleLevelError(
                level_index, f"rate 1 is infeasible for every blanket rate up to {cap}")
    while hi - lo > max(rel_tol * hi, 1e-9):
        mid = 0.5 * (lo + hi)
        if _holds(config, level_index, mid, 1.0):
            hi = mid
        else:
            lo = mid
    return hi


def rates_for(config: SegmentedConfig, m: float) -> tuple[float, ...]:
    rates = []
    for k in range(1, config.num_levels + 1):
        found = max_feasible_rate(config, k, m)
        if not found.feasible:
            raise InfeasibleLevelError(k, f"no positive rate is private at m={m:g}")
        rates.append(found.rate)
    return tuple(rates)


def params_at(config: SegmentedConfig, m: float) -> ProtocolParams:
    """Per-level maximal rates and the resulting MSE bound at a fixed ``m``."""
    rates = rates_for(config, m)
    return ProtocolParams(blanket_rate=m, poisson_rates=rates,
                          mse_bound=mse_bound(config, m, rates),
                          search_range=(m, m))


def blanket_grid(config: SegmentedConfig, grid_points: int = 32) -> np.ndarray:
    """Log-spaced candidate blanket rates between the per-level minima."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    strict = min_blanket_rate(config, 1)
    liberal = min_blanket_rate(config, config.num_levels)
    lo, hi = min(strict, liberal), max(strict, liberal)
    lo = max(lo, M_FLOOR)
    hi = max(hi, lo)
    if math.isclose(lo, hi):
        return np.array([hi])
    return np.geomspace(lo, hi, grid_points)


def optimize_parameters(config: SegmentedConfig, grid_points: int = 32,
                        m_override: Optional[float] = None) -> ProtocolParams:
    """Minimize the MSE bound over a grid of blanket rates.

    With ``m_override`` the blanket rate is fixed and only the per-level rates
    are chosen.
    """
    if m_override is not None:
        return params_at(config, m_override)
    grid = blanket_grid(config, grid_points)
    best = None
    for m in grid:
        cand = params_at(config, float(m))
        if best is None or cand.mse_bound < best.mse_bound:
            best = cand
    return ProtocolParams(blanket_rate=best.blanket_rate, poisson_rates=best.poisson_rates,
                          mse_bound=best.mse_bound,
                          search_range=(float(grid[0]), float(grid[-1])))
